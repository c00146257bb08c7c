"""This script contains image preprocessing (resize, center crop, normalize) and training
augmentation (flips and small rotations)
"""

import concurrent.futures
from typing import List, Sequence

import numpy as np
from PIL import Image

from tokfuse_errors import DatasetError
from tkf_types.configs import AugmentConfig
from tkf_types.records import Sample

# Per-channel normalization constants
NORM_MEAN = (0.485, 0.456, 0.406)
NORM_STD = (0.229, 0.224, 0.225)

# Pixels added to the crop size before resizing (256 -> 224 at full scale)
RESIZE_MARGIN = 32


def preprocess(raw, size: int, margin: int=RESIZE_MARGIN) -> np.ndarray:
    """ Resizes to (size + margin) square, crops the centre size x size, scales to [0, 1] and
        normalizes every channel
    Arguments:
        raw: a Sample or an H x W x 3 unsigned-byte raster
        size: the crop size S
        margin: pixels added to S before resizing
    Return:
        Returns the [3, S, S] float32 array
    Raises:
        DatasetError: when the raster isn't H x W x 3 or is smaller than the crop after
                      resizing
    """
    raster = raw.image if isinstance(raw, Sample) else raw
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != len(NORM_MEAN) or min(raster.shape[:2]) < 1:
        raise DatasetError(f'Expected an H x W x 3 raster, got shape {raster.shape}')
    resized_side = size + margin
    if resized_side < size or size < 1:
        raise DatasetError(f'A {resized_side} pixel resize is smaller than the {size} pixel crop')

    img = Image.fromarray(raster.astype(np.uint8))
    if img.size != (resized_side, resized_side):
        img = img.resize((resized_side, resized_side), Image.Resampling.BILINEAR)
    offset = (resized_side - size) // 2
    img = img.crop((offset, offset, offset + size, offset + size))

    values = np.asarray(img, dtype=np.float32) / 255.0
    values = (values - np.asarray(NORM_MEAN, dtype=np.float32)) / \
             np.asarray(NORM_STD, dtype=np.float32)
    return np.ascontiguousarray(values.transpose(2, 0, 1))


def preprocess_all(samples: Sequence[Sample], size: int, workers: int=1) -> List[np.ndarray]:
    """ Preprocesses samples on a thread pool, keeping their order
    Arguments:
        samples: the samples
        size: the crop size
        workers: number of threads
    Return:
        Returns the preprocessed arrays in sample order
    """
    if workers <= 1 or len(samples) < 2:
        return [preprocess(one_sample, size) for one_sample in samples]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda one_sample: preprocess(one_sample, size), samples))


def rotate_bilinear(image: np.ndarray, degrees: float) -> np.ndarray:
    """ Rotates a [C, H, W] image about its centre with bilinear sampling; samples falling
        outside the image take the nearest edge value
    Arguments:
        image: the image
        degrees: counter-clockwise rotation
    Return:
        Returns the rotated image; a zero angle returns an unchanged copy
    """
    if degrees == 0:
        return image.copy()
    _, height, width = image.shape
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    centre_y, centre_x = (height - 1) / 2.0, (width - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing='ij')
    rel_y, rel_x = rows - centre_y, cols - centre_x

    src_x = np.clip(cos * rel_x - sin * rel_y + centre_x, 0, width - 1)
    src_y = np.clip(sin * rel_x + cos * rel_y + centre_y, 0, height - 1)
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = (src_x - x0).astype(image.dtype)
    wy = (src_y - y0).astype(image.dtype)

    top = image[:, y0, x0] * (1 - wx) + image[:, y0, x1] * wx
    bottom = image[:, y1, x0] * (1 - wx) + image[:, y1, x1] * wx
    return (top * (1 - wy) + bottom * wy).astype(image.dtype)


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """ Applies independent horizontal and vertical flips and a uniform rotation in
        [-max, +max] degrees
    Arguments:
        image: the [C, H, W] image
        cfg: the augmentation settings
        rng: the generator; three values are drawn per call whatever the settings
    Return:
        Returns the augmented image
    """
    flip_h = rng.random() < cfg.hflip_prob
    flip_v = rng.random() < cfg.vflip_prob
    degrees = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)

    out = image
    if flip_h:
        out = out[:, :, ::-1]
    if flip_v:
        out = out[:, ::-1, :]
    return rotate_bilinear(np.ascontiguousarray(out), degrees)
