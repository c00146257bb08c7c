"""This script contains dataset loading: CIFAR-10 binary batches and a seeded synthetic
grating generator
"""

from dataclasses import dataclass, field
import logging
import os
from typing import List

import numpy as np

from tokfuse_errors import DatasetError
from tkf_types.configs import DatasetConfig
from tkf_types.enums import DatasetSource
from tkf_types.records import Sample

# CIFAR-10 layout: 1 label byte followed by 1024 R, 1024 G and 1024 B bytes
CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
CIFAR_PIXEL_BYTES = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS
CIFAR_RECORD_BYTES = 1 + CIFAR_PIXEL_BYTES
CIFAR_CLASSES = 10

# Batch files of the binary CIFAR-10 distribution
CIFAR_TRAIN_FILES = tuple(f'data_batch_{idx}.bin' for idx in range(1, 6))
CIFAR_TEST_FILE = 'test_batch.bin'

# Synthetic raster settings
SYNTHETIC_AMPLITUDE = 100.0
SYNTHETIC_NOISE_STD = 8.0


@dataclass
class DatasetSplits:
    """ The training and validation samples """
    train: List[Sample] = field(default_factory=list)
    val: List[Sample] = field(default_factory=list)


def read_cifar_file(path: str) -> List[Sample]:
    """ Reads one CIFAR-10 binary batch file
    Arguments:
        path: the file to read
    Return:
        Returns the samples in file order, each a 32 x 32 x 3 raster
    Raises:
        DatasetError: when the file is missing, truncated or holds a bad label
    """
    try:
        with open(path, 'rb') as infile:
            raw = infile.read()
    except OSError as ex:
        raise DatasetError(f'Unable to read CIFAR-10 file {path}: {ex}') from ex

    if not raw or len(raw) % CIFAR_RECORD_BYTES:
        raise DatasetError(f'CIFAR-10 file {path} is truncated: {len(raw)} bytes is not a '
                           f'multiple of the {CIFAR_RECORD_BYTES}-byte record size')

    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    if np.any(labels >= CIFAR_CLASSES):
        raise DatasetError(f'CIFAR-10 file {path} has a label outside 0..{CIFAR_CLASSES - 1}')
    pixels = records[:, 1:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)
    pixels = np.ascontiguousarray(pixels.transpose(0, 2, 3, 1))
    return [Sample(image=one_image, label=int(one_label))
            for one_image, one_label in zip(pixels, labels)]


def _read_cifar_split(folder: str, names: tuple, limit: int) -> List[Sample]:
    """ Reads the named batch files, stopping once limit samples are read (0 for all) """
    samples = []
    for one_name in names:
        path = os.path.join(folder, one_name)
        if not os.path.isfile(path):
            raise DatasetError(f'Missing CIFAR-10 batch file {path}')
        samples.extend(read_cifar_file(path))
        if 0 < limit <= len(samples):
            return samples[:limit]
    return samples


def synthetic_samples(seed: int, count: int, num_classes: int, size: int) -> List[Sample]:
    """ Generates class-dependent gratings: every class has its own orientation, frequency
        and colour balance; phase and noise vary per sample
    Arguments:
        seed: seeds the generator
        count: number of samples
        num_classes: K
        size: raster side
    Return:
        Returns the samples; labels cycle through the classes
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
    samples = []
    for idx in range(count):
        label = idx % num_classes
        angle = np.pi * label / num_classes
        frequency = 2.0 + (label % 3)
        colour = np.array([1.0, 0.5 + 0.5 * np.cos(angle), 0.5 + 0.5 * np.sin(angle)])
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.sin(2.0 * np.pi * frequency * (cols * np.cos(angle) + rows * np.sin(angle)) /
                      size + phase)
        raster = 127.5 + SYNTHETIC_AMPLITUDE * wave[:, :, None] * colour[None, None, :]
        raster = raster + rng.normal(0.0, SYNTHETIC_NOISE_STD, size=raster.shape)
        samples.append(Sample(image=np.clip(np.rint(raster), 0, 255).astype(np.uint8),
                              label=label))
    return samples


def load_dataset(cfg: DatasetConfig, num_classes: int, seed: int=0,
                 logger: logging.Logger=None) -> DatasetSplits:
    """ Loads the configured samples
    Arguments:
        cfg: the dataset configuration
        num_classes: K; CIFAR-10 labels must fit
        seed: seeds synthetic generation
        logger: optional logger
    Return:
        Returns the training and validation splits
    Raises:
        DatasetError: for missing or malformed data
    """
    if logger is None:
        logger = logging.getLogger(__name__)

    if cfg.source == DatasetSource.CIFAR10:
        if not os.path.isdir(cfg.path):
            raise DatasetError(f'CIFAR-10 folder not found: {cfg.path}')
        if num_classes < CIFAR_CLASSES:
            raise DatasetError(f'CIFAR-10 has {CIFAR_CLASSES} classes but the model only has '
                               f'{num_classes}')
        splits = DatasetSplits(train=_read_cifar_split(cfg.path, CIFAR_TRAIN_FILES, cfg.num_train),
                               val=_read_cifar_split(cfg.path, (CIFAR_TEST_FILE,), cfg.num_val))
    else:
        splits = DatasetSplits(train=synthetic_samples(seed, cfg.num_train, num_classes,
                                                       cfg.raster_size),
                               val=synthetic_samples(seed + 1, cfg.num_val, num_classes,
                                                     cfg.raster_size))
    logger.info('Loaded %d training and %d validation samples from %s', len(splits.train),
                len(splits.val), cfg.source.value)
    return splits
