"""This script contains reading and writing of the flat binary weights file

Layout, all integers little-endian:
    magic 'TKFW' (4 bytes), version (u32), tensor count (u32)
    per tensor: name length (u32), UTF-8 name, rank (u32), extents (u64 each),
                dtype tag (u8: 0 float32, 1 float64), raw little-endian data
"""

import struct
from typing import BinaryIO, Dict

import numpy as np

from tokfuse_errors import WeightsMismatchError
from tkf_autodiff.tensor import Tensor

# File signature and format version
WEIGHTS_MAGIC = b'TKFW'
WEIGHTS_VERSION = 1

# Data type tags
DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
TAG_DTYPES = {tag: dtype for dtype, tag in DTYPE_TAGS.items()}


def save_weights(path: str, params: Dict[str, Tensor]) -> None:
    """ Writes the tensors in the order given
    Arguments:
        path: the file to write
        params: the tensors by name
    """
    with open(path, 'wb') as outfile:
        outfile.write(WEIGHTS_MAGIC)
        outfile.write(struct.pack('<II', WEIGHTS_VERSION, len(params)))
        for name, one_tensor in params.items():
            encoded = name.encode('utf-8')
            data = np.ascontiguousarray(one_tensor.data)
            outfile.write(struct.pack('<I', len(encoded)))
            outfile.write(encoded)
            outfile.write(struct.pack('<I', data.ndim))
            outfile.write(struct.pack(f'<{data.ndim}Q', *data.shape))
            outfile.write(struct.pack('<B', DTYPE_TAGS[data.dtype]))
            outfile.write(data.astype(data.dtype.newbyteorder('<'), copy=False).tobytes())


def _read_exact(infile: BinaryIO, count: int, path: str) -> bytes:
    """ Reads exactly count bytes """
    data = infile.read(count)
    if len(data) != count:
        raise WeightsMismatchError(f'Weights file {path} ends early')
    return data


def load_weights(path: str) -> Dict[str, np.ndarray]:
    """ Reads a weights file
    Arguments:
        path: the file to read
    Return:
        Returns the arrays by name, in file order
    Raises:
        WeightsMismatchError: when the file is missing, isn't a weights file or is cut short
    """
    try:
        infile = open(path, 'rb')  # pylint: disable=consider-using-with
    except OSError as ex:
        raise WeightsMismatchError(f'Unable to open weights file {path}: {ex}') from ex

    arrays = {}
    with infile:
        if _read_exact(infile, len(WEIGHTS_MAGIC), path) != WEIGHTS_MAGIC:
            raise WeightsMismatchError(f'{path} is not a weights file')
        version, count = struct.unpack('<II', _read_exact(infile, 8, path))
        if version != WEIGHTS_VERSION:
            raise WeightsMismatchError(f'Unsupported weights file version {version}')
        for _ in range(count):
            name_len, = struct.unpack('<I', _read_exact(infile, 4, path))
            name = _read_exact(infile, name_len, path).decode('utf-8')
            rank, = struct.unpack('<I', _read_exact(infile, 4, path))
            shape = struct.unpack(f'<{rank}Q', _read_exact(infile, 8 * rank, path))
            tag, = struct.unpack('<B', _read_exact(infile, 1, path))
            if tag not in TAG_DTYPES:
                raise WeightsMismatchError(f'Unknown dtype tag {tag} for {name}')
            dtype = TAG_DTYPES[tag].newbyteorder('<')
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(infile, size * dtype.itemsize, path)
            arrays[name] = np.frombuffer(raw, dtype=dtype).astype(TAG_DTYPES[tag]).reshape(shape)
    return arrays


def apply_weights(params: Dict[str, Tensor], arrays: Dict[str, np.ndarray]) -> None:
    """ Copies loaded arrays into the model's tensors
    Arguments:
        params: the model's parameters by name
        arrays: the loaded arrays by name
    Raises:
        WeightsMismatchError: when names, shapes or dtypes differ
    """
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise WeightsMismatchError(f'Weights do not match the model: missing {missing[:5]}, '
                                   f'unexpected {extra[:5]}')
    for name, one_param in params.items():
        values = arrays[name]
        if values.shape != one_param.shape:
            raise WeightsMismatchError(f'{name}: weights shape {values.shape} does not match '
                                       f'the model shape {one_param.shape}')
        if values.dtype != one_param.dtype:
            raise WeightsMismatchError(f'{name}: weights dtype {values.dtype} does not match '
                                       f'the model dtype {one_param.dtype}')
        one_param.data = values.copy()
