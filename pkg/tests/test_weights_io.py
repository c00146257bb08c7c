"""This script contains testing of the binary weights file
"""

import struct

import numpy as np
import pytest

import tokfuse_config as tcfg
from tokfuse_errors import WeightsMismatchError
from tkf_autodiff.tensor import Tensor
from tkf_fusion.model import build_model
from tkf_training.weights_io import WEIGHTS_MAGIC, apply_weights, load_weights, save_weights


def __small_model(seed: int, overrides: list=None):
    """ Returns a small layer by layer model """
    run_config = tcfg.load_run_config('gradcheck', overrides=overrides or [])
    return build_model(run_config.model, seed=seed)


def test_save_and_apply(tmp_path):
    """ Saved weights restore another model exactly, in file order and dtype """
    path = str(tmp_path / 'weights.bin')
    source = __small_model(seed=1)
    save_weights(path, source.parameters())

    arrays = load_weights(path)
    assert list(arrays) == list(source.parameters())
    assert all(one.dtype == np.float64 for one in arrays.values())

    target = __small_model(seed=2)
    apply_weights(target.parameters(), arrays)
    for name, one_param in source.parameters().items():
        np.testing.assert_array_equal(target.parameters()[name].data, one_param.data)


def test_mixed_dtypes_and_scalars(tmp_path):
    """ float32, float64 and rank-0 tensors are all stored """
    path = str(tmp_path / 'weights.bin')
    params = {'a': Tensor(np.arange(6, dtype=np.float32).reshape(2, 3)),
              'b': Tensor(np.array(2.5))}
    save_weights(path, params)
    arrays = load_weights(path)
    assert arrays['a'].dtype == np.float32 and arrays['a'].shape == (2, 3)
    assert arrays['b'].shape == () and arrays['b'] == 2.5


def test_layout(tmp_path):
    """ Magic, version, count then the first tensor's name """
    path = tmp_path / 'weights.bin'
    save_weights(str(path), {'w': Tensor(np.zeros(2))})
    raw = path.read_bytes()
    assert raw[:4] == WEIGHTS_MAGIC
    assert struct.unpack('<III', raw[4:16]) == (1, 1, 1)
    assert raw[16:17] == b'w'


def test_unreadable_files(tmp_path):
    """ Missing, foreign and truncated files are rejected """
    with pytest.raises(WeightsMismatchError):
        load_weights(str(tmp_path / 'missing.bin'))

    foreign = tmp_path / 'foreign.bin'
    foreign.write_bytes(b'NOPE' + b'\x00' * 16)
    with pytest.raises(WeightsMismatchError):
        load_weights(str(foreign))

    path = tmp_path / 'weights.bin'
    save_weights(str(path), {'w': Tensor(np.zeros((4, 4)))})
    truncated = tmp_path / 'truncated.bin'
    truncated.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(WeightsMismatchError):
        load_weights(str(truncated))


def test_mismatched_model(tmp_path):
    """ Weights from a differently shaped model don't apply """
    path = str(tmp_path / 'weights.bin')
    save_weights(path, __small_model(seed=0).parameters())
    arrays = load_weights(path)

    wider = __small_model(seed=0, overrides=['model.encoder.dim=16'])
    with pytest.raises(WeightsMismatchError, match='shape'):
        apply_weights(wider.parameters(), arrays)

    other_head = __small_model(seed=0, overrides=['variant=layer_by_layer_mixing'])
    with pytest.raises(WeightsMismatchError):
        apply_weights(other_head.parameters(), arrays)

    with pytest.raises(WeightsMismatchError, match='missing'):
        apply_weights(__small_model(seed=0).parameters(), {})

    single = {'w': Tensor(np.zeros(2, dtype=np.float32))}
    with pytest.raises(WeightsMismatchError, match='dtype'):
        apply_weights(single, {'w': np.zeros(2)})
