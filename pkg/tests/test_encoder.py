"""This script contains testing of attention and the encoder blocks
"""

import numpy as np
import pytest

from tkf_autodiff.tensor import Tensor
from tkf_layers.encoder import BlockCounter, build_block_params, build_stack_params, \
                               encoder_block, encoder_stack, mhsa
from tkf_layers.init import ParamInit, count_tensor_params


def __tokens(shape, seed=0):
    """ Returns random float64 tokens """
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def test_identity_init():
    """ Zeroed output projections make a block return its input """
    init = ParamInit(seed=0, dtype='float64', zero_residual_outputs=True)
    block = build_block_params(8, 4, init)
    x = __tokens((2, 5, 8))
    np.testing.assert_array_equal(encoder_block(x, block, heads=2).data, x.data)


def test_attention_rows_sum_to_one():
    """ Attention weights are non-negative and every row sums to one """
    init = ParamInit(seed=1, init_std=0.5, dtype='float64')
    block = build_block_params(12, 2, init)
    out, attention = mhsa(__tokens((3, 7, 12)), block['attn'], heads=3, return_attention=True)
    assert out.shape == (3, 7, 12)
    assert attention.shape == (3, 3, 7, 7)
    assert np.all(attention.data >= 0)
    np.testing.assert_allclose(attention.data.sum(axis=-1), 1.0, atol=1e-12)


def test_heads_must_divide_width():
    """ Head counts that don't divide D are rejected """
    block = build_block_params(8, 2, ParamInit(seed=0, dtype='float64'))
    with pytest.raises(ValueError):
        mhsa(__tokens((1, 3, 8)), block['attn'], heads=3)


def test_permutation_equivariance():
    """ Without positions, permuting the tokens permutes the block output """
    init = ParamInit(seed=2, init_std=0.3, dtype='float64')
    block = build_block_params(8, 2, init)
    x = __tokens((2, 6, 8), seed=4)
    order = np.array([3, 0, 5, 1, 4, 2])
    out = encoder_block(x, block, heads=2).data
    permuted = encoder_block(Tensor(x.data[:, order, :]), block, heads=2).data
    np.testing.assert_allclose(permuted, out[:, order, :], atol=1e-12)


def test_block_parameter_count():
    """ 4 D^2 + 4 D attention, 2 r D^2 + r D + D MLP and two norms """
    dim, ratio = 16, 4
    block = build_block_params(dim, ratio, ParamInit(seed=0))
    expected = 4 * dim * dim + 4 * dim + 2 * ratio * dim * dim + ratio * dim + dim + 4 * dim
    assert count_tensor_params(block) == expected


def test_stack_counts_blocks():
    """ Every block application is counted; an empty stack is the identity """
    init = ParamInit(seed=0, dtype='float64')
    blocks = build_stack_params(3, 8, 2, init)
    counter = BlockCounter()
    x = __tokens((1, 4, 8))
    encoder_stack(x, blocks, heads=2, counter=counter)
    assert counter.count == 3
    counter.reset()
    assert encoder_stack(x, [], heads=2, counter=counter) is x
    assert counter.count == 0


def test_attention_rows_over_random_inputs():
    """ Rows stay distributions across many random token sets, widths and scales """
    init = ParamInit(seed=7, init_std=0.5, dtype='float64')
    blocks = {heads: build_block_params(8, 2, init)['attn'] for heads in (1, 2, 4)}
    rng = np.random.default_rng(7)
    for _ in range(1000):
        heads = int(rng.choice([1, 2, 4]))
        num_tokens = int(rng.integers(1, 9))
        scale = float(rng.choice([0.1, 1.0, 10.0]))
        x = Tensor(scale * rng.standard_normal((1, num_tokens, 8)))
        _, attention = mhsa(x, blocks[heads], heads=heads, return_attention=True)
        assert np.all(attention.data >= 0)
        np.testing.assert_allclose(attention.data.sum(axis=-1), 1.0, atol=1e-6)


def test_stack_permutation_equivariance():
    """ Permuting the tokens permutes the output of a whole stack """
    blocks = build_stack_params(3, 8, 2, ParamInit(seed=8, init_std=0.3, dtype='float64'))
    x = __tokens((2, 7, 8), seed=8)
    order = np.random.default_rng(8).permutation(7)
    out = encoder_stack(x, blocks, heads=2, counter=BlockCounter()).data
    permuted = encoder_stack(Tensor(x.data[:, order, :]), blocks, heads=2,
                             counter=BlockCounter()).data
    np.testing.assert_allclose(permuted, out[:, order, :], atol=1e-5)


def test_identity_init_stack():
    """ A stack of identity-initialized blocks returns its input """
    init = ParamInit(seed=9, init_std=0.3, dtype='float64', zero_residual_outputs=True)
    blocks = build_stack_params(4, 8, 2, init)
    x = __tokens((2, 5, 8), seed=9)
    out = encoder_stack(x, blocks, heads=2, counter=BlockCounter())
    np.testing.assert_allclose(out.data, x.data, atol=1e-6)
