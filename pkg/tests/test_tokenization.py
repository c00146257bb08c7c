"""This script contains testing of patching, token embedding and grid conversions
"""

import numpy as np
import pytest

from tkf_autodiff.tensor import Tensor
from tkf_layers.init import ParamInit
from tkf_layers.tokenization import add_class_token, build_embedding_params, embed_tokens, \
                                    featuremap_to_tokens, grid_to_tokens, join_class_token, \
                                    patch_grid, patchify, split_class_token, tokens_to_grid, \
                                    unpatchify
from tkf_types.records import PatchGrid, TokenSequence


def test_patch_grid():
    """ P has to divide both extents; the error names H, W and P """
    grid = patch_grid(32, 16, 4)
    assert (grid.grid_h, grid.grid_w, grid.num_tokens) == (8, 4, 32)
    with pytest.raises(ValueError, match='H=30.*W=32'):
        patch_grid(30, 32, 4)


def test_patch_layout():
    """ Patches go in row-major grid order, pixels row-major then channel inside a patch """
    image = np.arange(4 * 4 * 2, dtype=np.float64).reshape(1, 4, 4, 2)
    patches = patchify(Tensor(image), 2).data
    assert patches.shape == (1, 4, 8)
    np.testing.assert_array_equal(patches[0, 0], image[0, 0:2, 0:2, :].reshape(-1))
    np.testing.assert_array_equal(patches[0, 1], image[0, 0:2, 2:4, :].reshape(-1))
    np.testing.assert_array_equal(patches[0, 2], image[0, 2:4, 0:2, :].reshape(-1))
    np.testing.assert_array_equal(patches[0, 0, :4], [0.0, 1.0, 2.0, 3.0])


def test_unpatchify_inverts():
    """ Reassembling patches gives back the image """
    image = np.random.default_rng(0).standard_normal((2, 8, 12, 3))
    grid = patch_grid(8, 12, 4)
    back = unpatchify(patchify(Tensor(image), 4), grid, 3).data
    np.testing.assert_array_equal(back, image)


def test_embedding():
    """ t0 = patches . E + E_pos """
    init = ParamInit(seed=0, dtype='float64')
    params = build_embedding_params(6, 4, 5, init)
    patches = np.random.default_rng(1).standard_normal((2, 4, 6))
    grid = PatchGrid(patch_size=1, grid_h=2, grid_w=2)
    seq = embed_tokens(Tensor(patches), params, grid)
    np.testing.assert_allclose(seq.tokens.data, patches @ params['E'].data + params['E_pos'].data)
    assert seq.dim == 5

    with pytest.raises(ValueError):
        embed_tokens(Tensor(np.ones((2, 4, 7))), params, grid)
    with pytest.raises(ValueError):
        embed_tokens(Tensor(np.ones((2, 3, 6))), params, grid)


def test_featuremap_tokens_follow_pixels():
    """ Pixel (r, c) of a feature map becomes token r * w + c """
    params = {'E': Tensor(np.eye(3)), 'E_pos': Tensor(np.zeros((6, 3)))}
    feature_map = np.random.default_rng(2).standard_normal((1, 3, 2, 3))
    seq = featuremap_to_tokens(Tensor(feature_map), params)
    assert (seq.grid.grid_h, seq.grid.grid_w) == (2, 3)
    np.testing.assert_allclose(seq.tokens.data[0, 4], feature_map[0, :, 1, 1])


def test_grid_round_trip():
    """ tokens_to_grid puts token (r, c) at [r, c] and grid_to_tokens undoes it """
    tokens = np.random.default_rng(3).standard_normal((2, 6, 4))
    seq = TokenSequence(Tensor(tokens), PatchGrid(patch_size=2, grid_h=2, grid_w=3))
    grid_map = tokens_to_grid(seq).data
    assert grid_map.shape == (2, 4, 2, 3)
    np.testing.assert_array_equal(grid_map[:, :, 1, 2], tokens[:, 5, :])
    back = grid_to_tokens(Tensor(grid_map), patch_size=2)
    np.testing.assert_array_equal(back.tokens.data, tokens)
    assert back.grid == seq.grid


def test_class_token():
    """ The class token goes first, with its own position, and can be split off and back """
    init = ParamInit(seed=0, dtype='float64')
    params = build_embedding_params(3, 4, 5, init, class_token=True)
    assert params['cls'].shape == (1, 1, 5)
    grid = PatchGrid(patch_size=1, grid_h=2, grid_w=2)
    seq = TokenSequence(Tensor(np.zeros((3, 4, 5))), grid)

    with_cls = add_class_token(seq, params)
    assert with_cls.has_class_token and with_cls.tokens.shape == (3, 5, 5)
    np.testing.assert_allclose(with_cls.tokens.data[2, 0],
                               (params['cls'].data + params['cls_pos'].data)[0, 0])
    with pytest.raises(ValueError):
        tokens_to_grid(with_cls)
    with pytest.raises(ValueError):
        add_class_token(with_cls, params)

    cls, spatial = split_class_token(with_cls)
    assert cls.shape == (3, 1, 5) and not spatial.has_class_token
    assert join_class_token(cls, spatial).tokens.shape == (3, 5, 5)


def test_token_count_checked():
    """ A sequence must hold exactly the grid's tokens """
    with pytest.raises(ValueError):
        TokenSequence(Tensor(np.zeros((1, 5, 2))), PatchGrid(patch_size=1, grid_h=2, grid_w=2))
    TokenSequence(Tensor(np.zeros((1, 5, 2))), PatchGrid(patch_size=1, grid_h=2, grid_w=2),
                  has_class_token=True)


def test_embedding_is_affine():
    """ Scaling the patches scales the embedding's offset from the empty input """
    init = ParamInit(seed=5, dtype='float64')
    params = build_embedding_params(12, 6, 8, init)
    grid = PatchGrid(patch_size=2, grid_h=2, grid_w=3)
    patches = np.random.default_rng(5).standard_normal((2, 6, 12))

    def embed(values):
        return embed_tokens(Tensor(values), params, grid).tokens.data

    origin = embed(np.zeros_like(patches))
    for alpha in (-1.5, 0.25, 3.0):
        np.testing.assert_allclose(embed(alpha * patches) - origin,
                                   alpha * (embed(patches) - origin), atol=1e-6)


def test_token_count_law():
    """ N = H W / P^2 over random divisible extents, and 224 pixels in 16 pixel patches make 196
        tokens
    """
    rng = np.random.default_rng(6)
    for _ in range(50):
        patch = int(rng.integers(1, 9))
        grid_h, grid_w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        height, width = patch * grid_h, patch * grid_w
        grid = patch_grid(height, width, patch)
        assert grid.num_tokens == height * width // (patch * patch)
        patches = patchify(Tensor(np.zeros((1, height, width, 3))), patch)
        assert patches.shape == (1, grid.num_tokens, patch * patch * 3)

    grid = patch_grid(224, 224, 16)
    assert grid.num_tokens == 196
    params = build_embedding_params(16 * 16 * 3, 196, 8, ParamInit(seed=0, dtype='float64'))
    patches = patchify(Tensor(np.ones((2, 224, 224, 3))), 16)
    assert embed_tokens(patches, params, grid).tokens.shape == (2, 196, 8)
