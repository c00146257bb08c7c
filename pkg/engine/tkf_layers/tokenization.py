"""This script contains image patching, patch/pixel token embedding and the conversions
between token sequences and spatial grids
"""

from typing import Tuple

from tkf_autodiff import ops
from tkf_autodiff.tensor import Tensor
from tkf_types.records import PatchGrid, TokenSequence
from .init import ParamInit, ParamTree


def patch_grid(height: int, width: int, patch_size: int) -> PatchGrid:
    """ Returns the grid of P x P patches covering an image
    Raises:
        ValueError: when P doesn't divide both extents
    """
    if patch_size < 1 or height % patch_size or width % patch_size:
        raise ValueError(f'Patch size {patch_size} must divide the image extents H={height} '
                         f'and W={width}')
    return PatchGrid(patch_size=patch_size, grid_h=height // patch_size,
                     grid_w=width // patch_size)


def patchify(image: Tensor, patch_size: int) -> Tensor:
    """ Splits [B, H, W, C] images into flattened patches
    Arguments:
        image: the channels-last images
        patch_size: P, which must divide H and W
    Return:
        Returns [B, N, P*P*C] with patches in row-major grid order, and pixels in row-major
        order then channel inside every patch
    """
    batch, height, width, channels = image.shape
    grid = patch_grid(height, width, patch_size)
    out = ops.reshape(image, (batch, grid.grid_h, patch_size, grid.grid_w, patch_size, channels))
    out = ops.transpose(out, (0, 1, 3, 2, 4, 5))
    return ops.reshape(out, (batch, grid.num_tokens, patch_size * patch_size * channels))


def unpatchify(patches: Tensor, grid: PatchGrid, channels: int) -> Tensor:
    """ Reassembles [B, N, P*P*C] patches into [B, H, W, C] images """
    batch = patches.shape[0]
    size = grid.patch_size
    out = ops.reshape(patches, (batch, grid.grid_h, grid.grid_w, size, size, channels))
    out = ops.transpose(out, (0, 1, 3, 2, 4, 5))
    return ops.reshape(out, (batch, grid.grid_h * size, grid.grid_w * size, channels))


def build_embedding_params(in_dim: int, num_tokens: int, dim: int, init: ParamInit,
                           class_token: bool=False) -> ParamTree:
    """ Allocates the projection E [in_dim, D] and positions E_pos [N, D]; with a class
        token also the token itself and its own position entry
    """
    params = {'E': init.trunc_normal((in_dim, dim)),
              'E_pos': init.trunc_normal((num_tokens, dim))}
    if class_token:
        params['cls'] = init.trunc_normal((1, 1, dim))
        params['cls_pos'] = init.trunc_normal((1, 1, dim))
    return params


def embed_tokens(patches: Tensor, params: ParamTree, grid: PatchGrid) -> TokenSequence:
    """ t0[b, i] = patches[b, i] . E + E_pos[i]
    Arguments:
        patches: [B, N, P*P*C] flattened patches (or pixels)
        params: the embedding parameters
        grid: where the tokens sit
    Return:
        Returns the TokenSequence of [B, N, D] tokens
    Raises:
        ValueError: when the patch width doesn't match E or N doesn't match E_pos
    """
    proj, pos = params['E'], params['E_pos']
    if patches.ndim != 3 or patches.shape[2] != proj.shape[0]:
        raise ValueError(f'Patches {patches.shape} do not match the embedding {proj.shape}')
    if patches.shape[1] != pos.shape[0]:
        raise ValueError(f'{patches.shape[1]} tokens do not match the {pos.shape[0]} positions')
    return TokenSequence(tokens=ops.matmul(patches, proj) + pos, grid=grid)


def featuremap_to_tokens(feature_map: Tensor, params: ParamTree) -> TokenSequence:
    """ Makes every pixel of a [B, Cf, Hf, Wf] map one token, then embeds it """
    batch, channels, height, width = feature_map.shape
    pixels = ops.reshape(ops.transpose(feature_map, (0, 2, 3, 1)), (batch, height * width,
                                                                   channels))
    return embed_tokens(pixels, params, PatchGrid(patch_size=1, grid_h=height, grid_w=width))


def add_class_token(seq: TokenSequence, params: ParamTree) -> TokenSequence:
    """ Prepends the learned class token, with its own position entry """
    if seq.has_class_token:
        raise ValueError('The sequence already has a class token')
    batch = seq.tokens.shape[0]
    cls = params['cls'] + params['cls_pos']
    cls = ops.concat([cls] * batch, axis=0) if batch > 1 else cls
    return TokenSequence(tokens=ops.concat([cls, seq.tokens], axis=1), grid=seq.grid,
                         has_class_token=True)


def split_class_token(seq: TokenSequence) -> Tuple[Tensor, TokenSequence]:
    """ Detaches the class token from the spatial tokens
    Return:
        Returns the [B, 1, D] class token and the spatial-only sequence
    """
    if not seq.has_class_token:
        raise ValueError('The sequence has no class token')
    return seq.tokens[:, :1, :], TokenSequence(tokens=seq.tokens[:, 1:, :], grid=seq.grid)


def join_class_token(cls: Tensor, seq: TokenSequence) -> TokenSequence:
    """ Puts a class token back in front of spatial tokens """
    return TokenSequence(tokens=ops.concat([cls, seq.tokens], axis=1), grid=seq.grid,
                         has_class_token=True)


def tokens_to_grid(seq: TokenSequence) -> Tensor:
    """ Lays tokens out as a [B, D, gh, gw] map; token (r, c) lands at grid position [r, c]
    Raises:
        ValueError: when the sequence still holds a class token
    """
    if seq.has_class_token:
        raise ValueError('Detach the class token before mapping tokens onto a grid')
    batch, _, dim = seq.tokens.shape
    out = ops.reshape(seq.tokens, (batch, seq.grid.grid_h, seq.grid.grid_w, dim))
    return ops.transpose(out, (0, 3, 1, 2))


def grid_to_tokens(grid_map: Tensor, patch_size: int=1) -> TokenSequence:
    """ Inverse of tokens_to_grid """
    batch, dim, height, width = grid_map.shape
    tokens = ops.reshape(ops.transpose(grid_map, (0, 2, 3, 1)), (batch, height * width, dim))
    return TokenSequence(tokens=tokens,
                         grid=PatchGrid(patch_size=patch_size, grid_h=height, grid_w=width))
