"""This script contains late parallel fusion: a patch transformer and a CNN-token transformer
run side by side and their tokens are joined before the head
"""

from typing import Optional

from tkf_autodiff import conv, ops
from tkf_autodiff.tensor import Tensor
from tkf_layers.backbone import backbone_forward, build_backbone_params, stage_channels
from tkf_layers.encoder import BlockCounter, build_stack_params, encoder_stack
from tkf_layers.init import ParamInit, ParamTree
from tkf_layers.tokenization import build_embedding_params, embed_tokens, \
                                    featuremap_to_tokens, grid_to_tokens, patch_grid, patchify, \
                                    tokens_to_grid
from tkf_types.configs import ModelConfig
from tkf_types.enums import CombineVariant
from tkf_types.records import TokenSequence
import tokfuse_config as tcfg
from .heads import build_head_params, head_forward

# Per-side expansion of the transformer grid
EXPANSION = 2


def late_grids(cfg: ModelConfig) -> tuple:
    """ Returns the CNN stage feeding the second branch, the transformer grid side and the
        CNN grid side
    """
    stage = tcfg.cnn_stage_for_patch(cfg.patch_size)
    vit_side = cfg.image_size // cfg.patch_size
    return stage, vit_side, cfg.image_size // 2 ** stage


def late_head_shape(cfg: ModelConfig) -> tuple:
    """ Returns the token count and width reaching the head """
    _, vit_side, _ = late_grids(cfg)
    dim = cfg.encoder.dim * (2 if cfg.combine_variant.concatenates else 1)
    return (EXPANSION * vit_side) ** 2, dim


def build_late_params(cfg: ModelConfig, init: ParamInit) -> ParamTree:
    """ Allocates both branches, the combine step and the head """
    stage, vit_side, cnn_side = late_grids(cfg)
    dim = cfg.encoder.dim
    branch_depth = cfg.encoder.depth // 2
    params = {'backbone': build_backbone_params(cfg.backbone, init, num_stages=stage),
              'vit_embed': build_embedding_params(cfg.patch_size ** 2 * tcfg.IMAGE_CHANNELS,
                                                  vit_side ** 2, dim, init),
              'vit_encoder': build_stack_params(branch_depth, dim, cfg.encoder.mlp_ratio, init),
              'cnn_embed': build_embedding_params(stage_channels(cfg.backbone)[stage - 1],
                                                  cnn_side ** 2, dim, init),
              'cnn_encoder': build_stack_params(branch_depth, dim, cfg.encoder.mlp_ratio, init),
             }
    if cfg.combine_variant.uses_upconv:
        params['combine'] = {'w': init.tconv(dim, dim, EXPANSION, EXPANSION),
                             'b': init.zeros((dim,))}
    num_tokens, head_dim = late_head_shape(cfg)
    params['head'] = build_head_params(cfg.head_type, num_tokens, head_dim, cfg.num_classes, init,
                                       bias=cfg.head_bias)
    return params


def late_fusion_combine(vit_seq: TokenSequence, cnn_seq: TokenSequence, variant: CombineVariant,
                        params: Optional[ParamTree]=None) -> TokenSequence:
    """ Expands the transformer grid 2x per side and joins it with the CNN tokens
    Arguments:
        vit_seq: tokens on a g x g grid
        cnn_seq: tokens on a 2g x 2g grid
        variant: UpConv variants expand with a learned transposed convolution (kernel =
                 stride = 2), Copy variants replicate every token onto its 2 x 2 block;
                 Concat variants join along channels, Add variants sum
        params: {'w': [D, D, 2, 2], 'b': [D]} for the UpConv variants
    Return:
        Returns the 4 g^2 combined tokens
    Raises:
        ValueError: when the grids aren't in a 1:2 ratio, or Add gets unequal widths
    """
    vit_grid, cnn_grid = vit_seq.grid, cnn_seq.grid
    if cnn_grid.grid_h != EXPANSION * vit_grid.grid_h or \
                                                cnn_grid.grid_w != EXPANSION * vit_grid.grid_w:
        raise ValueError(f'CNN grid {cnn_grid.grid_h}x{cnn_grid.grid_w} is not twice the '
                         f'transformer grid {vit_grid.grid_h}x{vit_grid.grid_w}')
    if not variant.concatenates and vit_seq.dim != cnn_seq.dim:
        raise ValueError(f'{variant.value} needs equal widths, got {vit_seq.dim} and '
                         f'{cnn_seq.dim}')

    grid_map = tokens_to_grid(vit_seq)
    if variant.uses_upconv:
        expanded = conv.transposed_conv2d(grid_map, params['w'], params['b'], stride=EXPANSION)
    else:
        expanded = conv.upsample_nearest(grid_map, EXPANSION)
    expanded = grid_to_tokens(expanded, patch_size=cnn_grid.patch_size)

    if variant.concatenates:
        tokens = ops.concat([expanded.tokens, cnn_seq.tokens], axis=2)
    else:
        tokens = expanded.tokens + cnn_seq.tokens
    return TokenSequence(tokens=tokens, grid=cnn_grid)


def late_fusion_forward(image: Tensor, params: ParamTree, cfg: ModelConfig,
                        counter: Optional[BlockCounter]=None) -> Tensor:
    """ Runs both branches, combines them and applies the head
    Arguments:
        image: the [B, 3, H, W] images
        params: the model parameters
        cfg: the model configuration
        counter: optional block counter
    Return:
        Returns the [B, K] logits
    """
    stage, _, _ = late_grids(cfg)
    heads = cfg.encoder.heads
    _, _, height, width = image.shape

    patches = patchify(ops.transpose(image, (0, 2, 3, 1)), cfg.patch_size)
    vit_seq = embed_tokens(patches, params['vit_embed'],
                           patch_grid(height, width, cfg.patch_size))
    vit_seq = TokenSequence(encoder_stack(vit_seq.tokens, params['vit_encoder'], heads, counter),
                            vit_seq.grid)

    maps = backbone_forward(image, params['backbone'], cfg.backbone, num_stages=stage)
    cnn_seq = featuremap_to_tokens(maps[stage], params['cnn_embed'])
    cnn_seq = TokenSequence(encoder_stack(cnn_seq.tokens, params['cnn_encoder'], heads, counter),
                            cnn_seq.grid)

    combined = late_fusion_combine(vit_seq, cnn_seq, cfg.combine_variant, params.get('combine'))
    return head_forward(combined.tokens, cfg.head_type, params['head'])
