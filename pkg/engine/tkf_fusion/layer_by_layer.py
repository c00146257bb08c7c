"""This script contains layer by layer fusion: tokens taken from the first CNN stage pass
through five mixing blocks, each pairing transformer blocks with the next CNN stage
"""

from typing import Optional

from tkf_autodiff import conv, ops
from tkf_autodiff.tensor import Tensor
from tkf_layers.backbone import backbone_forward, build_backbone_params, stage_channels
from tkf_layers.encoder import BlockCounter, build_stack_params, encoder_stack, linear
from tkf_layers.init import ParamInit, ParamTree
from tkf_layers.tokenization import add_class_token, build_embedding_params, \
                                    featuremap_to_tokens, grid_to_tokens, join_class_token, \
                                    split_class_token, tokens_to_grid
from tkf_types.configs import ModelConfig
from tkf_types.records import TokenSequence
import tokfuse_config as tcfg
from .heads import build_head_params, head_forward

# Pooling between consecutive stage grids
POOL_FACTOR = 2


def mixing_stages(block: int) -> int:
    """ Returns the CNN stage a 1-based mixing block concatenates; the last block reuses the
        last stage
    """
    return min(block + 1, tcfg.NUM_STAGES)


def lbl_head_tokens(cfg: ModelConfig) -> int:
    """ Returns the token count reaching the head """
    side = cfg.image_size // 2 ** tcfg.NUM_STAGES
    return side * side + (1 if cfg.use_class_token else 0)


def build_mixing_params(dim: int, cnn_channels: int, cfg: ModelConfig,
                        init: ParamInit) -> ParamTree:
    """ Allocates one mixing block: its transformer blocks and the (D + C) -> D projection """
    return {'encoder': build_stack_params(cfg.encoder.mixing_depth, dim, cfg.encoder.mlp_ratio,
                                          init),
            'proj': init.linear(dim + cnn_channels, dim, fan_in_scaled=True)}


def build_lbl_params(cfg: ModelConfig, init: ParamInit) -> ParamTree:
    """ Allocates the backbone, the initial embedding, the mixing blocks, the trailing
        encoder and the head
    """
    channels = stage_channels(cfg.backbone)
    dim = cfg.encoder.dim
    first_side = cfg.image_size // 2
    params = {'backbone': build_backbone_params(cfg.backbone, init),
              'embed': build_embedding_params(channels[0], first_side ** 2, dim, init,
                                              class_token=cfg.use_class_token),
              'mixing': [build_mixing_params(dim, channels[mixing_stages(block) - 1], cfg, init)
                         for block in range(1, tcfg.NUM_MIXING_BLOCKS + 1)],
              'encoder': build_stack_params(cfg.encoder.depth -
                                            tcfg.NUM_MIXING_BLOCKS * cfg.encoder.mixing_depth,
                                            dim, cfg.encoder.mlp_ratio, init),
             }
    params['head'] = build_head_params(cfg.head_type, lbl_head_tokens(cfg), dim, cfg.num_classes,
                                       init, bias=cfg.head_bias)
    return params


def mixing_block_forward(seq: TokenSequence, stage_map: Tensor, params: ParamTree, heads: int,
                         pool: bool=True, counter: Optional[BlockCounter]=None) -> TokenSequence:
    """ One mixing block
    Arguments:
        seq: tokens on the current stage grid, optionally led by a class token
        stage_map: the [B, C, h, w] CNN map of the next stage
        params: the block parameters
        heads: number of attention heads
        pool: average 2 x 2 token blocks down to the next grid (off for the last block)
        counter: optional block counter
    Return:
        Returns tokens on the stage map's grid
    Raises:
        ValueError: when the pooled token grid doesn't match the stage map
    Notes:
        The class token skips the pooling and concatenation; it is projected by the rows of
        the projection that act on the transformer channels
    """
    tokens = encoder_stack(seq.tokens, params['encoder'], heads, counter)
    seq = TokenSequence(tokens, seq.grid, seq.has_class_token)
    cls = None
    if seq.has_class_token:
        cls, seq = split_class_token(seq)

    grid_map = tokens_to_grid(seq)
    if pool:
        grid_map = conv.avg_pool2d(grid_map, POOL_FACTOR)
    pooled = grid_to_tokens(grid_map)

    batch, channels, height, width = stage_map.shape
    if (pooled.grid.grid_h, pooled.grid.grid_w) != (height, width):
        raise ValueError(f'Token grid {pooled.grid.grid_h}x{pooled.grid.grid_w} does not match the '
                         f'stage map {height}x{width}')
    cnn_tokens = ops.reshape(ops.transpose(stage_map, (0, 2, 3, 1)), (batch, height * width,
                                                                     channels))
    mixed = linear(ops.concat([pooled.tokens, cnn_tokens], axis=2), params['proj'])
    out = TokenSequence(mixed, pooled.grid)

    if cls is not None:
        dim = seq.dim
        cls = ops.matmul(cls, params['proj']['w'][:dim]) + params['proj']['b']
        out = join_class_token(cls, out)
    return out


def layer_by_layer_forward(image: Tensor, params: ParamTree, cfg: ModelConfig,
                           counter: Optional[BlockCounter]=None) -> Tensor:
    """ Embeds the first stage map as tokens, runs the five mixing blocks, the trailing
        encoder and the head
    Arguments:
        image: the [B, 3, H, W] images
        params: the model parameters
        cfg: the model configuration
        counter: optional block counter
    Return:
        Returns the [B, K] logits
    """
    heads = cfg.encoder.heads
    maps = backbone_forward(image, params['backbone'], cfg.backbone)
    seq = featuremap_to_tokens(maps[1], params['embed'])
    if cfg.use_class_token:
        seq = add_class_token(seq, params['embed'])

    for block, block_params in enumerate(params['mixing'], start=1):
        seq = mixing_block_forward(seq, maps[mixing_stages(block)], block_params, heads,
                                   pool=block < tcfg.NUM_MIXING_BLOCKS, counter=counter)

    tokens = encoder_stack(seq.tokens, params['encoder'], heads, counter)
    return head_forward(tokens, cfg.head_type, params['head'])
