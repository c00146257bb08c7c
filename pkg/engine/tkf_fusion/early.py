"""This script contains early fusion: bridge blocks lift CNN stage maps back to full
resolution, the image and the bridge outputs are stacked into one 18-channel map and a
plain transformer runs on its patches
"""

from typing import List, Optional

from tkf_autodiff import conv, ops
from tkf_autodiff.tensor import Tensor
from tkf_layers.backbone import backbone_forward, build_backbone_params, stage_channels
from tkf_layers.encoder import BlockCounter, build_stack_params, encoder_stack
from tkf_layers.init import ParamInit, ParamTree
from tkf_layers.tokenization import build_embedding_params, embed_tokens, patch_grid, patchify
from tkf_types.configs import ModelConfig
from tkf_types.enums import BridgeVariant
import tokfuse_config as tcfg
from .heads import build_head_params, head_forward

# Upsampling step of one UpConv layer
UPCONV_STRIDE = 2


def bridged_stages(variant: BridgeVariant) -> List[int]:
    """ Returns the stages that get a bridge """
    if variant.multi:
        return list(range(1, tcfg.NUM_STAGES + 1))
    return [tcfg.NUM_STAGES]


def bridge_out_channels(variant: BridgeVariant) -> int:
    """ Returns the channels each bridge emits; a single bridge fills all non-image channels """
    if variant.multi:
        return tcfg.BRIDGE_CHANNELS
    return tcfg.UNIFIED_CHANNELS - tcfg.IMAGE_CHANNELS


def build_bridge_params(stage: int, in_channels: int, variant: BridgeVariant, bridge_width: int,
                        out_channels: int, init: ParamInit) -> ParamTree:
    """ Allocates one bridge
    Arguments:
        stage: the 1-based stage index i (the map is at stride 2^i)
        in_channels: channels of the stage map
        variant: UpConv variants get i transposed convolutions, Copy variants none
        bridge_width: channels between the transposed convolutions
        out_channels: channels of the final 1x1 convolution
        init: the parameter allocator
    Return:
        Returns the bridge parameters
    """
    params = {}
    if variant.uses_upconv:
        layers = []
        channels = in_channels
        for _ in range(stage):
            layers.append({'w': init.tconv(channels, bridge_width, UPCONV_STRIDE, UPCONV_STRIDE),
                           'b': init.zeros((bridge_width,))})
            channels = bridge_width
        params['up'] = layers
        in_channels = bridge_width
    params['proj'] = {'w': init.conv(out_channels, in_channels, 1),
                      'b': init.zeros((out_channels,))}
    return params


def bridge_forward(stage_map: Tensor, params: ParamTree, variant: BridgeVariant,
                   stage: int) -> Tensor:
    """ Lifts a [B, C_i, H/2^i, W/2^i] map to full resolution
    Arguments:
        stage_map: the stage output
        params: the bridge parameters
        variant: UpConv variants apply i learned 2x transposed convolutions; Copy variants
                 replicate every pixel onto its 2^i x 2^i block
        stage: the 1-based stage index i
    Return:
        Returns the [B, out, H, W] map after the 1x1 convolution
    """
    out = stage_map
    if variant.uses_upconv:
        for one_layer in params['up']:
            out = conv.transposed_conv2d(out, one_layer['w'], one_layer['b'], stride=UPCONV_STRIDE)
    else:
        out = conv.upsample_nearest(out, 2 ** stage)
    return conv.conv2d(out, params['proj']['w'], params['proj']['b'])


def build_early_params(cfg: ModelConfig, init: ParamInit) -> ParamTree:
    """ Allocates the backbone, the bridges, the 18-channel patch embedding, the encoder and
        the head
    """
    channels = stage_channels(cfg.backbone)
    out_channels = bridge_out_channels(cfg.bridge_variant)
    side = cfg.image_size // cfg.patch_size
    dim = cfg.encoder.dim
    params = {'backbone': build_backbone_params(cfg.backbone, init),
              'bridges': [build_bridge_params(stage, channels[stage - 1], cfg.bridge_variant,
                                              cfg.bridge_width, out_channels, init)
                          for stage in bridged_stages(cfg.bridge_variant)],
              'embed': build_embedding_params(cfg.patch_size ** 2 * tcfg.UNIFIED_CHANNELS,
                                              side ** 2, dim, init),
              'encoder': build_stack_params(cfg.encoder.depth, dim, cfg.encoder.mlp_ratio, init),
             }
    params['head'] = build_head_params(cfg.head_type, side ** 2, dim, cfg.num_classes, init,
                                       bias=cfg.head_bias)
    return params


def unified_map(image: Tensor, params: ParamTree, cfg: ModelConfig) -> Tensor:
    """ Stacks the image and the bridge outputs into the [B, 18, H, W] map
    Raises:
        ValueError: if the stacked map doesn't have 18 channels
    """
    maps = backbone_forward(image, params['backbone'], cfg.backbone)
    bridges = [bridge_forward(maps[stage], one_params, cfg.bridge_variant, stage)
               for stage, one_params in zip(bridged_stages(cfg.bridge_variant), params['bridges'])]
    unified = ops.concat([image] + bridges, axis=1)
    if unified.shape[1] != tcfg.UNIFIED_CHANNELS:
        raise ValueError(f'Unified map has {unified.shape[1]} channels instead of '
                         f'{tcfg.UNIFIED_CHANNELS}')
    return unified


def early_fusion_forward(image: Tensor, params: ParamTree, cfg: ModelConfig,
                         counter: Optional[BlockCounter]=None) -> Tensor:
    """ Builds the unified map, patches and embeds it, and runs the encoder and head
    Arguments:
        image: the [B, 3, H, W] images
        params: the model parameters
        cfg: the model configuration
        counter: optional block counter
    Return:
        Returns the [B, K] logits
    """
    _, _, height, width = image.shape
    unified = unified_map(image, params, cfg)
    patches = patchify(ops.transpose(unified, (0, 2, 3, 1)), cfg.patch_size)
    seq = embed_tokens(patches, params['embed'], patch_grid(height, width, cfg.patch_size))
    tokens = encoder_stack(seq.tokens, params['encoder'], cfg.encoder.heads, counter)
    return head_forward(tokens, cfg.head_type, params['head'])
