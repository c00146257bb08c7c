"""This script contains the residual CNN backbone: a stem followed by four stages of
bottleneck blocks, exposing every stage output
"""

from typing import Optional

from tkf_autodiff import conv, ops
from tkf_autodiff.tensor import Tensor
from tkf_types.configs import BackboneConfig
from tkf_types.records import StageFeatureMaps
from .init import ParamInit, ParamTree

# Width reduction inside a bottleneck block
BOTTLENECK_EXPANSION = 4

# Total downsampling of the last stage
BACKBONE_STRIDE = 32

# Added to the per-channel variance
NORM_EPS = 1e-5


def activate(x: Tensor, activation: str) -> Tensor:
    """ Applies the named activation """
    if activation == 'relu':
        return ops.relu(x)
    if activation == 'gelu':
        return ops.gelu(x)
    raise ValueError(f'Unknown activation "{activation}"')


def channel_norm(x: Tensor, params: ParamTree) -> Tensor:
    """ Normalizes every channel of every sample over its spatial positions, then applies the
        per-channel affine. Doesn't depend on the batch size
    Arguments:
        x: the [B, C, H, W] map
        params: {'gamma': [C], 'beta': [C]}
    Return:
        Returns the normalized map
    Notes:
        A 1 x 1 map has no spatial spread, so its statistics are taken over all of the
        sample's channels instead
    """
    batch, channels, height, width = x.shape
    groups = channels if height * width > 1 else 1
    normed = ops.layer_norm(ops.reshape(x, (batch, groups, channels * height * width // groups)),
                            None, None, eps=NORM_EPS)
    normed = ops.reshape(normed, (batch, channels, height, width))
    gamma = ops.reshape(params['gamma'], (1, channels, 1, 1))
    beta = ops.reshape(params['beta'], (1, channels, 1, 1))
    return normed * gamma + beta


def bottleneck_mid_channels(out_channels: int) -> int:
    """ Returns the reduced width inside a bottleneck """
    return max(out_channels // BOTTLENECK_EXPANSION, 1)


def build_bottleneck_params(in_channels: int, out_channels: int, stride: int,
                            init: ParamInit) -> ParamTree:
    """ Allocates one bottleneck block: 1x1 reduce, 3x3, 1x1 expand, each followed by a
        norm, plus a projection shortcut when the shape changes
    """
    mid = bottleneck_mid_channels(out_channels)
    params = {'conv1': init.conv(mid, in_channels, 1),
              'norm1': init.norm(mid),
              'conv2': init.conv(mid, mid, 3),
              'norm2': init.norm(mid),
              'conv3': init.conv(out_channels, mid, 1),
              'norm3': init.norm(out_channels),
             }
    if stride != 1 or in_channels != out_channels:
        params['proj'] = {'conv': init.conv(out_channels, in_channels, 1),
                          'norm': init.norm(out_channels)}
    return params


def bottleneck_forward(x: Tensor, params: ParamTree, stride: int=1,
                       activation: str='relu') -> Tensor:
    """ One residual bottleneck block: act(F(x) + shortcut(x))
    Arguments:
        x: the [B, C, H, W] input
        params: the block parameters
        stride: applied by the 3x3 convolution and the projection
        activation: 'relu' or 'gelu'
    Return:
        Returns the block output
    Raises:
        ValueError: when the residual and shortcut shapes differ without a projection
    """
    out = activate(channel_norm(conv.conv2d(x, params['conv1']), params['norm1']), activation)
    out = activate(channel_norm(conv.conv2d(out, params['conv2'], stride=stride, padding=1),
                                params['norm2']), activation)
    out = channel_norm(conv.conv2d(out, params['conv3']), params['norm3'])

    if 'proj' in params:
        shortcut = channel_norm(conv.conv2d(x, params['proj']['conv'], stride=stride),
                                params['proj']['norm'])
    else:
        shortcut = x
    if shortcut.shape != out.shape:
        raise ValueError(f'Bottleneck residual {out.shape} and shortcut {shortcut.shape} differ; '
                         'a projection shortcut is needed')
    return activate(out + shortcut, activation)


def build_backbone_params(cfg: BackboneConfig, init: ParamInit, num_stages: int=5) -> ParamTree:
    """ Allocates the stem and residual stages
    Arguments:
        cfg: the resolved backbone configuration
        init: the parameter allocator
        num_stages: how many stage maps the model uses (1 keeps only the stem)
    Return:
        Returns the parameter tree
    """
    params = {'stem': {'conv': init.conv(cfg.stem_channels, 3, cfg.stem_kernel),
                       'norm': init.norm(cfg.stem_channels)}}
    in_channels = cfg.stem_channels
    for stage_idx, one_spec in enumerate(cfg.stage_specs[:max(num_stages - 1, 0)]):
        blocks = []
        for block_idx in range(one_spec.num_blocks):
            stride = one_spec.stride if block_idx == 0 else 1
            blocks.append(build_bottleneck_params(in_channels, one_spec.out_channels, stride,
                                                  init))
            in_channels = one_spec.out_channels
        params[f'stage{stage_idx + 2}'] = blocks
    return params


def stage_channels(cfg: BackboneConfig) -> list:
    """ Returns the channel count of the five stage maps """
    return [cfg.stem_channels] + [one.out_channels for one in cfg.stage_specs]


def backbone_forward(image: Tensor, params: ParamTree, cfg: BackboneConfig,
                     num_stages: Optional[int]=None) -> StageFeatureMaps:
    """ Runs the backbone and collects the stage maps
    Arguments:
        image: the [B, 3, H, W] input with H and W divisible by 32
        params: the backbone parameters
        cfg: the resolved backbone configuration
        num_stages: how many maps to compute; defaults to every stage the parameters hold
    Return:
        Returns the maps at strides 2, 4, 8, 16, 32 (fewer when truncated)
    Raises:
        ValueError: when the input extents aren't divisible by 32
    """
    if image.ndim != 4 or image.shape[2] % BACKBONE_STRIDE or image.shape[3] % BACKBONE_STRIDE:
        raise ValueError(f'Backbone input {image.shape} must be [B, 3, H, W] with H and W '
                         f'divisible by {BACKBONE_STRIDE}')
    available = 1 + sum(1 for key in params if key.startswith('stage'))
    num_stages = available if num_stages is None else min(num_stages, available)

    stem = params['stem']
    out = conv.conv2d(image, stem['conv'], stride=2, padding=cfg.stem_kernel // 2)
    out = activate(channel_norm(out, stem['norm']), cfg.activation)
    maps = [out]
    if num_stages == 1:
        return StageFeatureMaps(maps)

    if cfg.stem_pool == 'max':
        out = conv.max_pool2d(out, kernel=3, stride=2, padding=1)
    else:
        out = conv.avg_pool2d(out, 2)
    for stage_idx, one_spec in enumerate(cfg.stage_specs[:num_stages - 1]):
        for block_idx, block_params in enumerate(params[f'stage{stage_idx + 2}']):
            stride = one_spec.stride if block_idx == 0 else 1
            out = bottleneck_forward(out, block_params, stride=stride,
                                     activation=cfg.activation)
        maps.append(out)
    return StageFeatureMaps(maps)
