"""This script contains the pooling classification heads
"""

from tkf_autodiff import ops
from tkf_autodiff.tensor import Tensor
from tkf_layers.encoder import linear
from tkf_layers.init import ParamInit, ParamTree
from tkf_types.enums import HeadType


def head_input_dim(head_type: HeadType, num_tokens: int, dim: int) -> int:
    """ Returns the width of the pooled vector the head's affine map consumes """
    if head_type == HeadType.TOKEN_WISE:
        return num_tokens
    if head_type == HeadType.CHANNEL_WISE:
        return dim
    return num_tokens + dim


def build_head_params(head_type: HeadType, num_tokens: int, dim: int, num_classes: int,
                      init: ParamInit, bias: bool=True) -> ParamTree:
    """ Allocates the head's affine map; TokenWise and Mixing bind the token count """
    return init.linear(head_input_dim(head_type, num_tokens, dim), num_classes, bias=bias)


def pool_tokens(tokens: Tensor, head_type: HeadType) -> Tensor:
    """ Pools [B, N, D] tokens into the head's input vector
    Arguments:
        tokens: the final tokens
        head_type: TokenWise averages over D (one value per token), ChannelWise averages over
                   N (one value per channel), Mixing concatenates both
    Return:
        Returns the [B, N], [B, D] or [B, N + D] pooled tensor
    """
    if head_type == HeadType.TOKEN_WISE:
        return ops.mean_pool(tokens, axis=2)
    if head_type == HeadType.CHANNEL_WISE:
        return ops.mean_pool(tokens, axis=1)
    return ops.concat([ops.mean_pool(tokens, axis=2), ops.mean_pool(tokens, axis=1)], axis=1)


def head_forward(tokens: Tensor, head_type: HeadType, params: ParamTree) -> Tensor:
    """ Pools the tokens and maps them to class logits
    Arguments:
        tokens: the [B, N, D] tokens
        head_type: the pooling type
        params: {'w': [in, K], 'b': [K]}
    Return:
        Returns the [B, K] logits
    Raises:
        ValueError: when the pooled width doesn't match the head weights
    """
    pooled = pool_tokens(tokens, head_type)
    if pooled.shape[1] != params['w'].shape[0]:
        raise ValueError(f'{head_type.value} head expects {params["w"].shape[0]} pooled values '
                         f'but tokens {tokens.shape} give {pooled.shape[1]}')
    return linear(pooled, params)
