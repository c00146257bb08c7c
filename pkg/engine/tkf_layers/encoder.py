"""This script contains the pre-LN transformer encoder: multi-head self-attention, the
encoder block and block stacks
"""

import math
from typing import List, Optional, Sequence

from tkf_autodiff import ops
from tkf_autodiff.tensor import Tensor
from .init import ParamInit, ParamTree

# Added to the variance by every encoder layer norm
LN_EPS = 1e-5


class BlockCounter:
    """ Counts encoder block applications """

    def __init__(self):
        """ Initialize an instance """
        self.count = 0

    def reset(self) -> None:
        """ Sets the count back to zero """
        self.count = 0

    def tick(self) -> None:
        """ Records one block application """
        self.count += 1


def build_block_params(dim: int, mlp_ratio: int, init: ParamInit) -> ParamTree:
    """ Allocates one encoder block
    Arguments:
        dim: model width D
        mlp_ratio: the MLP hidden width is mlp_ratio * D
        init: the parameter allocator; its zero_residual_outputs flag zeroes Wo and the MLP
              output weight
    Return:
        Returns the parameter tree
    """
    hidden = mlp_ratio * dim
    zero_out = init.zero_residual_outputs
    return {'ln1': init.norm(dim),
            'attn': {'q': init.linear(dim, dim),
                     'k': init.linear(dim, dim),
                     'v': init.linear(dim, dim),
                     'o': init.linear(dim, dim, zero_weight=zero_out)},
            'ln2': init.norm(dim),
            'mlp': {'fc1': init.linear(dim, hidden),
                    'fc2': init.linear(hidden, dim, zero_weight=zero_out)},
           }


def build_stack_params(depth: int, dim: int, mlp_ratio: int, init: ParamInit) -> List[ParamTree]:
    """ Allocates depth encoder blocks """
    return [build_block_params(dim, mlp_ratio, init) for _ in range(depth)]


def linear(x: Tensor, params: ParamTree) -> Tensor:
    """ x . w (+ b) """
    out = ops.matmul(x, params['w'])
    if 'b' in params:
        out = out + params['b']
    return out


def mhsa(x: Tensor, params: ParamTree, heads: int, return_attention: bool=False):
    """ Multi-head self-attention
    Arguments:
        x: the [B, N, D] tokens
        params: the attention projections q, k, v, o
        heads: number of heads h, which must divide D
        return_attention: also return the [B, h, N, N] attention weights
    Return:
        Returns the [B, N, D] output, or (output, attention) when requested
    Raises:
        ValueError: when h doesn't divide D
    """
    batch, num_tokens, dim = x.shape
    if heads < 1 or dim % heads:
        raise ValueError(f'{heads} heads do not divide the model width {dim}')
    head_dim = dim // heads

    def split(values: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(values, (batch, num_tokens, heads, head_dim)),
                             (0, 2, 1, 3))

    query = split(linear(x, params['q']))
    key = split(linear(x, params['k']))
    value = split(linear(x, params['v']))
    scores = ops.matmul(query, ops.transpose(key, (0, 1, 3, 2))) * (1.0 / math.sqrt(head_dim))
    attention = ops.softmax(scores, axis=-1)
    mixed = ops.matmul(attention, value)
    mixed = ops.reshape(ops.transpose(mixed, (0, 2, 1, 3)), (batch, num_tokens, dim))
    out = linear(mixed, params['o'])
    if return_attention:
        return out, attention
    return out


def mlp(x: Tensor, params: ParamTree) -> Tensor:
    """ D -> hidden -> D with GELU in between """
    return linear(ops.gelu(linear(x, params['fc1'])), params['fc2'])


def encoder_block(x: Tensor, params: ParamTree, heads: int,
                  counter: Optional[BlockCounter]=None) -> Tensor:
    """ t' = MHSA(LN1(t)) + t; out = MLP(LN2(t')) + t'
    Arguments:
        x: the [B, N, D] tokens
        params: the block parameters
        heads: number of attention heads
        counter: optional block application counter
    Return:
        Returns tokens of the same shape
    """
    if counter is not None:
        counter.tick()
    ln1, ln2 = params['ln1'], params['ln2']
    attended = mhsa(ops.layer_norm(x, ln1['gamma'], ln1['beta'], LN_EPS), params['attn'],
                    heads) + x
    return mlp(ops.layer_norm(attended, ln2['gamma'], ln2['beta'], LN_EPS),
               params['mlp']) + attended


def encoder_stack(x: Tensor, blocks: Sequence[ParamTree], heads: int,
                  counter: Optional[BlockCounter]=None) -> Tensor:
    """ Applies the blocks in order; no blocks returns the input unchanged """
    for one_block in blocks:
        x = encoder_block(x, one_block, heads, counter)
    return x
