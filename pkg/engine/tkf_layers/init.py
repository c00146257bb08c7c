"""This script contains parameter allocation and the nested parameter tree helpers
"""

from typing import Dict, Iterator, Tuple

import numpy as np

from tkf_autodiff.tensor import Tensor

# Truncation bound of the normal initializer, in standard deviations
TRUNC_BOUND = 2.0

ParamTree = Dict[str, object]


class ParamInit:
    """ Allocates initialized parameter tensors from one seeded generator. Allocation order
        fixes the values, so building the same model twice with the same seed gives
        identical parameters
    """

    def __init__(self, seed: int=0, init_std: float=0.02, dtype: str='float32',
                 materialize: bool=True, zero_residual_outputs: bool=False):
        """ Initialize an instance
        Arguments:
            seed: seeds the generator
            init_std: standard deviation of the truncated normal initializer
            dtype: the parameter data type
            materialize: when False every tensor is a zero-stride view that only carries
                         its shape (used for parameter reports of large models)
            zero_residual_outputs: zero the attention output and MLP output weights so
                                   every transformer block starts as the identity
        """
        self.rng = np.random.default_rng(seed)
        self.init_std = init_std
        self.dtype = np.dtype(dtype)
        self.materialize = materialize
        self.zero_residual_outputs = zero_residual_outputs

    def _tensor(self, values: np.ndarray) -> Tensor:
        """ Wraps values as a trainable tensor """
        return Tensor(values, requires_grad=True, dtype=self.dtype)

    def _placeholder(self, shape: tuple) -> Tensor:
        """ Returns a shape-only tensor """
        return self._tensor(np.broadcast_to(np.zeros((), dtype=self.dtype), shape))

    def trunc_normal(self, shape: tuple) -> Tensor:
        """ Normal values with standard deviation init_std, redrawn outside two deviations """
        if not self.materialize:
            return self._placeholder(shape)
        values = self.rng.standard_normal(shape)
        outside = np.abs(values) > TRUNC_BOUND
        while np.any(outside):
            values[outside] = self.rng.standard_normal(int(np.count_nonzero(outside)))
            outside = np.abs(values) > TRUNC_BOUND
        return self._tensor(values * self.init_std)

    def he_normal(self, shape: tuple, fan_in: int) -> Tensor:
        """ Normal values with variance 2 / fan_in """
        if not self.materialize:
            return self._placeholder(shape)
        return self._tensor(self.rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1)))

    def zeros(self, shape: tuple) -> Tensor:
        """ All zeros """
        if not self.materialize:
            return self._placeholder(shape)
        return self._tensor(np.zeros(shape))

    def ones(self, shape: tuple) -> Tensor:
        """ All ones """
        if not self.materialize:
            return self._placeholder(shape)
        return self._tensor(np.ones(shape))

    def conv(self, out_channels: int, in_channels: int, kernel: int) -> Tensor:
        """ He-initialized [O, C, k, k] convolution kernel """
        return self.he_normal((out_channels, in_channels, kernel, kernel),
                              in_channels * kernel * kernel)

    def tconv(self, in_channels: int, out_channels: int, kernel: int, stride: int) -> Tensor:
        """ He-initialized [C, O, k, k] transposed convolution kernel. Each output pixel sees
            C * k * k / s^2 inputs
        """
        fan_in = max(in_channels * kernel * kernel // (stride * stride), 1)
        return self.he_normal((in_channels, out_channels, kernel, kernel), fan_in)

    def fan_in_normal(self, shape: tuple, fan_in: int) -> Tensor:
        """ Normal values with variance 1 / fan_in, so outputs keep the input scale """
        if not self.materialize:
            return self._placeholder(shape)
        return self._tensor(self.rng.standard_normal(shape) / np.sqrt(max(fan_in, 1)))

    def linear(self, in_dim: int, out_dim: int, bias: bool=True,
               zero_weight: bool=False, fan_in_scaled: bool=False) -> ParamTree:
        """ Returns {'w': [in, out], 'b': [out]} with a truncated normal weight
        Arguments:
            in_dim: input width
            out_dim: output width
            bias: include a (zero) bias
            zero_weight: zero the weight instead of drawing it
            fan_in_scaled: draw the weight with variance 1 / in_dim instead of init_std; used
                           by projections with no residual path around them
        """
        if zero_weight:
            weight = self.zeros((in_dim, out_dim))
        elif fan_in_scaled:
            weight = self.fan_in_normal((in_dim, out_dim), in_dim)
        else:
            weight = self.trunc_normal((in_dim, out_dim))
        params = {'w': weight}
        if bias:
            params['b'] = self.zeros((out_dim,))
        return params

    def norm(self, channels: int) -> ParamTree:
        """ Returns {'gamma': ones, 'beta': zeros} """
        return {'gamma': self.ones((channels,)), 'beta': self.zeros((channels,))}


def iter_params(tree: ParamTree, prefix: str='') -> Iterator[Tuple[str, Tensor]]:
    """ Yields (dotted name, tensor) pairs in insertion order """
    for key, value in tree.items():
        name = f'{prefix}{key}'
        if isinstance(value, Tensor):
            yield name, value
        elif isinstance(value, dict):
            yield from iter_params(value, name + '.')
        elif isinstance(value, (list, tuple)):
            for idx, one_value in enumerate(value):
                if isinstance(one_value, Tensor):
                    yield f'{name}.{idx}', one_value
                else:
                    yield from iter_params(one_value, f'{name}.{idx}.')


def flatten_params(tree: ParamTree) -> Dict[str, Tensor]:
    """ Returns the tree's tensors keyed by dotted name; the tensors are shared, not copied """
    return dict(iter_params(tree))


def set_requires_grad(tree: ParamTree, requires_grad: bool) -> None:
    """ Turns gradient accumulation on or off for every tensor in the tree """
    for _, one_tensor in iter_params(tree):
        one_tensor.requires_grad = requires_grad


def count_tensor_params(tree: ParamTree) -> int:
    """ Returns the number of scalars held by the tree """
    return int(sum(one.size for _, one in iter_params(tree)))
