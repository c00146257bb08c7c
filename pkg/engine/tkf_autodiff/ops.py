"""This script contains the differentiable primitives built on numpy. Every primitive
computes its forward result and registers the backward rule with the active tape
"""

import math
from typing import Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, apply_op, as_tensor

# Constant used by the tanh approximation of GELU
GELU_COEFF = 0.044715
GELU_SCALE = math.sqrt(2.0 / math.pi)

Operand = Union[Tensor, np.ndarray, float, int]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """ Sums out the axes numpy broadcasting added so the gradient matches the input shape
    Arguments:
        grad: the gradient in the broadcast shape
        shape: the shape of the input
    Return:
        Returns the gradient reduced to the input shape
    """
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_dtypes(op: str, *tensors: Tensor) -> None:
    """ Makes sure all the tensors share one dtype """
    dtypes = {one_tensor.dtype for one_tensor in tensors}
    if len(dtypes) > 1:
        raise ValueError(f'{op}: mixed dtypes {sorted(str(one) for one in dtypes)}')


def add(a: Operand, b: Operand) -> Tensor:
    """ Elementwise a + b with broadcasting """
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_dtypes('add', a, b)

    def vjp(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return apply_op('add', (a, b), a.data + b.data, vjp)


def sub(a: Operand, b: Operand) -> Tensor:
    """ Elementwise a - b with broadcasting """
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_dtypes('sub', a, b)

    def vjp(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return apply_op('sub', (a, b), a.data - b.data, vjp)


def mul(a: Operand, b: Operand) -> Tensor:
    """ Elementwise a * b with broadcasting """
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_dtypes('mul', a, b)

    def vjp(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return apply_op('mul', (a, b), a.data * b.data, vjp)


def div(a: Operand, b: Operand) -> Tensor:
    """ Elementwise a / b with broadcasting """
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_dtypes('div', a, b)

    def vjp(grad):
        return _unbroadcast(grad / b.data, a.shape), \
               _unbroadcast(-grad * a.data / (b.data * b.data), b.shape)

    return apply_op('div', (a, b), a.data / b.data, vjp)


def neg(x: Tensor) -> Tensor:
    """ Elementwise negation """
    return apply_op('neg', (x,), -x.data, lambda grad: (-grad,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """ Matrix product over the last two axes; leading axes broadcast
    Arguments:
        a: tensor of shape [..., m, k]
        b: tensor of shape [..., k, n]
    Return:
        Returns the [..., m, n] product
    Raises:
        ValueError: when the inner extents differ, naming both shapes
    """
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f'matmul dimension mismatch: {a.shape} x {b.shape}')
    _check_dtypes('matmul', a, b)

    def vjp(grad):
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return apply_op('matmul', (a, b), np.matmul(a.data, b.data), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """ Returns the tensor with a new shape (row-major order preserved) """
    in_shape = x.shape
    return apply_op('reshape', (x,), x.data.reshape(tuple(shape)),
                    lambda grad: (grad.reshape(in_shape),))


def transpose(x: Tensor, axes: Optional[Sequence[int]]=None) -> Tensor:
    """ Permutes the axes (reverses them when no permutation is given) """
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return apply_op('transpose', (x,), np.transpose(x.data, axes),
                    lambda grad: (np.transpose(grad, inverse),))


def getitem(x: Tensor, index) -> Tensor:
    """ Basic or advanced indexing; the gradient scatters back into the source positions """
    in_shape = x.shape

    def vjp(grad):
        full = np.zeros(in_shape, dtype=grad.dtype)
        np.add.at(full, index, grad)
        return (full,)

    return apply_op('getitem', (x,), x.data[index], vjp)


def concat(tensors: Sequence[Tensor], axis: int=0) -> Tensor:
    """ Joins tensors along an axis
    Arguments:
        tensors: the tensors to join; all extents except the axis must agree
        axis: the axis to join along
    Return:
        Returns the joined tensor
    Raises:
        ValueError: on mismatched non-axis extents
    """
    tensors = [as_tensor(one) for one in tensors]
    if not tensors:
        raise ValueError('concat needs at least one tensor')
    first = tensors[0]
    axis = axis % first.ndim
    for one_tensor in tensors[1:]:
        other = list(one_tensor.shape)
        expected = list(first.shape)
        if len(other) != len(expected):
            raise ValueError(f'concat rank mismatch: {first.shape} and {one_tensor.shape}')
        other[axis] = expected[axis] = 0
        if other != expected:
            raise ValueError(f'concat extents differ off axis {axis}: {first.shape} and '
                             f'{one_tensor.shape}')
    _check_dtypes('concat', *tensors)

    splits = np.cumsum([one.shape[axis] for one in tensors])[:-1]

    def vjp(grad):
        return tuple(np.split(grad, splits, axis=axis))

    return apply_op('concat', tuple(tensors),
                    np.concatenate([one.data for one in tensors], axis=axis), vjp)


def sum(x: Tensor, axis=None, keepdims: bool=False) -> Tensor:
    """ Sum over an axis, several axes, or everything when axis is None """
    # pylint: disable=redefined-builtin
    in_shape = x.shape

    def vjp(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        elif axis is None and not keepdims:
            grad = np.reshape(grad, (1,) * len(in_shape))
        return (np.broadcast_to(grad, in_shape).copy(),)

    return apply_op('sum', (x,), np.sum(x.data, axis=axis, keepdims=keepdims), vjp)


def mean(x: Tensor) -> Tensor:
    """ Mean of every element, as a scalar """
    in_shape = x.shape
    count = max(x.size, 1)

    def vjp(grad):
        return (np.full(in_shape, np.asarray(grad).reshape(-1)[0] / count, dtype=x.dtype),)

    return apply_op('mean', (x,), np.mean(x.data), vjp)


def mean_pool(x: Tensor, axis: int) -> Tensor:
    """ Arithmetic mean along one axis, removing it
    Arguments:
        x: the tensor to pool
        axis: the axis to average away
    Return:
        Returns the pooled tensor
    """
    axis = axis % x.ndim
    extent = x.shape[axis]
    in_shape = x.shape

    def vjp(grad):
        return (np.broadcast_to(np.expand_dims(grad, axis) / extent, in_shape).copy(),)

    return apply_op('mean_pool', (x,), np.mean(x.data, axis=axis), vjp)


def relu(x: Tensor) -> Tensor:
    """ max(x, 0) """
    mask = x.data > 0
    return apply_op('relu', (x,), np.where(mask, x.data, 0), lambda grad: (grad * mask,))


def _gelu_derivative(values: np.ndarray) -> np.ndarray:
    """ Derivative of the tanh-approximation GELU """
    inner = GELU_SCALE * (values + GELU_COEFF * values ** 3)
    tanh = np.tanh(inner)
    return 0.5 * (1.0 + tanh) + \
           0.5 * values * (1.0 - tanh * tanh) * GELU_SCALE * (1.0 + 3.0 * GELU_COEFF * values ** 2)


def gelu(x: Tensor) -> Tensor:
    """ GELU activation, tanh approximation """
    values = x.data
    out = 0.5 * values * (1.0 + np.tanh(GELU_SCALE * (values + GELU_COEFF * values ** 3)))
    return apply_op('gelu', (x,), out, lambda grad: (grad * _gelu_derivative(values),))


def softmax(x: Tensor, axis: int=-1) -> Tensor:
    """ exp(x - max) / sum along the axis; every slice sums to one """
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / np.sum(exps, axis=axis, keepdims=True)

    def vjp(grad):
        return (probs * (grad - np.sum(grad * probs, axis=axis, keepdims=True)),)

    return apply_op('softmax', (x,), probs, vjp)


def log_softmax(x: Tensor, axis: int=-1) -> Tensor:
    """ Log of the softmax, computed with log-sum-exp stabilization """
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - log_norm

    def vjp(grad):
        return (grad - np.exp(out) * np.sum(grad, axis=axis, keepdims=True),)

    return apply_op('log_softmax', (x,), out, vjp)


def pick(x: Tensor, indices: np.ndarray) -> Tensor:
    """ Selects x[i, indices[i]] for every row i of a 2-D tensor """
    rows = np.arange(x.shape[0])
    indices = np.asarray(indices, dtype=np.int64)
    in_shape = x.shape

    def vjp(grad):
        full = np.zeros(in_shape, dtype=grad.dtype)
        np.add.at(full, (rows, indices), grad)
        return (full,)

    return apply_op('pick', (x,), x.data[rows, indices], vjp)


def layer_norm(x: Tensor, gamma: Optional[Tensor], beta: Optional[Tensor],
               eps: float=1e-5) -> Tensor:
    """ Normalizes every last-axis slice to zero mean and unit population variance, then
        applies the optional affine gamma/beta
    Arguments:
        x: the [..., D] tensor
        gamma: scale of shape [D] or None
        beta: shift of shape [D] or None
        eps: added to the variance
    Return:
        Returns the normalized tensor
    Raises:
        ValueError: if gamma or beta don't have shape [D], or eps isn't positive
    """
    if eps <= 0:
        raise ValueError(f'layer_norm eps must be positive, got {eps}')
    extent = x.shape[-1]
    for label, param in (('gamma', gamma), ('beta', beta)):
        if param is not None and param.shape != (extent,):
            raise ValueError(f'layer_norm {label} shape {param.shape} does not match ({extent},)')

    centered = x.data - np.mean(x.data, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    lead_axes = tuple(range(x.ndim - 1))

    def vjp(grad):
        grad_normed = grad * gamma.data if gamma is not None else grad
        grad_x = inv_std * (grad_normed - np.mean(grad_normed, axis=-1, keepdims=True) -
                            normed * np.mean(grad_normed * normed, axis=-1, keepdims=True))
        grad_gamma = np.sum(grad * normed, axis=lead_axes) if gamma is not None else None
        grad_beta = np.sum(grad, axis=lead_axes) if beta is not None else None
        return grad_x, grad_gamma, grad_beta

    inputs = (x, gamma if gamma is not None else as_tensor(0.0, like=x),
              beta if beta is not None else as_tensor(0.0, like=x))
    return apply_op('layer_norm', inputs, out, vjp)
