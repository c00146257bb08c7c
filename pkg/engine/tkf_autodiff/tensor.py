"""This script contains the tensor type, the operation tape and reverse-mode gradient
accumulation
"""

from contextlib import contextmanager
from dataclasses import dataclass
import threading
from typing import Callable, Generator, Optional, Sequence, Union

import numpy as np

import tokfuse_env as env
from tokfuse_errors import NumericalError

# Data types a tensor may hold
SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Data type used when none is requested
DEFAULT_DTYPE = np.dtype(np.float32)

# Per-thread recording state: a stack of active tapes (None entries suspend recording)
_THREAD_STATE = threading.local()

# Whether every primitive output is checked for non-finite values
_ANOMALY = {'enabled': env.DETECT_ANOMALY}


class Tensor:
    """ An n-dimensional array that can take part in gradient computation
    """

    def __init__(self, data: Union[np.ndarray, float, int, Sequence], requires_grad: bool=False,
                 dtype: Union[np.dtype, str, type, None]=None, name: Optional[str]=None):
        """ Initialize an instance
        Arguments:
            data: the values for the tensor
            requires_grad: set to True to have gradients accumulated into this tensor
            dtype: float32 or float64; defaults to the data's own float type, or float32
            name: optional name used when reporting
        """
        array = np.asarray(data)
        if dtype is None:
            dtype = array.dtype if array.dtype in SUPPORTED_DTYPES else DEFAULT_DTYPE
        dtype = np.dtype(dtype)
        if dtype not in SUPPORTED_DTYPES:
            raise ValueError(f'Unsupported tensor dtype {dtype}: use float32 or float64')

        self.data = array.astype(dtype, copy=False)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    def __repr__(self) -> str:
        """ Return a string representation """
        label = f' name={self.name}' if self.name else ''
        return f'Tensor(shape={self.shape}, dtype={self.dtype}{label}, ' \
               f'requires_grad={self.requires_grad})'

    @property
    def shape(self) -> tuple:
        """ Returns the extents of the tensor """
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        """ Returns the data type """
        return self.data.dtype

    @property
    def ndim(self) -> int:
        """ Returns the number of axes """
        return self.data.ndim

    @property
    def size(self) -> int:
        """ Returns the number of scalars """
        return self.data.size

    def item(self) -> float:
        """ Returns the value of a single-element tensor as a Python float """
        if self.data.size != 1:
            raise ValueError(f'item() needs a single-element tensor, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        """ Clears any accumulated gradient """
        self.grad = None

    # The operator overloads defer to the primitives in ops
    def __add__(self, other):
        from tkf_autodiff import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from tkf_autodiff import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from tkf_autodiff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from tkf_autodiff import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from tkf_autodiff import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from tkf_autodiff import ops
        return ops.mul(self, other)

    def __truediv__(self, other):
        from tkf_autodiff import ops
        return ops.div(self, other)

    def __neg__(self):
        from tkf_autodiff import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from tkf_autodiff import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from tkf_autodiff import ops
        return ops.getitem(self, index)

    def reshape(self, *shape) -> 'Tensor':
        """ Returns a reshaped tensor """
        from tkf_autodiff import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        """ Returns a tensor with its axes permuted """
        from tkf_autodiff import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool=False) -> 'Tensor':
        """ Returns the sum over the axis (all axes when None) """
        from tkf_autodiff import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)


@dataclass
class Node:
    """ One recorded operation: its inputs, its output and the rule mapping the output
        gradient onto the input gradients
    """
    op: str
    inputs: tuple
    output: Tensor
    vjp: Callable[[np.ndarray], tuple]


class Tape:
    """ Ordered record of the operations applied while it is active. Nodes are appended
        in execution order, so the list is always a valid topological order
    """

    def __init__(self):
        """ Initialize an instance """
        self._nodes = []

    def __len__(self) -> int:
        """ Returns the number of recorded nodes """
        return len(self._nodes)

    def __enter__(self) -> 'Tape':
        """ Makes this tape the active one for the current thread """
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback) -> None:
        """ Stops recording onto this tape """
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    @property
    def nodes(self) -> tuple:
        """ Returns the recorded nodes in execution order """
        return tuple(self._nodes)

    def record(self, node: Node) -> None:
        """ Appends a node
        Arguments:
            node: the operation node to record
        """
        self._nodes.append(node)

    def op_counts(self) -> dict:
        """ Returns how many times each operation was recorded """
        counts = {}
        for one_node in self._nodes:
            counts[one_node.op] = counts.get(one_node.op, 0) + 1
        return counts


def _tape_stack() -> list:
    """ Returns the current thread's stack of tapes """
    if not hasattr(_THREAD_STATE, 'stack'):
        _THREAD_STATE.stack = []
    return _THREAD_STATE.stack


def active_tape() -> Optional[Tape]:
    """ Returns the tape currently recording in this thread, or None """
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_tape() -> Generator:
    """ Suspends recording for the enclosed block (forward-only evaluation)
    """
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def anomaly_enabled() -> bool:
    """ Returns whether non-finite detection is on """
    return _ANOMALY['enabled']


def set_detect_anomaly(enabled: bool) -> None:
    """ Turns non-finite detection on or off
    Arguments:
        enabled: the new state
    """
    _ANOMALY['enabled'] = bool(enabled)


@contextmanager
def detect_anomaly(enabled: bool=True) -> Generator:
    """ Enables (or disables) non-finite detection for the enclosed block
    Arguments:
        enabled: the state to use inside the block
    """
    previous = _ANOMALY['enabled']
    _ANOMALY['enabled'] = bool(enabled)
    try:
        yield
    finally:
        _ANOMALY['enabled'] = previous


def as_tensor(value, like: Optional[Tensor]=None) -> Tensor:
    """ Wraps constants as non-differentiable tensors
    Arguments:
        value: a Tensor, array or scalar
        like: when given, constants take this tensor's dtype
    Return:
        Returns a Tensor
    """
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, dtype=like.dtype if like is not None else None)


def apply_op(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
             vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    """ Wraps the result of a primitive and records it on the active tape
    Arguments:
        op: the name of the primitive
        inputs: the input tensors
        out_data: the forward result
        vjp: maps the output gradient onto a tuple of input gradients (None for no gradient)
    Return:
        Returns the output tensor
    Raises:
        NumericalError: when anomaly detection is on and the result isn't finite
    """
    dtype = inputs[0].dtype if inputs else None
    if _ANOMALY['enabled'] and not np.all(np.isfinite(out_data)):
        raise NumericalError(f'Non-finite value produced by {op}')

    tape = active_tape()
    requires_grad = tape is not None and any(one_input.requires_grad for one_input in inputs)
    out = Tensor(np.asarray(out_data, dtype=dtype), requires_grad=requires_grad)
    if requires_grad:
        tape.record(Node(op, tuple(inputs), out, vjp))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """ Replays the tape in reverse, accumulating gradients onto every leaf tensor that
        requires them. Gradients add onto whatever the leaves already hold
    Arguments:
        loss: the scalar to differentiate
        tape: the tape holding the loss's full ancestry
    Raises:
        ValueError: if the loss isn't a scalar
    """
    if loss.size != 1:
        raise ValueError(f'backward needs a scalar loss, got shape {loss.shape}')

    grads = {id(loss): np.ones_like(loss.data)}
    produced = set()
    nodes = tape.nodes
    for one_node in nodes:
        produced.add(id(one_node.output))

    leaves = {}
    for one_node in reversed(nodes):
        out_grad = grads.pop(id(one_node.output), None)
        if out_grad is None:
            continue

        in_grads = one_node.vjp(out_grad)
        for one_input, one_grad in zip(one_node.inputs, in_grads):
            if one_grad is None or not one_input.requires_grad:
                continue
            key = id(one_input)
            one_grad = np.asarray(one_grad, dtype=one_input.dtype)
            if key in grads:
                grads[key] = grads[key] + one_grad
            else:
                grads[key] = one_grad
            if key not in produced:
                leaves[key] = one_input

    # A loss with no recorded ancestry is its own leaf
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss

    for key, one_leaf in leaves.items():
        leaf_grad = grads.get(key)
        if leaf_grad is None:
            continue
        leaf_grad = leaf_grad.reshape(one_leaf.shape)
        one_leaf.grad = leaf_grad.copy() if one_leaf.grad is None else one_leaf.grad + leaf_grad
