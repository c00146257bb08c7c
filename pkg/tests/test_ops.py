"""This script contains testing of the differentiable primitives and the tape
"""

import numpy as np
import pytest

from tokfuse_errors import NumericalError
from tkf_autodiff import ops
from tkf_autodiff.tensor import Tape, Tensor, anomaly_enabled, backward, detect_anomaly, \
                                no_tape


def __grad_of(fn, *values):
    """ Returns the gradients of the scalar fn at the float64 values """
    tensors = [Tensor(np.asarray(one, dtype=np.float64), requires_grad=True) for one in values]
    with Tape() as tape:
        loss = fn(*tensors)
    backward(loss, tape)
    return [one.grad for one in tensors]


def test_tensor_defaults():
    """ Tensors default to float32 and keep float64 data as is """
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64
    with pytest.raises(ValueError):
        Tensor([1], dtype=np.int32)


def test_broadcast_gradients():
    """ Broadcast operands receive gradients summed back to their own shape """
    grad_a, grad_b = __grad_of(lambda a, b: ops.sum(a + b), np.ones((2, 3)), np.ones(3))
    assert grad_a.shape == (2, 3)
    np.testing.assert_allclose(grad_b, [2.0, 2.0, 2.0])

    grad_a, grad_b = __grad_of(lambda a, b: ops.sum(a * b), [[1.0, 2.0], [3.0, 4.0]], [10.0])
    np.testing.assert_allclose(grad_a, np.full((2, 2), 10.0))
    np.testing.assert_allclose(grad_b, [10.0])


def test_reused_input_accumulates():
    """ A tensor used twice gets both contributions """
    grad_x, = __grad_of(lambda x: ops.sum(x * x), [3.0, -2.0])
    np.testing.assert_allclose(grad_x, [6.0, -4.0])

    grad_x, = __grad_of(lambda x: ops.sum(x + x + x), [1.0])
    np.testing.assert_allclose(grad_x, [3.0])


def test_leaf_gradients_add_up():
    """ A second backward pass adds onto the stored gradient """
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = ops.sum(x * 2.0)
        backward(loss, tape)
    np.testing.assert_allclose(x.grad, [4.0, 4.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_needs_scalar():
    """ Non-scalar losses are rejected """
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = x * 2.0
    with pytest.raises(ValueError):
        backward(out, tape)


def test_no_tape_records_nothing():
    """ Forward-only evaluation leaves the tape empty """
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        with no_tape():
            out = ops.sum(x * x)
    assert len(tape) == 0
    assert not out.requires_grad


def test_tape_counts_ops():
    """ The tape keeps its nodes in execution order """
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        ops.sum(ops.relu(x @ x))
    assert [one.op for one in tape.nodes] == ['matmul', 'relu', 'sum']
    assert tape.op_counts() == {'matmul': 1, 'relu': 1, 'sum': 1}


def test_constants_are_not_recorded():
    """ Operations on constants only don't go on the tape """
    with Tape() as tape:
        ops.add(Tensor([1.0]), Tensor([2.0]))
    assert len(tape) == 0


def test_matmul_mismatch():
    """ The error names both shapes """
    with pytest.raises(ValueError, match=r'\(2, 3\) x \(4, 5\)'):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_mixed_dtypes():
    """ Mixing float32 and float64 tensors is an error """
    with pytest.raises(ValueError):
        ops.add(Tensor(np.ones(2, dtype=np.float32)), Tensor(np.ones(2, dtype=np.float64)))


def test_matmul_gradients():
    """ d(sum(A B))/dA = 1 B^T and d/dB = A^T 1 """
    a_values = np.arange(6, dtype=np.float64).reshape(2, 3)
    b_values = np.arange(12, dtype=np.float64).reshape(3, 4)
    grad_a, grad_b = __grad_of(lambda a, b: ops.sum(a @ b), a_values, b_values)
    np.testing.assert_allclose(grad_a, np.ones((2, 4)) @ b_values.T)
    np.testing.assert_allclose(grad_b, a_values.T @ np.ones((2, 4)))


def test_shape_ops_gradients():
    """ Reshape, transpose, indexing and concatenation route gradients back """
    grad_x, = __grad_of(lambda x: ops.sum(ops.transpose(ops.reshape(x, (3, 2))) *
                                          Tensor(np.arange(6.0).reshape(2, 3))),
                        np.ones(6))
    np.testing.assert_allclose(grad_x, [0.0, 3.0, 1.0, 4.0, 2.0, 5.0])

    grad_x, = __grad_of(lambda x: ops.sum(x[np.array([0, 0, 2])]), np.ones(3))
    np.testing.assert_allclose(grad_x, [2.0, 0.0, 1.0])

    grad_a, grad_b = __grad_of(lambda a, b: ops.sum(ops.concat([a, b], axis=1) *
                                                    Tensor(np.arange(5.0))),
                               np.ones((1, 2)), np.ones((1, 3)))
    np.testing.assert_allclose(grad_a, [[0.0, 1.0]])
    np.testing.assert_allclose(grad_b, [[2.0, 3.0, 4.0]])


def test_concat_mismatch():
    """ Off-axis extents have to agree """
    with pytest.raises(ValueError):
        ops.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 3)))], axis=1)


def test_mean_pool():
    """ Mean pooling removes the axis """
    x = Tensor(np.arange(6.0).reshape(1, 2, 3))
    np.testing.assert_allclose(ops.mean_pool(x, axis=1).data, [[1.5, 2.5, 3.5]])
    np.testing.assert_allclose(ops.mean_pool(x, axis=2).data, [[1.0, 4.0]])
    grad_x, = __grad_of(lambda x: ops.sum(ops.mean_pool(x, axis=1)), np.ones((1, 2, 3)))
    np.testing.assert_allclose(grad_x, np.full((1, 2, 3), 0.5))


def test_activations():
    """ ReLU and GELU values """
    x = Tensor(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_allclose(ops.relu(x).data, [0.0, 0.0, 3.0])
    gelu = ops.gelu(Tensor(np.array([0.0, 10.0, -10.0]))).data
    np.testing.assert_allclose(gelu, [0.0, 10.0, 0.0], atol=1e-6)


def test_softmax_is_a_distribution():
    """ Random inputs, including huge ones, always give non-negative rows summing to one """
    rng = np.random.default_rng(0)
    for _ in range(1000):
        size = int(rng.integers(1, 20))
        scale = 10.0 ** rng.uniform(-2, 3)
        values = rng.standard_normal((2, size)) * scale
        probs = ops.softmax(Tensor(values), axis=-1).data
        assert np.all(np.isfinite(probs))
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_shift_invariant():
    """ Adding a constant to every logit leaves softmax and log_softmax unchanged """
    values = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(ops.softmax(Tensor(values + 1000.0)).data,
                               ops.softmax(Tensor(values)).data, atol=1e-12)
    log_probs = ops.log_softmax(Tensor(values + 1000.0)).data
    assert np.all(np.isfinite(log_probs))
    np.testing.assert_allclose(log_probs, np.log(ops.softmax(Tensor(values)).data), atol=1e-12)


def test_layer_norm_statistics():
    """ Without affine parameters every slice has zero mean and unit variance """
    rng = np.random.default_rng(1)
    values = rng.standard_normal((4, 16)) * 5.0 + 3.0
    out = ops.layer_norm(Tensor(values), None, None).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_layer_norm_affine_and_errors():
    """ gamma and beta apply per feature; bad shapes and eps are rejected """
    values = Tensor(np.array([[1.0, 3.0]]))
    out = ops.layer_norm(values, Tensor(np.array([2.0, 2.0])), Tensor(np.array([1.0, 1.0])),
                         eps=1e-12).data
    np.testing.assert_allclose(out, [[-1.0, 3.0]], atol=1e-6)
    with pytest.raises(ValueError):
        ops.layer_norm(values, Tensor(np.ones(3)), None)
    with pytest.raises(ValueError):
        ops.layer_norm(values, None, None, eps=0.0)


def test_pick_gradient():
    """ Only the picked entries receive gradient """
    grad_x, = __grad_of(lambda x: ops.sum(ops.pick(x, np.array([1, 0]))), np.zeros((2, 3)))
    np.testing.assert_allclose(grad_x, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def test_anomaly_detection():
    """ With detection on a non-finite result raises """
    with np.errstate(divide='ignore'):
        ops.div(Tensor([1.0]), Tensor([0.0]))
        with detect_anomaly():
            with pytest.raises(NumericalError):
                ops.div(Tensor([1.0]), Tensor([0.0]))
    assert not anomaly_enabled()
