import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mapignn import tensor as T
from mapignn.errors import ContractError, ShapeError, TrainingDivergenceError

from conftest import FD_RTOL, fd_check, leaf


def naive_matmul(A, B):
    n, k = A.shape
    m = B.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += A[i, t] * B[t, j]
            out[i, j] = acc
    return out


def test_matmul_matches_triple_loop(rng):
    A, B = rng.standard_normal((5, 4)), rng.standard_normal((4, 6))
    out = T.matmul(T.Tensor(A), T.Tensor(B)).data
    assert np.max(np.abs(out - naive_matmul(A, B))) < 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


def test_nonfinite_input_rejected():
    with pytest.raises(ContractError):
        T.Tensor([[1.0, np.nan]])


def test_softmax_extended_precision_row():
    row = np.array([[1.5, -0.3, 2.2, 0.0, -1.1]])
    # frozen from a 50-digit evaluation of exp(v) / sum(exp)
    expected = [0.2876493163033485, 0.047548112182642994, 0.5792545895078997,
                0.06418323801335249, 0.021364743992756417]
    out = T.row_softmax(row).data[0]
    assert np.max(np.abs(out - expected)) < 1e-12


def test_masked_softmax_zeroes_outside_mask():
    out = T.row_softmax(np.array([[3.0, 1.0, -2.0]]), mask=[[0, 2]]).data
    assert out[0, 1] == 0.0
    assert out[0].sum() == pytest.approx(1.0, abs=1e-15)


def test_softmax_empty_mask_is_degenerate():
    with pytest.raises(ContractError, match="degenerate"):
        T.row_softmax(np.zeros((2, 3)), mask=np.array([[True, False, False], [False] * 3]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = T.row_softmax(x).data
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_cross_entropy_masked_value():
    logits = np.array([[2.0, 0.0], [0.5, 1.5], [-1.0, 0.3], [0.7, -0.2]])
    loss = T.cross_entropy(logits, np.array([0, 1, 0, 1]), mask=[0, 1, 2])
    assert abs(loss.item() - 0.6603993841313959) < 1e-12


def test_cross_entropy_gradient_zero_outside_mask(rng):
    x = leaf(rng, 6, 2)
    T.backward(T.cross_entropy(x, np.array([0, 1, 1, 0, 1, 0]), mask=[1, 4]))
    outside = np.setdiff1d(np.arange(6), [1, 4])
    assert np.all(x.grad[outside] == 0.0)
    assert np.any(x.grad[[1, 4]] != 0.0)


@pytest.mark.parametrize(
    "name",
    ["identity", "relu", "leaky_relu", "elu", "sigmoid", "tanh"],
)
def test_activation_gradients(rng, name):
    # keep inputs away from kinks at zero
    x = T.Tensor(rng.choice([-1, 1], (5, 4)) * rng.uniform(0.1, 2.0, (5, 4)), requires_grad=True)
    w = T.Tensor(rng.standard_normal((5, 4)))
    fn = T.activation(name)
    assert fd_check(lambda: T.sum_all(T.mul(fn(x), w)), [x], rng) < FD_RTOL


def test_unknown_activation():
    with pytest.raises(ContractError):
        T.activation("swish-ish")


def test_composite_gradient(rng):
    A, B = leaf(rng, 4, 3), leaf(rng, 3, 5)
    b = leaf(rng, 1, 5)
    mask = [[0, 2, 4], [1, 3], [0, 1, 2, 3, 4], [4]]

    def loss():
        h = T.tanh(T.add_bias(A @ B, b))
        s = T.row_softmax(h, mask=mask)
        z = T.concat([s, h], axis=1)
        return T.mean_all(T.mul(z, z)) + T.scale(T.abs_sum(B), 0.1) + T.sq_sum(A)

    assert fd_check(loss, [A, B, b], rng, coords=25) < FD_RTOL


def test_losses_gradients(rng):
    X = leaf(rng, 6, 3)
    Y = T.Tensor(rng.standard_normal((6, 3)))
    labels = np.array([0, 2, 1, 1, 0, 2])
    assert fd_check(lambda: T.mse(X, Y), [X], rng) < FD_RTOL
    assert fd_check(lambda: T.cross_entropy(X, labels, [0, 2, 3]), [X], rng) < FD_RTOL
    assert fd_check(lambda: T.sum_all(T.mul(T.log_softmax(X), Y)), [X], rng) < FD_RTOL


def test_structural_ops_gradients(rng):
    X = leaf(rng, 4, 3, 2)
    Wb = leaf(rng, 4, 2, 3)
    idx = np.array([0, 2, 2, 3, 1, 0])

    def loss():
        p = T.bmm(X, Wb)  # (4, 3, 3)
        q = T.reshape(T.transpose(p, (1, 0, 2)), (12, 3))
        r = T.take_rows(q, idx)
        return T.sum_all(T.mul(r, r)) + T.sum_all(T.mean_axis(p, 1))

    assert fd_check(loss, [X, Wb], rng, coords=24) < FD_RTOL


def test_gradient_accumulates_over_reuse(rng):
    x = leaf(rng, 3, 3)
    T.backward(T.sum_all(x + x + x))
    assert np.array_equal(x.grad, np.full((3, 3), 3.0))


def test_linearity_of_backward(rng):
    A = leaf(rng, 3, 4)
    Mt = T.Tensor(rng.standard_normal((4, 2)))

    def f():
        return T.sq_sum(T.tanh(A))

    def g():
        return T.abs_sum(A @ Mt)

    T.backward(f())
    gf, A.grad = A.grad.copy(), None
    T.backward(g())
    gg, A.grad = A.grad.copy(), None
    T.backward(T.scale(f(), 2.0) + T.scale(g(), 0.5))
    assert np.allclose(A.grad, 2.0 * gf + 0.5 * gg, atol=1e-12)


def test_backward_requires_scalar(rng):
    with pytest.raises(ContractError):
        T.backward(leaf(rng, 2, 2) * 2.0)


def test_no_grad_records_nothing(rng):
    x = leaf(rng, 2, 2)
    with T.no_grad():
        y = T.tanh(x)
    assert not y.requires_grad
    assert T.is_grad_enabled()


def test_binary_broadcast_is_narrow():
    with pytest.raises(ShapeError):
        T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((1, 3))))
    out = T.add(T.Tensor(np.ones((2, 3))), 2.0)
    assert np.array_equal(out.data, np.full((2, 3), 3.0))


def test_adam_quadratic_bowl():
    target = np.array([[1.5, -2.0, 0.25]])
    params = T.ParameterSet()
    w = params.zeros("w", (1, 3))
    for _ in range(500):
        params.zero_grad()
        T.backward(T.sq_sum(w - T.Tensor(target)))
        T.adam_step(params, lr=0.05)
    assert np.max(np.abs(w.data - target)) < 1e-3


def test_adam_first_step_moves_by_lr():
    params = T.ParameterSet()
    w = params.add("w", [[1.0, -1.0]])
    T.backward(T.sum_all(T.mul(w, T.Tensor([[3.0, -0.5]]))))
    T.adam_step(params, lr=0.1)
    # bias-corrected first step has magnitude lr * g / (|g| + eps)
    assert np.allclose(w.data, [[0.9, -0.9]], atol=1e-7)
    assert params.step_count == 1


def test_adam_nonfinite_gradient_diverges():
    params = T.ParameterSet()
    w = params.add("w", [[1.0]])
    w.grad = np.array([[np.inf]])
    with pytest.raises(TrainingDivergenceError):
        T.adam_step(params)
    assert w.data[0, 0] == 1.0


def test_parameter_names_unique(rng):
    params = T.ParameterSet()
    params.glorot("a", (3, 4), rng)
    with pytest.raises(ContractError):
        params.zeros("a", (1,))
    assert params.count() == 12
