"""Primitive correctness: hand-computed values, finite-difference oracles,
and the Adam/schedule recurrences."""

import math

import numpy as np
import pytest

import metriclab.numcore as nc
from metriclab.numcore.tensor import _PRIMITIVES


def t(data, requires_grad=False):
    return nc.Tensor(np.asarray(data, dtype=np.float32), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------


def test_softmax_uniform():
    out = nc.softmax(t([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)


def test_softmax_rows_sum_to_one():
    rng = np.random.Generator(np.random.PCG64(0))
    out = nc.softmax(t(rng.normal(size=(8, 13)) * 5))
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(8), atol=1e-6)


def test_matmul_identity():
    x = np.arange(12, dtype=np.float32).reshape(3, 4)
    out = nc.matmul(t(np.eye(3)), t(x))
    np.testing.assert_array_equal(out.data, x)


def test_layer_norm_hand_value():
    # mean 2, biased variance 2/3; expected value from the definition
    eps = 1e-5
    x = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    expect = (x - 2.0) / np.sqrt(2.0 / 3.0 + eps)
    out = nc.layer_norm(t(x), t(np.ones(3)), t(np.zeros(3)), eps=eps)
    np.testing.assert_allclose(out.data, expect, rtol=1e-6)


def test_masked_softmax_exact_zeros():
    x = t(np.random.randn(4, 6).astype(np.float32))
    mask = np.array([1, 1, 0, 1, 0, 1], dtype=np.float32)
    out = nc.masked_softmax(x, mask)
    assert (out.data[:, 2] == 0.0).all() and (out.data[:, 4] == 0.0).all()
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-6)


def test_masked_softmax_fully_masked_row_is_zero():
    out = nc.masked_softmax(t(np.ones((2, 3))), np.zeros(3))
    assert (out.data == 0).all()


def test_cross_entropy_uniform_logits():
    v = 11
    logits = t(np.zeros((5, v)))
    loss = nc.cross_entropy(logits, np.arange(5) % v)
    assert math.isclose(loss.item(), math.log(v), rel_tol=1e-6)


def test_primitive_forward_dispatch():
    out = nc.primitive_forward("scale", t([2.0]), 3.0)
    assert out.data[0] == 6.0
    with pytest.raises(ValueError, match="unknown op-kind"):
        nc.primitive_forward("convolve", t([1.0]))


def test_non_finite_output_raises():
    big = t(np.full(4, 3e38))
    with pytest.raises(nc.NumericError):
        nc.add(big, big)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(nc.ShapeError) as err:
        nc.matmul(t(np.zeros((2, 3))), t(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


# ---------------------------------------------------------------------------
# backward: hand values
# ---------------------------------------------------------------------------


def test_backward_linear():
    w = t([[3.0]], requires_grad=True)
    x = t([[2.0]])
    loss = nc.matmul(w, x)
    nc.backward(loss)
    np.testing.assert_array_equal(w.grad, [[2.0]])


def test_backward_mse_at_minimum_is_zero():
    pred = t([1.0, 2.0, 3.0], requires_grad=True)
    loss = nc.mean_squared_error(pred, t([1.0, 2.0, 3.0]))
    nc.backward(loss)
    np.testing.assert_array_equal(pred.grad, np.zeros(3))


def test_backward_requires_scalar():
    x = t([1.0, 2.0], requires_grad=True)
    with pytest.raises(nc.GraphError):
        nc.backward(nc.scale(x, 2.0))


def test_backward_accumulates_until_reset():
    w = t([[3.0]], requires_grad=True)
    x = t([[2.0]])
    nc.backward(nc.matmul(w, x))
    nc.backward(nc.matmul(w, x))
    np.testing.assert_array_equal(w.grad, [[4.0]])
    w.zero_grad()
    nc.backward(nc.matmul(w, x))
    np.testing.assert_array_equal(w.grad, [[2.0]])


def test_backward_shared_operand():
    x = t([2.0, -1.0], requires_grad=True)
    loss = nc.mean_squared_error(nc.mul(x, x), t([0.0, 0.0]))
    nc.backward(loss)
    # d/dx mean(x^4) = 2 * x^3
    np.testing.assert_allclose(x.grad, 2 * np.array([2.0, -1.0]) ** 3, rtol=1e-5)


def test_no_grad_skips_recording():
    w = t([[3.0]], requires_grad=True)
    with nc.no_grad():
        out = nc.matmul(w, t([[2.0]]))
    assert out._bwd is None


# ---------------------------------------------------------------------------
# backward: finite-difference oracle per primitive
# ---------------------------------------------------------------------------


def _fd_check(build, params, h=1e-3, rtol=1e-3, atol=5e-4):
    """Compare analytic grads of scalar build(params) to central differences.

    The atol floor covers the float32 FD oracle's own rounding noise,
    roughly eps32 * |loss| / (2h); components above it must agree to rtol.
    """
    loss = build()
    nc.backward(loss)
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = build().item()
            flat[i] = keep - h
            down = build().item()
            flat[i] = keep
            fd[i] = (up - down) / (2 * h)
        fd = fd.reshape(p.data.shape)
        np.testing.assert_allclose(analytic, fd, rtol=rtol, atol=atol)


@pytest.mark.parametrize(
    "name",
    [
        "matmul2d",
        "matmul_batched",
        "matmul_linear3d",
        "add_broadcast",
        "mul",
        "scale",
        "embedding_gather",
        "take_rows",
        "layer_norm",
        "gelu",
        "softmax",
        "masked_softmax",
        "cross_entropy",
        "mean_squared_error",
        "concat",
        "slice_axis",
        "reshape",
        "transpose",
    ],
)
def test_vjp_matches_finite_differences(name):
    rng = np.random.Generator(np.random.PCG64(42))

    def mk(*shape):
        return nc.Tensor(rng.normal(size=shape).astype(np.float32), requires_grad=True)

    target = nc.Tensor(rng.normal(size=(3, 4)).astype(np.float32))

    def reduce(x):
        return nc.mean_squared_error(nc.reshape(x, target.shape), target)

    if name == "matmul2d":
        a, b = mk(3, 5), mk(5, 4)
        _fd_check(lambda: reduce(nc.matmul(a, b)), [a, b])
    elif name == "matmul_batched":
        a, b = mk(2, 3, 2), mk(2, 2, 2)
        _fd_check(lambda: reduce(nc.matmul(a, b)), [a, b])
    elif name == "matmul_linear3d":
        a, b = mk(2, 3, 5), mk(5, 2)
        _fd_check(lambda: reduce(nc.matmul(a, b)), [a, b])
    elif name == "add_broadcast":
        a, b = mk(3, 4), mk(4)
        _fd_check(lambda: reduce(nc.add(a, b)), [a, b])
    elif name == "mul":
        a, b = mk(3, 4), mk(3, 4)
        _fd_check(lambda: reduce(nc.mul(a, b)), [a, b])
    elif name == "scale":
        a = mk(3, 4)
        _fd_check(lambda: reduce(nc.scale(a, -1.7)), [a])
    elif name == "embedding_gather":
        table = mk(6, 4)
        ids = np.array([[0, 2, 5], [2, 2, 1]])
        tgt = nc.Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
        _fd_check(lambda: nc.mean_squared_error(nc.embedding_gather(table, ids), tgt), [table])
    elif name == "take_rows":
        a = mk(6, 4)
        rows = np.array([0, 3, 3])
        _fd_check(lambda: reduce(nc.take_rows(a, rows)), [a])
    elif name == "layer_norm":
        x, gain, bias = mk(3, 4), mk(4), mk(4)
        _fd_check(lambda: reduce(nc.layer_norm(x, gain, bias)), [x, gain, bias])
    elif name == "gelu":
        a = mk(3, 4)
        _fd_check(lambda: reduce(nc.gelu(a)), [a])
    elif name == "softmax":
        a = mk(3, 4)
        _fd_check(lambda: reduce(nc.softmax(a)), [a])
    elif name == "masked_softmax":
        a = mk(3, 4)
        mask = np.array([1, 1, 0, 1], dtype=np.float32)
        _fd_check(lambda: reduce(nc.masked_softmax(a, mask)), [a])
    elif name == "cross_entropy":
        a = mk(3, 7)
        ids = np.array([1, 0, 6])
        _fd_check(lambda: nc.cross_entropy(a, ids), [a])
    elif name == "mean_squared_error":
        a, b = mk(3, 4), mk(3, 4)
        _fd_check(lambda: nc.mean_squared_error(a, b), [a, b])
    elif name == "concat":
        a, b = mk(2, 4), mk(1, 4)
        _fd_check(lambda: reduce(nc.concat([a, b], axis=0)), [a, b])
    elif name == "slice_axis":
        a = mk(4, 6)
        tgt = nc.Tensor(rng.normal(size=(4, 3)).astype(np.float32))
        _fd_check(
            lambda: nc.mean_squared_error(nc.slice_axis(a, 1, 2, 3), tgt), [a]
        )
    elif name == "reshape":
        a = mk(2, 6)
        _fd_check(lambda: reduce(nc.reshape(a, (3, 4))), [a])
    elif name == "transpose":
        a = mk(4, 3)
        _fd_check(lambda: reduce(nc.transpose(a, (1, 0))), [a])
    else:
        raise AssertionError(name)


def test_every_listed_op_kind_is_implemented():
    assert set(_PRIMITIVES) == {
        "matmul", "add", "scale", "embedding-gather", "layer-norm", "gelu",
        "softmax", "masked-softmax", "cross-entropy", "mean-squared-error",
        "concat", "slice",
    }


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _hand_adam(g_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Reference recurrence computed independently in float64."""
    m = v = 0.0
    x = 0.0
    trail = []
    for step, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        x -= lr * m_hat / (math.sqrt(v_hat) + eps)
        trail.append(x)
    return trail


def test_adam_first_step_magnitude():
    p = nc.Parameter("w", np.zeros(1, dtype=np.float32))
    p.value.grad = np.array([0.1], dtype=np.float32)
    state = nc.AdamState.for_parameter(p)
    nc.adam_step(p, state, lr=1e-3)
    # first bias-corrected step is ~ -lr * sign(g)
    assert math.isclose(p.data[0], -1e-3, rel_tol=1e-4)
    assert state.step == 1


def test_adam_two_identical_gradients_match_hand_recurrence():
    p = nc.Parameter("w", np.zeros(1, dtype=np.float32))
    state = nc.AdamState.for_parameter(p)
    expected = _hand_adam([0.37, 0.37])
    for want in expected:
        p.value.grad = np.array([0.37], dtype=np.float32)
        nc.adam_step(p, state, lr=1e-3)
        assert math.isclose(p.data[0], want, rel_tol=1e-5)


def test_adam_zero_gradient_is_noop_from_fresh_state():
    p = nc.Parameter("w", np.array([1.5], dtype=np.float32))
    state = nc.AdamState.for_parameter(p)
    p.value.grad = np.zeros(1, dtype=np.float32)
    nc.adam_step(p, state, lr=1e-3)
    assert p.data[0] == 1.5
    assert (state.m == 0).all() and (state.v == 0).all()


def test_adam_leaves_grad_intact():
    p = nc.Parameter("w", np.zeros(2, dtype=np.float32))
    p.value.grad = np.array([0.5, -0.5], dtype=np.float32)
    nc.adam_step(p, nc.AdamState.for_parameter(p), lr=1e-2)
    np.testing.assert_array_equal(p.grad, [0.5, -0.5])


def test_adam_requires_positive_lr_and_grad():
    p = nc.Parameter("w", np.zeros(1, dtype=np.float32))
    with pytest.raises(ValueError):
        nc.adam_step(p, nc.AdamState.for_parameter(p), lr=0.0)
    with pytest.raises(ValueError, match="no gradient"):
        nc.adam_step(p, nc.AdamState.for_parameter(p), lr=1e-3)


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------


def test_lr_at_published_points():
    assert math.isclose(nc.lr_at(10_000, 2e-4, 10_000), 2e-4)
    assert math.isclose(nc.lr_at(5_000, 2e-4, 10_000), 1e-4)
    # sqrt(10000/40000) = 1/2
    assert math.isclose(nc.lr_at(40_000, 2e-4, 10_000), 1e-4)


def test_lr_at_continuous_at_warmup_boundary():
    warmup, base = 137, 3e-4
    ramp = base * warmup / warmup
    decay = base * math.sqrt(warmup / warmup)
    assert ramp == decay == nc.lr_at(warmup, base, warmup)
    # one step past the boundary moves by O(1/warmup), not a jump
    assert abs(nc.lr_at(warmup + 1, base, warmup) - base) < base / warmup


def test_lr_at_validates_inputs():
    with pytest.raises(ValueError):
        nc.lr_at(0, 1e-3, 10)
    with pytest.raises(ValueError):
        nc.lr_at(5, 1e-3, 0)


def test_deterministic_ops_bit_identical():
    rng = np.random.Generator(np.random.PCG64(3))
    x = rng.normal(size=(16, 16)).astype(np.float32)
    w = rng.normal(size=(16, 16)).astype(np.float32)

    def run():
        out = nc.gelu(nc.matmul(nc.Tensor(x), nc.Tensor(w)))
        return nc.layer_norm(out, nc.Tensor(np.ones(16)), nc.Tensor(np.zeros(16))).data

    first = run()
    for _ in range(3):
        assert np.array_equal(run(), first)
