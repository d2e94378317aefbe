"""Backward-pass correctness: hand examples plus finite-difference sweeps."""

import math

import numpy as np
import pytest

from rdpnet.errors import DomainError, ShapeError
from rdpnet.tensor import (
    Rng,
    backward,
    clamp_min,
    concat,
    div,
    erf,
    exp,
    getitem,
    grad_check,
    log,
    mean,
    mul,
    pad2d,
    pow_scalar,
    reshape,
    softmax,
    tensor,
    tsum,
    var,
    zero_grads,
)


def test_backward_requires_scalar():
    x = tensor([1.0, 2.0], tracked=True)
    with pytest.raises(ShapeError):
        backward(mul(x, x))


def test_sum_grad_is_ones():
    x = tensor(Rng(0).normal(0.0, 1.0, (3, 4)), tracked=True)
    backward(tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_sum_of_square_grad_is_2x():
    x = tensor(Rng(1).normal(0.0, 1.0, (5,)), tracked=True)
    backward(tsum(mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-15)


def test_mul_by_zero_gradient_is_zero():
    x = tensor([1.0, -2.0], tracked=True)
    backward(tsum(mul(x, 0.0)))
    np.testing.assert_array_equal(x.grad, np.zeros(2))


def test_log_derivative_at_two():
    x = tensor([2.0], tracked=True)
    report = grad_check(lambda t: tsum(log(t)), [x], step=1e-4, tolerance=1e-6)
    assert report.passed
    zero_grads([x])
    backward(tsum(log(x)))
    assert abs(x.grad[0] - 0.5) < 1e-12


def test_erf_analytic_derivative():
    x = tensor([0.5], tracked=True)
    backward(tsum(erf(x)))
    expected = 2.0 / math.sqrt(math.pi) * math.exp(-0.25)
    assert abs(x.grad[0] - expected) < 1e-12


def test_gradcheck_zero_error_on_linear():
    # x = 0 makes x +/- step exact, so the centered quotient is exactly 1.0
    x = tensor(np.zeros(7), tracked=True)
    report = grad_check(lambda t: tsum(t), [x])
    assert report.max_rel_err == 0.0


def test_gradcheck_detects_nondeterminism():
    state = {"n": 0}

    def wobbly(t):
        state["n"] += 1
        return tsum(t * float(state["n"]))

    with pytest.raises(DomainError, match="deterministic"):
        grad_check(wobbly, [tensor([1.0], tracked=True)])


def test_gradcheck_requires_float64():
    x = tensor([1.0], dtype=np.float32, tracked=True)
    with pytest.raises(ShapeError):
        grad_check(lambda t: tsum(t), [x])


def test_grad_accumulates_across_backward_calls():
    x = tensor([3.0], tracked=True)
    backward(tsum(x))
    backward(tsum(x))
    np.testing.assert_array_equal(x.grad, [2.0])


def test_unreachable_leaf_grad_stays_none():
    x = tensor([1.0], tracked=True)
    y = tensor([1.0], tracked=True)
    backward(tsum(x * 2.0))
    assert y.grad is None  # reads as zero


def test_concat_grad_splits_cotangent():
    a = tensor(Rng(2).normal(0.0, 1.0, (2, 3)), tracked=True)
    b = tensor(Rng(3).normal(0.0, 1.0, (2, 2)), tracked=True)
    w = Rng(4).normal(0.0, 1.0, (2, 5))

    def f(ta, tb):
        return tsum(mul(concat([ta, tb], axis=1), w))

    report = grad_check(f, [a, b], tolerance=1e-6)
    assert report.passed
    zero_grads([a, b])
    backward(f(a, b))
    np.testing.assert_allclose(a.grad, w[:, :3], rtol=1e-12)
    np.testing.assert_allclose(b.grad, w[:, 3:], rtol=1e-12)


def test_broadcast_backward_sums_over_expanded_axes():
    a = tensor(Rng(6).normal(0.0, 1.0, (1, 4)), tracked=True)
    b = tensor(Rng(7).normal(0.0, 1.0, (3, 1)), tracked=True)
    assert grad_check(lambda x, y: tsum(mul(x, y)), [a, b], tolerance=1e-6).passed


def test_softmax_jacobian_matches_finite_differences():
    rng = Rng(8)
    for trial in range(5):
        x = tensor(rng.derive(trial).normal(0.0, 2.0, (6,)), tracked=True)
        proj = rng.derive(trial, 1).normal(0.0, 1.0, (6,))
        report = grad_check(
            lambda t: tsum(mul(softmax(t, axis=0), proj)), [x], tolerance=1e-5
        )
        assert report.passed, report.summary()


PRIMITIVE_PROGRAMS = {
    "add": lambda t, w: tsum(mul(t + 1.5, w)),
    "sub": lambda t, w: tsum(mul(2.5 - t, w)),
    "mul": lambda t, w: tsum(mul(mul(t, t), w)),
    "div": lambda t, w: tsum(mul(div(w, t * t + 1.0), w)),
    "neg": lambda t, w: tsum(mul(-t, w)),
    "log": lambda t, w: tsum(mul(log(t * t + 0.5), w)),
    "exp": lambda t, w: tsum(mul(exp(t * 0.5), w)),
    "erf": lambda t, w: tsum(mul(erf(t), w)),
    "pow": lambda t, w: tsum(mul(pow_scalar(t * t + 0.25, 1.5), w)),
    "clamp_min": lambda t, w: tsum(mul(clamp_min(t, -0.1), w)),
    "sum": lambda t, w: tsum(mul(tsum(t, axes=0, keepdims=True), w)),
    "mean": lambda t, w: mean(mul(mean(t, axes=-1, keepdims=True), w)),
    "var": lambda t, w: tsum(mul(var(t, axes=-1, keepdims=True), w)),
    "softmax": lambda t, w: tsum(mul(softmax(t, axis=-1), w)),
    "reshape": lambda t, w: tsum(mul(reshape(t, (t.size,)), reshape(w, (w.size,)))),
    "pad2d": lambda t, w: tsum(mul(pad2d(reshape(t, (1, 1) + t.shape), 1),
                                   pad2d(reshape(w, (1, 1) + w.shape), 1) + 1.0)),
    "slice": lambda t, w: tsum(mul(getitem(t, (slice(1, None),)), getitem(w, (slice(1, None),)))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_PROGRAMS))
def test_primitive_gradients_over_random_shapes(name):
    """Every primitive passes finite differences on >= 20 random shapes/seeds."""
    f = PRIMITIVE_PROGRAMS[name]
    rng = Rng(1234)
    for case in range(20):
        crng = rng.derive(name, case)
        rows = int(crng.integers(2, 5))
        cols = int(crng.integers(2, 5))
        x = tensor(crng.normal(0.0, 1.0, (rows, cols)), tracked=True)
        w = crng.normal(0.0, 1.0, (rows, cols))
        report = grad_check(lambda t: f(t, w), [x], step=1e-4, tolerance=1e-4)
        assert report.passed, f"{name} case {case}: {report.summary()}"
