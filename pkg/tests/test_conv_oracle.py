"""Convolution primitives against naive nested-loop references."""

import numpy as np
import pytest

from rdpnet.errors import ShapeError
from rdpnet.tensor import (
    Rng,
    backward,
    conv2d,
    conv_transpose2d,
    grad_check,
    tensor,
    tsum,
    mul,
)

from oracles import naive_conv2d, naive_conv_transpose2d


def test_scalar_kernel_scales_input():
    x = Rng(0).normal(0.0, 1.0, (1, 1, 3, 3))
    out = conv2d(tensor(x), tensor(np.full((1, 1, 1, 1), 2.0)))
    np.testing.assert_allclose(out.data, 2.0 * x, rtol=1e-15)


def test_all_ones_3x3_gives_nine():
    out = conv2d(tensor(np.ones((1, 1, 3, 3))), tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


def test_random_case_vs_naive_oracle():
    rng = Rng(42)
    x = rng.normal(0.0, 1.0, (2, 3, 8, 8))
    k = rng.normal(0.0, 1.0, (4, 3, 3, 3))
    b = rng.normal(0.0, 1.0, 4)
    out = conv2d(tensor(x), tensor(k), tensor(b), stride=1, padding=1)
    ref = naive_conv2d(x, k, b, stride=(1, 1), padding=(1, 1))
    assert np.abs(out.data - ref).max() < 1e-10


def _random_conv_case(crng):
    groups = int(crng.integers(0, 2))  # 0 -> groups=1, 1 -> depthwise
    cin = int(crng.integers(1, 4))
    if groups == 0:
        g = 1
        cout = int(crng.integers(1, 4))
    else:
        g = cin
        cout = cin * int(crng.integers(1, 3))
    kh = int(crng.integers(1, 4))
    kw = int(crng.integers(1, 4))
    sh = int(crng.derive(1).permutation([1, 2, 4])[0])
    sw = int(crng.derive(2).permutation([1, 2, 4])[0])
    ph = int(crng.integers(0, 3))
    pw = int(crng.integers(0, 3))
    h = kh + int(crng.integers(0, 6)) + max(0, sh - 1)
    w = kw + int(crng.integers(0, 6)) + max(0, sw - 1)
    n = int(crng.integers(1, 3))
    x = crng.normal(0.0, 1.0, (n, cin, h, w))
    k = crng.normal(0.0, 1.0, (cout, cin // g, kh, kw))
    b = crng.normal(0.0, 1.0, cout)
    return x, k, b, (sh, sw), (ph, pw), g


def test_conv2d_matches_oracle_on_50_random_cases():
    """Strides {1,2,4}, paddings {0,1,2}, groups {1, channels}."""
    rng = Rng(2024)
    checked = 0
    case = 0
    while checked < 50:
        crng = rng.derive(case)
        case += 1
        x, k, b, stride, padding, g = _random_conv_case(crng)
        out = conv2d(tensor(x), tensor(k), tensor(b), stride=stride, padding=padding, groups=g)
        ref = naive_conv2d(x, k, b, stride=stride, padding=padding, groups=g)
        assert np.abs(out.data - ref).max() < 1e-10, (x.shape, k.shape, stride, padding, g)
        checked += 1


def test_conv_transpose_matches_oracle_on_random_cases():
    rng = Rng(77)
    for case in range(25):
        crng = rng.derive(case)
        n = int(crng.integers(1, 3))
        cin = int(crng.integers(1, 4))
        cout = int(crng.integers(1, 4))
        kh = int(crng.integers(1, 4))
        kw = int(crng.integers(1, 4))
        sh = int(crng.derive(1).permutation([1, 2, 4])[0])
        sw = int(crng.derive(2).permutation([1, 2, 4])[0])
        hi = int(crng.integers(2, 6))
        wi = int(crng.integers(2, 6))
        # padding must keep the output extent positive
        ph = min(int(crng.integers(0, 3)), max(0, ((hi - 1) * sh + kh - 1) // 2))
        pw = min(int(crng.integers(0, 3)), max(0, ((wi - 1) * sw + kw - 1) // 2))
        x = crng.normal(0.0, 1.0, (n, cin, hi, wi))
        k = crng.normal(0.0, 1.0, (cin, cout, kh, kw))
        b = crng.normal(0.0, 1.0, cout)
        out = conv_transpose2d(tensor(x), tensor(k), tensor(b), stride=(sh, sw), padding=(ph, pw))
        ref = naive_conv_transpose2d(x, k, b, stride=(sh, sw), padding=(ph, pw))
        assert np.abs(out.data - ref).max() < 1e-10


def test_transpose_delta_placement():
    x = tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = conv_transpose2d(x, tensor([[[[1.0]]]]), stride=2)
    assert out.shape == (1, 1, 3, 3)
    expected = np.zeros((3, 3))
    expected[0, 0], expected[0, 2], expected[2, 0], expected[2, 2] = 1.0, 2.0, 3.0, 4.0
    np.testing.assert_array_equal(out.data[0, 0], expected)


def test_transpose_shape_arithmetic_tokens_to_pixels():
    x = tensor(np.zeros((1, 32, 16, 16)))
    k = tensor(np.zeros((32, 16, 4, 4)))
    assert conv_transpose2d(x, k, stride=4).shape == (1, 16, 64, 64)


def test_transpose_equals_conv2d_backward_input():
    """conv_transpose2d(ct, k) == d/dx [sum(conv2d(x, k) * ct)] elementwise."""
    rng = Rng(9)
    x = tensor(rng.normal(0.0, 1.0, (2, 3, 7, 7)), tracked=True)
    k = rng.normal(0.0, 1.0, (4, 3, 3, 3))
    out = conv2d(x, tensor(k), stride=2, padding=1)
    ct = rng.normal(0.0, 1.0, out.shape)
    backward(tsum(mul(out, ct)))
    via_transpose = conv_transpose2d(tensor(ct), tensor(k), stride=2, padding=1)
    np.testing.assert_allclose(x.grad, via_transpose.data, atol=1e-12)


def test_conv2d_gradients_pass_finite_differences():
    rng = Rng(31)
    x = tensor(rng.normal(0.0, 1.0, (1, 2, 5, 5)), tracked=True)
    k = tensor(rng.normal(0.0, 1.0, (3, 2, 3, 3)), tracked=True)
    b = tensor(rng.normal(0.0, 1.0, 3), tracked=True)

    def f(tx, tk, tb):
        return tsum(mul(conv2d(tx, tk, tb, stride=2, padding=1), 0.25))

    report = grad_check(f, [x, k, b], step=1e-4, tolerance=1e-4,
                        labels=["input", "kernel", "bias"])
    assert report.passed, report.summary()


def test_depthwise_conv_gradients_pass_finite_differences():
    rng = Rng(32)
    x = tensor(rng.normal(0.0, 1.0, (2, 3, 5, 5)), tracked=True)
    k = tensor(rng.normal(0.0, 1.0, (3, 1, 3, 3)), tracked=True)

    def f(tx, tk):
        return tsum(conv2d(tx, tk, padding=1, groups=3))

    assert grad_check(f, [x, k], tolerance=1e-4).passed


def test_conv_transpose_gradients_pass_finite_differences():
    rng = Rng(33)
    x = tensor(rng.normal(0.0, 1.0, (1, 3, 4, 4)), tracked=True)
    k = tensor(rng.normal(0.0, 1.0, (3, 2, 3, 3)), tracked=True)
    b = tensor(rng.normal(0.0, 1.0, 2), tracked=True)
    w = rng.normal(0.0, 1.0, (1, 2, 7, 7))  # (4-1)*2 - 2*1 + 3 = 7

    def f(tx, tk, tb):
        return tsum(mul(conv_transpose2d(tx, tk, tb, stride=2, padding=1), w))

    assert grad_check(f, [x, k, b], tolerance=1e-4).passed


def test_conv2d_channel_mismatch_error_names_dims():
    x = tensor(np.zeros((1, 3, 5, 5)))
    k = tensor(np.zeros((4, 2, 3, 3)))
    with pytest.raises(ShapeError, match="channels"):
        conv2d(x, k)
    with pytest.raises(ShapeError, match="groups=2"):
        conv2d(x, tensor(np.zeros((4, 3, 3, 3))), groups=2)


def test_conv2d_empty_output_errors():
    with pytest.raises(ShapeError, match="empty"):
        conv2d(tensor(np.zeros((1, 1, 2, 2))), tensor(np.zeros((1, 1, 5, 5))))


def test_conv_transpose_channel_mismatch():
    with pytest.raises(ShapeError, match="in_channels"):
        conv_transpose2d(tensor(np.zeros((1, 3, 4, 4))), tensor(np.zeros((2, 4, 3, 3))))
