"""Forward semantics and error contracts of the tensor primitives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdpnet.errors import DomainError, NonFiniteError, ShapeError
from rdpnet.tensor import (
    Rng,
    add,
    clamp_min,
    concat,
    div,
    exp,
    finite_checks,
    getitem,
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
)

from oracles import two_pass_mean_var


def test_add_basic():
    out = add(tensor([1.0, 2.0]), tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        add(tensor([1.0, 2.0]), tensor([1.0, 2.0, 3.0]))


def test_scalar_operand_keeps_dtype():
    x = tensor([1.0, 2.0], dtype=np.float32)
    assert (x * 2.0).dtype == np.float32
    assert (1.0 + x).dtype == np.float32


def test_mixed_dtype_rejected():
    with pytest.raises(ShapeError):
        add(tensor([1.0], dtype=np.float32), tensor([1.0], dtype=np.float64))


def test_div_by_zero_names_index():
    with pytest.raises(DomainError, match=r"\(1, 0\)"):
        div(tensor([[1.0, 1.0], [1.0, 1.0]]), tensor([[1.0, 2.0], [0.0, 3.0]]))


def test_log_domain_names_index():
    with pytest.raises(DomainError, match=r"\(2,\)"):
        log(tensor([1.0, 2.0, -1.0]))


def test_pow_scalar_cases():
    x = tensor([0.0, 0.25, 4.0])
    np.testing.assert_array_equal(pow_scalar(x, 0.0).data, [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(pow_scalar(x, 1.0).data, x.data)
    np.testing.assert_allclose(pow_scalar(x, 0.5).data, [0.0, 0.5, 2.0])
    with pytest.raises(DomainError):
        pow_scalar(tensor([-1.0]), 0.5)
    with pytest.raises(DomainError):
        pow_scalar(tensor([0.0]), -1.0)


def test_clamp_min():
    out = clamp_min(tensor([0.0, 1e-9, 0.5]), 1e-7)
    np.testing.assert_array_equal(out.data, [1e-7, 1e-7, 0.5])


def test_mean_trivial():
    assert mean(tensor([1.0, 2.0, 3.0, 4.0])).item() == 2.5


def test_var_constant_is_zero():
    assert var(tensor(np.full((5, 3), 7.0))).item() == 0.0


def test_mean_var_match_two_pass_oracle():
    rng = Rng(7)
    draws = rng.uniform(0.0, 1.0, 1000)
    m_ref, v_ref = two_pass_mean_var(draws.tolist())
    t = tensor(draws)
    assert abs(mean(t).item() - m_ref) < 1e-12
    assert abs(var(t).item() - v_ref) < 1e-12


def test_reduce_axis_out_of_range():
    with pytest.raises(ShapeError):
        tsum(tensor(np.ones((2, 3))), axes=2)


def test_reduce_empty_extent_errors():
    with pytest.raises(ShapeError):
        mean(tensor(np.ones((0, 3))), axes=0)


def test_reduce_keepdims_shapes():
    t = tensor(np.arange(24.0).reshape(2, 3, 4))
    assert tsum(t, axes=(1,), keepdims=True).shape == (2, 1, 4)
    assert tsum(t, axes=(0, 2)).shape == (3,)
    np.testing.assert_allclose(
        mean(t, axes=(0, 2)).data, t.data.mean(axis=(0, 2))
    )


def test_softmax_uniform():
    out = softmax(tensor([0.0, 0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_shift_invariance():
    x = Rng(3).normal(0.0, 2.0, (4, 5))
    a = softmax(tensor(x), axis=1).data
    b = softmax(tensor(x + 123.456), axis=1).data
    np.testing.assert_allclose(a, b, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5))
@settings(max_examples=40, deadline=None)
def test_softmax_sums_to_one(seed, rows, cols):
    x = Rng(seed).normal(0.0, 3.0, (rows, cols))
    out = softmax(tensor(x), axis=1).data
    assert np.all(out > 0) and np.all(out < 1.0 + 1e-15)
    np.testing.assert_allclose(out.sum(axis=1), np.ones(rows), atol=1e-12)


def test_concat_channel():
    a = tensor(np.ones((3, 4, 5)))
    b = tensor(np.zeros((3, 4, 5)))
    out = concat([a, b], axis=0)
    assert out.shape == (6, 4, 5)
    with pytest.raises(ShapeError):
        concat([a, tensor(np.ones((3, 4, 6)))], axis=0)


def test_pad_slice_roundtrip_identity():
    x = Rng(11).normal(0.0, 1.0, (2, 3, 4, 5))
    t = tensor(x)
    padded = pad2d(t, 2)
    back = getitem(padded, (slice(None), slice(None), slice(2, 6), slice(2, 7)))
    np.testing.assert_array_equal(back.data, x)


def test_pad2d_per_side():
    t = tensor(np.ones((1, 1, 2, 2)))
    out = pad2d(t, (1, 0, 0, 2))
    assert out.shape == (1, 1, 3, 4)
    assert out.data[0, 0, 0].sum() == 0.0


def test_reshape_errors_on_bad_size():
    with pytest.raises(ShapeError):
        reshape(tensor(np.ones(6)), (4, 2))


def test_getitem_rejects_fancy_indexing():
    with pytest.raises(ShapeError):
        getitem(tensor(np.ones((3, 3))), ([0, 1],))


def test_finite_checks_flag():
    big = tensor([1e308])
    with np.errstate(over="ignore"):
        with finite_checks(True):
            with pytest.raises(NonFiniteError, match=r"\(0,\)"):
                exp(big)
        # silent when the debug flag is off
        out = exp(big)
    assert np.isinf(out.data[0])


def test_tensor_buffers_are_readonly():
    t = tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_program_replay_is_bitwise_deterministic():
    def program(seed):
        rng = Rng(seed)
        x = tensor(rng.normal(0.0, 1.0, (4, 4)), tracked=True)
        y = softmax(mul(x, x) + exp(x * 0.25), axis=1)
        return tsum(y * y)

    a = program(99)
    b = program(99)
    assert a.item() == b.item()
    assert a.data.tobytes() == b.data.tobytes()


def test_var_is_population_form():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert abs(var(tensor(x)).item() - x.var()) < 1e-15  # numpy default ddof=0


def test_item_requires_scalar():
    with pytest.raises(ShapeError):
        tensor([1.0, 2.0]).item()


def test_mul_annihilator():
    x = tensor([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(mul(x, 0.0).data, np.zeros(3))
