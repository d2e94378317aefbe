"""Differentiable primitives.

Every function returns a new :class:`~rdpnet.tensor.core.Tensor`; when any
input is tracked (and gradients are enabled) the result carries a tape
node whose backward closure computes exact analytic partials. Binary
elementwise ops follow numpy broadcasting; backward sums cotangents over
the broadcast axes. Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from ..errors import DomainError, ShapeError
from .core import Tensor, apply_op

# ---------------------------------------------------------------------------
# helpers


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _as_operand(x, like: Tensor) -> Tensor:
    """Wrap a python/numpy scalar as a 0-d constant of the partner's dtype."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.ndim == 0:
        return Tensor._wrap(np.asarray(arr, dtype=like.dtype))
    return Tensor(arr, dtype=like.dtype)


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        ta = a
        tb = _as_operand(b, a)
    elif isinstance(b, Tensor):
        tb = b
        ta = _as_operand(a, b)
    else:
        raise TypeError("at least one operand must be a Tensor")
    if ta.dtype != tb.dtype:
        raise ShapeError(f"mixed dtypes {ta.dtype.name} and {tb.dtype.name}; cast explicitly")
    try:
        np.broadcast_shapes(ta.shape, tb.shape)
    except ValueError:
        raise ShapeError(f"shapes {ta.shape} and {tb.shape} do not broadcast") from None
    return ta, tb


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a cotangent over broadcast axes so it matches ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _first_index(mask: np.ndarray) -> tuple[int, ...]:
    flat = int(np.flatnonzero(mask.ravel())[0])
    return tuple(int(i) for i in np.unravel_index(flat, mask.shape))


def _scalar(value: float, dtype: np.dtype):
    return dtype.type(value)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bwd(g, _sa=a.shape, _sb=b.shape, _ta=a.tracked, _tb=b.tracked):
        return (
            _unbroadcast(g, _sa) if _ta else None,
            _unbroadcast(g, _sb) if _tb else None,
        )

    return apply_op("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bwd(g, _sa=a.shape, _sb=b.shape, _ta=a.tracked, _tb=b.tracked):
        return (
            _unbroadcast(g, _sa) if _ta else None,
            _unbroadcast(-g, _sb) if _tb else None,
        )

    return apply_op("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bwd(g, _a=a, _b=b):
        return (
            _unbroadcast(g * _b.data, _a.shape) if _a.tracked else None,
            _unbroadcast(g * _a.data, _b.shape) if _b.tracked else None,
        )

    return apply_op("mul", a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    if np.any(b.data == 0):
        raise DomainError(f"division by zero at index {_first_index(b.data == 0)}")

    def bwd(g, _a=a, _b=b):
        ga = g / _b.data if _a.tracked else None
        gb = -g * _a.data / (_b.data * _b.data) if _b.tracked else None
        return (
            _unbroadcast(ga, _a.shape) if ga is not None else None,
            _unbroadcast(gb, _b.shape) if gb is not None else None,
        )

    return apply_op("div", a.data / b.data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g, _t=a.tracked):
        return (-g if _t else None,)

    return apply_op("neg", -a.data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value at index {_first_index(a.data <= 0)}")

    def bwd(g, _a=a):
        return (g / _a.data if _a.tracked else None,)

    return apply_op("log", np.log(a.data), (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bwd(g, _out=out, _t=a.tracked):
        return (g * _out if _t else None,)

    return apply_op("exp", out, (a,), bwd)


def erf(a) -> Tensor:
    a = as_tensor(a)
    coeff = _scalar(2.0 / np.sqrt(np.pi), a.dtype)

    def bwd(g, _a=a, _c=coeff):
        if not _a.tracked:
            return (None,)
        return (g * _c * np.exp(-_a.data * _a.data),)

    return apply_op("erf", special.erf(a.data), (a,), bwd)


def pow_scalar(a, exponent: float) -> Tensor:
    """a ** exponent for a scalar exponent.

    Non-integer exponents require a >= 0; negative exponents require
    a != 0. exponent 0 yields ones with zero gradient (0**0 == 1).
    """
    a = as_tensor(a)
    p = float(exponent)
    if p != int(p) and np.any(a.data < 0):
        raise DomainError(
            f"pow with non-integer exponent {p} of negative base at index "
            f"{_first_index(a.data < 0)}"
        )
    if p < 0 and np.any(a.data == 0):
        raise DomainError(
            f"pow with negative exponent {p} of zero base at index {_first_index(a.data == 0)}"
        )
    if a.tracked and 0 < p < 1 and np.any(a.data == 0):
        raise DomainError(
            f"pow derivative is unbounded at zero base for exponent {p} "
            f"(index {_first_index(a.data == 0)})"
        )
    out = a.data**_scalar(p, a.dtype) if p != 0 else np.ones_like(a.data)

    def bwd(g, _a=a, _p=p):
        if not _a.tracked:
            return (None,)
        if _p == 0:
            return (np.zeros_like(_a.data),)
        if _p == 1:
            return (g,)
        c = _scalar(_p, _a.dtype)
        return (g * c * _a.data ** _scalar(_p - 1.0, _a.dtype),)

    return apply_op("pow", out, (a,), bwd)


def sqrt(a) -> Tensor:
    return pow_scalar(a, 0.5)


def clamp_min(a, floor: float) -> Tensor:
    """maximum(a, floor) with a scalar floor; gradient passes where a >= floor."""
    a = as_tensor(a)
    c = _scalar(floor, a.dtype)

    def bwd(g, _a=a, _c=c):
        if not _a.tracked:
            return (None,)
        return (g * (_a.data >= _c).astype(_a.dtype),)

    return apply_op("clamp_min", np.maximum(a.data, c), (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    out = []
    for ax in axes:
        ax = int(ax)
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"duplicate reduction axes {axes}")
    return tuple(sorted(out))


def _reduced_count(shape: tuple[int, ...], axes: tuple[int, ...]) -> int:
    n = 1
    for ax in axes:
        n *= shape[ax]
    return n


def _expand_for_broadcast(g: np.ndarray, shape, axes, keepdims) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _normalize_axes(axes, a.ndim)
    if _reduced_count(a.shape, ax) == 0:
        raise ShapeError(f"reduction over empty extent: shape {a.shape}, axes {ax}")

    def bwd(g, _shape=a.shape, _axes=ax, _kd=keepdims, _t=a.tracked):
        if not _t:
            return (None,)
        return (_expand_for_broadcast(g, _shape, _axes, _kd),)

    return apply_op("sum", a.data.sum(axis=ax, keepdims=keepdims), (a,), bwd)


def mean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _normalize_axes(axes, a.ndim)
    n = _reduced_count(a.shape, ax)
    if n == 0:
        raise ShapeError(f"reduction over empty extent: shape {a.shape}, axes {ax}")
    inv = _scalar(1.0 / n, a.dtype)

    def bwd(g, _shape=a.shape, _axes=ax, _kd=keepdims, _inv=inv, _t=a.tracked):
        if not _t:
            return (None,)
        return (_expand_for_broadcast(g * _inv, _shape, _axes, _kd),)

    return apply_op("mean", a.data.mean(axis=ax, keepdims=keepdims), (a,), bwd)


def var(a, axes=None, keepdims: bool = False) -> Tensor:
    """Biased (population) variance, composed from differentiable primitives."""
    a = as_tensor(a)
    m = mean(a, axes, keepdims=True)
    d = sub(a, m)
    return mean(mul(d, d), axes, keepdims=keepdims)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = _normalize_axes(axis, a.ndim)[0]
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def bwd(g, _out=out, _ax=ax, _t=a.tracked):
        if not _t:
            return (None,)
        inner = (g * _out).sum(axis=_ax, keepdims=True)
        return (_out * (g - inner),)

    return apply_op("softmax", out, (a,), bwd)


# ---------------------------------------------------------------------------
# structural


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty sequence")
    ndim = ts[0].ndim
    ax = _normalize_axes(axis, ndim)[0]
    for t in ts[1:]:
        if t.ndim != ndim:
            raise ShapeError(f"concat rank mismatch: {ts[0].shape} vs {t.shape}")
        for d in range(ndim):
            if d != ax and t.shape[d] != ts[0].shape[d]:
                raise ShapeError(
                    f"concat shapes {ts[0].shape} and {t.shape} differ on non-concat axis {d}"
                )
        if t.dtype != ts[0].dtype:
            raise ShapeError("concat dtype mismatch")
    sizes = [t.shape[ax] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g, _offsets=offsets, _ax=ax, _ts=ts):
        pieces = np.split(g, _offsets, axis=_ax)
        return tuple(p if t.tracked else None for p, t in zip(pieces, _ts))

    return apply_op("concat", np.concatenate([t.data for t in ts], axis=ax), ts, bwd)


def pad2d(a, padding) -> Tensor:
    """Zero-pad the last two axes; padding is int or (top, bottom, left, right)."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"pad2d requires rank >= 2, got shape {a.shape}")
    if isinstance(padding, (int, np.integer)):
        top = bottom = left = right = int(padding)
    else:
        top, bottom, left, right = (int(p) for p in padding)
    if min(top, bottom, left, right) < 0:
        raise ShapeError(f"negative padding {(top, bottom, left, right)}")
    width = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    h, w = a.shape[-2], a.shape[-1]

    def bwd(g, _t=a.tracked, _top=top, _left=left, _h=h, _w=w):
        if not _t:
            return (None,)
        sl = (Ellipsis, slice(_top, _top + _h), slice(_left, _left + _w))
        return (g[sl],)

    return apply_op("pad2d", np.pad(a.data, width), (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}") from None

    def bwd(g, _shape=a.shape, _t=a.tracked):
        return (g.reshape(_shape) if _t else None,)

    return apply_op("reshape", out, (a,), bwd)


def _validate_slice_key(key, ndim: int):
    if not isinstance(key, tuple):
        key = (key,)
    if len(key) > ndim:
        raise ShapeError(f"too many indices for rank {ndim}")
    for k in key:
        if not isinstance(k, (int, np.integer, slice)):
            raise ShapeError("slicing supports ints and slices only (no fancy indexing)")
    return key


def getitem(a, key) -> Tensor:
    """Basic slicing/indexing; backward scatters into a zero tensor."""
    a = as_tensor(a)
    key = _validate_slice_key(key, a.ndim)
    out = a.data[key]

    def bwd(g, _shape=a.shape, _dtype=a.dtype, _key=key, _t=a.tracked):
        if not _t:
            return (None,)
        z = np.zeros(_shape, dtype=_dtype)
        z[_key] = g
        return (z,)

    return apply_op("slice", out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Strided (N, C, Ho, Wo, kh, kw) view over a padded NCHW array."""
    w = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return w[:, :, ::sh, ::sw]


def conv2d(
    x,
    kernel,
    bias=None,
    stride=1,
    padding=0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation over NCHW input.

    kernel is (out_channels, in_channels/groups, kh, kw); groups ==
    in_channels gives the depthwise case.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    bias_t = as_tensor(bias) if bias is not None else None
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ShapeError(f"invalid stride {(sh, sw)} or padding {(ph, pw)}")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW kernel, got {x.shape}, {kernel.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = kernel.shape
    if groups < 1 or cin % groups != 0 or cout % groups != 0:
        raise ShapeError(
            f"groups={groups} must divide in_channels={cin} and out_channels={cout}"
        )
    if cin_g != cin // groups:
        raise ShapeError(
            f"kernel in_channels/groups={cin_g} incompatible with input channels "
            f"{cin} at groups={groups} (expected {cin // groups})"
        )
    if bias_t is not None and bias_t.shape != (cout,):
        raise ShapeError(f"bias shape {bias_t.shape} must be ({cout},)")
    if x.dtype != kernel.dtype or (bias_t is not None and bias_t.dtype != x.dtype):
        raise ShapeError("conv2d operands must share one dtype")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if h + 2 * ph < kh or w + 2 * pw < kw or ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d output extent would be empty: input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {(sh, sw)}, padding {(ph, pw)}"
        )
    cout_g = cout // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    wg = _windows(xp, kh, kw, sh, sw).reshape(n, groups, cin_g, ho, wo, kh, kw)
    kg = kernel.data.reshape(groups, cout_g, cin_g, kh, kw)
    out = np.einsum("ngiyxab,goiab->ngoyx", wg, kg, optimize=True).reshape(n, cout, ho, wo)
    if bias_t is not None:
        out = out + bias_t.data.reshape(1, cout, 1, 1)

    inputs = (x, kernel) if bias_t is None else (x, kernel, bias_t)

    def bwd(g):
        g5 = g.reshape(n, groups, cout_g, ho, wo)
        gx = gk = gb = None
        if kernel.tracked:
            wgb = _windows(xp, kh, kw, sh, sw).reshape(n, groups, cin_g, ho, wo, kh, kw)
            gk = np.einsum("ngiyxab,ngoyx->goiab", wgb, g5, optimize=True).reshape(kernel.shape)
        if x.tracked:
            if sh == 1 and sw == 1 and ph <= kh - 1 and pw <= kw - 1:
                # unit stride: input-gradient is a full correlation of the
                # cotangent with the 180-degree-rotated kernel
                gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - ph,) * 2, (kw - 1 - pw,) * 2))
                wins = _windows(gp, kh, kw, 1, 1).reshape(n, groups, cout_g, h, w, kh, kw)
                kr = kg[:, :, :, ::-1, ::-1]
                gx = np.einsum("ngoyxab,goiab->ngiyx", wins, kr, optimize=True).reshape(
                    n, cin, h, w
                )
            else:
                gxp = np.zeros_like(xp)
                gxp_g = gxp.reshape(n, groups, cin_g, *xp.shape[2:])
                for a_off in range(kh):
                    for b_off in range(kw):
                        t = np.einsum(
                            "ngoyx,goi->ngiyx", g5, kg[:, :, :, a_off, b_off], optimize=True
                        )
                        gxp_g[
                            :, :, :,
                            a_off : a_off + ho * sh : sh,
                            b_off : b_off + wo * sw : sw,
                        ] += t
                gx = gxp[:, :, ph : ph + h, pw : pw + w]
        if bias_t is not None and bias_t.tracked:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gk) if bias_t is None else (gx, gk, gb)

    return apply_op("conv2d", out, inputs, bwd)


def conv_transpose2d(x, kernel, bias=None, stride=1, padding=0) -> Tensor:
    """Transposed 2-D convolution (gradient-of-conv2d semantics).

    kernel is (in_channels, out_channels, kh, kw); output spatial extent is
    (in - 1) * stride - 2 * padding + kernel.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    bias_t = as_tensor(bias) if bias is not None else None
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ShapeError(f"invalid stride {(sh, sw)} or padding {(ph, pw)}")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d expects NCHW input and IOHW kernel, got {x.shape}, {kernel.shape}"
        )
    n, cin, hi, wi = x.shape
    kin, cout, kh, kw = kernel.shape
    if kin != cin:
        raise ShapeError(
            f"kernel expects in_channels={kin}, input provides {cin}"
        )
    if bias_t is not None and bias_t.shape != (cout,):
        raise ShapeError(f"bias shape {bias_t.shape} must be ({cout},)")
    if x.dtype != kernel.dtype or (bias_t is not None and bias_t.dtype != x.dtype):
        raise ShapeError("conv_transpose2d operands must share one dtype")
    ho = (hi - 1) * sh - 2 * ph + kh
    wo = (wi - 1) * sw - 2 * pw + kw
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv_transpose2d output extent would be empty: input {hi}x{wi}, "
            f"kernel {kh}x{kw}, stride {(sh, sw)}, padding {(ph, pw)}"
        )

    op = np.zeros((n, cout, ho + 2 * ph, wo + 2 * pw), dtype=x.dtype)
    for a_off in range(kh):
        for b_off in range(kw):
            t = np.einsum("niyx,io->noyx", x.data, kernel.data[:, :, a_off, b_off], optimize=True)
            op[:, :, a_off : a_off + hi * sh : sh, b_off : b_off + wi * sw : sw] += t
    out = np.ascontiguousarray(op[:, :, ph : ph + ho, pw : pw + wo])
    if bias_t is not None:
        out = out + bias_t.data.reshape(1, cout, 1, 1)

    inputs = (x, kernel) if bias_t is None else (x, kernel, bias_t)

    def bwd(g):
        gx = gk = gb = None
        gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        wins = _windows(gp, kh, kw, sh, sw)  # (n, cout, hi, wi, kh, kw)
        if x.tracked:
            gx = np.einsum("noyxab,ioab->niyx", wins, kernel.data, optimize=True)
        if kernel.tracked:
            gk = np.einsum("niyx,noyxab->ioab", x.data, wins, optimize=True)
        if bias_t is not None and bias_t.tracked:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gk) if bias_t is None else (gx, gk, gb)

    return apply_op("conv_transpose2d", out, inputs, bwd)


# ---------------------------------------------------------------------------
# operator sugar

Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = div
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = neg
Tensor.__pow__ = pow_scalar
Tensor.__getitem__ = getitem
Tensor.sum = tsum
Tensor.mean = mean
Tensor.var = var
Tensor.reshape = reshape
Tensor.exp = exp
Tensor.log = log
Tensor.sqrt = sqrt
