"""Differentiable tensor operations.

Every op computes its forward value with numpy (or the compiled kernels) and
registers a vector-Jacobian product on the active tape. There is no general
broadcasting: elementwise operands must have identical shapes.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from dmpnet import kernels
from dmpnet.tensor import Tensor, record

AXIS_NAMES = ("n", "c", "h", "w")


def _axis_name(i: int, ndim: int) -> str:
    return AXIS_NAMES[i] if ndim == 4 else f"axis {i}"


def check_same_shape(op: str, a_shape: tuple, b_shape: tuple) -> None:
    if tuple(a_shape) == tuple(b_shape):
        return
    if len(a_shape) != len(b_shape):
        raise ValueError(f"{op}: rank mismatch, {len(a_shape)} vs {len(b_shape)} ({a_shape} vs {b_shape})")
    for i, (p, q) in enumerate(zip(a_shape, b_shape)):
        if p != q:
            raise ValueError(f"{op}: shape mismatch on {_axis_name(i, len(a_shape))}: {p} vs {q}")


def _require_4d(op: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise ValueError(f"{op}: expected an (n, c, h, w) tensor, got shape {x.shape}")


def _const(b, like: Tensor) -> np.ndarray:
    arr = np.asarray(b, dtype=like.dtype)
    if arr.ndim:
        check_same_shape("ewise", like.shape, arr.shape)
    return arr


# --------------------------------------------------------------------- elementwise


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = Tensor(a.data + _const(b, a))
        return record("add_const", out, (a,), lambda g: (g,))
    check_same_shape("add", a.shape, b.shape)
    out = Tensor(a.data + b.data)
    return record("add", out, (a, b), lambda g: (g, g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = _const(b, a)
        out = Tensor(a.data * c)
        return record("mul_const", out, (a,), lambda g: (g * c,))
    check_same_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    return record("mul", out, (a, b), lambda g: (g * bd, g * ad))


def ewise(kind: str, a: Tensor, b) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"ewise: unknown kind {kind!r}")


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every element of ``x`` by the single value held in ``s``."""
    if s.size != 1:
        raise ValueError(f"scale: factor must hold one value, got shape {s.shape}")
    xd = x.data
    sv = s.data.reshape(())
    out = Tensor(xd * sv)

    def vjp(g):
        return g * sv, np.asarray(np.sum(g * xd), dtype=s.dtype).reshape(s.shape)

    return record("scale", out, (x, s), vjp)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor(np.maximum(xd, 0))
    return record("relu", out, (x,), lambda g: (g * (xd > 0),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(xd.dtype)
    out = Tensor(s)
    return record("sigmoid", out, (x,), lambda g: (g * s * (1 - s),))


def softmax(x: Tensor, axis: int) -> Tensor:
    xd = x.data
    z = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), vjp)


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype))
    shape = x.shape
    return record("sum", out, (x,), lambda g: (np.full(shape, g, dtype=x.dtype),))


# --------------------------------------------------------------------- layout


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    out = Tensor(x.data.reshape(shape))
    return record("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return record("transpose", out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat_channels: empty input list")
    ref = xs[0]
    for t in xs:
        _require_4d("concat_channels", t)
        for ax in (0, 2, 3):
            if t.shape[ax] != ref.shape[ax]:
                raise ValueError(
                    f"concat_channels: shape mismatch on {AXIS_NAMES[ax]}: {ref.shape[ax]} vs {t.shape[ax]}"
                )
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    return record("concat", out, tuple(xs), lambda g: [np.ascontiguousarray(p) for p in np.split(g, splits, axis=1)])


# --------------------------------------------------------------------- convolution


def conv_out_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding (im2col + GEMM)."""
    _require_4d("conv2d", x)
    if weight.ndim != 4:
        raise ValueError(f"conv2d: weight must be (out_c, in_c, kh, kw), got {weight.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride/padding/dilation {stride}/{padding}/{dilation}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise ValueError(f"conv2d: shape mismatch on c: input has {c} channels, weight expects {ic}")
    if bias is not None and bias.shape != (oc,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match out_c={oc}")
    ho = conv_out_size(h, kh, stride, padding, dilation)
    wo = conv_out_size(w, kw, stride, padding, dilation)
    if ho < 1:
        raise ValueError(f"conv2d: output extent on h is {ho} (< 1)")
    if wo < 1:
        raise ValueError(f"conv2d: output extent on w is {wo} (< 1)")

    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    xd = x.data
    if pointwise:
        cols = xd.reshape(n, c, h * w)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        cols = kernels.im2col(np.ascontiguousarray(xp), kh, kw, stride, dilation, ho, wo)
    wm = weight.data.reshape(oc, ic * kh * kw)
    y = np.matmul(wm, cols)
    if bias is not None:
        y += bias.data.reshape(1, oc, 1)
    out = Tensor(y.reshape(n, oc, ho, wo))

    def vjp(g):
        gm = g.reshape(n, oc, ho * wo)
        gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gcols = np.matmul(wm.T, gm)
        if pointwise:
            gx = gcols.reshape(x.shape)
        else:
            hp, wp = h + 2 * padding, w + 2 * padding
            gxp = kernels.col2im(
                np.ascontiguousarray(gcols, dtype=xd.dtype), c, hp, wp, kh, kw, stride, dilation, ho, wo
            )
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(gm.sum(axis=(0, 2)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", out, inputs, vjp)


# --------------------------------------------------------------------- pooling & resizing


def maxpool2d(x: Tensor, k: int, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Max pooling; gradient goes to the first maximum in row-major window order."""
    _require_4d("maxpool2d", x)
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"maxpool2d: window {k} too large for input {h}x{w}")
    xd = x.data
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    else:
        xp = xd
    hp, wp = xp.shape[2:]
    y, arg = kernels.maxpool_fwd(np.ascontiguousarray(xp), k, stride, ho, wo)
    out = Tensor(y)

    def vjp(g):
        gxp = kernels.maxpool_bwd(np.ascontiguousarray(g), arg, hp, wp)
        if padding:
            gxp = gxp[:, :, padding : padding + h, padding : padding + w]
        return (np.ascontiguousarray(gxp),)

    return record("maxpool2d", out, (x,), vjp)


def interp_matrix(out_size: int, in_size: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (out_size, in_size) linear-interpolation matrix, half-pixel centers."""
    m = np.zeros((out_size, in_size), dtype=np.float64)
    scale_ = in_size / out_size
    for i in range(out_size):
        src = max((i + 0.5) * scale_ - 0.5, 0.0)
        i0 = min(int(np.floor(src)), in_size - 1)
        i1 = min(i0 + 1, in_size - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m.astype(dtype)


def resize_bilinear(x: Tensor, new_h: int, new_w: int) -> Tensor:
    """Bilinear resize with align-corners-false coordinate mapping."""
    _require_4d("resize_bilinear", x)
    h, w = x.shape[2:]
    if (new_h, new_w) == (h, w):
        return x
    ry = interp_matrix(new_h, h, x.dtype)
    rx = interp_matrix(new_w, w, x.dtype)
    out = Tensor(np.matmul(np.matmul(ry, x.data), rx.T))
    return record("resize_bilinear", out, (x,), lambda g: (np.matmul(np.matmul(ry.T, g), rx),))


# --------------------------------------------------------------------- sampling


def bilinear_sample(x: Tensor, coords: Tensor) -> Tensor:
    """Read ``x`` (n, c, h, w) at continuous (row, col) points.

    ``coords`` has shape (n, s, 2); the result is (n, c, s). Corners that fall
    outside the grid contribute zero. Differentiable w.r.t. both inputs.
    """
    _require_4d("bilinear_sample", x)
    if coords.ndim != 3 or coords.shape[2] != 2 or coords.shape[0] != x.shape[0]:
        raise ValueError(f"bilinear_sample: coords must be (n, s, 2) with n={x.shape[0]}, got {coords.shape}")
    if not np.all(np.isfinite(coords.data)):
        raise FloatingPointError("bilinear_sample: non-finite sampling coordinates")
    xd = x.data
    cd = np.ascontiguousarray(coords.data, dtype=xd.dtype)
    out = Tensor(kernels.bilinear_fwd(xd, cd))

    def vjp(g):
        gx, gc = kernels.bilinear_bwd(xd, cd, np.ascontiguousarray(g, dtype=xd.dtype))
        return gx, gc

    return record("bilinear_sample", out, (x, coords), vjp)


# --------------------------------------------------------------------- losses


def bce_sum(s: Tensor, target: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Binary cross-entropy summed over all pixels, probabilities clamped to [eps, 1-eps]."""
    tgt = np.asarray(target, dtype=s.dtype)
    check_same_shape("bce", s.shape, tgt.shape)
    sd = s.data.astype(np.float64)
    sc = np.clip(sd, eps, 1 - eps)
    t64 = tgt.astype(np.float64)
    val = -np.sum(t64 * np.log(sc) + (1 - t64) * np.log(1 - sc))
    out = Tensor(np.asarray(val, dtype=s.dtype))
    inside = (sd >= eps) & (sd <= 1 - eps)

    def vjp(g):
        gs = (-(t64 / sc) + (1 - t64) / (1 - sc)) * inside * float(g)
        return (gs.astype(s.dtype),)

    return record("bce_sum", out, (s,), vjp)
