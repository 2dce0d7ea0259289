"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used when
the extension is unavailable or ``DMPNET_PURE_PYTHON=1`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride, dilation, ho, wo):
    """Unfold a padded ``(n, c, hp, wp)`` array into ``(n, c*kh*kw, ho*wo)``."""
    n, c = xp.shape[:2]
    eh = (kh - 1) * dilation + 1
    ew = (kw - 1) * dilation + 1
    win = sliding_window_view(xp, (eh, ew), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride, ::dilation, ::dilation]
    # (n, c, ho, wo, kh, kw) -> (n, c, kh, kw, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)


def col2im(cols, c, hp, wp, kh, kw, stride, dilation, ho, wo):
    """Adjoint of :func:`im2col`: scatter-add columns back onto the padded grid."""
    n = cols.shape[0]
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    rs = (ho - 1) * stride + 1
    cs = (wo - 1) * stride + 1
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            out[:, :, r0 : r0 + rs : stride, c0 : c0 + cs : stride] += cols[:, :, i, j]
    return out


def _corners(coords, h, w):
    r = coords[..., 0]
    c = coords[..., 1]
    r0 = np.floor(r)
    c0 = np.floor(c)
    fr = r - r0
    fc = c - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out = []
    for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        idx = np.where(valid, rr * w + cc, 0)
        out.append((idx, valid))
    return fr, fc, out


def _gather(xf, idx, valid):
    # xf: (n, c, h*w); idx/valid: (n, s)
    v = np.take_along_axis(xf, idx[:, None, :], axis=2)
    return v * valid[:, None, :].astype(xf.dtype)


def bilinear_fwd(x, coords):
    """Sample ``x`` (n, c, h, w) at ``coords`` (n, s, 2) -> (n, c, s); zero outside."""
    n, ch, h, w = x.shape
    xf = x.reshape(n, ch, h * w)
    fr, fc, corners = _corners(coords, h, w)
    one = x.dtype.type(1)
    weights = ((one - fr) * (one - fc), (one - fr) * fc, fr * (one - fc), fr * fc)
    out = np.zeros((n, ch, coords.shape[1]), dtype=x.dtype)
    for (idx, valid), wgt in zip(corners, weights):
        out += _gather(xf, idx, valid) * wgt[:, None, :]
    return out


def bilinear_bwd(x, coords, gout):
    """Vector-Jacobian product of :func:`bilinear_fwd` w.r.t. ``x`` and ``coords``."""
    n, ch, h, w = x.shape
    s = coords.shape[1]
    xf = x.reshape(n, ch, h * w)
    fr, fc, corners = _corners(coords, h, w)
    one = x.dtype.type(1)
    v00, v01, v10, v11 = (_gather(xf, idx, valid) for idx, valid in corners)
    fr_ = fr[:, None, :]
    fc_ = fc[:, None, :]
    d_r = (one - fc_) * (v10 - v00) + fc_ * (v11 - v01)
    d_c = (one - fr_) * (v01 - v00) + fr_ * (v11 - v10)
    gcoords = np.empty_like(coords)
    gcoords[..., 0] = (gout * d_r).sum(axis=1)
    gcoords[..., 1] = (gout * d_c).sum(axis=1)

    weights = ((one - fr) * (one - fc), (one - fr) * fc, fr * (one - fc), fr * fc)
    base = (np.arange(n * ch, dtype=np.int64) * (h * w)).reshape(n, ch, 1)
    flat_idx = []
    flat_val = []
    for (idx, valid), wgt in zip(corners, weights):
        contrib = gout * (wgt * valid)[:, None, :]
        flat_idx.append((base + idx[:, None, :]).ravel())
        flat_val.append(contrib.ravel())
    gx = np.bincount(np.concatenate(flat_idx), weights=np.concatenate(flat_val), minlength=n * ch * h * w)
    return gx.astype(x.dtype).reshape(n, ch, h, w), gcoords


def maxpool_fwd(xp, k, stride, ho, wo):
    """Max over k*k windows of a padded array; returns values and flat argmax."""
    n, c, hp, wp = xp.shape
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    win = win.reshape(n, c, ho, wo, k * k)
    arg = np.argmax(win, axis=-1)  # first max in row-major window order
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    rows = np.arange(ho).reshape(ho, 1) * stride + arg // k
    cols = np.arange(wo).reshape(1, wo) * stride + arg % k
    return np.ascontiguousarray(out), (rows * wp + cols).astype(np.int64)


def maxpool_bwd(gout, argidx, hp, wp):
    n, c = gout.shape[:2]
    base = (np.arange(n * c, dtype=np.int64) * (hp * wp)).reshape(n, c, 1, 1)
    g = np.bincount((base + argidx).ravel(), weights=gout.ravel(), minlength=n * c * hp * wp)
    return g.astype(gout.dtype).reshape(n, c, hp, wp)
