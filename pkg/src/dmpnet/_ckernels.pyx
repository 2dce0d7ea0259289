# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport floor

cnp.import_array()


def im2col(floating[:, :, :, ::1] xp, int kh, int kw, int stride, int dilation, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c * kh * kw, ho * wo), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, row, r, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(ho):
                            r = oy * stride + i * dilation
                            col = oy * wo
                            for ox in range(wo):
                                out[b, row, col + ox] = xp[b, ch, r, ox * stride + j * dilation]
    return out_arr


def col2im(floating[:, :, ::1] cols, int c, int hp, int wp, int kh, int kw,
           int stride, int dilation, int ho, int wo):
    cdef Py_ssize_t n = cols.shape[0]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, row, r, col
    with nogil:
        # (i, j) outer so accumulation order matches the numpy fallback
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(ho):
                            r = oy * stride + i * dilation
                            col = oy * wo
                            for ox in range(wo):
                                out[b, ch, r, ox * stride + j * dilation] += cols[b, row, col + ox]
    return out_arr


def bilinear_fwd(floating[:, :, :, ::1] x, floating[:, :, ::1] coords):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t s = coords.shape[1]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((n, c, s), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, p, ch, r0, c0
    cdef floating r, cc, fr, fc, w00, w01, w10, w11, acc
    cdef bint ok00, ok01, ok10, ok11
    with nogil:
        for b in range(n):
            for p in range(s):
                r = coords[b, p, 0]
                cc = coords[b, p, 1]
                r0 = <Py_ssize_t>floor(r)
                c0 = <Py_ssize_t>floor(cc)
                fr = r - r0
                fc = cc - c0
                w00 = (1 - fr) * (1 - fc)
                w01 = (1 - fr) * fc
                w10 = fr * (1 - fc)
                w11 = fr * fc
                ok00 = 0 <= r0 < h and 0 <= c0 < w
                ok01 = 0 <= r0 < h and 0 <= c0 + 1 < w
                ok10 = 0 <= r0 + 1 < h and 0 <= c0 < w
                ok11 = 0 <= r0 + 1 < h and 0 <= c0 + 1 < w
                for ch in range(c):
                    acc = 0
                    if ok00:
                        acc = acc + x[b, ch, r0, c0] * w00
                    if ok01:
                        acc = acc + x[b, ch, r0, c0 + 1] * w01
                    if ok10:
                        acc = acc + x[b, ch, r0 + 1, c0] * w10
                    if ok11:
                        acc = acc + x[b, ch, r0 + 1, c0 + 1] * w11
                    out[b, ch, p] = acc
    return out_arr


def bilinear_bwd(floating[:, :, :, ::1] x, floating[:, :, ::1] coords, floating[:, :, ::1] gout):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t s = coords.shape[1]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((n, c, h, w), dtype=dtype)
    gc_arr = np.zeros((n, s, 2), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, ::1] gc = gc_arr
    cdef Py_ssize_t b, p, ch, r0, c0
    cdef floating r, cc, fr, fc, g, v00, v01, v10, v11, dr, dc
    cdef bint ok00, ok01, ok10, ok11
    with nogil:
        for b in range(n):
            for p in range(s):
                r = coords[b, p, 0]
                cc = coords[b, p, 1]
                r0 = <Py_ssize_t>floor(r)
                c0 = <Py_ssize_t>floor(cc)
                fr = r - r0
                fc = cc - c0
                ok00 = 0 <= r0 < h and 0 <= c0 < w
                ok01 = 0 <= r0 < h and 0 <= c0 + 1 < w
                ok10 = 0 <= r0 + 1 < h and 0 <= c0 < w
                ok11 = 0 <= r0 + 1 < h and 0 <= c0 + 1 < w
                dr = 0
                dc = 0
                for ch in range(c):
                    g = gout[b, ch, p]
                    v00 = x[b, ch, r0, c0] if ok00 else 0
                    v01 = x[b, ch, r0, c0 + 1] if ok01 else 0
                    v10 = x[b, ch, r0 + 1, c0] if ok10 else 0
                    v11 = x[b, ch, r0 + 1, c0 + 1] if ok11 else 0
                    dr = dr + g * ((1 - fc) * (v10 - v00) + fc * (v11 - v01))
                    dc = dc + g * ((1 - fr) * (v01 - v00) + fr * (v11 - v10))
                    if ok00:
                        gx[b, ch, r0, c0] += g * ((1 - fr) * (1 - fc))
                    if ok01:
                        gx[b, ch, r0, c0 + 1] += g * ((1 - fr) * fc)
                    if ok10:
                        gx[b, ch, r0 + 1, c0] += g * (fr * (1 - fc))
                    if ok11:
                        gx[b, ch, r0 + 1, c0 + 1] += g * (fr * fc)
                gc[b, p, 0] = dr
                gc[b, p, 1] = dc
    return gx_arr, gc_arr


def maxpool_fwd(floating[:, :, :, ::1] xp, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], wp = xp.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, oy, ox, i, j, r, col, best_idx
    cdef floating best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        r = oy * stride
                        col = ox * stride
                        best = xp[b, ch, r, col]
                        best_idx = r * wp + col
                        for i in range(k):
                            for j in range(k):
                                v = xp[b, ch, r + i, col + j]
                                # strict '>' keeps the first maximum in scan order
                                if v > best:
                                    best = v
                                    best_idx = (r + i) * wp + col + j
                        out[b, ch, oy, ox] = best
                        arg[b, ch, oy, ox] = best_idx
    return out_arr, arg_arr


def maxpool_bwd(floating[:, :, :, ::1] gout, cnp.int64_t[:, :, :, ::1] argidx, int hp, int wp):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1], ho = gout.shape[2], wo = gout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    g_arr = np.zeros((n, c, hp * wp), dtype=dtype)
    cdef floating[:, :, ::1] g = g_arr
    cdef Py_ssize_t b, ch, oy, ox
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        g[b, ch, argidx[b, ch, oy, ox]] += gout[b, ch, oy, ox]
    return g_arr.reshape(n, c, hp, wp)
