"""Numba-compiled convolution kernels (single-threaded, cached to disk).

Dense (groups == 1) convolutions reduce to matrix products where BLAS wins,
so they are delegated to the numpy backend. The JIT kernels cover the
depthwise and grouped spatial cases with loops arranged so the innermost
output-row traversal vectorizes: accumulation runs elementwise over rows
instead of a scalar accumulator chain per output pixel.
"""

import math

import numpy as np
from numba import njit

from . import numpy_backend

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def _gelu_fwd(x, out, phi):
    for i in range(x.size):
        p = 0.5 * (1.0 + math.erf(x[i] * _INV_SQRT2))
        phi[i] = p
        out[i] = x[i] * p


@njit(cache=True)
def _gelu_bwd(x, phi, g, gx):
    for i in range(x.size):
        pdf = math.exp(-0.5 * x[i] * x[i]) * _INV_SQRT2PI
        gx[i] = g[i] * (phi[i] + x[i] * pdf)


def gelu_forward(x):
    out = np.empty_like(x)
    phi = np.empty_like(x)
    _gelu_fwd(x.reshape(-1), out.reshape(-1), phi.reshape(-1))
    return out, phi


def gelu_backward(x, phi, g):
    gx = np.empty_like(x)
    _gelu_bwd(x.reshape(-1), phi.reshape(-1), np.ascontiguousarray(g).reshape(-1), gx.reshape(-1))
    return gx


@njit(cache=True)
def _dw_forward(xp, w, stride, out):
    B, C, Hp, Wp = xp.shape
    kh, kw = w.shape[2], w.shape[3]
    Ho, Wo = out.shape[2], out.shape[3]
    for b in range(B):
        for c in range(C):
            for ho in range(Ho):
                orow = out[b, c, ho]
                hi = ho * stride
                for i in range(kh):
                    xrow = xp[b, c, hi + i]
                    for j in range(kw):
                        wv = w[c, 0, i, j]
                        if stride == 1:
                            for wo in range(Wo):
                                orow[wo] += xrow[wo + j] * wv
                        else:
                            for wo in range(Wo):
                                orow[wo] += xrow[wo * stride + j] * wv


@njit(cache=True)
def _dw_grad_input(grad_out, w, stride, gx):
    B, C, Ho, Wo = grad_out.shape
    kh, kw = w.shape[2], w.shape[3]
    for b in range(B):
        for c in range(C):
            for ho in range(Ho):
                grow = grad_out[b, c, ho]
                hi = ho * stride
                for i in range(kh):
                    xrow = gx[b, c, hi + i]
                    for j in range(kw):
                        wv = w[c, 0, i, j]
                        if stride == 1:
                            for wo in range(Wo):
                                xrow[wo + j] += grow[wo] * wv
                        else:
                            for wo in range(Wo):
                                xrow[wo * stride + j] += grow[wo] * wv


@njit(cache=True)
def _dw_grad_kernel(xp, grad_out, stride, gw):
    B, C, Ho, Wo = grad_out.shape
    kh, kw = gw.shape[2], gw.shape[3]
    tmp = np.empty(Wo, dtype=xp.dtype)
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                tmp[:] = 0.0
                for b in range(B):
                    for ho in range(Ho):
                        grow = grad_out[b, c, ho]
                        xrow = xp[b, c, ho * stride + i]
                        if stride == 1:
                            for wo in range(Wo):
                                tmp[wo] += grow[wo] * xrow[wo + j]
                        else:
                            for wo in range(Wo):
                                tmp[wo] += grow[wo] * xrow[wo * stride + j]
                gw[c, 0, i, j] = tmp.sum()


@njit(cache=True)
def _grouped_forward(xp, w, stride, groups, out):
    B, C, Hp, Wp = xp.shape
    O, Cg, kh, kw = w.shape
    Ho, Wo = out.shape[2], out.shape[3]
    og = O // groups
    for b in range(B):
        for o in range(O):
            c0 = (o // og) * Cg
            for ho in range(Ho):
                orow = out[b, o, ho]
                hi = ho * stride
                for c in range(Cg):
                    for i in range(kh):
                        xrow = xp[b, c0 + c, hi + i]
                        for j in range(kw):
                            wv = w[o, c, i, j]
                            for wo in range(Wo):
                                orow[wo] += xrow[wo * stride + j] * wv


@njit(cache=True)
def _grouped_grad_input(grad_out, w, stride, groups, gx):
    B, O, Ho, Wo = grad_out.shape
    _, Cg, kh, kw = w.shape
    og = O // groups
    for b in range(B):
        for o in range(O):
            c0 = (o // og) * Cg
            for ho in range(Ho):
                grow = grad_out[b, o, ho]
                hi = ho * stride
                for c in range(Cg):
                    for i in range(kh):
                        xrow = gx[b, c0 + c, hi + i]
                        for j in range(kw):
                            wv = w[o, c, i, j]
                            for wo in range(Wo):
                                xrow[wo * stride + j] += grow[wo] * wv


@njit(cache=True)
def _grouped_grad_kernel(xp, grad_out, stride, groups, gw):
    B, O, Ho, Wo = grad_out.shape
    _, Cg, kh, kw = gw.shape
    og = O // groups
    tmp = np.empty(Wo, dtype=xp.dtype)
    for o in range(O):
        c0 = (o // og) * Cg
        for c in range(Cg):
            for i in range(kh):
                for j in range(kw):
                    tmp[:] = 0.0
                    for b in range(B):
                        for ho in range(Ho):
                            grow = grad_out[b, o, ho]
                            xrow = xp[b, c0 + c, ho * stride + i]
                            for wo in range(Wo):
                                tmp[wo] += grow[wo] * xrow[wo * stride + j]
                    gw[o, c, i, j] = tmp.sum()


def _is_depthwise(C, O, Cg, groups):
    return groups == C and Cg == 1 and O == C


def conv2d_forward(xp, w, stride, groups):
    O, Cg, kh, kw = w.shape
    if groups == 1:
        return numpy_backend.conv2d_forward(xp, w, stride, groups)
    B, C, Hp, Wp = xp.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo), dtype=xp.dtype)
    if _is_depthwise(C, O, Cg, groups):
        _dw_forward(xp, w, stride, out)
    else:
        _grouped_forward(xp, w, stride, groups, out)
    return out


def conv2d_grad_input(grad_out, w, stride, groups, Hp, Wp):
    O, Cg, kh, kw = w.shape
    if groups == 1:
        return numpy_backend.conv2d_grad_input(grad_out, w, stride, groups, Hp, Wp)
    B = grad_out.shape[0]
    C = Cg * groups
    gx = np.zeros((B, C, Hp, Wp), dtype=grad_out.dtype)
    if _is_depthwise(C, O, Cg, groups):
        _dw_grad_input(grad_out, w, stride, gx)
    else:
        _grouped_grad_input(grad_out, w, stride, groups, gx)
    return gx


def conv2d_grad_kernel(xp, grad_out, stride, groups, kh, kw):
    C = xp.shape[1]
    O = grad_out.shape[1]
    if groups == 1:
        return numpy_backend.conv2d_grad_kernel(xp, grad_out, stride, groups, kh, kw)
    gw = np.zeros((O, C // groups, kh, kw), dtype=xp.dtype)
    if _is_depthwise(C, O, C // groups, groups):
        _dw_grad_kernel(xp, grad_out, stride, gw)
    else:
        _grouped_grad_kernel(xp, grad_out, stride, groups, gw)
    return gw
