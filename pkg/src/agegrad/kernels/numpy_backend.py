"""Vectorized numpy convolution kernels.

Inputs are NCHW, already padded. Kernels are laid out [O, C/groups, kh, kw]
and convolution is cross-correlation (no kernel flip). The grouped general
case loops over groups only; depthwise and dense convolutions are handled
with single einsum/tensordot calls so the fallback stays usable at the
default model scale.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu_forward(x):
    """Exact GELU; returns (x * Phi(x), Phi(x)) with Phi saved for backward."""
    phi = 0.5 * (1.0 + erf(x * x.dtype.type(_INV_SQRT2)))
    return x * phi, phi


def gelu_backward(x, phi, g):
    pdf = np.exp(-0.5 * x * x) * x.dtype.type(_INV_SQRT2PI)
    return g * (phi + x * pdf)


def _windows(xp, kh, kw, stride):
    # view [B, C, Ho, Wo, kh, kw] of every receptive field
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(xp, w, stride, groups):
    B, C, Hp, Wp = xp.shape
    O, Cg, kh, kw = w.shape
    win = _windows(xp, kh, kw, stride)
    if groups == 1:
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B, Ho, Wo, O
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if groups == C and Cg == 1 and O == C:
        return np.ascontiguousarray(np.einsum("bchwij,cij->bchw", win, w[:, 0], optimize=True))
    og = O // groups
    Ho, Wo = win.shape[2], win.shape[3]
    out = np.empty((B, O, Ho, Wo), dtype=xp.dtype)
    for g in range(groups):
        part = np.tensordot(
            win[:, g * Cg : (g + 1) * Cg], w[g * og : (g + 1) * og], axes=([1, 4, 5], [1, 2, 3])
        )
        out[:, g * og : (g + 1) * og] = part.transpose(0, 3, 1, 2)
    return out


def conv2d_grad_input(grad_out, w, stride, groups, Hp, Wp):
    B, O, Ho, Wo = grad_out.shape
    _, Cg, kh, kw = w.shape
    C = Cg * groups
    og = O // groups
    gx = np.zeros((B, C, Hp, Wp), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            region = gx[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
            if groups == 1:
                contrib = np.tensordot(grad_out, w[:, :, i, j], axes=([1], [0]))
                region += contrib.transpose(0, 3, 1, 2)
            elif groups == C and Cg == 1 and O == C:
                region += grad_out * w[:, 0, i, j][None, :, None, None]
            else:
                for g in range(groups):
                    contrib = np.tensordot(
                        grad_out[:, g * og : (g + 1) * og], w[g * og : (g + 1) * og, :, i, j], axes=([1], [0])
                    )
                    region[:, g * Cg : (g + 1) * Cg] += contrib.transpose(0, 3, 1, 2)
    return gx


def conv2d_grad_kernel(xp, grad_out, stride, groups, kh, kw):
    B, C, Hp, Wp = xp.shape
    O = grad_out.shape[1]
    Cg = C // groups
    og = O // groups
    win = _windows(xp, kh, kw, stride)
    if groups == 1:
        return np.ascontiguousarray(np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3])))
    if groups == C and Cg == 1 and O == C:
        gw = np.einsum("bchw,bchwij->cij", grad_out, win, optimize=True)
        return np.ascontiguousarray(gw[:, None])
    gw = np.empty((O, Cg, kh, kw), dtype=xp.dtype)
    for g in range(groups):
        gw[g * og : (g + 1) * og] = np.tensordot(
            grad_out[:, g * og : (g + 1) * og], win[:, g * Cg : (g + 1) * Cg], axes=([0, 2, 3], [0, 2, 3])
        )
    return gw
