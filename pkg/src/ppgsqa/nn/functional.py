"""Forward/backward kernels for the 1-D layer set.

Every public tensor is ``(batch, channels, length)``. Internally the kernels
work channel-major, ``(channels, batch, length)``: convolutions become a
single GEMM over ``batch * length`` columns and batch-norm statistics are row
reductions. Outputs are returned as transposed views of channel-major
buffers, so consecutive kernels hand memory to each other without copies.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes ``(dout, cache)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidMode, InvalidP, ShapeMismatch


def out_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def _channel_major(x: np.ndarray) -> np.ndarray:
    return x.transpose(1, 0, 2)


def _check3(x: np.ndarray, what: str) -> None:
    if x.ndim != 3:
        raise ShapeMismatch(f"{what}: expected (B, C, L), got shape {x.shape}")


# -- convolution -------------------------------------------------------------

def conv1d_forward(x, weight, bias=None, stride=1, padding=0):
    _check3(x, "conv1d")
    B, C, L = x.shape
    O, Cw, K = weight.shape
    if C != Cw:
        raise ShapeMismatch(f"conv1d: input has {C} channels, weight expects {Cw}")
    L_out = out_length(L, K, stride, padding)
    if L_out < 1:
        raise ShapeMismatch(f"conv1d: empty output for L={L}, K={K}, s={stride}, p={padding}")

    xc = _channel_major(x)
    if padding:
        xp = np.zeros((C, B, L + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + L] = xc
    else:
        xp = xc
    win = sliding_window_view(xp, K, axis=2)[:, :, ::stride][:, :, :L_out]
    cols = win.transpose(0, 3, 1, 2).reshape(C * K, B * L_out)
    out = weight.reshape(O, C * K) @ cols
    if bias is not None:
        out += bias[:, None]
    y = out.reshape(O, B, L_out).transpose(1, 0, 2)
    return y, (cols, weight, (B, C, L), stride, padding, bias is not None)


def conv1d_backward(dy, cache):
    cols, weight, (B, C, L), stride, padding, has_bias = cache
    O, _, K = weight.shape
    L_out = dy.shape[2]
    dyc = _channel_major(dy).reshape(O, B * L_out)
    dw = (dyc @ cols.T).reshape(weight.shape)
    db = dyc.sum(axis=1) if has_bias else None
    dcols = (weight.reshape(O, C * K).T @ dyc).reshape(C, K, B, L_out)
    dxp = np.zeros((C, B, L + 2 * padding), dtype=dy.dtype)
    span = stride * (L_out - 1) + 1
    for k in range(K):
        dxp[:, :, k:k + span:stride] += dcols[:, k]
    dx = dxp[:, :, padding:padding + L].transpose(1, 0, 2)
    return dx, dw, db


# -- batch norm --------------------------------------------------------------

def batchnorm1d_forward(x, gamma, beta, running_mean, running_var, training,
                        momentum=0.1, eps=1e-5):
    """Per-channel BN. In training mode the running buffers are updated in place
    (variance with Bessel's correction, as the framework family does)."""
    _check3(x, "batchnorm1d")
    B, C, L = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batchnorm1d: affine shape {gamma.shape} vs {C} channels")
    x2 = _channel_major(x).reshape(C, B * L)
    if training:
        n = B * L
        mu = x2.mean(axis=1)
        xm = x2 - mu[:, None]
        var = np.mean(xm * xm, axis=1)
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = xm * invstd[:, None]
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * (n / max(n - 1, 1))
    else:
        if running_mean is None or running_var is None:
            raise InvalidMode("batchnorm1d: eval mode needs running statistics")
        invstd = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x2 - running_mean[:, None]) * invstd[:, None]
    y2 = gamma[:, None] * xhat + beta[:, None]
    y = y2.reshape(C, B, L).transpose(1, 0, 2)
    return y, (xhat, invstd, gamma, training, (B, C, L))


def batchnorm1d_backward(dy, cache):
    xhat, invstd, gamma, training, (B, C, L) = cache
    dy2 = _channel_major(dy).reshape(C, B * L)
    dgamma = np.sum(dy2 * xhat, axis=1)
    dbeta = dy2.sum(axis=1)
    dxhat = dy2 * gamma[:, None]
    if training:
        n = B * L
        dx2 = (invstd[:, None] / n) * (
            n * dxhat - dxhat.sum(axis=1, keepdims=True)
            - xhat * np.sum(dxhat * xhat, axis=1, keepdims=True))
    else:
        dx2 = dxhat * invstd[:, None]
    dx = dx2.reshape(C, B, L).transpose(1, 0, 2)
    return dx, dgamma, dbeta


# -- activations -------------------------------------------------------------

def relu_forward(x):
    y = np.maximum(x, 0)
    return y, y > 0


def relu_backward(dy, mask):
    return dy * mask


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- pooling -----------------------------------------------------------------

def maxpool1d_forward(x, kernel=3, stride=2, padding=1):
    _check3(x, "maxpool1d")
    B, C, L = x.shape
    L_out = out_length(L, kernel, stride, padding)
    if L_out < 1:
        raise ShapeMismatch(f"maxpool1d: empty output for L={L}")
    xc = _channel_major(x)
    if padding:
        xp = np.full((C, B, L + 2 * padding), -np.inf, dtype=x.dtype)
        xp[:, :, padding:padding + L] = xc
    else:
        xp = xc
    win = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride][:, :, :L_out]
    idx = win.argmax(axis=3)
    y = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return y.transpose(1, 0, 2), (idx, (B, C, L), kernel, stride, padding)


def maxpool1d_backward(dy, cache):
    idx, (B, C, L), kernel, stride, padding = cache
    dyc = _channel_major(dy)
    L_out = dyc.shape[2]
    dxp = np.zeros((C, B, L + 2 * padding), dtype=dy.dtype)
    span = stride * (L_out - 1) + 1
    for k in range(kernel):
        dxp[:, :, k:k + span:stride] += np.where(idx == k, dyc, 0)
    return dxp[:, :, padding:padding + L].transpose(1, 0, 2)


def adaptive_avgpool_forward(x):
    """Global average over length: (B, C, L) -> (B, C)."""
    _check3(x, "adaptive_avgpool")
    return x.mean(axis=2), x.shape


def adaptive_avgpool_backward(dy, shape):
    B, C, L = shape
    return np.broadcast_to((dy / L)[:, :, None], shape).copy()


# -- dropout -----------------------------------------------------------------

def dropout_forward(x, p, rng=None, training=True):
    """Inverted dropout.

    One 32-bit draw per element, consumed channel-major ``(C, B, L)``; an
    element is dropped when its draw is below ``round(p * 2**32)``.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidP(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    if rng is None:
        raise InvalidMode("dropout in training mode needs an rng")
    B, C, L = x.shape
    cut = np.uint32(min(round(p * 2.0 ** 32), 2 ** 32 - 1))
    keep = (rng.next_uint32(C * B * L) >= cut).reshape(C, B, L)
    mask = np.multiply(keep, 1.0 / (1.0 - p), dtype=x.dtype).transpose(1, 0, 2)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# -- dense layers ------------------------------------------------------------

def linear_forward(x, weight, bias=None):
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    y = x @ weight.T
    if bias is not None:
        y = y + bias
    return y, (x, weight, bias is not None)


def linear_backward(dy, cache):
    x, weight, has_bias = cache
    dw = dy.T @ x
    db = dy.sum(axis=0) if has_bias else None
    return dy @ weight, dw, db


def se_forward(x, fc1, fc2):
    """Squeeze-and-excitation with bias-free FCs and a ReLU bottleneck."""
    _check3(x, "se")
    B, C, L = x.shape
    hidden = fc1.shape[0]
    if fc1.shape != (hidden, C) or fc2.shape != (C, hidden):
        raise ShapeMismatch(f"se: fc1 {fc1.shape}, fc2 {fc2.shape} for {C} channels")
    z = x.mean(axis=2)
    h = z @ fc1.T
    a = np.maximum(h, 0)
    s = sigmoid(a @ fc2.T)
    y = x * s[:, :, None]
    return y, (x, z, h, a, s, fc1, fc2)


def se_backward(dy, cache):
    x, z, h, a, s, fc1, fc2 = cache
    L = x.shape[2]
    ds = np.sum(dy * x, axis=2)
    dg = ds * s * (1.0 - s)
    dfc2 = dg.T @ a
    dh = (dg @ fc2) * (h > 0)
    dfc1 = dh.T @ z
    dz = dh @ fc1
    dx = dy * s[:, :, None] + (dz / L)[:, :, None]
    return dx, dfc1, dfc2
