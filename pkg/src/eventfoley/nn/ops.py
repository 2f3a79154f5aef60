"""Forward/backward pairs for the primitive operations.

Activations are channels-last: ``[batch, length, channels]``. Convolution
weights use ``[out_channels, in_channels, kernel]`` for :func:`conv1d` and
``[in_channels, out_channels, kernel]`` for :func:`conv1d_transposed`, so the
same array used in both is a conv/adjoint pair.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` takes ``(grad_output, cache)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def _im2col(xp: np.ndarray, kernel: int, stride: int, out_len: int) -> np.ndarray:
    b, _, c = xp.shape
    win = sliding_window_view(xp, kernel, axis=1)[:, : stride * (out_len - 1) + 1 : stride]
    return win.reshape(b * out_len, c * kernel)


def _col2im(cols: np.ndarray, b: int, length: int, c: int, kernel: int, stride: int, out_len: int) -> np.ndarray:
    cols = cols.reshape(b, out_len, c, kernel)
    out = np.zeros((b, length, c), dtype=cols.dtype)
    span = stride * (out_len - 1) + 1
    for k in range(kernel):
        out[:, k : k + span : stride] += cols[..., k]
    return out


def conv1d_forward(x, w, b, stride=1, padding=0):
    """Cross-correlation; output length ``(L + 2*padding - K) // stride + 1``."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with weight {w.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    bsz, length, cin = x.shape
    cout, _, kernel = w.shape
    padded = length + 2 * padding
    if padded < kernel:
        raise ShapeError(f"conv1d: kernel {kernel} does not fit padded length {padded}")
    out_len = (padded - kernel) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (0, 0))) if padding else x
    cols = _im2col(xp, kernel, stride, out_len)
    y = cols @ w.reshape(cout, cin * kernel).T
    if b is not None:
        y += b
    return y.reshape(bsz, out_len, cout), (cols, x.shape, w, stride, padding, b is not None)


def conv1d_backward(dy, cache):
    cols, xshape, w, stride, padding, has_bias = cache
    bsz, length, cin = xshape
    cout, _, kernel = w.shape
    out_len = dy.shape[1]
    dy2 = dy.reshape(bsz * out_len, cout)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy2.sum(axis=0) if has_bias else None
    dcols = dy2 @ w.reshape(cout, cin * kernel)
    dxp = _col2im(dcols, bsz, length + 2 * padding, cin, kernel, stride, out_len)
    dx = dxp[:, padding : padding + length] if padding else dxp
    return dx, dw, db


def conv1d_transposed_forward(x, w, b, stride=1, crop=0):
    """Adjoint of :func:`conv1d`; output length ``(L - 1) * stride + K - 2*crop``."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[0]:
        raise ShapeError(f"conv1d_transposed: input {x.shape} incompatible with weight {w.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    bsz, length, cin = x.shape
    _, cout, kernel = w.shape
    full = (length - 1) * stride + kernel
    if full - 2 * crop < 1:
        raise ShapeError(f"conv1d_transposed: crop {crop} leaves no output")
    x2 = x.reshape(bsz * length, cin)
    cols = x2 @ w.reshape(cin, cout * kernel)
    y = _col2im(cols, bsz, full, cout, kernel, stride, length)
    if crop:
        y = y[:, crop : full - crop]
    if b is not None:
        y = y + b
    return y, (x2, x.shape, w, stride, crop, b is not None)


def conv1d_transposed_backward(dy, cache):
    x2, xshape, w, stride, crop, has_bias = cache
    bsz, length, cin = xshape
    _, cout, kernel = w.shape
    db = dy.sum(axis=(0, 1)) if has_bias else None
    if crop:
        dy = np.pad(dy, ((0, 0), (crop, crop), (0, 0)))
    dcols = _im2col(dy, kernel, stride, length)
    dw = (x2.T @ dcols).reshape(w.shape)
    dx = (dcols @ w.reshape(cin, cout * kernel).T).reshape(xshape)
    return dx, dw, db


def linear_forward(x, w, b):
    """``x @ w + b`` over the last axis; ``w`` is ``[in, out]``."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    y = x.reshape(-1, w.shape[0]) @ w
    if b is not None:
        y += b
    return y.reshape(x.shape[:-1] + (w.shape[1],)), (x, w, b is not None)


def linear_backward(dy, cache):
    x, w, has_bias = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0) if has_bias else None
    return (dy2 @ w.T).reshape(x.shape), dw, db


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu_forward(x):
    s = sigmoid(x)
    return x * s, (x, s)


def silu_backward(dy, cache):
    x, s = cache
    return dy * s * (1.0 + x * (1.0 - s))


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


ACTIVATIONS = {
    "silu": (silu_forward, silu_backward),
    "tanh": (tanh_forward, tanh_backward),
    "linear": (lambda x: (x, None), lambda dy, cache: dy),
}


def lstm_forward(x, wx, wh, b, reverse=False):
    """Single-layer LSTM over axis 1 with zero initial state.

    Gate order in the ``4H`` axis is input, forget, cell, output.
    Returns hidden states ``[B, L, H]``.
    """
    bsz, length, _ = x.shape
    hidden = wh.shape[0]
    if wx.shape != (x.shape[2], 4 * hidden) or wh.shape != (hidden, 4 * hidden):
        raise ShapeError(f"lstm: input {x.shape} incompatible with wx {wx.shape}, wh {wh.shape}")
    xs = x[:, ::-1] if reverse else x
    zx = xs @ wx + b
    h = np.zeros((bsz, hidden), dtype=zx.dtype)
    c = np.zeros_like(h)
    hs = np.empty((bsz, length, hidden), dtype=zx.dtype)
    gates = np.empty((bsz, length, 4 * hidden), dtype=zx.dtype)
    cs = np.empty_like(hs)
    for t in range(length):
        z = zx[:, t] + h @ wh
        g = np.empty_like(z)
        g[:, : 2 * hidden] = sigmoid(z[:, : 2 * hidden])
        g[:, 2 * hidden : 3 * hidden] = np.tanh(z[:, 2 * hidden : 3 * hidden])
        g[:, 3 * hidden :] = sigmoid(z[:, 3 * hidden :])
        i, f, gg, o = np.split(g, 4, axis=1)
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates[:, t] = g
        cs[:, t] = c
        hs[:, t] = h
    out = hs[:, ::-1] if reverse else hs
    return out, (xs, wx, wh, gates, cs, hs, reverse)


def lstm_backward(dout, cache):
    xs, wx, wh, gates, cs, hs, reverse = cache
    bsz, length, cin = xs.shape
    hidden = wh.shape[0]
    dhs = dout[:, ::-1] if reverse else dout
    dz_all = np.empty_like(gates)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((bsz, hidden), dtype=gates.dtype)
    dc_next = np.zeros_like(dh_next)
    for t in range(length - 1, -1, -1):
        i, f, gg, o = np.split(gates[:, t], 4, axis=1)
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(c)
        h_prev = hs[:, t - 1] if t > 0 else np.zeros_like(c)
        tc = np.tanh(c)
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * gg * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - gg * gg), dh * tc * o * (1 - o)],
            axis=1,
        )
        dz_all[:, t] = dz
        dwh += h_prev.T @ dz
        dh_next = dz @ wh.T
        dc_next = dc * f
    dz2 = dz_all.reshape(-1, 4 * hidden)
    dwx = xs.reshape(-1, cin).T @ dz2
    db = dz2.sum(axis=0)
    dx = (dz_all @ wx.T)
    if reverse:
        dx = dx[:, ::-1]
    return dx, dwx, dwh, db
