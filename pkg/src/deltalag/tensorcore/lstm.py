"""Gated recurrent (LSTM) temporal encoder as a single fused tape primitive.

The whole unrolled recurrence is recorded as one node whose adjoint is an
explicit backpropagation-through-time sweep, which keeps the tape short when
the window length is 30 and the batch is an entire cross-section.

Gate layout along the 4N axis: input, forget, output, candidate.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import DimensionError, DomainError
from .core import Tensor, _record, as_tensor
from .params import scaled_uniform

PARAM_NAMES = ("encoder.W_x", "encoder.W_h", "encoder.b")


def init_encoder(rng: np.random.Generator, n_features: int, hidden: int) -> dict[str, np.ndarray]:
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    return {
        "encoder.W_x": scaled_uniform(rng, (n_features, 4 * hidden), hidden),
        "encoder.W_h": scaled_uniform(rng, (hidden, 4 * hidden), hidden),
        "encoder.b": b,
    }


def lstm(X, W_x, W_h, b) -> Tensor:
    """Run the cell over ``X`` of shape (L, F) or (L, B, F).

    Returns every hidden state, shape (L, N) or (L, B, N); states start at zero.
    """
    X, W_x, W_h, b = (as_tensor(t) for t in (X, W_x, W_h, b))
    x = X.data
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, None, :]
    if x.ndim != 3:
        raise DimensionError(f"encoder input must be (L, F) or (L, B, F), got {X.shape}")
    L, B, F = x.shape
    N = W_h.shape[0]
    if W_x.shape != (F, 4 * N) or W_h.shape != (N, 4 * N) or b.shape != (4 * N,):
        raise DimensionError(
            f"encoder weights {W_x.shape}, {W_h.shape}, {b.shape} do not fit F={F}, N={N}"
        )
    if not np.all(np.isfinite(x)):
        raise DomainError("encoder input contains non-finite values")

    wx, wh, bias = W_x.data, W_h.data, b.data
    gates = np.empty((L, B, 4 * N))
    c = np.empty((L, B, N))
    tc = np.empty((L, B, N))
    h = np.empty((L, B, N))
    # one matmul for the input contribution of every step
    pre_x = (x.reshape(L * B, F) @ wx).reshape(L, B, 4 * N) + bias
    h_prev = np.zeros((B, N))
    c_prev = np.zeros((B, N))
    for t in range(L):
        a = pre_x[t] + h_prev @ wh
        g = gates[t]
        g[:, :3 * N] = expit(a[:, :3 * N])
        g[:, 3 * N:] = np.tanh(a[:, 3 * N:])
        c[t] = g[:, N:2 * N] * c_prev + g[:, :N] * g[:, 3 * N:]
        tc[t] = np.tanh(c[t])
        h[t] = g[:, 2 * N:3 * N] * tc[t]
        h_prev, c_prev = h[t], c[t]

    def bwd(dH):
        if squeeze:
            dH = dH[:, None, :]
        d_pre = np.empty((L, B, 4 * N))
        dW_h = np.zeros_like(wh)
        dh_next = np.zeros((B, N))
        dc_next = np.zeros((B, N))
        for t in range(L - 1, -1, -1):
            g = gates[t]
            i, f, o, cand = g[:, :N], g[:, N:2 * N], g[:, 2 * N:3 * N], g[:, 3 * N:]
            dh = dH[t] + dh_next
            dc = dh * o * (1.0 - tc[t] ** 2) + dc_next
            c_before = c[t - 1] if t > 0 else np.zeros((B, N))
            da = d_pre[t]
            da[:, :N] = dc * cand * i * (1.0 - i)
            da[:, N:2 * N] = dc * c_before * f * (1.0 - f)
            da[:, 2 * N:3 * N] = dh * tc[t] * o * (1.0 - o)
            da[:, 3 * N:] = dc * i * (1.0 - cand * cand)
            if t > 0:
                dW_h += h[t - 1].T @ da
            dh_next = da @ wh.T
            dc_next = dc * f
        flat = d_pre.reshape(L * B, 4 * N)
        dX = (flat @ wx.T).reshape(L, B, F)
        if squeeze:
            dX = dX[:, 0, :]
        return dX, x.reshape(L * B, F).T @ flat, dW_h, flat.sum(axis=0)

    out = h[:, 0, :] if squeeze else h
    return _record("lstm", out.copy(), (X, W_x, W_h, b), bwd)


def encoder_forward(X, params) -> Tensor:
    """Hidden-state sequence X' for window(s) ``X`` using ``encoder.*`` params."""
    return lstm(X, params["encoder.W_x"], params["encoder.W_h"], params["encoder.b"])
