"""Brute-force references used only for verification.

These deliberately share no code with the blocked fast path: neighborhoods
are gathered pixel by pixel with explicit index arithmetic, so agreement
between the two routes is evidence rather than tautology.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor
from .attention import AttentionParams
from .errors import ConfigError, DomainError


def _window(x: np.ndarray, i: int, j: int, k: int, pad: str) -> np.ndarray:
    """k x k neighborhood of pixel (i, j) for one image, flattened row-major."""
    h, w, c = x.shape
    r = k // 2
    out = np.zeros((k * k, c), dtype=x.dtype)
    for a in range(k):
        for b in range(k):
            ii, jj = i + a - r, j + b - r
            if pad == "circular":
                out[a * k + b] = x[ii % h, jj % w]
            elif 0 <= ii < h and 0 <= jj < w:
                out[a * k + b] = x[ii, jj]
    return out


def sliding_window_attention(
    x: np.ndarray,
    params: AttentionParams,
    k: int,
    pad: str = "zero",
    heads: int = 1,
    scale_logits: bool = False,
) -> np.ndarray:
    """Per-pixel centered k x k attention, O(HW k^2 c), no blocking.

    The query's position is the window center, so per-axis offsets span
    exactly [-k//2, k//2]; relative tables are indexed from their middle
    entry, matching the masked fast path's allowed set.
    """
    if k % 2 == 0:
        raise ConfigError(f"window size must be odd, got {k}")
    if pad not in ("zero", "circular"):
        raise ConfigError(f"unknown padding mode {pad!r}")
    n, H, W, c = x.shape
    d = params.w_q.shape[1]
    if d % heads != 0:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    half = dh // 2
    r = k // 2
    origin = params.rel.offset_origin
    scale = 1.0 / np.sqrt(dh) if scale_logits else 1.0
    # per-axis rel offset of each window cell from the centered query
    off = np.arange(k) - r
    da = np.repeat(off, k)
    db = np.tile(off, k)

    y = np.empty((n, H, W, d), dtype=x.dtype)
    for im in range(n):
        for i in range(H):
            for j in range(W):
                win = _window(x[im], i, j, k, pad)  # (k*k, c)
                qv = tensor.matmul(x[im, i, j][None, :], params.w_q)[0]
                kv = tensor.matmul(win, params.w_k)
                vv = tensor.matmul(win, params.w_v)
                for head in range(heads):
                    sl = slice(head * dh, (head + 1) * dh)
                    qh = qv[sl]
                    logits = kv[:, sl] @ qh
                    logits = logits + params.rel.row_table[da + origin] @ qh[:half]
                    logits = logits + params.rel.col_table[db + origin] @ qh[half:]
                    p = tensor.softmax_lastdim(logits * scale)
                    y[im, i, j, sl] = p @ vv[:, sl]
    return y


def global_attention(x: np.ndarray, params: AttentionParams, heads: int = 1,
                     scale_logits: bool = False) -> np.ndarray:
    """Every pixel attends to all HW pixels; pure content-content (no rel term)."""
    n, H, W, c = x.shape
    d = params.w_q.shape[1]
    dh = d // heads
    scale = 1.0 / np.sqrt(dh) if scale_logits else 1.0
    flat = x.reshape(n, H * W, c)
    y = np.empty((n, H * W, d), dtype=x.dtype)
    for im in range(n):
        q = tensor.matmul(flat[im], params.w_q)
        kv = tensor.matmul(flat[im], params.w_k)
        vv = tensor.matmul(flat[im], params.w_v)
        for head in range(heads):
            sl = slice(head * dh, (head + 1) * dh)
            p = tensor.softmax_lastdim(q[:, sl] @ kv[:, sl].T * scale)
            y[im, :, sl] = p @ vv[:, sl]
    return y.reshape(n, H, W, d)


@dataclass
class GradProbe:
    """Central-difference probe for a scalar loss over one flat parameter array."""

    loss: Callable[[np.ndarray], float]
    theta: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


def numeric_gradient(probe: GradProbe) -> np.ndarray:
    """(f(t+e) - f(t-e)) / 2e per coordinate, same shape as probe.theta."""
    base = probe.loss(probe.theta)
    if not np.isfinite(base):
        raise DomainError("loss is not finite at the base point")
    theta = probe.theta.astype(float).copy()
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + probe.epsilon
        fp = probe.loss(theta)
        flat[i] = old - probe.epsilon
        fm = probe.loss(theta)
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(f"loss not finite near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * probe.epsilon)
    return grad
