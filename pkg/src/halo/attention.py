"""Multi-head blocked local self-attention with relative embeddings.

Queries come from non-overlapping b x b blocks, keys and values from the
haloed (b+2h)^2 neighborhood around each block.  Logits are the sum of a
content-content term q.k and a content-geometry term q.r where r is a
factorized per-axis relative embedding shared across heads.  Masked mode
emulates a pixel-centered (2h+1) x (2h+1) window; unmasked mode lets every
query see the whole window.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import blocks, tensor
from .errors import ConfigError, DomainError, ShapeError

MASK_SENTINEL = -1e30


@dataclass
class AttentionConfig:
    b: int
    h: int
    heads: int = 1
    d_head: int = 16
    stride: int = 1
    masked: bool = False
    pad_mode: str = "zero"
    scale_logits: bool = False
    d_head_v: int | None = None  # value head width; defaults to d_head

    def __post_init__(self):
        if self.b < 1 or self.h < 0:
            raise ConfigError(f"invalid geometry b={self.b}, h={self.h}")
        if self.d_head % 2 != 0:
            raise ConfigError(f"d_head must be even (per-axis halves), got {self.d_head}")
        if self.stride < 1 or self.b % self.stride != 0:
            raise ConfigError(f"stride {self.stride} must divide block size {self.b}")
        if self.pad_mode not in ("zero", "circular"):
            raise ConfigError(f"unknown padding mode {self.pad_mode!r}")
        if self.d_head_v is None:
            self.d_head_v = self.d_head

    @property
    def width(self) -> int:
        return self.heads * self.d_head

    @property
    def width_v(self) -> int:
        return self.heads * self.d_head_v

    @property
    def window(self) -> int:
        return self.b + 2 * self.h


@dataclass
class RelEmbedding:
    """Per-axis offset tables, shape (2(b+h)-1, d_head/2), shared across heads."""

    row_table: np.ndarray
    col_table: np.ndarray

    @property
    def offset_origin(self) -> int:
        return (self.row_table.shape[0] - 1) // 2


@dataclass
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    rel: RelEmbedding


@dataclass
class AttentionCache:
    x: np.ndarray
    cfg: AttentionConfig
    params: AttentionParams
    xb: np.ndarray
    xh: np.ndarray
    gather_idx: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    p: np.ndarray  # (n, bh, bw, heads, L, M)
    y_shape: tuple
    flops: int = 0


def table_extent(b: int, h: int) -> int:
    """Per-axis offset count between a query in [0,b)^2 and a key in [-h,b+h)^2."""
    return 2 * (b + h) - 1


def init_params(cfg: AttentionConfig, c_in: int, seed: int = 0) -> AttentionParams:
    rng = np.random.default_rng(seed)

    def u(fan_in, shape):
        a = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-a, a, size=shape)

    n_off = table_extent(cfg.b, cfg.h)
    return AttentionParams(
        w_q=u(c_in, (c_in, cfg.width)),
        w_k=u(c_in, (c_in, cfg.width)),
        w_v=u(c_in, (c_in, cfg.width_v)),
        rel=RelEmbedding(
            row_table=u(cfg.d_head, (n_off, cfg.d_head // 2)),
            col_table=u(cfg.d_head, (n_off, cfg.d_head // 2)),
        ),
    )


def save_params(params: AttentionParams, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, arr in (
        ("W_Q", params.w_q),
        ("W_K", params.w_k),
        ("W_V", params.w_v),
        ("rel_row", params.rel.row_table),
        ("rel_col", params.rel.col_table),
    ):
        tensor.save_tensor(os.path.join(directory, f"{name}.htnsr"), arr)


def load_params(directory) -> AttentionParams:
    ld = lambda name: tensor.load_tensor(os.path.join(directory, f"{name}.htnsr"))
    return AttentionParams(
        w_q=ld("W_Q"),
        w_k=ld("W_K"),
        w_v=ld("W_V"),
        rel=RelEmbedding(row_table=ld("rel_row"), col_table=ld("rel_col")),
    )


def _offsets(b: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-(query, window-cell) axis offsets, shape (b^2, (b+2h)^2) each."""
    w = b + 2 * h
    ql = np.arange(b * b)
    wl = np.arange(w * w)
    di = (wl[None, :] // w - h) - ql[:, None] // b
    dj = (wl[None, :] % w - h) - ql[:, None] % b
    return di, dj


def build_mask(cfg: AttentionConfig) -> np.ndarray:
    """Allowed (query, window-cell) pairs emulating a centered (2h+1)^2 window."""
    di, dj = _offsets(cfg.b, cfg.h)
    return (np.abs(di) <= cfg.h) & (np.abs(dj) <= cfg.h)


def rel_logits(
    q: np.ndarray,
    rel: RelEmbedding,
    cfg: AttentionConfig,
    query_rows: np.ndarray | None = None,
    counter=None,
) -> np.ndarray:
    """Content-geometry logits q . r for blocked queries q (..., L, d_head).

    The row half of the query is dotted with the row table at the height
    offset, the column half with the column table at the width offset.
    ``query_rows`` selects a subset of the b^2 local query positions (the
    rows of q must match it); default is all of them.
    """
    half = cfg.d_head // 2
    origin = rel.offset_origin
    di, dj = _offsets(cfg.b, cfg.h)
    if query_rows is not None:
        di, dj = di[query_rows], dj[query_rows]
    qr = tensor.contract_last(q[..., :half], rel.row_table.T)  # (..., L, n_off)
    qc = tensor.contract_last(q[..., half:], rel.col_table.T)
    if counter is not None:
        counter[0] += 2 * qr.size * half + 2 * qc.size * half
    l_idx = np.arange(di.shape[0])[:, None]
    return qr[..., l_idx, di + origin] + qc[..., l_idx, dj + origin]


def _content_logits(qh: np.ndarray, kh: np.ndarray) -> np.ndarray:
    """q . k with a fixed ascending reduction over the head dimension."""
    L = qh.shape[-2]
    M = kh.shape[-2]
    out = np.zeros(qh.shape[:-2] + (L, M), dtype=qh.dtype)
    for d in range(qh.shape[-1]):
        out += qh[..., :, None, d] * kh[..., None, :, d]
    return out


def _weighted_values(p: np.ndarray, vh: np.ndarray) -> np.ndarray:
    """sum_m p[..., l, m] v[..., m, :] with ascending m."""
    out = np.zeros(p.shape[:-1] + (vh.shape[-1],), dtype=p.dtype)
    for m in range(p.shape[-1]):
        out += p[..., :, m, None] * vh[..., None, m, :]
    return out


def _query_subset(b: int, stride: int) -> np.ndarray:
    """Local indices of queries kept at the given stride (top-left phase)."""
    ql = np.arange(b * b)
    keep = ((ql // b) % stride == 0) & ((ql % b) % stride == 0)
    return np.nonzero(keep)[0]


def _forward(x: np.ndarray, params: AttentionParams, cfg: AttentionConfig):
    if x.ndim != 4:
        raise ShapeError(f"attention input must be (n, H, W, c), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("attention input contains non-finite values")
    n, H, W, c_in = x.shape
    if params.w_q.shape != (c_in, cfg.width) or params.w_k.shape != (c_in, cfg.width):
        raise ShapeError(
            f"W_Q/W_K shapes {params.w_q.shape}/{params.w_k.shape} inconsistent with "
            f"input channels {c_in} and attention width {cfg.width}"
        )
    if params.w_v.shape != (c_in, cfg.width_v):
        raise ShapeError(
            f"W_V shape {params.w_v.shape} inconsistent with value width {cfg.width_v}"
        )
    if params.rel.row_table.shape[0] != table_extent(cfg.b, cfg.h):
        raise ShapeError(
            f"relative table extent {params.rel.row_table.shape[0]} != "
            f"{table_extent(cfg.b, cfg.h)} required for b={cfg.b}, h={cfg.h}"
        )
    b, h = cfg.b, cfg.h
    flops = [0]

    xb = blocks.block(x, b).data
    idx = blocks.gather_indices(H, W, b, h, cfg.pad_mode)
    xh = blocks.halo_gather(x, b, h, cfg.pad_mode).data

    q = tensor.contract_last(xb, params.w_q)
    k = tensor.contract_last(xh, params.w_k)
    v = tensor.contract_last(xh, params.w_v)
    flops[0] += 2 * c_in * (q.size + k.size + v.size)

    keep = _query_subset(b, cfg.stride)
    qs = q[..., keep, :]

    dh = cfg.d_head
    mask = build_mask(cfg)[keep] if cfg.masked else None
    scale = 1.0 / np.sqrt(dh) if cfg.scale_logits else 1.0

    dv_ = cfg.d_head_v
    outs = []
    probs = []
    for head in range(cfg.heads):
        sl = slice(head * dh, (head + 1) * dh)
        slv = slice(head * dv_, (head + 1) * dv_)
        qh, kh, vh = qs[..., sl], k[..., sl], v[..., slv]
        logits = _content_logits(qh, kh)
        flops[0] += 2 * logits.size * dh
        rl = rel_logits(qh, params.rel, cfg, query_rows=keep, counter=flops)
        logits = logits + rl
        if cfg.scale_logits:
            logits = logits * scale
        if mask is not None:
            logits = np.where(mask, logits, logits + MASK_SENTINEL)
        p = tensor.softmax_lastdim(logits)
        if mask is not None:
            p = np.where(mask, p, 0.0)
        flops[0] += 5 * p.size
        outs.append(_weighted_values(p, vh))
        flops[0] += 2 * p.size * dh
        probs.append(p)

    y_blocked = np.concatenate(outs, axis=-1)
    p_all = np.stack(probs, axis=3)  # (n, bh, bw, heads, L', M)
    out_b = b // cfg.stride
    y = blocks.unblock(blocks.BlockedTensor(y_blocked, out_b))
    cache = AttentionCache(
        x=x, cfg=cfg, params=params, xb=xb, xh=xh, gather_idx=idx,
        q=q, k=k, v=v, p=p_all, y_shape=y.shape, flops=flops[0],
    )
    return y, cache


def halo_attention_forward(x: np.ndarray, params: AttentionParams, cfg: AttentionConfig):
    """Stride-1 blocked local attention; returns (y, cache) with y (n, H, W, heads*d_head)."""
    if cfg.stride != 1:
        raise ConfigError("halo_attention_forward requires stride 1; use attention_downsample")
    return _forward(x, params, cfg)


def attention_downsample(x: np.ndarray, params: AttentionParams, cfg: AttentionConfig) -> np.ndarray:
    """Strided attention: stride-1 neighborhoods, queries only at stride-multiple pixels."""
    y, _ = _forward(x, params, cfg)
    return y


def halo_attention_backward(cache: AttentionCache, dy: np.ndarray):
    """Analytic gradients of sum(y * dy) for a stride-1 forward cache."""
    cfg = cache.cfg
    if cfg.stride != 1:
        raise ConfigError("backward is defined for stride-1 caches")
    if dy.shape != cache.y_shape:
        raise ShapeError(f"dy shape {dy.shape} != forward output shape {cache.y_shape}")
    b, h, dh = cfg.b, cfg.h, cfg.d_head
    half = dh // 2
    n, H, W, c_in = cache.x.shape
    origin = cache.params.rel.offset_origin
    di, dj = _offsets(b, h)
    n_off = table_extent(b, h)
    scale = 1.0 / np.sqrt(dh) if cfg.scale_logits else 1.0

    dyb = blocks.block(dy, b).data
    dq = np.zeros_like(cache.q)
    dk = np.zeros_like(cache.k)
    dv = np.zeros_like(cache.v)
    d_row = np.zeros_like(cache.params.rel.row_table)
    d_col = np.zeros_like(cache.params.rel.col_table)

    dv_ = cfg.d_head_v
    for head in range(cfg.heads):
        sl = slice(head * dh, (head + 1) * dh)
        slv = slice(head * dv_, (head + 1) * dv_)
        qh, kh, vh = cache.q[..., sl], cache.k[..., sl], cache.v[..., slv]
        p = cache.p[:, :, :, head]
        dyh = dyb[..., slv]

        dv[..., slv] += np.einsum("...lm,...ld->...md", p, dyh, optimize=False)
        dp = np.einsum("...ld,...md->...lm", dyh, vh, optimize=False)
        dl = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
        dli = dl * scale

        dq[..., sl] += np.einsum("...lm,...md->...ld", dli, kh, optimize=False)
        dk[..., sl] += np.einsum("...lm,...ld->...md", dli, qh, optimize=False)

        # relative-embedding path: scatter logit grads onto per-axis offsets
        dqr = np.zeros(dli.shape[:-1] + (n_off,), dtype=dli.dtype)
        dqc = np.zeros_like(dqr)
        for o in range(n_off):
            dqr[..., o] = np.einsum("...lm,lm->...l", dli, (di + origin == o).astype(float))
            dqc[..., o] = np.einsum("...lm,lm->...l", dli, (dj + origin == o).astype(float))
        dq[..., head * dh : head * dh + half] += tensor.contract_last(
            dqr, cache.params.rel.row_table
        )
        dq[..., head * dh + half : (head + 1) * dh] += tensor.contract_last(
            dqc, cache.params.rel.col_table
        )
        q_row = qh[..., :half].reshape(-1, half)
        q_col = qh[..., half:].reshape(-1, half)
        d_row += tensor.matmul(dqr.reshape(-1, n_off).T, q_row)
        d_col += tensor.matmul(dqc.reshape(-1, n_off).T, q_col)

    xb2 = cache.xb.reshape(-1, c_in)
    xh2 = cache.xh.reshape(-1, c_in)
    dq2 = dq.reshape(-1, cfg.width)
    dk2 = dk.reshape(-1, cfg.width)
    dv2 = dv.reshape(-1, cfg.width_v)

    d_wq = tensor.matmul(xb2.T, dq2)
    d_wk = tensor.matmul(xh2.T, dk2)
    d_wv = tensor.matmul(xh2.T, dv2)

    dxb = tensor.matmul(dq2, cache.params.w_q.T).reshape(cache.xb.shape)
    dxh = (
        tensor.matmul(dk2, cache.params.w_k.T) + tensor.matmul(dv2, cache.params.w_v.T)
    ).reshape(cache.xh.shape)

    dx = blocks.unblock(blocks.BlockedTensor(dxb, b))
    dx = dx + blocks.scatter_add(dxh, cache.gather_idx, H, W)
    return {
        "dX": dx,
        "dW_Q": d_wq,
        "dW_K": d_wk,
        "dW_V": d_wv,
        "d_row_table": d_row,
        "d_col_table": d_col,
    }
