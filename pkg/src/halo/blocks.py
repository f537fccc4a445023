"""Blocking, haloing and unblocking transforms in the persistent 5D layout.

An image (n, H, W, c) is chopped into non-overlapping b x b blocks and
flattened to (n, H/b, W/b, b*b, c); haloing widens each block by a band
of h pixels to a shared (b+2h)^2 neighborhood, with zero or circular
padding at the image boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import check_divides


@dataclass
class BlockedTensor:
    """(batch, H/b, W/b, b^2, c) with row-major flattening inside each block."""

    data: np.ndarray
    block_size: int

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def blocks_h(self) -> int:
        return self.data.shape[1]

    @property
    def blocks_w(self) -> int:
        return self.data.shape[2]

    @property
    def block_len(self) -> int:
        return self.data.shape[3]

    @property
    def channels(self) -> int:
        return self.data.shape[4]


@dataclass
class HaloedTensor:
    """(batch, H/b, W/b, (b+2h)^2, c) shared neighborhoods per block."""

    data: np.ndarray
    block_size: int
    halo: int
    pad_mode: str

    @property
    def window_len(self) -> int:
        return self.data.shape[3]


def block(x: np.ndarray, b: int) -> BlockedTensor:
    """Pixel (i, j) lands in block (i//b, j//b) at local index (i%b)*b + (j%b)."""
    n, h, w, c = x.shape
    check_divides(h, b, "H")
    check_divides(w, b, "W")
    data = (
        x.reshape(n, h // b, b, w // b, b, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h // b, w // b, b * b, c)
    )
    return BlockedTensor(np.ascontiguousarray(data), b)


def unblock(x: BlockedTensor) -> np.ndarray:
    """Exact inverse of :func:`block`."""
    n, bh, bw, _, c = x.data.shape
    b = x.block_size
    out = (
        x.data.reshape(n, bh, bw, b, b, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, bh * b, bw * b, c)
    )
    return np.ascontiguousarray(out)


def gather_indices(h: int, w: int, b: int, halo: int, pad: str) -> np.ndarray:
    """Flat source-pixel index for every window cell, -1 for zero padding.

    Shape (H/b, W/b, (b+2h)^2); the window for block (p, q) covers image
    rows [p*b - halo, p*b + b + halo) and likewise columns.
    """
    if pad not in ("zero", "circular"):
        raise ConfigError(f"unknown padding mode {pad!r}")
    bh, bw = h // b, w // b
    win = b + 2 * halo
    rows = np.arange(bh)[:, None, None, None] * b + np.arange(win)[None, None, :, None] - halo
    cols = np.arange(bw)[None, :, None, None] * b + np.arange(win)[None, None, None, :] - halo
    rows = np.broadcast_to(rows, (bh, bw, win, win))
    cols = np.broadcast_to(cols, (bh, bw, win, win))
    if pad == "circular":
        idx = (rows % h) * w + (cols % w)
    else:
        valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        idx = np.where(valid, rows * w + cols, -1)
    return idx.reshape(bh, bw, win * win)


def halo_gather(x: np.ndarray, b: int, h: int, pad: str = "zero") -> HaloedTensor:
    """Gather the haloed (b+2h)^2 neighborhood of every block."""
    n, H, W, c = x.shape
    check_divides(H, b, "H")
    check_divides(W, b, "W")
    if h < 0:
        raise ConfigError(f"halo size must be >= 0, got {h}")
    idx = gather_indices(H, W, b, h, pad)
    flat = x.reshape(n, H * W, c)
    data = flat[:, np.maximum(idx, 0), :]
    if pad == "zero":
        data = np.where((idx >= 0)[None, :, :, :, None], data, 0.0)
    return HaloedTensor(np.ascontiguousarray(data), b, h, pad)


def scatter_add(grad: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adjoint of the gather described by ``idx``: accumulate back to the image."""
    n = grad.shape[0]
    c = grad.shape[-1]
    out = np.zeros((n, h * w, c), dtype=grad.dtype)
    flat_idx = idx.reshape(-1)
    flat_grad = grad.reshape(n, -1, c)
    valid = flat_idx >= 0
    np.add.at(out, (slice(None), flat_idx[valid]), flat_grad[:, valid, :])
    return out.reshape(n, h, w, c)


def neighborhood_memory(h: int, w: int, c: int, b: int, halo: int) -> int:
    """Element count of the haloed neighborhoods per batch item: HW/b^2 * (b+2h)^2 * c."""
    check_divides(h, b, "H")
    check_divides(w, b, "W")
    return (h * w) // (b * b) * (b + 2 * halo) ** 2 * c
