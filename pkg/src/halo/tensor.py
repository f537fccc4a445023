"""Minimal deterministic dense-tensor kernels.

All arrays are numpy float64 (float32 is allowed only on the benchmark
path).  Every reduction runs in fixed ascending index order with no
reassociation, so identical inputs produce bit-identical outputs across
runs, and results agree with a naive triple-loop reference to 0 ulp.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DivisibilityError, DomainError, ShapeError

MAGIC = b"HTNSR1"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with ascending-inner-index accumulation.

    Bit-identical to ``acc[i, j] += a[i, k] * b[k, j]`` looped with k
    ascending, which is what the triple-loop oracle computes.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def contract_last(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Apply ``matmul`` over the last axis of an N-D array: x[..., k] @ w[k, n]."""
    lead = x.shape[:-1]
    flat = matmul(x.reshape(-1, x.shape[-1]), w)
    return flat.reshape(*lead, w.shape[1])


def _same_pad(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, pad: str = "zero-same") -> np.ndarray:
    """2D convolution (cross-correlation), NHWC layout, biasless.

    ``pad`` is "zero-same" (output ceil(h/stride)) or "valid".
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and kernel, got {x.shape} and {kernel.shape}")
    n, h, w, c_in = x.shape
    kh, kw, kc, c_out = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d kernel must be odd and square, got {kh}x{kw}")
    if kc != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c_in}, kernel expects {kc}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if pad == "zero-same":
        oh, pt, pb = _same_pad(h, kh, stride)
        ow, pl, pr = _same_pad(w, kw, stride)
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    elif pad == "valid":
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
    else:
        raise ShapeError(f"unknown padding mode {pad!r}")
    # im2col: patch channel order is (ki, kj, c), matching kernel layout.
    cols = np.empty((n, oh, ow, kh * kw * c_in), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            sl = x[:, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride, :]
            cols[..., (ki * kw + kj) * c_in : (ki * kw + kj + 1) * c_in] = sl
    return contract_last(cols, kernel.reshape(kh * kw * c_in, c_out))


def maxpool(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Max pooling with same padding; padded cells never win the max."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects 4D input, got {x.shape}")
    n, h, w, c = x.shape
    oh, pt, _ = _same_pad(h, k, stride)
    ow, pl, _ = _same_pad(w, k, stride)
    out = np.full((n, oh, ow, c), -np.inf, dtype=x.dtype)
    for ki in range(k):
        i_off = ki - pt
        oi_lo = max(0, -(-(-i_off) // stride))
        oi_hi = min(oh - 1, (h - 1 - i_off) // stride)
        if oi_lo > oi_hi:
            continue
        for kj in range(k):
            j_off = kj - pl
            oj_lo = max(0, -(-(-j_off) // stride))
            oj_hi = min(ow - 1, (w - 1 - j_off) // stride)
            if oj_lo > oj_hi:
                continue
            src = x[
                :,
                oi_lo * stride + i_off : oi_hi * stride + i_off + 1 : stride,
                oj_lo * stride + j_off : oj_hi * stride + j_off + 1 : stride,
                :,
            ]
            dst = out[:, oi_lo : oi_hi + 1, oj_lo : oj_hi + 1, :]
            np.maximum(dst, src, out=dst)
    return out


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (max subtraction)."""
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "silu":
        return x / (1.0 + np.exp(-x))
    raise ShapeError(f"unknown activation {kind!r}")


def affine_norm(
    x: np.ndarray,
    scale: np.ndarray,
    shift: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Per-channel affine normalization with provided statistics.

    Works on any layout whose last axis is channels (4D images or the 5D
    blocked format alike).
    """
    c = x.shape[-1]
    for name, arr in (("scale", scale), ("shift", shift), ("mean", mean), ("var", var)):
        if np.asarray(arr).shape != (c,):
            raise ShapeError(f"affine_norm {name} must have shape ({c},)")
    if np.any(np.asarray(var) < 0):
        raise DomainError("affine_norm variance must be nonnegative")
    return (x - mean) / np.sqrt(var + eps) * scale + shift


def save_tensor(path, x: np.ndarray) -> None:
    """Write the shared tensor file format: magic, u32 rank, u32 dims, f64 payload."""
    x = np.asarray(x, dtype="<f8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", x.ndim))
        f.write(struct.pack(f"<{x.ndim}I", *x.shape))
        f.write(x.tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ShapeError(f"{path}: not a tensor file (bad magic)")
        (rank,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: payload size {data.size} does not match shape {shape}")
    return data.reshape(shape).copy()


def check_divides(size: int, b: int, name: str) -> None:
    if size % b != 0:
        raise DivisibilityError(f"{name}={size} is not divisible by block size {b}")
