"""Property suites driven by the CLI ``verify`` command.

Each suite returns a list of check results with the measured error and the
tolerance it was held to; the CLI renders them and sets the exit status.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import attention, blocks, costs, oracle, tensor
from .arch import BUILTINS, PUBLISHED_PARAMS_M
from .attention import AttentionConfig, halo_attention_backward, halo_attention_forward

ORACLE_CASES = ((2, 1), (4, 1), (4, 3), (8, 3))


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_err: float
    tol: float
    detail: str = ""


def _check(results, name, err, tol, detail=""):
    results.append(CheckResult(name, bool(err < tol), float(err), float(tol), detail))


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(numeric), 1e-4)
    return float(np.max(np.abs(analytic - numeric) / denom))


def suite_roundtrip(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    for b in (1, 2, 4, 8):
        x = rng.standard_normal((2, 8, 8, 3))
        rt = blocks.unblock(blocks.block(x, b))
        exact = np.array_equal(rt, x)
        results.append(CheckResult(f"unblock(block(x,{b})) bit-exact", exact,
                                   0.0 if exact else float(np.max(np.abs(rt - x))), 0.0))
    x = rng.standard_normal((1, 4, 4, 2))
    import tempfile, os

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "t.htnsr")
        tensor.save_tensor(path, x)
        back = tensor.load_tensor(path)
    _check(results, "tensor file round trip bit-exact",
           0.0 if np.array_equal(back, x) else 1.0, 0.5)
    return results


def suite_oracle(seed: int = 0, inject_fault: str | None = None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    x = rng.standard_normal((1, 16, 16, 8))
    saved_mask = attention.build_mask
    if inject_fault == "mask":
        attention.build_mask = lambda cfg: (
            (np.abs(attention._offsets(cfg.b, cfg.h)[0]) <= cfg.h + 1)
            & (np.abs(attention._offsets(cfg.b, cfg.h)[1]) <= cfg.h + 1)
        )
    try:
        for b, h in ORACLE_CASES:
            k = 2 * h + 1
            for pad in ("zero", "circular"):
                cfg = AttentionConfig(b=b, h=h, heads=2, d_head=4, masked=True, pad_mode=pad)
                params = attention.init_params(cfg, 8, seed=seed)
                y, _ = halo_attention_forward(x, params, cfg)
                ref = oracle.sliding_window_attention(x, params, k, pad=pad, heads=2)
                err = float(np.max(np.abs(y - ref)))
                _check(results, f"masked blocked == oracle b={b} h={h} pad={pad}",
                       err, 1e-10)
    finally:
        attention.build_mask = saved_mask
    return results


def suite_grad(seed: int = 0) -> list[CheckResult]:
    results: list[CheckResult] = []
    cfg = AttentionConfig(b=2, h=1, heads=1, d_head=4, masked=False, pad_mode="zero")
    for s in range(seed, seed + 5):
        rng = np.random.default_rng(s)
        x = rng.standard_normal((1, 4, 4, 4))
        params = attention.init_params(cfg, 4, seed=s + 1000)
        dy = rng.standard_normal((1, 4, 4, 4))
        y, cache = halo_attention_forward(x, params, cfg)
        grads = halo_attention_backward(cache, dy)

        def loss_with(**replace):
            p = attention.AttentionParams(
                w_q=replace.get("w_q", params.w_q),
                w_k=replace.get("w_k", params.w_k),
                w_v=replace.get("w_v", params.w_v),
                rel=attention.RelEmbedding(
                    row_table=replace.get("row", params.rel.row_table),
                    col_table=replace.get("col", params.rel.col_table),
                ),
            )
            xx = replace.get("x", x)
            return float(np.sum(halo_attention_forward(xx, p, cfg)[0] * dy))

        targets = {
            "dX": ("x", x),
            "dW_Q": ("w_q", params.w_q),
            "dW_K": ("w_k", params.w_k),
            "dW_V": ("w_v", params.w_v),
            "d_row_table": ("row", params.rel.row_table),
            "d_col_table": ("col", params.rel.col_table),
        }
        for gname, (argname, theta) in targets.items():
            probe = oracle.GradProbe(loss=lambda t: loss_with(**{argname: t}), theta=theta)
            num = oracle.numeric_gradient(probe)
            _check(results, f"grad {gname} vs finite differences (seed {s})",
                   _rel_err(grads[gname], num), 1e-4)
    return results


def suite_equivariance(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    x = rng.standard_normal((1, 16, 16, 6))
    b, h = 4, 2

    cfg_u = AttentionConfig(b=b, h=h, heads=2, d_head=6, masked=False, pad_mode="circular")
    params = attention.init_params(cfg_u, 6, seed=seed)
    y0, _ = halo_attention_forward(x, params, cfg_u)
    for d1, d2 in ((1, 0), (1, 1), (2, 3)):
        xs = np.roll(x, (d1 * b, d2 * b), axis=(1, 2))
        ys, _ = halo_attention_forward(xs, params, cfg_u)
        err = float(np.max(np.abs(ys - np.roll(y0, (d1 * b, d2 * b), axis=(1, 2)))))
        _check(results, f"unmasked circular equivariance, shift ({d1}b,{d2}b)", err, 1e-12)

    cfg_m = AttentionConfig(b=b, h=h, heads=2, d_head=6, masked=True, pad_mode="circular")
    ym0, _ = halo_attention_forward(x, params, cfg_m)
    for di, dj in ((1, 0), (0, 3), (5, 2)):
        xs = np.roll(x, (di, dj), axis=(1, 2))
        ys, _ = halo_attention_forward(xs, params, cfg_m)
        err = float(np.max(np.abs(ys - np.roll(ym0, (di, dj), axis=(1, 2)))))
        _check(results, f"masked circular equivariance, shift ({di},{dj})", err, 1e-12)

    # the unmasked relaxation: a 1-pixel shift must actually change things
    xs = np.roll(x, 1, axis=1)
    ys, _ = halo_attention_forward(xs, params, cfg_u)
    diff = float(np.max(np.abs(ys - np.roll(y0, 1, axis=1))))
    results.append(CheckResult(
        "unmasked 1-pixel shift produces a measurable difference",
        diff > 1e-6, diff, 1e-6, "difference must EXCEED tolerance"))
    return results


def suite_cost(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    # blocked-memory formula == instrumented gather element count
    worst = 0
    for _ in range(20):
        b = int(rng.choice([1, 2, 4, 8]))
        bh_, bw_ = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        H, W = b * bh_, b * bw_
        c = int(rng.integers(1, 9))
        h = int(rng.integers(0, 4))
        x = rng.standard_normal((1, H, W, c))
        got = blocks.halo_gather(x, b, h).data.size
        want = blocks.neighborhood_memory(H, W, c, b, h)
        worst = max(worst, abs(got - want))
    _check(results, "neighborhood memory formula == gather element count (20 configs)",
           worst, 0.5)

    # Figure-2 geometry: 4x4 image, b=2, h=1 -> four 4x4xc memories
    hx = blocks.halo_gather(rng.standard_normal((1, 4, 4, 3)), 2, 1)
    geom_ok = hx.data.shape == (1, 2, 2, 16, 3)
    results.append(CheckResult("4x4 image, b=2, h=1 yields four 4x4xc memories",
                               geom_ok, 0.0 if geom_ok else 1.0, 0.5))

    for b, h in ((2, 1), (8, 3), (4, 4)):
        sasa = costs.attention_cost(32, 32, 64, "sasa", (b, h))
        blk = costs.attention_cost(32, 32, 64, "blocked-local", (b, h))
        same = (sasa.neighborhood_elements == blk.neighborhood_elements
                and sasa.flops_per_pixel == blk.flops_per_pixel)
        results.append(CheckResult(f"sasa == blocked-local cost rows (b={b},h={h})",
                                   same, 0.0 if same else 1.0, 0.5))

    # masked and unmasked forwards execute the same instrumented FLOPs
    x = rng.standard_normal((1, 16, 16, 4))
    cfg_m = AttentionConfig(b=4, h=2, heads=1, d_head=4, masked=True)
    cfg_u = AttentionConfig(b=4, h=2, heads=1, d_head=4, masked=False)
    params = attention.init_params(cfg_m, 4, seed=seed)
    _, cm = halo_attention_forward(x, params, cfg_m)
    _, cu = halo_attention_forward(x, params, cfg_u)
    _check(results, "masked and unmasked FLOP counts equal", abs(cm.flops - cu.flops), 0.5)

    ratio = float(costs.footnote_flop_ratio(128, 128, 64, 3))
    _check(results, "global/conv FLOP ratio at 128x128, c=64 is 28.44",
           abs(ratio - 28.44), 0.01)
    _check(results, "stride-2 downsample FLOP ratio is 1/4",
           abs(float(costs.downsample_flop_ratio(BUILTINS["H0"], 2)) - 0.25), 1e-15)
    _check(results, "rel params k=63, d_head=16 == 1008",
           abs(costs.rel_embedding_params(63, 0, 16, "centered") - 1008), 0.5)
    _check(results, "QKV params at d=512 == 786432",
           abs(3 * 512 * 512 - 786432), 0.5)
    for name, tol in (("resnet50ref", 0.02), ("halonet50", 0.02)):
        got = costs.count_params(name).params
        want = PUBLISHED_PARAMS_M[name] * 1e6
        _check(results, f"count_params({name}) within {tol:.0%} of published",
               abs(got - want) / want, tol)
    for name in ("H0", "H1", "H2", "H3", "H4", "H5", "H6", "H7"):
        tol = 0.10 if name <= "H4" else 0.15
        got = costs.count_params(name).params
        want = PUBLISHED_PARAMS_M[name] * 1e6
        _check(results, f"count_params({name}) within {tol:.0%} of published",
               abs(got - want) / want, tol)
    return results


SUITES = {
    "roundtrip": suite_roundtrip,
    "oracle": suite_oracle,
    "grad": suite_grad,
    "equivariance": suite_equivariance,
    "cost": suite_cost,
}


def run_suites(names, seed: int = 0, inject_fault: str | None = None):
    """Run the named suites; returns (results, timings)."""
    results: list[CheckResult] = []
    timings: dict[str, float] = {}
    for name in names:
        fn = SUITES[name]
        t0 = time.perf_counter()
        if name == "oracle":
            results.extend(fn(seed, inject_fault=inject_fault))
        else:
            results.extend(fn(seed))
        timings[name] = time.perf_counter() - t0
    return results, timings
