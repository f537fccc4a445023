"""Command-line surface: verification suites, cost and parameter reports,
micro-benchmarks, and single forward runs.

Exit codes: 0 success, 1 verification failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import arch, attention, costs, model as model_mod, oracle, tensor, verify
from .attention import AttentionConfig
from .errors import HaloError

DEFAULT_SEED = 0


def _manifest(command: str, args, **extra) -> dict:
    m = {
        "command": command,
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", DEFAULT_SEED),
        "format": getattr(args, "format", "text"),
        "threads": int(os.environ.get("HALO_THREADS", "1")),
    }
    m.update(extra)
    return m


def _emit(record: dict, fmt: str) -> None:
    if fmt == "structured":
        print(json.dumps(record, default=str))
    else:
        print("  ".join(f"{k}={v}" for k, v in record.items()))


def cmd_verify(args) -> int:
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    results, timings = verify.run_suites(names, seed=args.seed, inject_fault=args.inject_fault)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: max_err={r.max_err:.3e} tol={r.tol:.3e}"
              + (f" ({r.detail})" if r.detail else ""))
        failed += not r.passed
    manifest = _manifest("verify", args, suites=names, timings_s=timings,
                         checks=len(results), failures=failed)
    print(json.dumps({"manifest": manifest}, default=str))
    return 1 if failed else 0


def cmd_cost(args) -> int:
    H, W, c, b, h, k = args.H, args.W, args.c, args.b, args.halo, args.k
    reports = [
        costs.attention_cost(H, W, c, "global", None),
        costs.attention_cost(H, W, c, "per-pixel-windows", k),
        costs.attention_cost(H, W, c, "sasa", (b, h)),
        costs.attention_cost(H, W, c, "blocked-local", (b, h)),
    ]
    for r in reports:
        _emit(r.to_record(), args.format)
    ratio = costs.footnote_flop_ratio(H, W, c, 3)
    _emit({"footnote_flop_ratio_vs_3x3_conv": f"{float(ratio):.2f}"}, args.format)
    _emit({"downsample_flop_ratio_stride2": str(costs.downsample_flop_ratio(b, 2))},
          args.format)
    print(json.dumps({"manifest": _manifest("cost", args)}, default=str))
    return 0


def cmd_params(args) -> int:
    if args.config:
        cfg, _ = model_mod.parse_config_file(args.config)
        name = args.config
    else:
        cfg = arch.get_config(args.model)
        name = args.model
    report = costs.count_params(cfg)
    rec = report.to_record()
    rec["model"] = name
    if args.model in arch.PUBLISHED_PARAMS_M:
        published = arch.PUBLISHED_PARAMS_M[args.model] * 1e6
        rec["published_params"] = int(published)
        rec["deviation_pct"] = round(100 * (report.params - published) / published, 2)
    _emit(rec, args.format)
    if args.format == "text":
        for row in model_mod.describe(cfg):
            _emit(row, "text")
    print(json.dumps({"manifest": _manifest("params", args, model=name)}, default=str))
    return 0


def _bench_variants(args):
    rng = np.random.default_rng(args.seed)
    H = W = args.size
    c, b, h = args.c, args.b, args.halo
    x = rng.standard_normal((1, H, W, c))
    cfg = AttentionConfig(b=b, h=h, heads=1, d_head=c, masked=False)
    params = attention.init_params(cfg, c, seed=args.seed)
    k = 2 * h + 1

    def blocked():
        return attention.halo_attention_forward(x, params, cfg)[0]

    def masked():
        mcfg = AttentionConfig(b=b, h=h, heads=1, d_head=c, masked=True)
        return attention.halo_attention_forward(x, params, mcfg)[0]

    def per_pixel():
        return oracle.sliding_window_attention(x, params, k)

    return {"blocked": blocked, "unmasked": blocked, "masked": masked,
            "per-pixel": per_pixel}, cfg


def cmd_bench(args) -> int:
    variants, cfg = _bench_variants(args)
    chosen = args.compare or ["blocked", "per-pixel"]
    medians = {}
    for name in chosen:
        times = []
        for _ in range(args.iters):
            t0 = time.perf_counter()
            variants[name]()
            times.append(time.perf_counter() - t0)
        medians[name] = float(np.median(times))
        flops = costs.attention_cost(
            args.size, args.size, args.c,
            "per-pixel-windows" if name == "per-pixel" else "blocked-local",
            2 * args.halo + 1 if name == "per-pixel" else (args.b, args.halo),
        ).total_flops
        _emit({"variant": name, "median_s": f"{medians[name]:.6f}",
               "model_flops": flops, "note": "timings are hardware-dependent"},
              args.format)
    if "blocked" in medians and "per-pixel" in medians:
        _emit({"blocked_over_per_pixel_time_ratio":
               f"{medians['blocked'] / medians['per-pixel']:.3f}"}, args.format)
    print(json.dumps({"manifest": _manifest("bench", args, iters=args.iters,
                                            medians_s=medians)}, default=str))
    return 0


def cmd_run(args) -> int:
    cfg, cfg_seed = model_mod.parse_config_file(args.config)
    seed = args.seed if args.seed is not None else cfg_seed
    x = tensor.load_tensor(args.input)
    m = model_mod.build(cfg, seed=seed)
    t0 = time.perf_counter()
    logits = model_mod.forward(m, x)
    elapsed = time.perf_counter() - t0
    tensor.save_tensor(args.output, logits)
    manifest = _manifest("run", args, input=args.input, output=args.output,
                         model_seed=seed, forward_s=round(elapsed, 4),
                         params=m.param_count)
    with open(args.output + ".manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, default=str)
    print(json.dumps({"manifest": manifest}, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="halo", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("--suite", default="all",
                   choices=["all", *verify.SUITES], help="suite selection")
    v.add_argument("--seed", type=int, default=DEFAULT_SEED)
    v.add_argument("--inject-fault", default=None, choices=["mask"],
                   help="testing hook: corrupt the attention mask to prove detection")
    v.set_defaults(fn=cmd_verify)

    c = sub.add_parser("cost", help="scaling-table cost report")
    c.add_argument("--H", type=int, default=32)
    c.add_argument("--W", type=int, default=32)
    c.add_argument("--c", type=int, default=64)
    c.add_argument("--b", type=int, default=8)
    c.add_argument("--halo", type=int, default=3)
    c.add_argument("--k", type=int, default=7)
    c.add_argument("--format", default="text", choices=["text", "structured"])
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    c.set_defaults(fn=cmd_cost)

    q = sub.add_parser("params", help="model parameter report")
    q.add_argument("--model", default=None)
    q.add_argument("--config", default=None)
    q.add_argument("--format", default="text", choices=["text", "structured"])
    q.add_argument("--seed", type=int, default=DEFAULT_SEED)
    q.set_defaults(fn=cmd_params)

    b = sub.add_parser("bench", help="micro-benchmarks (reported, never asserted)")
    b.add_argument("--iters", type=int, default=3)
    b.add_argument("--size", type=int, default=64)
    b.add_argument("--c", type=int, default=16)
    b.add_argument("--b", type=int, default=8)
    b.add_argument("--halo", type=int, default=3)
    b.add_argument("--compare", nargs="*", default=None,
                   choices=["blocked", "per-pixel", "masked", "unmasked"])
    b.add_argument("--format", default="text", choices=["text", "structured"])
    b.add_argument("--seed", type=int, default=DEFAULT_SEED)
    b.set_defaults(fn=cmd_bench)

    r = sub.add_parser("run", help="single forward pass on a tensor file")
    r.add_argument("--config", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.cmd == "params" and not (args.model or args.config):
        print("params: either --model or --config is required", file=sys.stderr)
        return 2
    if getattr(args, "iters", 1) < 1:
        print("bench: --iters must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except HaloError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
