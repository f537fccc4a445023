"""Forward-only model builder.

Materializes the shared layer plan into seeded parameter arrays and runs a
deterministic forward pass: conv stem, four bottleneck stages whose spatial
op is blocked local attention (or a 3x3 conv in hybrid stages), optional
final 1x1 widening, global average pooling and a linear classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arch, tensor
from .attention import AttentionConfig, AttentionParams, RelEmbedding, _forward, table_extent
from .errors import ConfigError, ShapeError


@dataclass
class NormParams:
    scale: np.ndarray
    shift: np.ndarray
    mean: np.ndarray
    var: np.ndarray


@dataclass
class Model:
    cfg: arch.HaloNetConfig
    plan: arch.ModelPlan
    weights: dict
    seed: int

    @property
    def param_count(self) -> int:
        return self.plan.params


def _validate_spatial(cfg: arch.HaloNetConfig, plan: arch.ModelPlan) -> None:
    if cfg.s % 32 != 0:
        raise ConfigError(f"image size {cfg.s} must be divisible by 32")
    for si, stage in enumerate(plan.stages, start=1):
        for bi, blk in enumerate(stage):
            sp = blk.spatial
            if isinstance(sp, arch.AttnSpec):
                if bi == 0 and si > 1:
                    r_in = arch.stage_resolution(cfg, si - 1)
                else:
                    r_in = arch.stage_resolution(cfg, si)
                if r_in % sp.b != 0:
                    raise ConfigError(
                        f"stage {si}: resolution {r_in} not divisible by block size {sp.b}"
                    )
                if sp.stride > 1 and sp.b % sp.stride != 0:
                    raise ConfigError(
                        f"stage {si}: stride {sp.stride} does not divide block size {sp.b}"
                    )
                if sp.d_head % 2 != 0:
                    raise ConfigError(f"stage {si}: query head width {sp.d_head} must be even")


def _init_conv(spec: arch.ConvSpec, rng) -> np.ndarray:
    a = 1.0 / np.sqrt(spec.k * spec.k * spec.c_in)
    return rng.uniform(-a, a, size=(spec.k, spec.k, spec.c_in, spec.c_out))


def _init_norm(spec: arch.NormSpec) -> NormParams:
    c = spec.c
    return NormParams(np.ones(c), np.zeros(c), np.zeros(c), np.ones(c))


def _init_attn(spec: arch.AttnSpec, rng) -> AttentionParams:
    def u(fan_in, shape):
        a = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-a, a, size=shape)

    n_off = table_extent(spec.b, spec.h)
    return AttentionParams(
        w_q=u(spec.c_in, (spec.c_in, spec.c_qk)),
        w_k=u(spec.c_in, (spec.c_in, spec.c_qk)),
        w_v=u(spec.c_in, (spec.c_in, spec.c_v)),
        rel=RelEmbedding(
            row_table=u(spec.d_head, (n_off, spec.d_head // 2)),
            col_table=u(spec.d_head, (n_off, spec.d_head // 2)),
        ),
    )


def build(cfg: arch.HaloNetConfig | str, seed: int = 0) -> Model:
    cfg = arch.get_config(cfg)
    plan = arch.layer_plan(cfg)
    _validate_spatial(cfg, plan)
    rng = np.random.default_rng(seed)
    weights: dict = {
        "stem_conv": _init_conv(plan.stem_conv, rng),
        "stem_norm": _init_norm(plan.stem_norm),
        "stages": [],
    }
    for stage in plan.stages:
        ws = []
        for blk in stage:
            w = {
                "conv1": _init_conv(blk.conv1, rng),
                "norm1": _init_norm(blk.norm1),
                "norm2": _init_norm(blk.norm2),
                "conv3": _init_conv(blk.conv3, rng),
                "norm3": _init_norm(blk.norm3),
            }
            if isinstance(blk.spatial, arch.AttnSpec):
                w["spatial"] = _init_attn(blk.spatial, rng)
            else:
                w["spatial"] = _init_conv(blk.spatial, rng)
            if blk.shortcut_conv is not None:
                w["shortcut_conv"] = _init_conv(blk.shortcut_conv, rng)
                w["shortcut_norm"] = _init_norm(blk.shortcut_norm)
            ws.append(w)
        weights["stages"].append(ws)
    if plan.final_conv is not None:
        weights["final_conv"] = _init_conv(plan.final_conv, rng)
        weights["final_norm"] = _init_norm(plan.final_norm)
    a = 1.0 / np.sqrt(plan.fc.c_in)
    weights["fc_w"] = rng.uniform(-a, a, size=(plan.fc.c_in, plan.fc.classes))
    weights["fc_b"] = np.zeros(plan.fc.classes)
    return Model(cfg=cfg, plan=plan, weights=weights, seed=seed)


def _norm(x, p: NormParams):
    return tensor.affine_norm(x, p.scale, p.shift, p.mean, p.var)


def _attn_forward(x, spec: arch.AttnSpec, params: AttentionParams):
    cfg = AttentionConfig(
        b=spec.b, h=spec.h, heads=spec.heads,
        d_head=spec.c_qk // spec.heads, d_head_v=spec.c_v // spec.heads,
        stride=spec.stride, masked=False, pad_mode="zero",
    )
    y, _ = _forward(x, params, cfg)
    return y


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits for a batch of (n, s, s, 3) images."""
    cfg = model.cfg
    if x.ndim != 4 or x.shape[1] != cfg.s or x.shape[2] != cfg.s or x.shape[3] != 3:
        raise ShapeError(f"input must be (n, {cfg.s}, {cfg.s}, 3), got {x.shape}")
    act = cfg.activation
    w = model.weights
    x = tensor.conv2d(x, w["stem_conv"], stride=2)
    x = tensor.activation(_norm(x, w["stem_norm"]), act)
    x = tensor.maxpool(x, 3, 2)
    for stage, ws in zip(model.plan.stages, w["stages"]):
        for blk, bw in zip(stage, ws):
            identity = x
            out = tensor.activation(_norm(tensor.conv2d(x, bw["conv1"]), bw["norm1"]), act)
            if isinstance(blk.spatial, arch.AttnSpec):
                out = _attn_forward(out, blk.spatial, bw["spatial"])
            else:
                out = tensor.conv2d(out, bw["spatial"], stride=blk.spatial.stride)
            out = tensor.activation(_norm(out, bw["norm2"]), act)
            out = _norm(tensor.conv2d(out, bw["conv3"]), bw["norm3"])
            if blk.shortcut_conv is not None:
                identity = _norm(
                    tensor.conv2d(x, bw["shortcut_conv"], stride=blk.shortcut_conv.stride),
                    bw["shortcut_norm"],
                )
            x = tensor.activation(out + identity, act)
    if model.plan.final_conv is not None:
        x = tensor.activation(_norm(tensor.conv2d(x, w["final_conv"]), w["final_norm"]), act)
    pooled = x.mean(axis=(1, 2))
    return tensor.matmul(pooled, w["fc_w"]) + w["fc_b"]


def describe(cfg: arch.HaloNetConfig | str) -> list[dict]:
    """Per-layer table: kind, output resolution, width, params."""
    cfg = arch.get_config(cfg)
    plan = arch.layer_plan(cfg)
    rows = [
        {"layer": "stem_conv", "kind": "conv 7x7 s2", "resolution": f"s/2",
         "width": plan.stem_conv.c_out, "params": plan.stem_conv.params + plan.stem_norm.params},
        {"layer": "stem_pool", "kind": "maxpool 3x3 s2", "resolution": "s/4",
         "width": plan.stem_conv.c_out, "params": 0},
    ]
    for si, stage in enumerate(plan.stages, start=1):
        res = f"s/{4 * 2 ** (si - 1)}"
        for bi, blk in enumerate(stage):
            sp = blk.spatial
            if isinstance(sp, arch.AttnSpec):
                kind = f"bottleneck attention(b={sp.b},h={sp.h})"
            else:
                kind = "bottleneck conv 3x3"
            if sp.stride > 1:
                kind += " s2"
            rows.append({
                "layer": f"stage{si}.block{bi + 1}", "kind": kind, "resolution": res,
                "width": blk.conv3.c_out, "params": blk.params,
            })
    if plan.final_conv is not None:
        rows.append({
            "layer": "final_conv", "kind": f"conv 1x1, {plan.final_conv.c_out}",
            "resolution": "s/32", "width": plan.final_conv.c_out,
            "params": plan.final_conv.params + plan.final_norm.params,
        })
    rows.append({
        "layer": "classifier", "kind": "global average pooling / fc",
        "resolution": "1x1", "width": plan.fc.classes, "params": plan.fc.params,
    })
    return rows


def parse_config_file(path) -> tuple[arch.HaloNetConfig, int]:
    """Line-oriented key=value model config; returns (config, seed)."""
    base: dict = {}
    seed = 0
    model_name = None
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            try:
                if key == "model":
                    model_name = val
                elif key == "seed":
                    seed = int(val)
                elif key in ("b", "h", "l3", "s", "classes"):
                    base[key] = int(val)
                elif key == "d_f":
                    base[key] = None if val.lower() in ("none", "-") else int(val)
                elif key in ("r_v", "r_b", "r_w", "r_qk"):
                    base[key] = float(val)
                elif key in ("stage_layers", "heads"):
                    base[key] = tuple(int(v) for v in val.replace(",", " ").split())
                elif key == "conv_stages":
                    base[key] = frozenset(int(v) for v in val.replace(",", " ").split())
                elif key == "activation":
                    base[key] = val
                else:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    if model_name is not None:
        from dataclasses import replace

        cfg = replace(arch.get_config(model_name), **base)
    else:
        if "b" not in base or "h" not in base:
            raise ConfigError(f"{path}: config must set a model name or at least b and h")
        cfg = arch.HaloNetConfig(**base)
    return cfg, seed
