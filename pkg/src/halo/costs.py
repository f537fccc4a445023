"""Analytical memory/FLOP model and parameter counting.

Attention rows follow the scaling-table formulas verbatim: blocked local
memory HW/b^2 (b+2h)^2 c with 4(b+2h)^2 c FLOPs per pixel, per-pixel
windows HW k^2 c and 4k^2 c, global HW c.  The printed global FLOPs entry
4(HW)^2 c reads as a total rather than per-pixel; both the as-printed
value and the per-pixel value consistent with the other rows (4 HW c) are
reported, neither silently corrected.  The conv/attention FLOP comparison
uses MAC counting (window_area*c per pixel vs k^2 c^2), the only
convention that reproduces the quoted ~28x ratio at 128x128, 64 channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from . import arch
from .errors import ConfigError, DivisibilityError
from .tensor import check_divides

METHODS = ("global", "per-pixel-windows", "sasa", "blocked-local")


@dataclass
class CostReport:
    method: str
    neighborhood_elements: int
    flops_per_pixel: int
    total_flops: int
    params: int = 0
    breakdown: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {
            "method": self.method,
            "memory_elements": self.neighborhood_elements,
            "flops_per_pixel": self.flops_per_pixel,
            "total_flops": self.total_flops,
            "params_total": self.params,
        }
        for k, v in self.breakdown.items():
            rec[f"params_breakdown.{k}"] = v
        return rec


def attention_cost(H: int, W: int, c: int, method: str, k_or_bh) -> CostReport:
    """One scaling-table row.  ``k_or_bh`` is k for per-pixel windows / sasa
    receptive field, or (b, h) for the blocked methods."""
    if method == "global":
        per_pixel = 4 * H * W * c
        return CostReport(
            method=method,
            neighborhood_elements=H * W * c,
            flops_per_pixel=per_pixel,
            total_flops=H * W * per_pixel,
            breakdown={"flops_as_printed": 4 * (H * W) ** 2 * c},
        )
    if method == "per-pixel-windows":
        k = int(k_or_bh)
        per_pixel = 4 * k * k * c
        return CostReport(
            method=method,
            neighborhood_elements=H * W * k * k * c,
            flops_per_pixel=per_pixel,
            total_flops=H * W * per_pixel,
        )
    if method in ("sasa", "blocked-local"):
        b, h = k_or_bh
        check_divides(H, b, "H")
        check_divides(W, b, "W")
        w = b + 2 * h
        per_pixel = 4 * w * w * c
        return CostReport(
            method=method,
            neighborhood_elements=(H * W) // (b * b) * w * w * c,
            flops_per_pixel=per_pixel,
            total_flops=H * W * per_pixel,
        )
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def conv_cost(k: int, c_in: int, c_out: int, H: int, W: int) -> CostReport:
    """Biasless convolution: k^2 c_in c_out parameters and MACs per pixel."""
    macs = k * k * c_in * c_out
    return CostReport(
        method="conv",
        neighborhood_elements=H * W * k * k * c_in,
        flops_per_pixel=macs,
        total_flops=H * W * macs,
        params=macs,
        breakdown={"conv": macs},
    )


def footnote_flop_ratio(H: int, W: int, c: int, conv_k: int) -> Fraction:
    """Global-attention spatial MACs per pixel over conv MACs per pixel."""
    return Fraction(H * W * c, conv_k * conv_k * c * c)


def rel_embedding_params(b_or_k: int, h: int, d_head: int, mode: str) -> int:
    """Factorized per-axis relative-embedding parameters, shared across heads."""
    if d_head % 2 != 0:
        raise ConfigError(f"d_head must be even, got {d_head}")
    if mode == "centered":
        return 2 * b_or_k * (d_head // 2)
    if mode == "blocked":
        return 2 * (2 * (b_or_k + h) - 1) * (d_head // 2)
    raise ConfigError(f"unknown mode {mode!r}; expected 'centered' or 'blocked'")


def downsample_flop_ratio(cfg, sigma: int) -> Fraction:
    """Strided attention keeps stride-1 neighborhoods but 1/sigma^2 queries."""
    b = cfg.b if hasattr(cfg, "b") else int(cfg)
    if sigma < 1 or b % sigma != 0:
        raise ConfigError(f"stride {sigma} must divide block size {b}")
    return Fraction(1, sigma * sigma)


def count_params(model) -> CostReport:
    """Whole-model parameter count from the shared layer plan.

    Conventions: biasless convolutions and attention projections, 2 params
    per channel per normalization, classifier d*classes + classes.
    """
    cfg = arch.get_config(model)
    plan = arch.layer_plan(cfg)
    breakdown: dict[str, int] = {
        "stem": plan.stem_conv.params + plan.stem_norm.params,
        "classifier": plan.fc.params,
    }
    conv = norm = attn_proj = attn_rel = 0
    conv += plan.stem_conv.params
    norm += plan.stem_norm.params
    for i, stage in enumerate(plan.stages, start=1):
        breakdown[f"stage{i}"] = sum(b.params for b in stage)
        for blk in stage:
            conv += blk.conv1.params + blk.conv3.params
            norm += blk.norm1.params + blk.norm2.params + blk.norm3.params
            if isinstance(blk.spatial, arch.AttnSpec):
                attn_proj += blk.spatial.params - blk.spatial.rel_params
                attn_rel += blk.spatial.rel_params
            else:
                conv += blk.spatial.params
            if blk.shortcut_conv is not None:
                conv += blk.shortcut_conv.params
                norm += blk.shortcut_norm.params
    if plan.final_conv is not None:
        breakdown["final_conv"] = plan.final_conv.params + plan.final_norm.params
        conv += plan.final_conv.params
        norm += plan.final_norm.params
    breakdown.update(
        conv=conv, norm=norm, attention_projections=attn_proj,
        relative_embeddings=attn_rel, classifier_fc=plan.fc.params,
    )
    return CostReport(
        method="params",
        neighborhood_elements=0,
        flops_per_pixel=0,
        total_flops=0,
        params=plan.params,
        breakdown=breakdown,
    )
