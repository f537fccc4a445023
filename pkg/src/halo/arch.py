"""Model family configuration and the shared layer plan.

The plan is the single source of truth for layer shapes and parameter
counts: the cost model sums it, the builder materializes it, so the two
agree exactly by construction.

Structure (stem + four bottleneck stages + optional final 1x1 + classifier):
stage base widths are (64, 128, 256, 512) * r_w; each bottleneck is
{1x1 reduce to c; spatial op (attention or 3x3 conv) to c*r_v; 1x1 expand
to c*r_b} with a projection shortcut on shape change; stages 2-4 open with
a stride-2 spatial op.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError

STAGE_BASE = (64, 128, 256, 512)


@dataclass(frozen=True)
class HaloNetConfig:
    b: int
    h: int
    r_v: float = 1.0
    r_b: float = 4.0
    r_w: float = 1.0
    r_qk: float = 1.0
    l3: int = 6
    s: int = 256
    d_f: int | None = None
    stage_layers: tuple[int, int, int, int] = (3, 4, 6, 3)
    heads: tuple[int, int, int, int] = (4, 8, 8, 8)
    conv_stages: frozenset[int] = frozenset()
    classes: int = 1000
    activation: str = "silu"

    def __post_init__(self):
        # spatial divisibility is validated at build time; parameter counting
        # tolerates any image size
        if self.activation not in ("relu", "silu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if len(self.stage_layers) != 4 or len(self.heads) != 4:
            raise ConfigError("stage_layers and heads must have 4 entries")
        if not self.conv_stages <= {1, 2, 3, 4}:
            raise ConfigError(f"conv_stages must be a subset of 1..4, got {self.conv_stages}")


def h_family(b, h, r_v, r_b, l3, s, d_f) -> HaloNetConfig:
    return HaloNetConfig(
        b=b, h=h, r_v=r_v, r_b=r_b, l3=l3, s=s, d_f=d_f,
        stage_layers=(3, 3, l3, 3), activation="silu",
    )


BUILTINS: dict[str, HaloNetConfig] = {
    "H0": h_family(8, 3, 1.0, 0.5, 7, 256, None),
    "H1": h_family(8, 3, 1.0, 1.0, 10, 256, None),
    "H2": h_family(8, 3, 1.0, 1.25, 11, 256, None),
    "H3": h_family(10, 3, 1.0, 1.5, 12, 320, 1024),
    "H4": h_family(12, 2, 1.0, 3.0, 12, 384, 1280),
    "H5": h_family(14, 2, 2.5, 2.0, 23, 448, 1536),
    "H6": h_family(8, 4, 3.0, 2.75, 24, 512, 1536),
    "H7": h_family(10, 3, 4.0, 3.5, 26, 600, 2048),
    "halonet50": HaloNetConfig(
        b=8, h=3, r_v=1.0, r_b=4.0, s=256,
        stage_layers=(3, 4, 6, 3), heads=(4, 8, 16, 32), activation="relu",
    ),
    "resnet50ref": HaloNetConfig(
        b=8, h=3, r_v=1.0, r_b=4.0, s=224,
        stage_layers=(3, 4, 6, 3), heads=(4, 8, 16, 32),
        conv_stages=frozenset({1, 2, 3, 4}), activation="relu",
    ),
}

# published parameter counts (millions) used for reporting deviations
PUBLISHED_PARAMS_M = {
    "H0": 5.5, "H1": 8.1, "H2": 9.4, "H3": 12.3, "H4": 19.1,
    "H5": 30.7, "H6": 43.4, "H7": 67.0,
    "halonet50": 18.0, "resnet50ref": 25.5,
}


@dataclass(frozen=True)
class ConvSpec:
    k: int
    c_in: int
    c_out: int
    stride: int = 1

    @property
    def params(self) -> int:
        return self.k * self.k * self.c_in * self.c_out


@dataclass(frozen=True)
class AttnSpec:
    b: int
    h: int
    heads: int
    c_in: int
    c_qk: int
    c_v: int
    stride: int = 1

    @property
    def d_head(self) -> int:
        return self.c_qk // self.heads

    @property
    def rel_params(self) -> int:
        return 2 * (2 * (self.b + self.h) - 1) * (self.d_head // 2)

    @property
    def params(self) -> int:
        return 2 * self.c_in * self.c_qk + self.c_in * self.c_v + self.rel_params


@dataclass(frozen=True)
class NormSpec:
    c: int

    @property
    def params(self) -> int:
        return 2 * self.c


@dataclass(frozen=True)
class PoolSpec:
    k: int
    stride: int
    params: int = 0


@dataclass(frozen=True)
class FcSpec:
    c_in: int
    classes: int

    @property
    def params(self) -> int:
        return self.c_in * self.classes + self.classes


@dataclass(frozen=True)
class BottleneckSpec:
    stage: int
    conv1: ConvSpec
    spatial: ConvSpec | AttnSpec
    conv3: ConvSpec
    norm1: NormSpec
    norm2: NormSpec
    norm3: NormSpec
    shortcut_conv: ConvSpec | None
    shortcut_norm: NormSpec | None

    @property
    def params(self) -> int:
        total = (
            self.conv1.params + self.spatial.params + self.conv3.params
            + self.norm1.params + self.norm2.params + self.norm3.params
        )
        if self.shortcut_conv is not None:
            total += self.shortcut_conv.params + self.shortcut_norm.params
        return total


@dataclass
class ModelPlan:
    cfg: HaloNetConfig
    stem_conv: ConvSpec
    stem_norm: NormSpec
    stem_pool: PoolSpec
    stages: list[list[BottleneckSpec]]
    final_conv: ConvSpec | None
    final_norm: NormSpec | None
    fc: FcSpec

    @property
    def params(self) -> int:
        total = self.stem_conv.params + self.stem_norm.params + self.fc.params
        for stage in self.stages:
            total += sum(blk.params for blk in stage)
        if self.final_conv is not None:
            total += self.final_conv.params + self.final_norm.params
        return total


def stage_resolution(cfg: HaloNetConfig, stage: int) -> int:
    """Output resolution of a stage (1..4): s/4, s/8, s/16, s/32 (integer floor)."""
    return cfg.s // (4 * 2 ** (stage - 1))


def clamp_geometry(b: int, h: int, res: int) -> tuple[int, int]:
    """Clamp (b, h) so the attention window never exceeds the feature map."""
    b_eff = min(b, res) if res > 0 else b
    if b_eff + 2 * h >= res:
        h_eff = max(0, -(-(res - b_eff) // 2))
    else:
        h_eff = h
    return b_eff, h_eff


def layer_plan(cfg: HaloNetConfig) -> ModelPlan:
    w0 = round(64 * cfg.r_w)
    stem_conv = ConvSpec(7, 3, w0, stride=2)
    stages: list[list[BottleneckSpec]] = []
    c_prev = w0
    for stage in range(1, 5):
        c = round(STAGE_BASE[stage - 1] * cfg.r_w)
        c_v = round(c * cfg.r_v)
        c_qk = round(c * cfg.r_qk)
        c_out = round(c * cfg.r_b)
        # l3 is authoritative for the third group; stage_layers covers the rest
        n_blocks = cfg.l3 if stage == 3 else cfg.stage_layers[stage - 1]
        res_in = stage_resolution(cfg, stage - 1) if stage > 1 else stage_resolution(cfg, 1)
        blks = []
        for i in range(n_blocks):
            stride = 2 if (stage > 1 and i == 0) else 1
            r_in = res_in if i == 0 else stage_resolution(cfg, stage)
            if stage in cfg.conv_stages:
                spatial: ConvSpec | AttnSpec = ConvSpec(3, c, c_v, stride=stride)
            else:
                b_eff, h_eff = clamp_geometry(cfg.b, cfg.h, r_in)
                spatial = AttnSpec(
                    b=b_eff, h=h_eff, heads=cfg.heads[stage - 1],
                    c_in=c, c_qk=c_qk, c_v=c_v, stride=stride,
                )
            needs_proj = stride != 1 or c_prev != c_out
            blks.append(
                BottleneckSpec(
                    stage=stage,
                    conv1=ConvSpec(1, c_prev, c),
                    spatial=spatial,
                    conv3=ConvSpec(1, c_v, c_out),
                    norm1=NormSpec(c),
                    norm2=NormSpec(c_v),
                    norm3=NormSpec(c_out),
                    shortcut_conv=ConvSpec(1, c_prev, c_out, stride=stride) if needs_proj else None,
                    shortcut_norm=NormSpec(c_out) if needs_proj else None,
                )
            )
            c_prev = c_out
        stages.append(blks)
    final_conv = final_norm = None
    if cfg.d_f is not None:
        final_conv = ConvSpec(1, c_prev, cfg.d_f)
        final_norm = NormSpec(cfg.d_f)
        c_prev = cfg.d_f
    return ModelPlan(
        cfg=cfg,
        stem_conv=stem_conv,
        stem_norm=NormSpec(w0),
        stem_pool=PoolSpec(3, 2),
        stages=stages,
        final_conv=final_conv,
        final_norm=final_norm,
        fc=FcSpec(c_prev, cfg.classes),
    )


def get_config(name_or_cfg) -> HaloNetConfig:
    if isinstance(name_or_cfg, HaloNetConfig):
        return name_or_cfg
    if name_or_cfg in BUILTINS:
        return BUILTINS[name_or_cfg]
    raise ConfigError(f"unknown model {name_or_cfg!r}; builtins: {sorted(BUILTINS)}")
