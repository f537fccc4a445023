"""Blocked local 2D self-attention with haloing.

Deterministic numpy kernels, a brute-force verification oracle, analytic
gradients, a FLOP/memory/parameter cost model, a forward-only model
builder, and a CLI (``halo``).
"""

from .attention import (
    AttentionConfig,
    AttentionParams,
    RelEmbedding,
    attention_downsample,
    halo_attention_backward,
    halo_attention_forward,
)
from .arch import BUILTINS, HaloNetConfig
from .blocks import BlockedTensor, HaloedTensor, block, halo_gather, neighborhood_memory, unblock
from .costs import CostReport, attention_cost, conv_cost, count_params
from .model import build, describe, forward

__all__ = [
    "AttentionConfig",
    "AttentionParams",
    "RelEmbedding",
    "attention_downsample",
    "halo_attention_backward",
    "halo_attention_forward",
    "BUILTINS",
    "HaloNetConfig",
    "BlockedTensor",
    "HaloedTensor",
    "block",
    "halo_gather",
    "neighborhood_memory",
    "unblock",
    "CostReport",
    "attention_cost",
    "conv_cost",
    "count_params",
    "build",
    "describe",
    "forward",
]
