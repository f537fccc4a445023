from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from halo import arch, blocks, costs
from halo.errors import ConfigError, DivisibilityError


class TestAttentionCost:
    def test_blocked_table_row(self):
        r = costs.attention_cost(32, 32, 64, "blocked-local", (8, 3))
        assert r.neighborhood_elements == 200704
        assert r.flops_per_pixel == 4 * 196 * 64 == 50176

    def test_per_pixel_row(self):
        r = costs.attention_cost(32, 32, 64, "per-pixel-windows", 7)
        assert r.flops_per_pixel == 4 * 49 * 64 == 12544
        assert r.neighborhood_elements == 32 * 32 * 49 * 64

    def test_global_row_both_conventions(self):
        r = costs.attention_cost(16, 16, 8, "global", None)
        assert r.neighborhood_elements == 16 * 16 * 8
        assert r.flops_per_pixel == 4 * 256 * 8
        assert r.breakdown["flops_as_printed"] == 4 * 256 ** 2 * 8

    def test_sasa_equals_blocked(self):
        for b, h in ((2, 1), (4, 0), (8, 3), (4, 4)):
            s = costs.attention_cost(16, 16, 8, "sasa", (b, h))
            bl = costs.attention_cost(16, 16, 8, "blocked-local", (b, h))
            assert s.neighborhood_elements == bl.neighborhood_elements
            assert s.flops_per_pixel == bl.flops_per_pixel
            assert s.total_flops == bl.total_flops

    def test_memory_matches_gather(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            b = int(rng.choice([1, 2, 4]))
            H, W = b * int(rng.integers(1, 4)), b * int(rng.integers(1, 4))
            c, h = int(rng.integers(1, 5)), int(rng.integers(0, 3))
            got = blocks.halo_gather(rng.standard_normal((1, H, W, c)), b, h).data.size
            assert got == costs.attention_cost(H, W, c, "blocked-local",
                                               (b, h)).neighborhood_elements

    def test_unknown_method_and_divisibility(self):
        with pytest.raises(ConfigError):
            costs.attention_cost(8, 8, 4, "axial", None)
        with pytest.raises(DivisibilityError):
            costs.attention_cost(10, 8, 4, "blocked-local", (4, 1))


class TestConvCost:
    def test_quadratic_parameter_scaling(self):
        p5 = costs.conv_cost(5, 64, 64, 8, 8).params
        p3 = costs.conv_cost(3, 64, 64, 8, 8).params
        assert Fraction(p5, p3) == Fraction(25, 9)

    def test_pointwise(self):
        assert costs.conv_cost(1, 64, 64, 8, 8).params == 64 * 64

    def test_macs_per_pixel(self):
        assert costs.conv_cost(3, 64, 64, 8, 8).flops_per_pixel == 36864


class TestFootnoteRatio:
    def test_quoted_value(self):
        assert abs(float(costs.footnote_flop_ratio(128, 128, 64, 3)) - 28.44) < 0.01

    def test_equal_case(self):
        # HW*c == k^2 c^2: 6*6*4 vs 3^2*4^2
        assert costs.footnote_flop_ratio(6, 6, 4, 3) == 1

    def test_linearity_in_area(self):
        r1 = costs.footnote_flop_ratio(64, 64, 32, 3)
        r2 = costs.footnote_flop_ratio(128, 128, 32, 3)
        assert r2 == 4 * r1


class TestRelEmbeddingParams:
    def test_centered_63_16(self):
        assert costs.rel_embedding_params(63, 0, 16, "centered") == 1008

    def test_blocked_8_3_16(self):
        assert costs.rel_embedding_params(8, 3, 16, "blocked") == 2 * 21 * 8 == 336

    def test_tiny(self):
        assert costs.rel_embedding_params(1, 0, 2, "centered") == 2

    def test_odd_d_head(self):
        with pytest.raises(ConfigError):
            costs.rel_embedding_params(3, 0, 3, "centered")


class TestDownsampleRatio:
    def test_values(self):
        assert costs.downsample_flop_ratio(8, 2) == Fraction(1, 4)
        assert costs.downsample_flop_ratio(8, 1) == 1
        assert costs.downsample_flop_ratio(8, 4) == Fraction(1, 16)

    def test_accepts_config(self):
        assert costs.downsample_flop_ratio(arch.BUILTINS["H0"], 2) == Fraction(1, 4)

    def test_non_divisor(self):
        with pytest.raises(ConfigError):
            costs.downsample_flop_ratio(8, 3)


class TestCountParams:
    def test_qkv_at_512(self):
        spec = arch.AttnSpec(b=8, h=3, heads=8, c_in=512, c_qk=512, c_v=512)
        assert spec.params - spec.rel_params == 3 * 512 * 512 == 786432

    def test_reference_pair(self):
        rn = costs.count_params("resnet50ref").params
        hn = costs.count_params("halonet50").params
        assert abs(rn - 25.5e6) / 25.5e6 < 0.02
        assert abs(hn - 18.0e6) / 18.0e6 < 0.02

    @pytest.mark.parametrize("name", list(arch.PUBLISHED_PARAMS_M))
    def test_builtins_near_published(self, name):
        tol = 0.02 if name in ("halonet50", "resnet50ref") else \
            (0.10 if name in ("H0", "H1", "H2", "H3", "H4") else 0.15)
        got = costs.count_params(name).params
        want = arch.PUBLISHED_PARAMS_M[name] * 1e6
        assert abs(got - want) / want < tol

    def test_monotone_in_knobs(self):
        base = arch.BUILTINS["H0"]
        p0 = costs.count_params(base).params
        assert costs.count_params(replace(base, r_v=2.0)).params > p0
        assert costs.count_params(replace(base, r_b=1.0)).params > p0
        assert costs.count_params(replace(base, l3=base.l3 + 2)).params > p0
        assert costs.count_params(replace(base, d_f=512)).params > p0
        more = tuple(n + 1 for n in base.stage_layers)
        assert costs.count_params(replace(base, stage_layers=more)).params > p0

    def test_breakdown_sums_to_total(self):
        r = costs.count_params("H3")
        bd = r.breakdown
        by_stage = bd["stem"] + bd["classifier"] + bd.get("final_conv", 0) + \
            sum(bd[f"stage{i}"] for i in range(1, 5))
        by_kind = bd["conv"] + bd["norm"] + bd["attention_projections"] + \
            bd["relative_embeddings"] + bd["classifier_fc"]
        assert by_stage == r.params
        assert by_kind == r.params

    def test_rel_params_trivial_fraction(self):
        # shared factorized tables stay under 0.5% of the projection parameters
        for name in ("H0", "H1", "H2", "H3", "H4", "H5", "H6", "H7", "halonet50"):
            bd = costs.count_params(name).breakdown
            assert bd["relative_embeddings"] < 0.005 * bd["attention_projections"]

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            costs.count_params("H99")
