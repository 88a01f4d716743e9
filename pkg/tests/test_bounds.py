import math

import numpy as np
import pytest

from snpl.bounds import (
    LowerBoundEntry,
    LowerBoundTable,
    asymptotic_bounds,
    bonferroni_normal_bounds,
    finite_bounds,
    normal_quantile,
    supt_quantile,
)
from snpl.core import SafetySpec
from snpl.estimators import InfluenceTable


def one_guardrail_spec(w=0.0, sense="lower", alpha=0.1) -> SafetySpec:
    return SafetySpec(goal=1, guardrails=(1,), weights=(w,), alpha=alpha, senses=(sense,))


def table_from_values(values, spec, c=0.5) -> InfluenceTable:
    values = np.asarray(values, dtype=float)
    n_pol = values.shape[1] // spec.s_count
    return InfluenceTable(
        values=values,
        estimates=values.mean(axis=0),
        policy_ids=tuple(f"p{i}" for i in range(n_pol)),
        spec=spec,
        baseline_id="base",
        estimator="ipw",
        c=c,
    )


class TestNormalQuantile:
    def test_0975(self):
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)

    def test_symmetry(self):
        assert normal_quantile(0.1) == pytest.approx(-normal_quantile(0.9), abs=1e-12)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
    def test_domain(self, p):
        with pytest.raises(ValueError, match="quantile argument"):
            normal_quantile(p)


class TestFiniteBounds:
    def unit_variance_table(self, spec, n=100):
        # half zeros, half twos: mean 1, population variance exactly 1
        col = np.repeat([0.0, 2.0], n // 2)[:, None]
        return table_from_values(col, spec)

    def test_hand_anchor(self):
        # sigma=1, n=100, single test at level 0.1, w=0, c=0.5:
        # L = log(3 / 0.2) = log 15, R = 4,
        # width = sqrt(2 L / 100) + 12 L / 100 = 0.23272 + 0.32497
        spec = one_guardrail_spec()
        table = self.unit_variance_table(spec)
        out = finite_bounds(table, spec, level=0.1)
        entry = out.entries[0]
        assert entry.width == pytest.approx(0.55770, abs=1e-4)
        assert entry.estimate == pytest.approx(1.0)
        assert entry.margin == pytest.approx(1.0 - 0.55770, abs=1e-4)
        assert entry.bound == entry.margin  # lower sense
        assert out.meta["log_term"] == pytest.approx(math.log(15.0), abs=1e-12)
        assert out.meta["class_size"] == 1 and out.meta["n"] == 100

    def test_assumed_class_size_inflates_log_term(self):
        spec = one_guardrail_spec()
        table = self.unit_variance_table(spec)
        out = finite_bounds(table, spec, level=0.1, assumed_class_size=10)
        L = math.log(3.0 * 10 / 0.2)
        assert out.meta["log_term"] == pytest.approx(L, abs=1e-12)
        assert out.entries[0].width == pytest.approx(
            math.sqrt(2.0 * L / 100.0) + 12.0 * L / 100.0, abs=1e-12
        )

    def test_width_shrinks_with_n(self):
        spec = one_guardrail_spec()
        small = finite_bounds(self.unit_variance_table(spec, 100), spec, 0.1)
        large = finite_bounds(self.unit_variance_table(spec, 10_000), spec, 0.1)
        assert large.entries[0].width < small.entries[0].width

    def test_weight_tightens_range_term(self):
        # w = -0.5 gives R = 3 instead of 4
        spec = one_guardrail_spec(w=-0.5)
        table = self.unit_variance_table(spec)
        out = finite_bounds(table, spec, 0.1)
        L = math.log(15.0)
        assert out.entries[0].width == pytest.approx(
            math.sqrt(2.0 * L / 100.0) + 9.0 * L / 100.0, abs=1e-12
        )

    def test_upper_sense_margin_flip(self):
        spec = one_guardrail_spec(sense="upper")
        table = self.unit_variance_table(spec)
        out = finite_bounds(table, spec, 0.1)
        entry = out.entries[0]
        assert entry.margin == pytest.approx(-entry.estimate - entry.width, abs=1e-12)
        assert entry.bound == pytest.approx(entry.estimate + entry.width, abs=1e-12)

    def test_level_validation(self):
        spec = one_guardrail_spec()
        table = self.unit_variance_table(spec)
        with pytest.raises(ValueError, match="level"):
            finite_bounds(table, spec, 0.0)

    def test_single_row_rejected(self):
        spec = one_guardrail_spec()
        table = table_from_values([[0.5]], spec)
        with pytest.raises(ValueError, match="n >= 2"):
            finite_bounds(table, spec, 0.1)


class TestSupTQuantile:
    def test_single_coordinate_matches_normal(self):
        q = supt_quantile([[1.0]], 0.05, 100_000, 7)
        assert q.z_star == pytest.approx(-1.645, abs=0.05)

    def test_median_is_near_zero(self):
        q = supt_quantile([[1.0]], 0.5, 100_000, 7)
        assert q.z_star == pytest.approx(0.0, abs=0.02)

    def test_two_independent_coordinates(self):
        q = supt_quantile(np.eye(2), 0.05, 100_000, 7)
        assert q.z_star == pytest.approx(-1.955, abs=0.05)

    def test_correlation_never_widens(self):
        ind = supt_quantile(np.eye(2), 0.05, 100_000, 7)
        corr = supt_quantile([[1.0, 0.9], [0.9, 1.0]], 0.05, 100_000, 7)
        assert abs(corr.z_star) <= abs(ind.z_star) + 1e-9

    def test_scale_invariance(self):
        # statistic standardizes by the diagonal, so scaling cov is a no-op
        a = supt_quantile(np.eye(2), 0.05, 50_000, 3)
        b = supt_quantile(4.0 * np.eye(2), 0.05, 50_000, 3)
        assert a.z_star == pytest.approx(b.z_star, abs=1e-12)

    def test_seed_reproducibility(self):
        a = supt_quantile(np.eye(3), 0.1, 10_000, 42)
        b = supt_quantile(np.eye(3), 0.1, 10_000, 42)
        assert a.z_star == b.z_star
        assert a.seed == 42

    def test_zero_variance_coordinate_dropped(self):
        full = supt_quantile([[1.0]], 0.05, 10_000, 5)
        padded = supt_quantile([[1.0, 0.0], [0.0, 0.0]], 0.05, 10_000, 5)
        assert padded.z_star == full.z_star

    def test_all_zero_covariance_rejected(self):
        with pytest.raises(ValueError, match="degenerate covariance"):
            supt_quantile(np.zeros((2, 2)), 0.05, 1000, 0)

    def test_monotone_in_level(self):
        lo = supt_quantile(np.eye(2), 0.05, 50_000, 1)
        hi = supt_quantile(np.eye(2), 0.2, 50_000, 1)
        assert lo.z_star <= hi.z_star

    def test_input_validation(self):
        with pytest.raises(ValueError, match="square"):
            supt_quantile(np.zeros((2, 3)), 0.05, 1000, 0)
        with pytest.raises(ValueError, match="level"):
            supt_quantile(np.eye(2), 1.0, 1000, 0)
        with pytest.raises(ValueError, match="n_sim"):
            supt_quantile(np.eye(2), 0.05, 50, 0)


class TestAsymptoticBounds:
    def test_single_column_width(self):
        # unit variance, n=100, level 0.05: width ~ 1.645 / 10
        spec = one_guardrail_spec()
        col = np.tile([-1.0, 1.0], 50)[:, None]
        table = table_from_values(col, spec)
        out = asymptotic_bounds(table, spec, 0.05, 100_000, 7)
        assert out.entries[0].width == pytest.approx(0.1645, abs=0.005)
        assert out.meta["z_star"] < 0.0
        assert out.meta["seed"] == 7 and out.meta["n_sim"] == 100_000

    def test_zero_variance_column_gets_zero_width(self):
        spec = SafetySpec(goal=1, guardrails=(1, 2), weights=(0.0, 0.0), alpha=0.1)
        rng = np.random.default_rng(0)
        values = np.column_stack([rng.standard_normal(200), np.full(200, 0.3)])
        table = table_from_values(values, spec)
        out = asymptotic_bounds(table, spec, 0.05, 10_000, 1)
        assert out.entries[1].width == 0.0
        assert out.entries[1].margin == pytest.approx(0.3)
        assert out.entries[0].width > 0.0

    def test_margin_definition(self):
        spec = SafetySpec(
            goal=1, guardrails=(1, 2), weights=(0.0, 0.0), alpha=0.1,
            senses=("lower", "upper"),
        )
        rng = np.random.default_rng(2)
        table = table_from_values(rng.standard_normal((300, 2)), spec)
        out = asymptotic_bounds(table, spec, 0.1, 20_000, 9)
        lower, upper = out.entries
        assert lower.margin == pytest.approx(lower.estimate - lower.width, abs=1e-12)
        assert upper.margin == pytest.approx(-upper.estimate - upper.width, abs=1e-12)

    def test_rng_object_accepted(self):
        spec = one_guardrail_spec()
        table = table_from_values(np.tile([-1.0, 1.0], 20)[:, None], spec)
        out = asymptotic_bounds(table, spec, 0.1, 1000, np.random.default_rng(0))
        assert out.meta["seed"] is None


class TestBonferroniNormalBounds:
    def test_critical_value(self):
        # level 0.08 over 10 policies x 2 guardrails: per test 0.004
        spec = SafetySpec(goal=1, guardrails=(1, 2), weights=(0.0, 0.0), alpha=0.1)
        rng = np.random.default_rng(3)
        table = table_from_values(rng.standard_normal((100, 20)), spec)
        out = bonferroni_normal_bounds(table, spec, 0.08)
        assert out.meta["z"] == pytest.approx(2.652, abs=0.005)
        assert out.meta["class_size"] == 10

    def test_width_formula(self):
        spec = one_guardrail_spec()
        col = np.tile([-1.0, 1.0], 128)[:, None]
        table = table_from_values(col, spec)
        out = bonferroni_normal_bounds(table, spec, 0.05)
        assert out.entries[0].width == pytest.approx(
            normal_quantile(0.95) / 16.0, abs=1e-12
        )

    def test_never_tighter_than_supt(self):
        spec = SafetySpec(goal=1, guardrails=(1, 2), weights=(0.0, -0.1), alpha=0.1)
        rng = np.random.default_rng(4)
        base = rng.standard_normal((400, 1))
        values = np.column_stack([base + 0.5 * rng.standard_normal((400, 1)) for _ in range(6)])
        table = table_from_values(values, spec)
        bonf = bonferroni_normal_bounds(table, spec, 0.1)
        supt = asymptotic_bounds(table, spec, 0.1, 100_000, 11)
        for eb, es in zip(bonf.entries, supt.entries):
            assert es.width <= eb.width + 1e-3

    def test_per_test_level_cap(self):
        spec = one_guardrail_spec()
        table = table_from_values(np.tile([-1.0, 1.0], 10)[:, None], spec)
        with pytest.raises(ValueError, match="per-test level"):
            bonferroni_normal_bounds(table, spec, 0.6)


class TestLowerBoundTable:
    def entry(self, pid, margin):
        return LowerBoundEntry(
            policy_id=pid, guardrail=1, sense="lower", estimate=margin,
            width=0.0, bound=margin, margin=margin, level=0.1, method="finite",
        )

    def test_certification_is_strict(self):
        table = LowerBoundTable(
            entries=(self.entry("a", 0.0), self.entry("b", 1e-9)),
            method="finite", level=0.1,
        )
        assert table.certified_ids() == ["b"]

    def test_all_guardrails_must_pass(self):
        table = LowerBoundTable(
            entries=(self.entry("a", 0.5), self.entry("a", -0.1), self.entry("b", 0.2)),
            method="finite", level=0.1,
        )
        assert table.certified_ids() == ["b"]
        assert table.min_margin("a") == pytest.approx(-0.1)
        assert len(table.for_policy("a")) == 2

    def test_first_appearance_order(self):
        table = LowerBoundTable(
            entries=(self.entry("z", 1.0), self.entry("a", 1.0)),
            method="finite", level=0.1,
        )
        assert table.certified_ids() == ["z", "a"]
