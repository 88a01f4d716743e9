import json
import math

import numpy as np
import pytest

from snpl.algorithm import SnplConfig, final_certify, in_loop_bound, snpl_run
from snpl.bounds import normal_quantile
from snpl.core import Hyperparams, SafetySpec
from snpl.estimators import fit_nuisance
from snpl.stability import eta_heuristic
from snpl.synthetic import ThresholdPolicy, build_class, default_baseline, generate, true_values


def make_config(mode="finite", in_loop="bonferroni-normal", weights=(0.0, -0.1), **hyper):
    spec = SafetySpec(goal=1, guardrails=(1, 2), weights=weights, alpha=0.1)
    return SnplConfig(
        spec=spec,
        hyper=Hyperparams(**hyper),
        mode=mode,
        baseline=default_baseline(),
        in_loop=in_loop,
    )


def small_class():
    return [ThresholdPolicy("g1", c) for c in (0.0, 0.2, 0.4, 0.6, 0.8)]


class TestConfig:
    def test_mode_validated(self):
        with pytest.raises(ValueError, match="mode"):
            make_config(mode="exact")

    def test_in_loop_validated(self):
        with pytest.raises(ValueError, match="in_loop"):
            make_config(in_loop="wald")


class TestTrivialCases:
    def test_baseline_only_class(self):
        ds = generate(200, np.random.default_rng(0))
        trace = snpl_run(ds, [default_baseline()], make_config(eta=3), seed=1)
        assert trace.pruned_ids == ()
        assert trace.scan == ()
        assert trace.decision == "g1@0.5"
        assert trace.is_baseline
        assert trace.class_size == 0

    def test_empty_class_rejected(self):
        ds = generate(50, np.random.default_rng(0))
        with pytest.raises(ValueError, match="empty policy class"):
            snpl_run(ds, [], make_config(), seed=0)

    def test_empty_pruned_certifies_nothing(self):
        ds = generate(200, np.random.default_rng(1))
        table, decision, goals = final_certify(ds, [], make_config(), 0.08)
        assert decision == "g1@0.5"
        assert table.entries == () and goals == {}


class TestFinalCertify:
    def test_unsafe_candidates_fall_back_to_baseline(self):
        # always-treat tanks outcome 1 far below the w=0 floor
        ds = generate(2000, np.random.default_rng(2))
        config = make_config()
        table, decision, _ = final_certify(ds, [ThresholdPolicy("g5", 0.5)], config, 0.08)
        assert decision == "g1@0.5"
        assert table.min_margin("g5@0.5") < 0.0

    def test_goal_argmax_returned_when_it_certifies(self):
        # both policies certify easily under w=-0.9; the goal argmax over the
        # pruned set is the sole candidate and it passes its gate
        ds = generate(3000, np.random.default_rng(3))
        config = make_config(weights=(-0.9, -0.9))
        pruned = [ThresholdPolicy("g1", 0.8), ThresholdPolicy("g1", 0.2)]
        table, decision, goals = final_certify(ds, pruned, config, 0.08)
        assert set(table.certified_ids()) == {"g1@0.8", "g1@0.2"}
        assert decision == max(goals, key=goals.__getitem__)
        # true V1 is higher at the smaller cutoff
        assert decision == "g1@0.2"

    def test_uncertified_goal_leader_forces_baseline(self):
        # g5 has the best V2 but breaks the outcome-1 guardrail; it is still
        # the only candidate considered, so the run falls back to the
        # baseline even though another pruned policy may certify
        spec = SafetySpec(goal=2, guardrails=(1, 2), weights=(0.0, -0.1), alpha=0.1)
        config = SnplConfig(
            spec=spec, hyper=Hyperparams(), mode="finite", baseline=default_baseline()
        )
        ds = generate(4000, np.random.default_rng(4))
        pruned = [ThresholdPolicy("g5", 0.5), ThresholdPolicy("g1", 0.4)]
        table, decision, goals = final_certify(ds, pruned, config, 0.08)
        assert goals["g5@0.5"] > goals["g1@0.4"]
        assert "g5@0.5" not in table.certified_ids()
        assert decision == "g1@0.5"


class TestInLoopBound:
    def test_finite_width_fixed_at_eta(self):
        from snpl.bounds import finite_bounds
        from snpl.estimators import influence_table

        ds = generate(300, np.random.default_rng(5))
        config = make_config()
        pol = ThresholdPolicy("g2", 0.5)
        lone = in_loop_bound(ds, pol, [], config, 0.08, eta=10)
        crowded = in_loop_bound(ds, pol, small_class(), config, 0.08, eta=10)
        # the pruned set so far never changes the width: |class| is frozen at eta
        assert [e.width for e in lone] == [e.width for e in crowded]
        table = influence_table(ds, [pol], config.spec, config.baseline, "ipw")
        want = finite_bounds(table, config.spec, 0.08, assumed_class_size=10)
        assert want.meta["log_term"] == pytest.approx(
            math.log(3.0 * 10 * 2 / (2.0 * 0.08)), abs=1e-12
        )
        assert [e.width for e in lone] == pytest.approx(
            [e.width for e in want.entries], abs=1e-12
        )

    def test_bonferroni_normal_quantile(self):
        ds = generate(400, np.random.default_rng(6))
        config = make_config(mode="asymptotic")
        nui = fit_nuisance(ds, 5, np.random.default_rng(7))
        entries = in_loop_bound(
            ds, ThresholdPolicy("g2", 0.5), [], config, 0.08, eta=10, nuisance=nui
        )
        # per-test level 0.08 / 20 gives the 2.652 quantile; width = z sigma / sqrt(n)
        z = normal_quantile(1.0 - 0.004)
        assert z == pytest.approx(2.652, abs=0.005)
        for e in entries:
            assert e.width > 0.0
            assert e.method == "bonferroni-normal"

    def test_supt_empty_pruned_is_single_policy_supt(self):
        from snpl.bounds import asymptotic_bounds
        from snpl.core import SafetySpec
        from snpl.estimators import influence_table

        ds = generate(400, np.random.default_rng(8))
        config = make_config(mode="asymptotic", in_loop="supt")
        nui = fit_nuisance(ds, 5, np.random.default_rng(9))
        pol = ThresholdPolicy("g2", 0.5)
        got = in_loop_bound(
            ds, pol, [], config, 0.08, eta=10, nuisance=nui,
            rng=np.random.default_rng(77), loop_n_sim=20_000,
        )
        table = influence_table(ds, [pol], config.spec, config.baseline, "dr", nui)
        want = asymptotic_bounds(
            table, config.spec, 0.08, 20_000, np.random.default_rng(77)
        ).for_policy(pol.policy_id)
        assert [e.margin for e in got] == pytest.approx([e.margin for e in want], abs=1e-12)


class TestSnplRun:
    def run_once(self, seed=3, n=400, **kwargs):
        ds = generate(n, np.random.default_rng(100))
        config = make_config(**kwargs)
        return snpl_run(ds, small_class(), config, seed=seed)

    def test_trace_reconstructs_decision(self):
        trace = self.run_once(eta=3)
        for r in trace.scan:
            assert r.admitted == (r.margin + r.noise > trace.threshold_noise)
        assert trace.pruned_ids == tuple(r.policy_id for r in trace.scan if r.admitted)
        assert set(trace.certified_ids) <= set(trace.pruned_ids)
        if trace.pruned_ids:
            pick = max(trace.pruned_ids, key=trace.goal_values.__getitem__)
            if trace.final.min_margin(pick) > 0.0:
                assert trace.decision == pick
                assert not trace.is_baseline
            else:
                assert trace.decision == trace.baseline_id
                assert trace.is_baseline
        else:
            assert trace.decision == trace.baseline_id
            assert trace.is_baseline

    def test_pruned_capped_at_eta(self):
        for seed in range(8):
            trace = self.run_once(seed=seed, eta=2)
            assert len(trace.pruned_ids) <= 2
            if len(trace.pruned_ids) == 2:
                # the scan breaks at the admitting record
                assert trace.scan[-1].admitted

    def test_noise_scales(self):
        trace = self.run_once(eta=3)
        eps = 0.1 / math.sqrt(400.0)
        assert trace.epsilon == pytest.approx(eps)
        assert trace.threshold_scale == pytest.approx(2.0 * trace.B * 3 / eps)
        assert trace.query_scale == pytest.approx(2.0 * trace.threshold_scale)

    def test_baseline_excluded_from_scan(self):
        ds = generate(300, np.random.default_rng(101))
        pols = [default_baseline()] + small_class()
        trace = snpl_run(ds, pols, make_config(eta=3), seed=5)
        assert trace.class_size == 5
        assert all(r.policy_id != "g1@0.5" for r in trace.scan)

    def test_eta_sources(self):
        explicit = self.run_once(eta=4)
        assert explicit.eta == 4 and explicit.eta_source == "user"
        derived = self.run_once()
        assert derived.eta_source == "heuristic"
        assert derived.eta == eta_heuristic(0.1, derived.alpha_prime, 5, 2, 0.5)

    def test_b_floor_enforced(self):
        ref = self.run_once(eta=3)
        with pytest.raises(ValueError, match="below the sensitivity floor"):
            self.run_once(eta=3, B=ref.B_floor / 2.0)

    def test_b_override_above_floor(self):
        ref = self.run_once(eta=3)
        trace = self.run_once(eta=3, B=ref.B_floor * 2.0)
        assert trace.B == pytest.approx(ref.B_floor * 2.0)
        assert trace.threshold_scale == pytest.approx(2.0 * ref.threshold_scale)

    def test_epsilon_override(self):
        trace = self.run_once(eta=3, epsilon=0.05)
        assert trace.epsilon == 0.05

    def test_scan_margins_match_in_loop_bounds(self):
        ds = generate(400, np.random.default_rng(100))
        config = make_config(eta=3)
        trace = snpl_run(ds, small_class(), config, seed=3)
        by_id = {p.policy_id: p for p in small_class()}
        for r in trace.scan:
            entries = in_loop_bound(
                ds, by_id[r.policy_id], [], config, trace.alpha_prime, eta=3
            )
            assert r.margin == pytest.approx(min(e.margin for e in entries), abs=1e-12)

    def test_determinism(self):
        a = self.run_once(seed=9, eta=3)
        b = self.run_once(seed=9, eta=3)
        assert a.to_json_dict() == b.to_json_dict()
        c = self.run_once(seed=10, eta=3)
        assert c.threshold_noise != a.threshold_noise

    def test_seed_tuple_recorded(self):
        ds = generate(200, np.random.default_rng(102))
        trace = snpl_run(
            ds, small_class(), make_config(eta=2), seed=np.random.SeedSequence((5, 0, 1))
        )
        assert trace.seed == (5, 0, 1)

    def test_trace_json_serializable(self):
        trace = self.run_once(eta=3)
        blob = json.dumps(trace.to_json_dict(), sort_keys=True)
        assert '"schema_version": 1' in blob

    def test_asymptotic_mode_runs(self):
        trace = self.run_once(eta=2, mode="asymptotic", n_sim=5000)
        assert trace.mode == "asymptotic"
        assert trace.final.method in ("supt", "asymptotic") or trace.pruned_ids == ()

    def test_supt_in_loop_runs(self):
        ds = generate(300, np.random.default_rng(103))
        config = make_config(mode="asymptotic", in_loop="supt", eta=2, n_sim=2000)
        trace = snpl_run(ds, small_class(), config, seed=4)
        assert trace.in_loop == "supt"
        assert len(trace.pruned_ids) <= 2


class TestHighSignalSelection:
    def test_reliable_selection_at_high_snr(self):
        # 20 clearly safe candidates (w = -0.5 leaves huge guardrail slack),
        # n = 4000, eta = 1: the run should nearly always return a candidate
        # and, whenever it does, the returned policy must be the true best
        # goal value within the pruned set
        spec = SafetySpec(goal=1, guardrails=(1, 2), weights=(-0.5, -0.5), alpha=0.1)
        config = SnplConfig(
            spec=spec,
            hyper=Hyperparams(eta=1),
            mode="finite",
            baseline=default_baseline(),
        )
        candidates = [ThresholdPolicy("g1", c) for c in np.linspace(0.0, 0.6, 20)]
        truth = {p.policy_id: true_values(p)[0] for p in candidates}

        non_baseline = 0
        for rep in range(100):
            rng = np.random.default_rng(200 + rep)
            ds = generate(4000, rng)
            trace = snpl_run(ds, candidates, config, seed=500 + rep)
            assert len(trace.pruned_ids) <= 1
            if trace.is_baseline:
                continue
            non_baseline += 1
            best_true = max(trace.pruned_ids, key=truth.__getitem__)
            assert trace.decision == best_true
        assert non_baseline >= 95
