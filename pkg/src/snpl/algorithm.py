"""The noisy safe policy learning loop: a sparse-vector-technique scan over
the candidate class, joint re-certification of the pruned set, and a
select-then-gate decision (the pruned goal argmax is returned only when its
own bounds certify).

Mode ``finite`` pairs the IPW estimator with the empirical-Bernstein bounds;
mode ``asymptotic`` pairs the cross-fitted DR estimator with sup-t bounds.
Inside the loop, finite mode evaluates widths as if |pruned| = eta;
asymptotic mode uses either a Bonferroni-normal quantile per candidate
(default, O(1) per candidate) or sup-t over pruned + candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import (
    LowerBoundEntry,
    LowerBoundTable,
    asymptotic_bounds,
    bonferroni_normal_bounds,
    finite_bounds,
    normal_quantile,
)
from .core import Dataset, Hyperparams, Policy, SafetySpec, validate_dataset
from .estimators import (
    NuisanceModel,
    arm_scores,
    fit_nuisance,
    influence_table,
    policy_scores,
)
from .stability import b_asymp, b_finite, delta_star, eta_heuristic, laplace

__all__ = [
    "SnplConfig",
    "ScanRecord",
    "SnplTrace",
    "snpl_run",
    "in_loop_bound",
    "final_certify",
]


@dataclass(frozen=True)
class SnplConfig:
    spec: SafetySpec
    hyper: Hyperparams
    mode: str
    baseline: Policy
    in_loop: str = "bonferroni-normal"
    loop_n_sim: int | None = None

    def __post_init__(self):
        if self.mode not in ("finite", "asymptotic"):
            raise ValueError("mode must be 'finite' or 'asymptotic'")
        if self.in_loop not in ("bonferroni-normal", "supt"):
            raise ValueError("in_loop must be 'bonferroni-normal' or 'supt'")


@dataclass(frozen=True)
class ScanRecord:
    policy_id: str
    margin: float
    noise: float
    admitted: bool


@dataclass(frozen=True)
class SnplTrace:
    """Complete record of one run; reconstructs the decision."""

    method: str
    mode: str
    n: int
    class_size: int
    baseline_id: str
    spec: SafetySpec
    gamma: float
    epsilon: float
    delta_star: float
    alpha_prime: float
    eta: int
    eta_source: str
    B: float
    B_floor: float
    p: float
    folds: int
    n_sim: int
    in_loop: str
    loop_n_sim: int
    threshold_scale: float
    query_scale: float
    threshold_noise: float
    scan: tuple[ScanRecord, ...]
    pruned_ids: tuple[str, ...]
    final: LowerBoundTable
    goal_values: dict
    baseline_goal_value: float
    certified_ids: tuple[str, ...]
    decision: str
    is_baseline: bool
    seed: tuple

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "method": self.method,
            "mode": self.mode,
            "n": self.n,
            "class_size": self.class_size,
            "baseline": self.baseline_id,
            "spec": _spec_to_obj(self.spec),
            "hyper": {
                "gamma": self.gamma,
                "epsilon": self.epsilon,
                "eta": self.eta,
                "eta_source": self.eta_source,
                "B": self.B,
                "B_floor": self.B_floor,
                "p": self.p,
                "folds": self.folds,
                "n_sim": self.n_sim,
                "in_loop": self.in_loop,
                "loop_n_sim": self.loop_n_sim,
            },
            "stability": {"delta_star": self.delta_star, "alpha_prime": self.alpha_prime},
            "svt": {
                "threshold_scale": self.threshold_scale,
                "query_scale": self.query_scale,
                "threshold_noise": self.threshold_noise,
                "scan": [
                    {
                        "policy": r.policy_id,
                        "margin": r.margin,
                        "noise": r.noise,
                        "admitted": r.admitted,
                    }
                    for r in self.scan
                ],
            },
            "pruned": list(self.pruned_ids),
            "final_bounds": bounds_to_obj(self.final),
            "goal_values": dict(self.goal_values),
            "baseline_goal_value": self.baseline_goal_value,
            "certified": list(self.certified_ids),
            "decision": self.decision,
            "is_baseline": self.is_baseline,
            "seed": list(self.seed),
        }


def _spec_to_obj(spec: SafetySpec) -> dict:
    return {
        "goal": spec.goal,
        "guardrails": list(spec.guardrails),
        "weights": list(spec.weights),
        "alpha": spec.alpha,
        "senses": list(spec.senses),
    }


def bounds_to_obj(table: LowerBoundTable) -> dict:
    return {
        "method": table.method,
        "level": table.level,
        "meta": {k: v for k, v in table.meta.items()},
        "entries": [
            {
                "policy": e.policy_id,
                "guardrail": e.guardrail,
                "sense": e.sense,
                "estimate": e.estimate,
                "width": e.width,
                "bound": e.bound,
                "margin": e.margin,
            }
            for e in table.entries
        ],
    }


def _seed_tuple(seed_seq: np.random.SeedSequence) -> tuple:
    ent = seed_seq.entropy
    base = tuple(ent) if isinstance(ent, (tuple, list)) else (int(ent),)
    return base + tuple(seed_seq.spawn_key)


def _normalize_seed(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


@dataclass
class _Stats:
    """Per-candidate first and second moments of the influence columns,
    goal-value means, and (optionally) the raw columns for sup-t reuse."""

    means: np.ndarray
    variances: np.ndarray
    goal: np.ndarray
    columns: list | None


def _candidate_stats(
    dataset: Dataset,
    candidates: list[Policy],
    spec: SafetySpec,
    baseline: Policy,
    scores: np.ndarray,
    keep_columns: bool = False,
) -> _Stats:
    X = dataset.covariates
    jdx = np.asarray(spec.guardrails, dtype=np.int64) - 1
    w = np.asarray(spec.weights)
    base = policy_scores(scores, baseline, X)[:, jdx]
    means = np.empty((len(candidates), spec.s_count))
    variances = np.empty((len(candidates), spec.s_count))
    goal = np.empty(len(candidates))
    cols = [] if keep_columns else None
    for i, pol in enumerate(candidates):
        psi = policy_scores(scores, pol, X)
        d = psi[:, jdx] - (1.0 + w) * base
        mu = d.mean(axis=0)
        means[i] = mu
        variances[i] = np.mean((d - mu) ** 2, axis=0)
        goal[i] = psi[:, spec.goal - 1].mean()
        if cols is not None:
            cols.append(d)
    return _Stats(means=means, variances=variances, goal=goal, columns=cols)


def _margins_from_stats(stats: _Stats, spec: SafetySpec, widths: np.ndarray) -> np.ndarray:
    """min over guardrails of (sense-flipped estimate - width)."""
    signs = np.array([spec.sign(s) for s in range(spec.s_count)])
    return (signs * stats.means - widths).min(axis=1)


def _bernstein_widths(
    stats: _Stats, spec: SafetySpec, level: float, class_size: int, n: int, c: float
) -> np.ndarray:
    """Vectorized Bernstein widths at the given assumed class size."""
    L = math.log(3.0 * class_size * spec.s_count / (2.0 * level))
    if not math.isfinite(L):
        raise ValueError("level too small: log argument overflows")
    R = (2.0 + np.asarray(spec.weights)) / c
    return np.sqrt(stats.variances) * math.sqrt(2.0 * L / n) + 3.0 * R * L / n


def _normal_widths(
    stats: _Stats, spec: SafetySpec, level: float, class_size: int, n: int
) -> np.ndarray:
    """Vectorized Bonferroni-normal widths at the given assumed class size."""
    z = normal_quantile(1.0 - level / (class_size * spec.s_count))
    return z * np.sqrt(stats.variances) / math.sqrt(n)


def _margins_fixed(
    stats: _Stats, config: SnplConfig, level: float, eta: int, n: int, c: float
) -> np.ndarray:
    """Vector of in-loop M'(pi) for the bounds that do not depend on the
    current pruned set (finite, bonferroni-normal)."""
    if config.mode == "finite":
        widths = _bernstein_widths(stats, config.spec, level, eta, n, c)
    else:
        widths = _normal_widths(stats, config.spec, level, eta, n)
    return _margins_from_stats(stats, config.spec, widths)


def in_loop_bound(
    dataset: Dataset,
    policy: Policy,
    current_pruned: list[Policy],
    config: SnplConfig,
    level: float,
    eta: int,
    nuisance: NuisanceModel | None = None,
    rng=None,
    loop_n_sim: int | None = None,
) -> list[LowerBoundEntry]:
    """Per-guardrail in-loop bounds for one candidate.

    finite: Bernstein widths with the class size fixed to eta; asymptotic
    bonferroni-normal: Phi^{-1}(1 - level/(eta |S|)) per coordinate;
    asymptotic supt: sup-t over current_pruned + [policy], returning the
    candidate's entries.
    """
    estimator = "ipw" if config.mode == "finite" else "dr"
    if config.mode == "finite":
        table = influence_table(dataset, [policy], config.spec, config.baseline, estimator)
        return list(finite_bounds(table, config.spec, level, assumed_class_size=eta).entries)
    if config.in_loop == "bonferroni-normal":
        table = influence_table(
            dataset, [policy], config.spec, config.baseline, estimator, nuisance
        )
        return list(
            bonferroni_normal_bounds(table, config.spec, level, assumed_class_size=eta).entries
        )
    joint = current_pruned + [policy]
    table = influence_table(dataset, joint, config.spec, config.baseline, estimator, nuisance)
    n_sim = loop_n_sim if loop_n_sim is not None else config.hyper.n_sim
    full = asymptotic_bounds(table, config.spec, level, n_sim, rng)
    return full.for_policy(policy.policy_id)


def final_certify(
    dataset: Dataset,
    pruned: list[Policy],
    config: SnplConfig,
    level: float,
    nuisance: NuisanceModel | None = None,
    rng=None,
) -> tuple[LowerBoundTable, str, dict]:
    """Joint bounds over exactly pruned x S at the given level, then the
    select-then-gate decision: the pruned policy with the largest estimated
    goal value (scan-order ties) is the sole candidate, and it is returned
    only when every one of its margins is strictly positive; otherwise the
    baseline. Returns (table, decision_id, goal_values).

    Certification is computed for the whole pruned set, so the trace still
    records which policies would individually certify, but policies other
    than the goal argmax are never returned even when they certify.
    """
    estimator = "ipw" if config.mode == "finite" else "dr"
    if not pruned:
        empty = LowerBoundTable(entries=(), method=config.mode, level=level, meta={})
        return empty, config.baseline.policy_id, {}
    table = influence_table(dataset, pruned, config.spec, config.baseline, estimator, nuisance)
    if config.mode == "finite":
        bt = finite_bounds(table, config.spec, level)
    else:
        bt = asymptotic_bounds(table, config.spec, level, config.hyper.n_sim, rng)
    scores = arm_scores(dataset, estimator, nuisance)
    goal_values = {
        pol.policy_id: float(
            policy_scores(scores, pol, dataset.covariates)[:, config.spec.goal - 1].mean()
        )
        for pol in pruned
    }
    pick = pruned[0].policy_id
    best = goal_values[pick]
    for pol in pruned[1:]:
        if goal_values[pol.policy_id] > best:
            best = goal_values[pol.policy_id]
            pick = pol.policy_id
    decision = pick if bt.min_margin(pick) > 0.0 else config.baseline.policy_id
    return bt, decision, goal_values


def snpl_run(dataset: Dataset, policies: list[Policy], config: SnplConfig, seed=None) -> SnplTrace:
    """Runs the full procedure and returns its trace.

    Steps: resolve delta* and alpha'(delta*); draw one noisy threshold
    v ~ Lap(2 B eta / epsilon); scan the class in declared order (skipping
    the baseline), admitting candidates whose noisy margin clears v, at most
    eta of them; re-certify the admitted set jointly at alpha'(delta*);
    return the admitted policy with the best estimated goal value if its own
    bounds certify, else the baseline.
    """
    validate_dataset(dataset)
    if len(policies) == 0:
        raise ValueError("empty policy class")
    seed_seq = _normalize_seed(seed if seed is not None else config.hyper.seed)
    rng_nuisance, rng_svt, rng_loop, rng_final = [
        np.random.default_rng(s) for s in seed_seq.spawn(4)
    ]
    spec, hyper = config.spec, config.hyper
    n = dataset.n
    candidates = [p for p in policies if p.policy_id != config.baseline.policy_id]

    epsilon = hyper.epsilon if hyper.epsilon is not None else hyper.gamma / math.sqrt(n)
    dstar, aprime = delta_star(spec.alpha, n, epsilon)

    if hyper.eta is not None:
        eta, eta_source = int(hyper.eta), "user"
    else:
        eta = eta_heuristic(spec.alpha, aprime, max(len(candidates), 1), spec.s_count, hyper.p)
        eta_source = "heuristic"

    xi = (2.0 + max(spec.weights)) / dataset.propensity.c
    if config.mode == "finite":
        floor = b_finite(n, xi, aprime)
    else:
        floor = b_asymp(n, xi, aprime, eta, spec.s_count)
    if hyper.B is not None:
        if hyper.B < floor - 1e-12:
            raise ValueError(f"B={hyper.B} is below the sensitivity floor {floor}")
        B = float(hyper.B)
    else:
        B = floor

    threshold_scale = 2.0 * B * eta / epsilon
    query_scale = 4.0 * B * eta / epsilon

    nuisance = None
    if config.mode == "asymptotic":
        nuisance = fit_nuisance(dataset, hyper.folds, rng_nuisance)
    estimator = "ipw" if config.mode == "finite" else "dr"
    scores = arm_scores(dataset, estimator, nuisance)

    loop_n_sim = config.loop_n_sim if config.loop_n_sim is not None else hyper.n_sim
    supt_loop = config.mode == "asymptotic" and config.in_loop == "supt"
    stats = _candidate_stats(
        dataset, candidates, spec, config.baseline, scores, keep_columns=supt_loop
    )
    if not supt_loop and candidates:
        margins = _margins_fixed(stats, config, aprime, eta, n, dataset.propensity.c)

    # SVT scan: one threshold draw, then one independent noise per scanned
    # candidate, stopping once eta policies are admitted.
    v = laplace(threshold_scale, rng_svt)
    pruned: list[Policy] = []
    pruned_idx: list[int] = []
    records: list[ScanRecord] = []
    for i, pol in enumerate(candidates):
        if supt_loop:
            margin = _supt_loop_margin(
                dataset, stats, pruned_idx, i, config, aprime, loop_n_sim, rng_loop
            )
        else:
            margin = float(margins[i])
        noise = laplace(query_scale, rng_svt)
        admitted = margin + noise > v
        records.append(ScanRecord(pol.policy_id, margin, noise, admitted))
        if admitted:
            pruned.append(pol)
            pruned_idx.append(i)
            if len(pruned) == eta:
                break

    final_table, decision, goal_values = final_certify(
        dataset, pruned, config, aprime, nuisance, rng_final
    )
    certified = tuple(
        pol.policy_id for pol in pruned if final_table.min_margin(pol.policy_id) > 0.0
    )

    base_goal = float(
        policy_scores(scores, config.baseline, dataset.covariates)[:, spec.goal - 1].mean()
    )

    return SnplTrace(
        method="snpl",
        mode=config.mode,
        n=n,
        class_size=len(candidates),
        baseline_id=config.baseline.policy_id,
        spec=spec,
        gamma=hyper.gamma,
        epsilon=epsilon,
        delta_star=dstar,
        alpha_prime=aprime,
        eta=eta,
        eta_source=eta_source,
        B=B,
        B_floor=floor,
        p=hyper.p,
        folds=hyper.folds,
        n_sim=hyper.n_sim,
        in_loop=config.in_loop,
        loop_n_sim=loop_n_sim,
        threshold_scale=threshold_scale,
        query_scale=query_scale,
        threshold_noise=v,
        scan=tuple(records),
        pruned_ids=tuple(p.policy_id for p in pruned),
        final=final_table,
        goal_values=goal_values,
        baseline_goal_value=base_goal,
        certified_ids=certified,
        decision=decision,
        is_baseline=decision == config.baseline.policy_id,
        seed=_seed_tuple(seed_seq),
    )


def _supt_loop_margin(
    dataset: Dataset,
    stats: _Stats,
    pruned_idx: list[int],
    i: int,
    config: SnplConfig,
    level: float,
    n_sim: int,
    rng,
) -> float:
    """M'(pi_i) from sup-t over the current pruned set plus the candidate,
    reusing the precomputed influence columns."""
    from .bounds import supt_quantile

    spec = config.spec
    idx = pruned_idx + [i]
    cols = np.concatenate([stats.columns[j] for j in idx], axis=1)
    signs = np.tile([spec.sign(s) for s in range(spec.s_count)], len(idx))
    centered = cols - cols.mean(axis=0)
    cov = (centered.T @ centered / dataset.n) * np.outer(signs, signs)
    q = supt_quantile(cov, level, n_sim, rng)
    se = np.sqrt(stats.variances[i] / dataset.n)
    sgn = np.array([spec.sign(s) for s in range(spec.s_count)])
    return float((sgn * stats.means[i] + q.z_star * se).min())
