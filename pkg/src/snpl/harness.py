"""Benchmark harness: configuration, the replicated-simulation runner,
decision scoring against the exact truth oracle, and all file I/O (dataset
CSV, config JSON, trace JSON, report CSV, gamma-grid CSV, bounds scatter).

Seeding is splittable and documented: replication r of a benchmark derives
stream (master_seed, r, k) where k = 0 feeds data generation and k >= 1 is
a fixed per-method registry slot, so reports are invariant to replication
execution order and to the configured method order.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .algorithm import SnplConfig, snpl_run
from .baselines import bonferroni_run, hcpi_run
from .bounds import normal_quantile
from .core import (
    ConstantPropensity,
    Dataset,
    Hyperparams,
    SafetySpec,
    TabularPropensity,
    validate_dataset,
)
from .estimators import arm_scores, fit_nuisance, policy_scores
from .stability import gamma_grid
from .synthetic import ThresholdPolicy, build_class, generate, truth_table

__all__ = [
    "METHOD_STREAMS",
    "BenchmarkConfig",
    "MethodResult",
    "BenchmarkReport",
    "run_benchmark",
    "run_single",
    "emit_bounds_scatter",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_report_csv",
    "write_truth_csv",
    "write_gamma_grid_csv",
    "worker_count",
]

# Fixed seed-stream registry: slot 0 generates data, the rest key methods,
# so results do not depend on the order methods are listed or executed.
METHOD_STREAMS = {"snpl": 1, "ds-25": 2, "ds-50": 3, "ds-75": 4, "bonferroni": 5}
_DATA_STREAM = 0

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for malformed configs or data files; maps to exit code 2."""


@dataclass(frozen=True)
class BenchmarkConfig:
    """One JSON document drives both the benchmark and single runs.

    Defaults mirror the synthetic benchmark: alpha = 0.1, gamma = 0.1,
    p = 0.5, folds = 5, final n_sim = 1e5, w = [0, -0.1], goal outcome 1.
    eta = null (the default) re-derives eta per class size from the
    width-ratio heuristic.
    """

    methods: tuple[str, ...] = ("snpl",)
    mode: str = "asymptotic"
    n: int = 1000
    replications: int = 300
    grid_size: int = 500
    goal: int = 1
    guardrails: tuple[int, ...] = (1, 2)
    weights: tuple[float, ...] = (0.0, -0.1)
    senses: tuple[str, ...] | None = None
    alpha: float = 0.1
    gamma: float = 0.1
    p: float = 0.5
    eta: int | None = None
    B: float | None = None
    epsilon: float | None = None
    n_sim: int = 100_000
    loop_n_sim: int | None = None
    in_loop: str = "bonferroni-normal"
    folds: int = 5
    master_seed: int = 0
    save_traces: bool = False
    baseline_feature: str = "g1"
    baseline_cutoff: float = 0.5
    n_actions: int = 2
    propensity: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        for m in self.methods:
            if m not in METHOD_STREAMS:
                raise ConfigError(f"unrecognized method tag '{m}'")
        if self.mode not in ("finite", "asymptotic"):
            raise ConfigError("mode must be 'finite' or 'asymptotic'")
        if len(self.weights) != len(self.guardrails):
            raise ConfigError("w length must match |S|")

    def spec(self) -> SafetySpec:
        try:
            return SafetySpec(
                goal=self.goal,
                guardrails=self.guardrails,
                weights=self.weights,
                alpha=self.alpha,
                senses=self.senses,
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def hyper(self) -> Hyperparams:
        return Hyperparams(
            gamma=self.gamma,
            eta=self.eta,
            B=self.B,
            p=self.p,
            n_sim=self.n_sim,
            folds=self.folds,
            seed=self.master_seed,
            epsilon=self.epsilon,
        )

    def baseline(self) -> ThresholdPolicy:
        return ThresholdPolicy(self.baseline_feature, self.baseline_cutoff)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "methods": list(self.methods),
            "mode": self.mode,
            "n": self.n,
            "replications": self.replications,
            "grid_size": self.grid_size,
            "goal": self.goal,
            "guardrails": list(self.guardrails),
            "weights": list(self.weights),
            "senses": None if self.senses is None else list(self.senses),
            "alpha": self.alpha,
            "gamma": self.gamma,
            "p": self.p,
            "eta": self.eta,
            "B": self.B,
            "epsilon": self.epsilon,
            "n_sim": self.n_sim,
            "loop_n_sim": self.loop_n_sim,
            "in_loop": self.in_loop,
            "folds": self.folds,
            "master_seed": self.master_seed,
            "save_traces": self.save_traces,
            "baseline_feature": self.baseline_feature,
            "baseline_cutoff": self.baseline_cutoff,
            "n_actions": self.n_actions,
            "propensity": list(self.propensity),
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "BenchmarkConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in BenchmarkConfig.__dataclass_fields__}
        unknown = set(obj) - known - {"schema_version"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = {}
        for name in known:
            if name not in obj or obj[name] is None:
                continue
            value = obj[name]
            if name in ("methods", "guardrails", "weights", "senses", "propensity"):
                value = tuple(value)
            kwargs[name] = value
        try:
            return BenchmarkConfig(**kwargs)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err


def load_config(path: str) -> BenchmarkConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config: {err}") from err
    return BenchmarkConfig.from_json_dict(obj)


@dataclass(frozen=True)
class MethodResult:
    method: str
    detection: float
    detection_se: float
    type1: float | None
    type1_se: float | None
    ei: float
    ei_se: float
    reps: int
    wall_time: float


@dataclass(frozen=True)
class BenchmarkReport:
    results: tuple[MethodResult, ...]
    config: BenchmarkConfig

    def result(self, method: str) -> MethodResult:
        for r in self.results:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_json_dict(),
            "results": [
                {
                    "method": r.method,
                    "detection": r.detection,
                    "detection_se": r.detection_se,
                    "type1": r.type1,
                    "type1_se": r.type1_se,
                    "ei": r.ei,
                    "ei_se": r.ei_se,
                    "reps": r.reps,
                    "wall_time": r.wall_time,
                }
                for r in self.results
            ],
        }


def worker_count(replications: int, workers: int | None = None) -> int:
    """Resolves the pool size: explicit argument, else SNPL_THREADS, else
    the hardware count, always capped at the replication count."""
    if workers is None:
        env = os.environ.get("SNPL_THREADS")
        if env is not None:
            try:
                workers = int(env)
            except ValueError as err:
                raise ConfigError(f"SNPL_THREADS must be an integer: {env!r}") from err
        else:
            workers = os.cpu_count() or 1
    return max(1, min(workers, replications))


def _dispatch(method: str, dataset, policies, baseline, spec, config: BenchmarkConfig, seed_seq):
    hyper = config.hyper()
    if method == "snpl":
        run_cfg = SnplConfig(
            spec=spec,
            hyper=hyper,
            mode=config.mode,
            baseline=baseline,
            in_loop=config.in_loop,
            loop_n_sim=config.loop_n_sim,
        )
        return snpl_run(dataset, policies, run_cfg, seed=seed_seq)
    if method.startswith("ds-"):
        rho = int(method.split("-")[1]) / 100.0
        return hcpi_run(dataset, policies, spec, baseline, rho, config.mode, hyper, seed=seed_seq)
    if method == "bonferroni":
        return bonferroni_run(dataset, policies, spec, baseline, config.mode, hyper, seed=seed_seq)
    raise ConfigError(f"unrecognized method tag '{method}'")


def _replication_seed(master: int, r: int, slot: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((master, r, slot))


def _execute_replication(state: dict, r: int) -> dict:
    config: BenchmarkConfig = state["config"]
    rng = np.random.default_rng(_replication_seed(config.master_seed, r, _DATA_STREAM))
    dataset = generate(config.n, rng)
    out = {}
    for method in config.methods:
        seed_seq = _replication_seed(config.master_seed, r, METHOD_STREAMS[method])
        start = time.perf_counter()
        try:
            trace = _dispatch(
                method, dataset, state["policies"], state["baseline"], state["spec"], config, seed_seq
            )
        except Exception as err:
            raise RuntimeError(
                f"method '{method}' failed in replication {r} "
                f"(seed ({config.master_seed}, {r}, {METHOD_STREAMS[method]})): {err}"
            ) from err
        elapsed = time.perf_counter() - start
        out[method] = (trace.decision, elapsed)
        out_dir = state.get("out_dir")
        if out_dir is not None and config.save_traces:
            trace_dir = os.path.join(out_dir, "traces")
            os.makedirs(trace_dir, exist_ok=True)
            path = os.path.join(trace_dir, f"{method}_r{r:05d}.json")
            write_json(trace.to_json_dict(), path)
    return out


_POOL_STATE: dict = {}


def _init_pool(config_obj: dict, out_dir: str | None):
    config = BenchmarkConfig.from_json_dict(config_obj)
    _POOL_STATE.clear()
    _POOL_STATE.update(_build_state(config, out_dir))


def _pool_job(r: int) -> tuple[int, dict]:
    return r, _execute_replication(_POOL_STATE, r)


def _build_state(config: BenchmarkConfig, out_dir: str | None) -> dict:
    return {
        "config": config,
        "policies": build_class(config.grid_size),
        "baseline": config.baseline(),
        "spec": config.spec(),
        "out_dir": out_dir,
    }


def run_benchmark(
    config: BenchmarkConfig, workers: int | None = None, out_dir: str | None = None
) -> BenchmarkReport:
    """Runs every configured method on `replications` fresh synthetic
    datasets and scores decisions against the exact truth oracle.

    Detection is the fraction of non-baseline returns; Type I the fraction
    of truly unsafe policies among those (null on a zero denominator); EI
    the unconditional mean true goal gain, zero when the baseline comes
    back. Aggregation iterates replications in index order, so reports do
    not depend on completion order.
    """
    state = _build_state(config, out_dir)
    M = config.replications
    nworkers = worker_count(M, workers)
    per_rep: dict[int, dict] = {}
    if nworkers == 1:
        for r in range(M):
            per_rep[r] = _execute_replication(state, r)
    else:
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        with ctx.Pool(
            nworkers, initializer=_init_pool, initargs=(config.to_json_dict(), out_dir)
        ) as pool:
            for r, result in pool.imap_unordered(_pool_job, range(M)):
                per_rep[r] = result

    truth = truth_table(state["policies"], state["baseline"], state["spec"])
    base_id = state["baseline"].policy_id
    goal = config.goal
    results = []
    for method in config.methods:
        decisions = [per_rep[r][method][0] for r in range(M)]
        wall = sum(per_rep[r][method][1] for r in range(M))
        nonbase = [d for d in decisions if d != base_id]
        detection = len(nonbase) / M
        det_se = math.sqrt(detection * (1.0 - detection) / M)
        gains = np.array(
            [truth.value(d, goal) - truth.value(base_id, goal) for d in decisions]
        )
        ei = float(gains.mean())
        ei_se = float(gains.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
        if nonbase:
            viol = sum(1 for d in nonbase if not truth.safe[d])
            type1 = viol / len(nonbase)
            type1_se = math.sqrt(type1 * (1.0 - type1) / len(nonbase))
        else:
            type1 = None
            type1_se = None
        results.append(
            MethodResult(
                method=method,
                detection=detection,
                detection_se=det_se,
                type1=type1,
                type1_se=type1_se,
                ei=ei,
                ei_se=ei_se,
                reps=M,
                wall_time=wall,
            )
        )
    return BenchmarkReport(results=tuple(results), config=config)


# ---------------------------------------------------------------------------
# File I/O


def write_json(obj: dict, path: str) -> None:
    """Canonical JSON: sorted keys, two-space indent, trailing newline;
    byte-identical for identical content."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_report_csv(report: BenchmarkReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "detection", "detection_se", "type1", "type1_se", "ei", "ei_se", "reps"]
        )
        for r in report.results:
            writer.writerow(
                [
                    r.method,
                    repr(r.detection),
                    repr(r.detection_se),
                    "" if r.type1 is None else repr(r.type1),
                    "" if r.type1_se is None else repr(r.type1_se),
                    repr(r.ei),
                    repr(r.ei_se),
                    r.reps,
                ]
            )


def write_truth_csv(truth, path: str) -> None:
    """Header policy_id,v1,v2,safe; exact oracle values at full precision,
    safe as 0/1. Row order follows the table's insertion order (class order,
    baseline appended last when not a member)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy_id", "v1", "v2", "safe"])
        for pid, (v1, v2) in truth.values.items():
            writer.writerow([pid, repr(v1), repr(v2), int(truth.safe[pid])])


def write_dataset_csv(dataset: Dataset, path: str) -> None:
    """Header x1..xd,a,y1..yd_Y; actions as integers, floats to 6 decimals."""
    d_x = dataset.covariates.shape[1]
    d_y = dataset.outcomes.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"x{i+1}" for i in range(d_x)] + ["a"] + [f"y{j+1}" for j in range(d_y)]
        )
        for i in range(dataset.n):
            row = [f"{v:.6f}" for v in dataset.covariates[i]]
            row.append(str(int(dataset.actions[i])))
            row.extend(f"{v:.6f}" for v in dataset.outcomes[i])
            writer.writerow(row)


def read_dataset_csv(path: str, config: BenchmarkConfig) -> Dataset:
    """Reads `x1..xd,a,y1..yd_Y[,e1..eK]`. With e-columns present the
    propensities ride along row-wise; otherwise the config's constant
    propensity vector applies."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ConfigError("empty data file") from None
            rows = list(reader)
    except OSError as err:
        raise ConfigError(f"cannot read data: {err}") from err

    header = [h.strip() for h in header]
    x_cols = [h for h in header if h.startswith("x")]
    y_cols = [h for h in header if h.startswith("y")]
    e_cols = [h for h in header if h.startswith("e")]
    expect_x = [f"x{i+1}" for i in range(len(x_cols))]
    expect_y = [f"y{j+1}" for j in range(len(y_cols))]
    expect_e = [f"e{k+1}" for k in range(len(e_cols))]
    expected = expect_x + ["a"] + expect_y + expect_e
    if header != expected or not x_cols or not y_cols:
        raise ConfigError(
            f"data header mismatch: expected x1..xd,a,y1..yd[,e1..eK], got {header}"
        )
    if not rows:
        raise ConfigError("data file has no rows")

    nx, ny, ne = len(x_cols), len(y_cols), len(e_cols)
    X = np.empty((len(rows), nx))
    A = np.empty(len(rows), dtype=np.int64)
    Y = np.empty((len(rows), ny))
    E = np.empty((len(rows), ne)) if ne else None
    for i, row in enumerate(rows):
        if len(row) != len(expected):
            raise ConfigError(f"wrong field count at data row {i + 1}")
        try:
            X[i] = [float(v) for v in row[:nx]]
            A[i] = int(row[nx])
            Y[i] = [float(v) for v in row[nx + 1 : nx + 1 + ny]]
            if ne:
                E[i] = [float(v) for v in row[nx + 1 + ny :]]
        except ValueError as err:
            raise ConfigError(f"unparseable value at data row {i + 1}: {err}") from err

    if ne:
        propensity = TabularPropensity(E)
    else:
        probs = config.propensity
        if len(probs) != config.n_actions:
            raise ConfigError("propensity vector length must equal n_actions")
        propensity = ConstantPropensity(probs)
    dataset = Dataset(X, A, Y, propensity)
    try:
        validate_dataset(dataset)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return dataset


def write_gamma_grid_csv(path: str, alpha_steps: int = 50, gamma_steps: int = 80) -> None:
    """f(gamma, alpha) over the standard ranges, 6 significant digits."""
    alphas = np.linspace(0.01, 0.5, alpha_steps)
    gammas = np.linspace(0.01, 0.8, gamma_steps)
    ratios = gamma_grid(alphas, gammas)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "gamma", "ratio"])
        for i, a in enumerate(alphas):
            for j, g in enumerate(gammas):
                writer.writerow([f"{a:.6g}", f"{g:.6g}", f"{ratios[i, j]:.6g}"])


def run_single(data_path: str, config_path: str, out_path: str) -> int:
    """Applies the configured method (the first entry of `methods`) to a
    CSV dataset and writes the trace JSON. Returns 0 when the decision is
    non-baseline, 3 on baseline fallback; ConfigError propagates for the
    CLI to map to exit code 2."""
    config = load_config(config_path)
    dataset = read_dataset_csv(data_path, config)
    if dataset.covariates.shape[1] < 3:
        raise ConfigError("the built-in threshold policy class needs columns x1..x3")
    spec = config.spec()
    if max(max(spec.guardrails), spec.goal) > dataset.n_outcomes:
        raise ConfigError("guardrail or goal index exceeds outcome count")
    policies = build_class(config.grid_size)
    baseline = config.baseline()
    method = config.methods[0]
    seed_seq = _replication_seed(config.master_seed, 0, METHOD_STREAMS[method])
    trace = _dispatch(method, dataset, policies, baseline, spec, config, seed_seq)
    write_json(trace.to_json_dict(), out_path)
    return 0 if not trace.is_baseline else 3


def emit_bounds_scatter(dataset: Dataset, policies, config: BenchmarkConfig, out_path: str) -> None:
    """Runs the pruning pipeline and writes the per-policy scatter data
    behind the bound-visualization figure: estimate and bound coordinates
    per guardrail, both centered at the baseline estimate, the certification
    thresholds w_j * V_j(pi0), and pruned/selected flags.

    A lower-sense coordinate certifies iff bound > threshold (upper sense:
    bound < threshold). Widths reuse the run's final-certification critical
    value and its nuisance stream, so pruned rows reproduce the trace's
    final margins exactly.
    """
    spec = config.spec()
    baseline = config.baseline()
    seed_seq = _replication_seed(config.master_seed, 0, METHOD_STREAMS["snpl"])
    run_cfg = SnplConfig(
        spec=spec,
        hyper=config.hyper(),
        mode=config.mode,
        baseline=baseline,
        in_loop=config.in_loop,
        loop_n_sim=config.loop_n_sim,
    )
    trace = snpl_run(dataset, policies, run_cfg, seed=seed_seq)

    # Same substream the run used for cross-fitting, so estimates match.
    # Rebuilt from scratch: spawning advances a SeedSequence's child counter,
    # so reusing seed_seq here would yield different children.
    fresh = _replication_seed(config.master_seed, 0, METHOD_STREAMS["snpl"])
    rng_nuisance = np.random.default_rng(fresh.spawn(4)[0])
    nuisance = None
    estimator = "ipw" if config.mode == "finite" else "dr"
    if config.mode == "asymptotic":
        nuisance = fit_nuisance(dataset, config.folds, rng_nuisance)
    scores = arm_scores(dataset, estimator, nuisance)
    jdx = np.asarray(spec.guardrails, dtype=np.int64) - 1
    w = np.asarray(spec.weights)
    n = dataset.n

    psi0 = policy_scores(scores, baseline, dataset.covariates)[:, jdx]
    v0 = psi0.mean(axis=0)
    thresholds = w * v0
    if config.mode == "finite":
        class_size = max(len(trace.pruned_ids), 1)
        L = math.log(3.0 * class_size * spec.s_count / (2.0 * trace.alpha_prime))
        R = (2.0 + w) / dataset.propensity.c

        def widths_for(var):
            return np.sqrt(var) * math.sqrt(2.0 * L / n) + 3.0 * R * L / n

    else:
        if trace.pruned_ids:
            z = -trace.final.meta["z_star"]
        else:
            z = normal_quantile(1.0 - trace.alpha_prime / (trace.eta * spec.s_count))

        def widths_for(var):
            return z * np.sqrt(var / n)

    pruned = set(trace.pruned_ids)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        cols = ["policy_id"]
        for s in range(spec.s_count):
            cols += [f"estimate_{s+1}", f"bound_{s+1}", f"threshold_{s+1}"]
        cols += ["pruned", "selected", "pruned_size"]
        writer.writerow(cols)
        for pol in [baseline] + [p for p in policies if p.policy_id != baseline.policy_id]:
            psi = policy_scores(scores, pol, dataset.covariates)[:, jdx]
            d = psi - (1.0 + w) * psi0
            var = np.mean((d - d.mean(axis=0)) ** 2, axis=0)
            widths = widths_for(var)
            est = psi.mean(axis=0) - v0
            row = [pol.policy_id]
            for s in range(spec.s_count):
                bound = est[s] - widths[s] if spec.senses[s] == "lower" else est[s] + widths[s]
                row += [repr(float(est[s])), repr(float(bound)), repr(float(thresholds[s]))]
            row += [
                int(pol.policy_id in pruned),
                int(pol.policy_id == trace.decision),
                len(trace.pruned_ids),
            ]
            writer.writerow(row)
