"""Domain types shared by every module: observations, datasets, propensity
models, policies, safety specifications, and hyperparameters.

Actions are 1-indexed integers in {1..K}; outcome and guardrail indices are
1-indexed everywhere in the public API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Observation",
    "PropensityModel",
    "ConstantPropensity",
    "TabularPropensity",
    "Dataset",
    "Policy",
    "UniformPolicy",
    "LoggingPolicy",
    "SafetySpec",
    "Hyperparams",
    "validate_dataset",
    "action_distribution",
]


@dataclass(frozen=True)
class Observation:
    """A single logged interaction O = (X, A, Y) with A in {1..K}."""

    covariates: np.ndarray
    action: int
    outcomes: np.ndarray


class PropensityModel:
    """Known logging propensities e(k, x) with positivity floor c.

    Subclasses implement ``matrix`` returning the (n, K) array of
    probabilities for a covariate matrix; ``e`` evaluates a single pair.
    """

    n_actions: int
    c: float

    def matrix(self, covariates: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def e(self, action: int, x: np.ndarray) -> float:
        row = self.matrix(np.asarray(x, dtype=float).reshape(1, -1))[0]
        return float(row[action - 1])


class ConstantPropensity(PropensityModel):
    """Covariate-independent propensities, e.g. a Bernoulli(0.5) experiment."""

    def __init__(self, probs: Sequence[float]):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probs must be a nonempty vector")
        self.probs = probs
        self.n_actions = probs.size
        self.c = float(probs.min())

    def matrix(self, covariates: np.ndarray) -> np.ndarray:
        n = np.asarray(covariates).shape[0]
        return np.broadcast_to(self.probs, (n, self.n_actions)).copy()


class TabularPropensity(PropensityModel):
    """Per-row propensities supplied alongside the data (CSV columns e1..eK).

    Only defined at the rows it was built from; general e(k, x) queries are
    unsupported, which suffices for estimation on the same dataset.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be an (n, K) matrix")
        self.values = values
        self.n_actions = values.shape[1]
        self.c = float(values.min())

    def matrix(self, covariates: np.ndarray) -> np.ndarray:
        n = np.asarray(covariates).shape[0]
        if n != self.values.shape[0]:
            raise ValueError("tabular propensities are tied to their dataset rows")
        return self.values

    def e(self, action: int, x: np.ndarray) -> float:
        raise ValueError("tabular propensities support only row-aligned queries")


@dataclass(frozen=True)
class Dataset:
    """Logged data stored columnwise: X (n, d_X), A (n,) in {1..K}, Y (n, d_Y)."""

    covariates: np.ndarray
    actions: np.ndarray
    outcomes: np.ndarray
    propensity: PropensityModel

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_actions(self) -> int:
        return self.propensity.n_actions

    @property
    def n_outcomes(self) -> int:
        return self.outcomes.shape[1]

    def observation(self, i: int) -> Observation:
        return Observation(self.covariates[i], int(self.actions[i]), self.outcomes[i])

    @property
    def observations(self) -> list[Observation]:
        """Materializes the row records; O(n), intended for small data."""
        return [self.observation(i) for i in range(self.n)]

    @staticmethod
    def from_observations(obs: Sequence[Observation], propensity: PropensityModel) -> "Dataset":
        if len(obs) == 0:
            raise ValueError("dataset must be nonempty")
        X = np.stack([np.asarray(o.covariates, dtype=float).ravel() for o in obs])
        A = np.asarray([o.action for o in obs], dtype=np.int64)
        Y = np.stack([np.asarray(o.outcomes, dtype=float).ravel() for o in obs])
        return Dataset(X, A, Y, propensity)


class Policy:
    """Stochastic treatment rule pi(. | x) over K actions."""

    policy_id: str
    n_actions: int

    def distribution(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        """(n, K) action probabilities; subclasses override for speed."""
        X = np.asarray(covariates, dtype=float)
        return np.stack([self.distribution(X[i]) for i in range(X.shape[0])])


class UniformPolicy(Policy):
    """Plays every action with probability 1/K."""

    def __init__(self, n_actions: int, policy_id: str = "uniform"):
        self.n_actions = n_actions
        self.policy_id = policy_id

    def distribution(self, x: np.ndarray) -> np.ndarray:
        return np.full(self.n_actions, 1.0 / self.n_actions)

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        n = np.asarray(covariates).shape[0]
        return np.full((n, self.n_actions), 1.0 / self.n_actions)


class LoggingPolicy(Policy):
    """The logging policy itself: pi(k, x) = e(k, x)."""

    def __init__(self, propensity: PropensityModel, policy_id: str = "logging"):
        self.propensity = propensity
        self.n_actions = propensity.n_actions
        self.policy_id = policy_id

    def distribution(self, x: np.ndarray) -> np.ndarray:
        return self.propensity.matrix(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def prob_matrix(self, covariates: np.ndarray) -> np.ndarray:
        return self.propensity.matrix(covariates)


@dataclass(frozen=True)
class SafetySpec:
    """Goal index g, ordered guardrail indices S, weights w (each <= 0),
    error level alpha, and per-guardrail sense flags.

    A lower-sense guardrail j requires V_j(pi) - (1+w_j) V_j(pi0) >= 0;
    an upper-sense guardrail requires <= 0 and its bound adds the width.
    """

    goal: int
    guardrails: tuple[int, ...]
    weights: tuple[float, ...]
    alpha: float
    senses: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "guardrails", tuple(int(j) for j in self.guardrails))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.senses is None:
            object.__setattr__(self, "senses", tuple("lower" for _ in self.guardrails))
        else:
            object.__setattr__(self, "senses", tuple(str(s) for s in self.senses))
        if len(self.guardrails) == 0:
            raise ValueError("guardrail set S must be nonempty")
        if len(self.weights) != len(self.guardrails):
            raise ValueError("w length must match |S|")
        if len(self.senses) != len(self.guardrails):
            raise ValueError("senses length must match |S|")
        if any(w > 0 for w in self.weights):
            raise ValueError("guardrail weights must be nonpositive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.goal < 1:
            raise ValueError("goal outcome index must be >= 1")
        if any(j < 1 for j in self.guardrails):
            raise ValueError("guardrail indices must be >= 1")
        if any(s not in ("lower", "upper") for s in self.senses):
            raise ValueError("sense must be 'lower' or 'upper'")

    @property
    def s_count(self) -> int:
        return len(self.guardrails)

    def sign(self, s: int) -> float:
        """+1 for lower sense, -1 for upper; index s is 0-based into S."""
        return 1.0 if self.senses[s] == "lower" else -1.0


@dataclass(frozen=True)
class Hyperparams:
    """Algorithm knobs; defaults mirror the benchmark settings.

    epsilon defaults to gamma / sqrt(n); set it explicitly to override.
    eta=None selects the size heuristic; B=None the Theorem 1 sensitivity.
    """

    gamma: float = 0.1
    eta: int | None = None
    B: float | None = None
    p: float = 0.5
    n_sim: int = 100_000
    folds: int = 5
    seed: int = 0
    epsilon: float | None = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.eta is not None and self.eta < 1:
            raise ValueError("eta must be >= 1")
        if self.n_sim < 1:
            raise ValueError("n_sim must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not self.p < 1:
            raise ValueError("p must be < 1")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon override must be positive")


def validate_dataset(dataset: Dataset) -> None:
    """Checks the logged-data assumptions; raises ValueError with the
    offending row index on the first violation. Idempotent and side-effect
    free.
    """
    X, A, Y = dataset.covariates, dataset.actions, dataset.outcomes
    if X.ndim != 2 or Y.ndim != 2 or A.ndim != 1:
        raise ValueError("dimension mismatch: expected X (n,d_X), A (n,), Y (n,d_Y)")
    n = X.shape[0]
    if n == 0:
        raise ValueError("dataset must be nonempty")
    if A.shape[0] != n or Y.shape[0] != n:
        raise ValueError("dimension mismatch: rows of X, A, Y differ")
    if not np.all(np.isfinite(X)):
        i = int(np.argwhere(~np.isfinite(X).all(axis=1))[0, 0])
        raise ValueError(f"non-finite covariate at row {i}")
    K = dataset.n_actions
    bad = (A < 1) | (A > K)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(f"action out of range at row {i}")
    out = (Y < 0.0) | (Y > 1.0) | ~np.isfinite(Y)
    if out.any():
        i = int(np.argmax(out.any(axis=1)))
        raise ValueError(f"outcome out of range at row {i}")
    E = dataset.propensity.matrix(X)
    if E.shape != (n, K):
        raise ValueError("propensity matrix shape mismatch")
    if np.any(E <= 0.0):
        i = int(np.argmax((E <= 0.0).any(axis=1)))
        raise ValueError(f"positivity violated at row {i}")
    c = dataset.propensity.c
    if not 0.0 < c < 1.0:
        raise ValueError("positivity floor c must lie in (0, 1)")
    if np.any(E < c - 1e-12):
        i = int(np.argmax((E < c - 1e-12).any(axis=1)))
        raise ValueError(f"propensity below floor at row {i}")
    rowsum = E.sum(axis=1)
    if np.any(np.abs(rowsum - 1.0) > 1e-8):
        i = int(np.argmax(np.abs(rowsum - 1.0) > 1e-8))
        raise ValueError(f"propensities do not sum to 1 at row {i}")


def action_distribution(policy: Policy, x: np.ndarray) -> np.ndarray:
    """Evaluates pi(. | x) and checks it is a probability vector."""
    x = np.asarray(x, dtype=float)
    dist = np.asarray(policy.distribution(x), dtype=float)
    if dist.ndim != 1 or dist.size != policy.n_actions:
        raise ValueError("dimension mismatch in action distribution")
    if np.any(dist < 0.0) or abs(dist.sum() - 1.0) > 1e-9:
        raise ValueError("action distribution is not a probability vector")
    return dist
