"""Policy-value estimation: IPW and cross-fitted doubly-robust scores, the
per-observation influence terms for weighted value differences, and their
empirical variances and covariances.

Per-arm score arrays have shape (n, K, d_Y):
    IPW:  s[i,k,j] = 1[A_i=k+1] * Y_ij / e(k+1, X_i)
    DR:   s[i,k,j] = 1[A_i=k+1] * (Y_ij - mu_j(k+1, X_i)) / e(k+1, X_i)
                     + mu_j(k+1, X_i)
and psi_j(O_i, pi) = sum_k pi(k, X_i) * s[i,k,j].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Dataset, Policy, SafetySpec

__all__ = [
    "NuisanceModel",
    "InfluenceTable",
    "fit_nuisance",
    "arm_scores",
    "policy_scores",
    "ipw_value",
    "dr_value",
    "influence_table",
    "empirical_variance",
    "empirical_covariance",
]

RIDGE_PENALTY = 1e-8


@dataclass(frozen=True)
class NuisanceModel:
    """Cross-fitted linear outcome regressions mu_j(k, x).

    coef has shape (F, K, d_Y, d_X + 1) with the intercept first;
    fold_of[i] is the fold holding observation i (its model was trained on
    the complement); mu caches the out-of-fold predictions, clipped to [0,1].
    """

    coef: np.ndarray
    fold_of: np.ndarray
    mu: np.ndarray

    @property
    def folds(self) -> int:
        return self.coef.shape[0]


def fit_nuisance(dataset: Dataset, folds: int, rng: np.random.Generator) -> NuisanceModel:
    """OLS of each outcome on [1, X], per arm, per fold-complement.

    Fold assignment is a uniform random permutation split into near-equal
    blocks. A singular design matrix falls back to ridge with penalty 1e-8
    (warned); an empty (arm, fold-complement) training cell is an error.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    n, K, d_Y = dataset.n, dataset.n_actions, dataset.n_outcomes
    if folds > n:
        raise ValueError("more folds than observations")
    X, A, Y = dataset.covariates, dataset.actions, dataset.outcomes
    d = X.shape[1]
    Z = np.column_stack([np.ones(n), X])

    fold_of = np.empty(n, dtype=np.int64)
    for f, block in enumerate(np.array_split(rng.permutation(n), folds)):
        fold_of[block] = f

    coef = np.empty((folds, K, d_Y, d + 1))
    mu = np.empty((n, K, d_Y))
    for f in range(folds):
        train = fold_of != f
        hold = ~train
        for k in range(K):
            rows = train & (A == k + 1)
            if not rows.any():
                raise ValueError(f"empty training cell: fold {f}, arm {k + 1}")
            Zr, Yr = Z[rows], Y[rows]
            beta, _, rank, _ = np.linalg.lstsq(Zr, Yr, rcond=None)
            if rank < d + 1:
                warnings.warn(
                    f"singular design matrix (fold {f}, arm {k + 1}); "
                    f"using ridge penalty {RIDGE_PENALTY}"
                )
                G = Zr.T @ Zr + RIDGE_PENALTY * np.eye(d + 1)
                beta = np.linalg.solve(G, Zr.T @ Yr)
            coef[f, k] = beta.T
            mu[hold, k, :] = np.clip(Z[hold] @ beta, 0.0, 1.0)
    return NuisanceModel(coef=coef, fold_of=fold_of, mu=mu)


def arm_scores(
    dataset: Dataset, estimator: str, nuisance: NuisanceModel | None = None
) -> np.ndarray:
    """(n, K, d_Y) per-arm scores for the requested estimator."""
    n, K, d_Y = dataset.n, dataset.n_actions, dataset.n_outcomes
    E = dataset.propensity.matrix(dataset.covariates)
    hit = np.zeros((n, K))
    hit[np.arange(n), dataset.actions - 1] = 1.0
    weight = hit / E
    if estimator == "ipw":
        return weight[:, :, None] * dataset.outcomes[:, None, :]
    if estimator == "dr":
        if nuisance is None:
            raise ValueError("dr estimator requires a fitted nuisance model")
        resid = dataset.outcomes[:, None, :] - nuisance.mu
        return weight[:, :, None] * resid + nuisance.mu
    raise ValueError(f"unknown estimator '{estimator}'")


def policy_scores(scores: np.ndarray, policy: Policy, covariates: np.ndarray) -> np.ndarray:
    """psi_j(O_i, pi) for all outcomes: contracts the arm axis with pi(.|x)."""
    P = policy.prob_matrix(covariates)
    return np.einsum("nk,nkj->nj", P, scores)


def ipw_value(dataset: Dataset, policy: Policy, outcome: int) -> float:
    """Inverse-propensity-weighted estimate of V_j(pi); outcome is 1-based."""
    scores = arm_scores(dataset, "ipw")
    return float(policy_scores(scores, policy, dataset.covariates)[:, outcome - 1].mean())


def dr_value(dataset: Dataset, policy: Policy, outcome: int, nuisance: NuisanceModel) -> float:
    """Cross-fitted doubly-robust estimate of V_j(pi); outcome is 1-based."""
    scores = arm_scores(dataset, "dr", nuisance)
    return float(policy_scores(scores, policy, dataset.covariates)[:, outcome - 1].mean())


@dataclass(frozen=True)
class InfluenceTable:
    """Per-observation weighted differences d_j(O_i, pi) for a policy list
    and guardrail set, in column order (p)|S| + s (policies indexed 0-based
    here; the 1-based index map is (p-1)|S| + s).

    values: (n, |Pi| * |S|); estimates are the column means; c and n carry
    the dataset context the bound constructions need.
    """

    values: np.ndarray
    estimates: np.ndarray
    policy_ids: tuple[str, ...]
    spec: SafetySpec
    baseline_id: str
    estimator: str
    c: float

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def policy_count(self) -> int:
        return len(self.policy_ids)

    def column(self, p: int, s: int) -> np.ndarray:
        """Column for 0-based policy index p and guardrail position s."""
        return self.values[:, p * self.spec.s_count + s]


def influence_table(
    dataset: Dataset,
    policies: list[Policy],
    spec: SafetySpec,
    baseline: Policy,
    estimator: str = "ipw",
    nuisance: NuisanceModel | None = None,
) -> InfluenceTable:
    """Builds d_j(O_i, pi) = psi_j(O_i, pi) - (1 + w_j) psi_j(O_i, pi0)
    for every (policy, guardrail) pair, plus the column-mean estimates
    D_j(pi) = V_j(pi) - (1 + w_j) V_j(pi0).
    """
    if len(spec.weights) != spec.s_count:
        raise ValueError("w length must match |S|")
    scores = arm_scores(dataset, estimator, nuisance)
    X = dataset.covariates
    S = spec.s_count
    jdx = np.asarray(spec.guardrails, dtype=np.int64) - 1
    w = np.asarray(spec.weights)

    base = policy_scores(scores, baseline, X)[:, jdx]
    values = np.empty((dataset.n, len(policies) * S))
    for p, policy in enumerate(policies):
        psi = policy_scores(scores, policy, X)[:, jdx]
        values[:, p * S : (p + 1) * S] = psi - (1.0 + w) * base
    return InfluenceTable(
        values=values,
        estimates=values.mean(axis=0),
        policy_ids=tuple(pol.policy_id for pol in policies),
        spec=spec,
        baseline_id=baseline.policy_id,
        estimator=estimator,
        c=dataset.propensity.c,
    )


def empirical_variance(column: np.ndarray) -> float:
    """(1/n) sum (d_i - mean)^2; population normalization."""
    column = np.asarray(column, dtype=float)
    if column.size < 2:
        raise ValueError("variance requires n >= 2")
    return float(np.mean((column - column.mean()) ** 2))


def empirical_covariance(table: InfluenceTable) -> np.ndarray:
    """(1/n)-normalized covariance of the influence columns."""
    if table.n < 2:
        raise ValueError("covariance requires n >= 2")
    centered = table.values - table.estimates
    return centered.T @ centered / table.n
