"""Safe noisy policy learning: simultaneous offline policy selection and
multi-objective safety certification with a stable (noise-calibrated)
pruning step, plus finite-sample and asymptotic guarantee variants,
data-splitting and Bonferroni baselines, a synthetic benchmark with an
exact truth oracle, and a replicated-simulation harness.
"""

from .algorithm import ScanRecord, SnplConfig, SnplTrace, snpl_run
from .baselines import BaselineTrace, SplitPlan, bonferroni_run, hcpi_run
from .bounds import (
    LowerBoundEntry,
    LowerBoundTable,
    SupTQuantile,
    asymptotic_bounds,
    bonferroni_normal_bounds,
    finite_bounds,
    normal_quantile,
    supt_quantile,
)
from .core import (
    ConstantPropensity,
    Dataset,
    Hyperparams,
    LoggingPolicy,
    Observation,
    Policy,
    PropensityModel,
    SafetySpec,
    TabularPropensity,
    UniformPolicy,
    validate_dataset,
)
from .estimators import (
    InfluenceTable,
    NuisanceModel,
    arm_scores,
    dr_value,
    empirical_covariance,
    empirical_variance,
    fit_nuisance,
    influence_table,
    ipw_value,
    policy_scores,
)
from .harness import (
    BenchmarkConfig,
    BenchmarkReport,
    MethodResult,
    emit_bounds_scatter,
    read_dataset_csv,
    run_benchmark,
    run_single,
    write_dataset_csv,
    write_gamma_grid_csv,
    write_report_csv,
    write_truth_csv,
)
from .stability import (
    SensitivityConstants,
    StabilityBudget,
    alpha_prime,
    b_asymp,
    b_finite,
    delta_star,
    eta_heuristic,
    gamma_grid,
    laplace,
    t_fn,
)
from .synthetic import (
    ThresholdPolicy,
    TruthTable,
    build_class,
    default_baseline,
    generate,
    mc_true_values,
    oracle_safe,
    true_values,
    truth_table,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ScanRecord",
    "SnplConfig",
    "SnplTrace",
    "snpl_run",
    "BaselineTrace",
    "SplitPlan",
    "bonferroni_run",
    "hcpi_run",
    "LowerBoundEntry",
    "LowerBoundTable",
    "SupTQuantile",
    "asymptotic_bounds",
    "bonferroni_normal_bounds",
    "finite_bounds",
    "normal_quantile",
    "supt_quantile",
    "ConstantPropensity",
    "Dataset",
    "Hyperparams",
    "LoggingPolicy",
    "Observation",
    "Policy",
    "PropensityModel",
    "SafetySpec",
    "TabularPropensity",
    "UniformPolicy",
    "validate_dataset",
    "InfluenceTable",
    "NuisanceModel",
    "arm_scores",
    "dr_value",
    "empirical_covariance",
    "empirical_variance",
    "fit_nuisance",
    "influence_table",
    "ipw_value",
    "policy_scores",
    "BenchmarkConfig",
    "BenchmarkReport",
    "MethodResult",
    "emit_bounds_scatter",
    "read_dataset_csv",
    "run_benchmark",
    "run_single",
    "write_dataset_csv",
    "write_gamma_grid_csv",
    "write_report_csv",
    "write_truth_csv",
    "SensitivityConstants",
    "StabilityBudget",
    "alpha_prime",
    "b_asymp",
    "b_finite",
    "delta_star",
    "eta_heuristic",
    "gamma_grid",
    "laplace",
    "t_fn",
    "ThresholdPolicy",
    "TruthTable",
    "build_class",
    "default_baseline",
    "generate",
    "mc_true_values",
    "oracle_safe",
    "true_values",
    "truth_table",
]
