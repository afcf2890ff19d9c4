"""Covariate-adjusted regression discontinuity estimation and inference.

Sharp-design local polynomial estimators with additive covariate
adjustment, robust bias-corrected confidence intervals under
heteroskedasticity or clustering, data-driven MSE- and CER-optimal
bandwidth selection, covariate balance diagnostics, and a deterministic
Monte Carlo harness.
"""

__version__ = "0.1.0"

from .bandwidth import BandwidthSelection, cer_bandwidth, mse_bandwidth, select
from .data import Dataset, DiagnosticsReport, load_csv, validate, write_csv
from .errors import (
    ConfigError,
    DegenerateVarianceError,
    EmptyDataError,
    EstimationError,
    InsufficientDataError,
    NearZeroBiasError,
    OneSidedError,
    ParseError,
    RankDeficiencyError,
    RdcovError,
    SchemaError,
)
from .estimators import (
    EstimatorKind,
    PointEstimate,
    covariate_rd_effects,
    estimate,
)
from .inference import (
    BiasCorrectedEstimate,
    BiasEstimate,
    InferenceResult,
    VarianceEstimate,
    VarianceMethod,
    bias_corrected_estimate,
    bias_estimate,
    efficiency_ratio,
    placebo_tests,
    robust_ci,
    variance_bc,
)
from .locfit import (
    Kernel,
    LinearWeights,
    LocalFitSpec,
    Side,
    fit_weights,
    joint_fit,
    kernel_weight,
)
from .simulate import (
    DgpSpec,
    StudyReport,
    draw,
    get_preset,
    list_presets,
    plim_check,
    run_study,
)

__all__ = [
    "BandwidthSelection",
    "BiasCorrectedEstimate",
    "BiasEstimate",
    "ConfigError",
    "Dataset",
    "DegenerateVarianceError",
    "DgpSpec",
    "DiagnosticsReport",
    "EmptyDataError",
    "EstimationError",
    "EstimatorKind",
    "InferenceResult",
    "InsufficientDataError",
    "Kernel",
    "LinearWeights",
    "LocalFitSpec",
    "NearZeroBiasError",
    "OneSidedError",
    "ParseError",
    "PointEstimate",
    "RankDeficiencyError",
    "RdcovError",
    "SchemaError",
    "Side",
    "StudyReport",
    "VarianceEstimate",
    "VarianceMethod",
    "bias_corrected_estimate",
    "bias_estimate",
    "cer_bandwidth",
    "covariate_rd_effects",
    "draw",
    "efficiency_ratio",
    "estimate",
    "fit_weights",
    "get_preset",
    "joint_fit",
    "kernel_weight",
    "list_presets",
    "load_csv",
    "mse_bandwidth",
    "placebo_tests",
    "plim_check",
    "robust_ci",
    "run_study",
    "select",
    "validate",
    "variance_bc",
    "write_csv",
]
