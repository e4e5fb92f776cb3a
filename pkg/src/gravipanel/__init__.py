"""Panel-data gravity-model toolkit for bilateral trade flows."""

from .diagnostics import TestResult, chi2_survival, hausman_test, robust_covariance
from .errors import ConfigError, DataError, NumericalError
from .estimators import (
    EstimationResult,
    GmmSpec,
    VarianceComponents,
    fixed_effects,
    iv_gmm,
    ols_solve,
    pooled_ols,
    random_effects,
    significance_stars,
)
from .panel import (
    EntityId,
    ModelSpec,
    PanelDataset,
    RegressionProblem,
    RegressorSpec,
    Transform,
    TransformSpec,
    apply_transform,
    build_panel,
    demean_within,
    design_matrix,
    quasi_demean,
)
from .pipeline import run_pipeline
from .report import (
    render_coefficient_table,
    render_hausman_block,
    render_unitroot_table,
)
from .synth import DgpConfig, generate_endogenous_panel, generate_gravity_panel
from .unitroot import (
    AdfResult,
    FisherResult,
    IpsResult,
    adf_p_value,
    adf_regression,
    fisher_adf_test,
    ips_test,
)

__version__ = "0.1.0"

__all__ = [
    "AdfResult",
    "ConfigError",
    "DataError",
    "DgpConfig",
    "EntityId",
    "EstimationResult",
    "FisherResult",
    "GmmSpec",
    "IpsResult",
    "ModelSpec",
    "NumericalError",
    "PanelDataset",
    "RegressionProblem",
    "RegressorSpec",
    "TestResult",
    "Transform",
    "TransformSpec",
    "VarianceComponents",
    "adf_p_value",
    "adf_regression",
    "apply_transform",
    "build_panel",
    "chi2_survival",
    "demean_within",
    "design_matrix",
    "fisher_adf_test",
    "fixed_effects",
    "generate_endogenous_panel",
    "generate_gravity_panel",
    "hausman_test",
    "ips_test",
    "iv_gmm",
    "ols_solve",
    "pooled_ols",
    "quasi_demean",
    "random_effects",
    "render_coefficient_table",
    "render_hausman_block",
    "render_unitroot_table",
    "robust_covariance",
    "run_pipeline",
    "significance_stars",
]
