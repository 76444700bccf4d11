"""Step-size tuning by learning-to-learn on quadratic and least-squares tasks."""

from metastep.tasks import (
    EigenDecompositionError,
    QuadraticTask,
    RegressionTask,
    TaskDiagnostics,
    derive_seed,
    diagnose_task,
    jacobi_eigh,
    sample_quadratic_task,
    sample_regression_task,
)
from metastep.inner import (
    FreezePolicy,
    OracleUnavailableError,
    Split,
    TrajectoryConfig,
    TrajectoryResult,
    gd_ls_truncated,
    gd_quadratic_closed_form,
    gd_quadratic_iterative,
    ls_empirical_loss,
    sgd_ls_truncated,
    untruncated_gd_oracle,
)
from metastep.quad_meta import (
    MetaGDTrace,
    MetaGradReport,
    Method,
    gradient_bound,
    log_meta_grad_naive_backprop,
    log_meta_value,
    log_meta_value_grad_stable,
    meta_gd,
    optimal_eta,
    plain_meta_value_grad,
    quad_optimal_eta_bracket,
)
from metastep.ls_meta import (
    FeasibleRangeWarning,
    GeneralizationReport,
    GridScale,
    GridSpec,
    Inner,
    MetaObjectiveSpec,
    ObjectiveKind,
    empirical_meta_objective,
    evaluate_generalization,
    grid_search,
    tbt_meta_loss,
    tbv_meta_loss,
)

__version__ = "0.1.0"
