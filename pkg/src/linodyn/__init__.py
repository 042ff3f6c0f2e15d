"""linodyn: identification and inference for linear ODE systems observed
on a single equally-spaced trajectory."""

from .degraded import (
    AGGREGATED,
    TIME_SCALED,
    DegradedSpec,
    aggregate,
    degrade,
    forward_params,
    g_gradient,
    g_map,
    time_scale,
)
from .errors import (
    ComplexSpectrumError,
    LinodynError,
    NearDegenerateError,
    NonFiniteError,
    NonPositiveEigenvalueError,
    NotPositiveDefiniteError,
    SingularAggregationSumError,
    SingularWindowError,
)
from .estimation import (
    EstimationResult,
    FitOptions,
    dexpm_da,
    fit,
    gradient,
    objective,
    value_and_gradient,
)
from .identifiability import (
    IdentifiabilityReport,
    ToleranceSet,
    check_identifiable,
    krylov_matrix,
    recover_exact,
)
from .inference import (
    CovarianceReport,
    InferenceOutcome,
    cr_test,
    edge_test,
    estimate_noise_variance,
    h_matrix,
    infer,
    pointwise_cis,
    sandwich,
    sensitivity,
    v_matrix,
)
from .linalg import EigenDecomp, eig_real, expm, logm_real, min_singular_value
from .model import (
    NoiseSpec,
    ObservationSet,
    SystemParams,
    pack,
    read_csv,
    simulate_observations,
    theta_index,
    theta_length,
    trajectory,
    unpack,
    write_csv,
)
from .simulation import (
    ExperimentConfig,
    MetricsRow,
    ReplicationRecord,
    preset_params,
    replication_seed,
    run_experiment,
    run_replication,
    summarize,
    true_covariance,
)
from .special import chi2_quantile, normal_cdf, normal_quantile

__version__ = "0.1.0"
