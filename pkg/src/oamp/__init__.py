"""Orthogonal AMP family solvers with Gram-Schmidt orthogonalization and a
state-evolution engine for the ill-conditioned linear model y = A x + n."""

from .errors import (
    ConfigError,
    DivergenceError,
    ExperimentFailure,
    OampError,
    QuadratureError,
    UnsupportedStrategyError,
)
from .randmat import (
    SpectrumSpec,
    SvdSystem,
    apply_adjoint,
    apply_forward,
    geometric_spectrum,
    sample_haar,
)
from .model import (
    BernoulliGaussianPrior,
    ExperimentConfig,
    GsModel,
    build_system,
    gs_decompose,
    load_config,
    mse_from_gs,
    parse_config,
    sample_prior,
)
from .estimators import (
    BStrategy,
    Denoiser,
    LinearEstimator,
    OrthogonalizedEstimator,
    bg_mmse_denoise,
    bg_mmse_denoiser,
    black_box_denoiser,
    compute_b_derivative,
    compute_b_ep,
    compute_b_integral,
    compute_b_montecarlo,
    identity_denoiser,
    lmmse_le,
    optimized_le,
    orthogonalize,
    soft_threshold,
    soft_threshold_denoiser,
)
from .algorithms import (
    AlgorithmSpec,
    Trajectory,
    compute_onsager,
    run_algorithm,
    run_amp,
    run_gip_parallel,
    run_oamp_svd,
    run_oamp_w,
    spec_from_config,
)
from .state_evolution import (
    SeState,
    SeTrajectory,
    run_se,
    se_le_step,
    se_nle_step,
    se_prediction,
)
from .harness import RunResult, compare_runs, run_experiment, run_selftest

__version__ = "0.1.0"
