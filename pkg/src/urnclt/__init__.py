"""Multicolor urn models: simulation, exact moments, limit covariances and
Monte Carlo checks of the regime-wise central limit theorems."""

__version__ = "0.1.0"

from .blocks import BlockKind, JordanBlockSpec, SpectralSpec
from .errors import *  # noqa: F401,F403
from .limits import (
    LimitCovariance,
    critical_product_sum,
    l2_bound_curve,
    limit_cov_critical,
    limit_cov_subcritical,
    limit_covariance,
    supercritical_cross_limit,
)
from .linalg import StochasticMatrix, block_exponential, eigen_decompose, solve_lyapunov, stationary_distribution
from .modelio import load_model, parse_model
from .montecarlo import (
    EnsembleConfig,
    cross_regime_independence,
    ks_gaussian,
    martingale_convergence_check,
    run_ensemble,
    strong_law_check,
    verify,
)
from .spectrum import (
    AnAccumulator,
    Regime,
    UrnModel,
    an_product,
    classify,
    model_from_matrix,
    model_from_spectral_spec,
    normalizer,
)
from .urn import (
    UrnState,
    exact_moment_recursion,
    joint_moments,
    normalized_statistics,
    one_step_conditional_moments,
    simulate,
    step,
)
