"""Jump-coalescence interacting particle systems on the continuum.

Tools for one model family from three complementary directions: exact
event-driven simulation of finite configurations, the truncated correlation
hierarchy with its dual quasi-observable evolution and time-ordered series
bounds, and finite-volume Fokker-Planck densities whose correlation
functions must, and do, agree with the hierarchy.
"""

from .errors import (
    BlowUpError,
    CombinatorialBlowupError,
    ConfigError,
    HorizonExceededError,
    InvalidScaleError,
    JumpcoalError,
    KernelIntegrationError,
    TruncationError,
    UnsupportedSamplingError,
)
from .kernels import (
    GaussianParams,
    KernelConstants,
    KernelSet,
    ScaleParams,
    coalescence_rate,
    coalescence_target_law,
    custom_kernels,
    gaussian_kernels,
    gaussian_taper,
    horizon,
    jump_weight_integral,
    kernel_constants,
    pair_integral_diagnostics,
    scale_growth_rate,
    total_coalescence_rate,
)
from .configspace import (
    GridSpec,
    SymmetricGridFamily,
    bogoliubov,
    exponential_vector,
    factorial_weighted_l1_norm,
    k_inverse,
    k_inverse_family,
    k_transform,
    k_transform_family,
    load_family,
    lp_integral,
    minlos1_check,
    minlos2_check,
    pairing,
    random_family,
    sample_k_positive_cone,
    save_family,
    snap_to_grid,
    symmetrize,
    taper_weighted_sup_norm,
    weighted_l1_norm,
    weighted_sup_norm,
)
from .hierarchy import (
    DysonSpec,
    TruncationSpec,
    cluster_expansion,
    correlation_generator,
    dyson_evolve,
    dyson_evolve_dual,
    quasi_observable_generator,
    rk4_evolve,
    series_tail_bound,
    truncation_bound,
    verify_operator_bounds,
)
from .fokker_planck import (
    LocalSpec,
    consistency_check,
    consistency_residuals,
    count_marginal,
    density_generator,
    density_to_correlation,
    integrate_fp,
    loss_rate_split,
    observable_generator,
    poisson_density,
    project_density,
    restrict_correlation,
)
from .kmc import (
    CorrelationEstimate,
    EnsembleSpec,
    Event,
    InitialState,
    SimState,
    count_distribution,
    estimate_correlations,
    run_ensemble,
    run_trajectory,
    sample_poisson_configuration,
    step,
    total_rates,
)
from .config import (
    RunConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    default_config,
    load_config,
    save_config,
)
from .validate import CHECK_NAMES, CheckResult, ValidationReport, run_validation

__version__ = "0.1.0"
