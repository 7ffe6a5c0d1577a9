"""Numerical constructions at the gamma = 2 critical point of Liouville
quantum gravity: cutoff log-correlated fields, the derivative measure and its
Seneta-Heyde norming, derivative clocks along Brownian paths, the time-changed
critical Liouville Brownian motion, and Monte-Carlo estimators for its
semigroup, resolvent, and Green function.
"""

__version__ = "0.1.0"

from .clock import (
    SQRT_2_OVER_PI,
    BrownianPath,
    ClockPath,
    clock_derivative,
    clock_raw,
    invert_clock,
    path_max_statistic,
    seneta_heyde_clock_ratio,
    simulate_bm,
)
from .dirichlet import Rect, conformal_radius, conformal_radius_disc
from .errors import (
    CacheError,
    ClqgError,
    ConfigError,
    DomainError,
    HorizonExceededError,
    NumericError,
    ResourceCapError,
    SynthesisError,
)
from .estimators import (
    EnvelopeReport,
    SpectrumEstimate,
    bessel_envelope,
    green_apply,
    invariance_test,
    modulus_profile,
    multifractal_spectrum,
    recenter_against,
    resolvent_estimate,
    resolvent_identity_residual,
    semigroup_symmetry_test,
)
from .field import (
    FieldLadder,
    GridSpec,
    ScaleLadder,
    empirical_covariance,
    field_at,
    read_field_cache,
    sample_field_ladder,
    write_field_cache,
)
from .kernels import (
    CutoffCovariance,
    FourierProfile,
    KernelSpec,
    assumption_report,
    cutoff_covariance,
    default_fourier_profile,
    mff_green,
    sandwich_constant,
    star_scale_kernel,
)
from .lbm import LbmTrajectory, conformal_radius_clock, exit_time_gff, sample_lbm
from .measure import (
    GridMeasure,
    derivative_measure,
    measure_of_ball,
    seneta_heyde_measure,
    truncated_measure,
)
