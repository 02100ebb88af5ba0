"""Truncated stochastic approximation toolkit.

Root finding from noisy observations via the Robbins-Monro recursion with
random truncations on an expanding family of compacts, closed-form limit
covariances of the normalized error, and a Monte Carlo harness that checks
the normal limit statistically.
"""

from .asymptotics import (
    CovarianceResult,
    Regime,
    StabilityError,
    asymptotic_covariance,
    check_stability,
    covariance_quadrature,
    eigh,
    lyapunov_solve,
)
from .model import (
    GainSchedule,
    Problem,
    ResetPolicy,
    RngStream,
    TruncationSequence,
)
from .problems import ProblemSpec, cubic, expectation_form, from_spec, linear_gaussian
from .solver import (
    DivergenceReport,
    IterateState,
    Trajectory,
    TruncationEvent,
    delta,
    run_plain,
    run_truncated,
    step_truncated,
    truncation_term,
)
from .verify import (
    CltReport,
    ReplicationResult,
    Tolerances,
    clt_report,
    empirical_covariance,
    ks_normal_test,
    mardia_kurtosis,
    run_replications,
    truncation_stats,
    whiten,
)

__version__ = "0.1.0"
