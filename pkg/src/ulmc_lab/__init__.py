"""Underdamped Langevin Monte Carlo with an exact Gaussian oracle and diagnostics.

Modules
-------
targets
    Potentials with declared regularity constants.
integrator
    Exact-in-noise ULMC step, chain driver and twisted coordinates.
gaussian_oracle
    Closed-form law propagation and divergences for quadratic potentials.
schedules
    Step size, friction and horizon planners.
girsanov
    Path-space change-of-measure bounds and tail validators.
divergences
    Sample-based distance diagnostics.
harness
    Config-driven experiment runner and CLI.
"""

__version__ = "0.1.0"

from .gaussian_oracle import GaussianLaw, LinearKernel  # noqa: E402
from .integrator import PhasePoint, run_chain, step_coefficients, ulmc_step  # noqa: E402
from .schedules import PlannerConstants, SchedulePlan  # noqa: E402
from .targets import RegularityInfo, Target, make_builtin, make_quadratic  # noqa: E402

__all__ = [
    "__version__",
    "GaussianLaw",
    "LinearKernel",
    "PhasePoint",
    "PlannerConstants",
    "RegularityInfo",
    "SchedulePlan",
    "Target",
    "make_builtin",
    "make_quadratic",
    "run_chain",
    "step_coefficients",
    "ulmc_step",
]
