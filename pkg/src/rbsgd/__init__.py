"""Relaxed-barrier stochastic gradient descent for linearly constrained
strongly convex finite-sum minimization.

Subpackages follow the pipeline: ``barrier`` (scalar barrier kernel),
``problem`` (objective + constraints + benchmark generator), ``schedules``
(step-size and barrier-adaptation sequences), ``solvers`` (stochastic and
deterministic descent loops), ``theory`` (convergence-bound constants and
verifiers), ``bench`` (ensemble/timing harness and CSV persistence), and
``cli`` (command-line entry point).
"""

from rbsgd.barrier import b_curvature, b_eval, b_slope, b_value, c_slope, c_slope_max_i2
from rbsgd.problem import (
    AffineConstraintSet,
    FiniteSumObjective,
    GenerationError,
    Problem,
    generate_ellipsoid_problem,
    load_problem,
    save_problem,
)
from rbsgd.schedules import BarrierSchedule, PowerLawSchedule, ValidityReport, validate

__version__ = "0.1.0"
