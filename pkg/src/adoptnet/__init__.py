"""Coupled adoption-opinion dynamics, stability certificates and budgeted nudging."""

from .errors import (
    AdoptNetError,
    DimensionError,
    InfeasibleControlError,
    NonConvergenceError,
    PreconditionError,
)
from .kernels import BACKEND
from .model import (
    ControlPolicy,
    ModelParams,
    NetworkLayer,
    Scenario,
    SystemState,
    Trajectory,
    ValidationReport,
    aggregate_adoption,
    make_scenario,
    simulate,
    step,
    validate_scenario,
)

__version__ = "0.1.0"
