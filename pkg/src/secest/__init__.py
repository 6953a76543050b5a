"""Secure state estimation for linear systems under sparse sensor/actuator attacks."""

from secest.errors import (
    CostLimitError,
    DimensionError,
    InadmissiblePoleError,
    PreconditionError,
    SecestError,
    UncontrollableError,
)
from secest.model import (
    AttackScenario,
    LinearSystem,
    MeasurementBlock,
    Trajectory,
    compensate,
    input_effect,
    observability_matrix,
    phi_map,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "AttackScenario",
    "CostLimitError",
    "DimensionError",
    "InadmissiblePoleError",
    "LinearSystem",
    "MeasurementBlock",
    "PreconditionError",
    "SecestError",
    "Trajectory",
    "UncontrollableError",
    "compensate",
    "input_effect",
    "observability_matrix",
    "phi_map",
    "simulate",
]
