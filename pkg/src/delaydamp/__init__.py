"""Simulation and stability certificates for second-order systems with switched delayed damping."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .modal import DelayHistory, ModalState, ModalSystem, Trace, conservative_flow, delayed_velocity, simulate, step
from .schedule import (
    FeedbackProfile,
    SwitchingSchedule,
    Tail,
    ValidationMode,
    build_schedule,
    classify,
    make_profile,
    profile_bounds,
    validate,
)

__all__ = [
    "DelayHistory",
    "FeedbackProfile",
    "ModalState",
    "ModalSystem",
    "SwitchingSchedule",
    "Tail",
    "Trace",
    "ValidationMode",
    "build_schedule",
    "classify",
    "conservative_flow",
    "delayed_velocity",
    "make_profile",
    "profile_bounds",
    "simulate",
    "step",
    "validate",
]
