"""Discrete-domain multi-fidelity Bayesian optimization and benchmark harness."""

from mfbo.core import (
    HIGH,
    LOW,
    Candidate,
    Fidelity,
    Level,
    MfboError,
    Observation,
    ProblemSpec,
    Trace,
    make_problem,
)

__all__ = [
    "HIGH",
    "LOW",
    "Candidate",
    "Fidelity",
    "Level",
    "MfboError",
    "Observation",
    "ProblemSpec",
    "Trace",
    "make_problem",
]

__version__ = "0.1.0"
