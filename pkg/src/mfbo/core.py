"""Domain types shared across the package.

A problem is a finite table of candidates, each with a high- and a
low-fidelity objective value. Runs read observations straight from the
table, so "the optimum was found" is an exact equality test.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class MfboError(Exception):
    """Base class for all package errors."""


class ProblemError(MfboError, ValueError):
    """Invalid problem construction."""


class DataError(MfboError, ValueError):
    """Malformed dataset file."""


class FitError(MfboError, RuntimeError):
    """Surrogate fitting failed (typically a non-PD kernel matrix)."""


class QueryError(MfboError, ValueError):
    """Bad posterior query."""


class AcquisitionError(MfboError, ValueError):
    """Acquisition could not be evaluated."""


class DomainExhausted(MfboError):
    """Every (candidate, fidelity) pair has been excluded from selection."""


class Level(enum.IntEnum):
    LOW = 0
    HIGH = 1

    def __str__(self) -> str:
        return self.name


LOW = Level.LOW
HIGH = Level.HIGH


@dataclass(frozen=True)
class Fidelity:
    """A fidelity level together with its relative cost (HIGH costs exactly 1)."""

    level: Level
    cost: float

    def __post_init__(self):
        if self.level == HIGH and self.cost != 1.0:
            raise ProblemError(f"cost of HIGH fidelity must be 1.0, got {self.cost}")
        if not (0.0 < self.cost <= 1.0):
            raise ProblemError(f"cost_low must lie in (0, 1], got {self.cost}")

    @classmethod
    def high(cls) -> "Fidelity":
        return cls(HIGH, 1.0)

    @classmethod
    def low(cls, cost: float) -> "Fidelity":
        return cls(LOW, float(cost))


@dataclass(frozen=True)
class Candidate:
    index: int
    features: np.ndarray


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Finite candidate table with per-fidelity objective values.

    ``blocks`` is an optional ``(n, arity)`` integer array of building-block
    indices, required only by the evolutionary pool proposer. ``ids`` holds
    the row identifiers from tabular datasets.
    """

    features: np.ndarray
    y_high: np.ndarray
    y_low: np.ndarray
    cost_low: float
    name: str
    optimum: float
    optimum_index: int
    ids: Optional[tuple] = None
    blocks: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.y_high.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def candidates(self) -> list[Candidate]:
        return [Candidate(i, self.features[i]) for i in range(self.n)]

    def candidate_id(self, index: int) -> str:
        return str(index) if self.ids is None else self.ids[index]

    def fidelity(self, level: Level) -> Fidelity:
        return Fidelity.high() if level == HIGH else Fidelity.low(self.cost_low)

    def cost(self, level: Level) -> float:
        return 1.0 if level == HIGH else self.cost_low

    def value(self, index: int, level: Level) -> float:
        table = self.y_high if level == HIGH else self.y_low
        return float(table[index])


def make_problem(features, y_high, y_low, cost_low: float, name: str,
                 ids: Optional[Sequence[str]] = None, blocks=None) -> ProblemSpec:
    """Validate inputs and build a :class:`ProblemSpec`.

    Raises
    ------
    ProblemError
        On length mismatch, non-finite values or ``cost_low`` outside (0, 1].
        The message names the offending field.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    y_high = np.asarray(y_high, dtype=float).ravel()
    y_low = np.asarray(y_low, dtype=float).ravel()
    n = y_high.shape[0]
    if n < 2:
        raise ProblemError(f"y_high: need at least 2 candidates, got {n}")
    if y_low.shape[0] != n:
        raise ProblemError(f"y_low: length {y_low.shape[0]} != len(y_high) {n}")
    if features.ndim != 2 or features.shape[0] != n:
        raise ProblemError(f"features: expected {n} rows, got shape {features.shape}")
    for label, arr in (("features", features), ("y_high", y_high), ("y_low", y_low)):
        if not np.all(np.isfinite(arr)):
            raise ProblemError(f"{label}: contains non-finite values")
    cost_low = float(cost_low)
    if not (math.isfinite(cost_low) and 0.0 < cost_low <= 1.0):
        raise ProblemError(f"cost_low: must lie in (0, 1], got {cost_low}")
    if ids is not None:
        ids = tuple(str(i) for i in ids)
        if len(ids) != n:
            raise ProblemError(f"ids: length {len(ids)} != {n}")
        if len(set(ids)) != n:
            raise ProblemError("ids: duplicate identifiers")
    if blocks is not None:
        blocks = np.asarray(blocks)
        if blocks.ndim != 2 or blocks.shape[0] != n:
            raise ProblemError(f"blocks: expected {n} rows, got shape {blocks.shape}")
        blocks = blocks.astype(np.int64)
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    opt_idx = int(np.argmax(y_high))
    return ProblemSpec(
        features=_frozen(features),
        y_high=_frozen(y_high),
        y_low=_frozen(y_low),
        cost_low=cost_low,
        name=str(name),
        optimum=float(y_high[opt_idx]),
        optimum_index=opt_idx,
        ids=ids,
        blocks=None if blocks is None else _frozen(blocks),
    )


@dataclass(frozen=True)
class Observation:
    candidate_index: int
    fidelity: Fidelity
    value: float
    cumulative_cost: float

    @property
    def level(self) -> Level:
        return self.fidelity.level


class StopReason(str, enum.Enum):
    OPTIMUM = "optimum"
    BUDGET = "budget"
    EXHAUSTED = "exhausted"


@dataclass
class Trace:
    """Ordered history of one run.

    The seed design is treated as one batch: when the optimum is among the
    seed observations, ``reached_optimum_at`` is the full seed cost.
    """

    seed_observations: list[Observation]
    step_observations: list[Observation] = field(default_factory=list)
    budget: float = math.inf
    rng_seed: int = 0
    reached_optimum_at: Optional[float] = None
    stop_reason: Optional[StopReason] = None

    @property
    def observations(self) -> list[Observation]:
        return self.seed_observations + self.step_observations

    @property
    def seed_cost(self) -> float:
        return self.seed_observations[-1].cumulative_cost if self.seed_observations else 0.0

    @property
    def spent(self) -> float:
        obs = self.observations
        return obs[-1].cumulative_cost if obs else 0.0

    @property
    def n_steps(self) -> int:
        return len(self.step_observations)

    def ledger_total(self) -> float:
        """Total cost rebuilt from the per-observation fidelity costs."""
        return math.fsum(o.fidelity.cost for o in self.observations)

    def best_high(self) -> Optional[float]:
        vals = [o.value for o in self.observations if o.level == HIGH]
        return max(vals) if vals else None
