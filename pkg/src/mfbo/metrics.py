"""Run-level metrics: budget to optimum, Relative Improvement, regret, CRHF."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mfbo.core import HIGH, MfboError, Trace

DEFAULT_CAP = 60.0


@dataclass(frozen=True)
class RunSummary:
    budget_to_optimum: float
    regret_series: list  # (cumulative_cost, simple regret)
    crhf_series: list  # (interval, term)
    crhf_total: float


def budget_to_optimum(trace: Trace, cap: float = DEFAULT_CAP) -> float:
    """Budget spent when the optimum was first observed at HIGH, else ``cap``."""
    return cap if trace.reached_optimum_at is None else float(trace.reached_optimum_at)


def relative_improvement(mf_scores, sf_baseline: float) -> float:
    if not sf_baseline > 0:
        raise ValueError(f"sf_baseline must be positive, got {sf_baseline}")
    mf_scores = list(mf_scores)
    if not mf_scores:
        raise ValueError("need at least one multi-fidelity score")
    return float(np.mean(mf_scores)) / float(sf_baseline)


def best_so_far(trace: Trace) -> list[tuple[float, float]]:
    """(cumulative_cost, best HIGH value so far) after every observation.

    Entries start at the first HIGH observation.
    """
    out, best = [], -math.inf
    for o in trace.observations:
        if o.level == HIGH:
            best = max(best, o.value)
        if best > -math.inf:
            out.append((o.cumulative_cost, best))
    return out


def regret_series(trace: Trace, optimum: float) -> list[tuple[float, float]]:
    return [(c, optimum - b) for c, b in best_so_far(trace)]


def crhf(trace: Trace, optimum: float) -> tuple[list[tuple[int, float]], float]:
    """Cumulative regret per high-fidelity evaluation.

    Interval 0 is the seed design, interval ``i`` the ``i``-th acquisition
    step. Each term is the regret of the most recent HIGH observation at or
    before the interval, divided by the number of HIGH observations so far.
    """
    groups = [trace.seed_observations] + [[o] for o in trace.step_observations]
    terms, last, n_high = [], None, 0
    for i, group in enumerate(groups):
        for o in group:
            if o.level == HIGH:
                last, n_high = o.value, n_high + 1
        if last is None:
            raise MfboError(f"no HIGH observation at or before interval {i}")
        terms.append((i, (optimum - last) / n_high))
    return terms, math.fsum(t for _, t in terms)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size or a.size < 2:
        raise ValueError("need two vectors of equal length >= 2")
    da, db = a - a.mean(), b - b.mean()
    na, nb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if na == 0 or nb == 0:
        raise ValueError("zero variance: correlation undefined")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def summarize(trace: Trace, optimum: float, cap: float = DEFAULT_CAP) -> RunSummary:
    series, total = crhf(trace, optimum)
    return RunSummary(budget_to_optimum(trace, cap), regret_series(trace, optimum), series, total)
