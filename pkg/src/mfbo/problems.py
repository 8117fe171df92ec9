"""Benchmark problem constructors.

Synthetic problems are evaluated onto finite grids when they are built.
Tabular problems come from CSV files with the header

    id, f_0, ..., f_{d-1}, y_high, y_low [, E_S1, IP, f_osc_S1] [, b_0, ..., b_{k-1}]

``make_cof_standin`` and ``make_oligomer_standin`` generate seeded tables with
the same shape as the chemistry datasets for use when those files are not
available locally.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mfbo.core import DataError, ProblemError, ProblemSpec, make_problem


@dataclass(frozen=True)
class NoiseSpec:
    target_corr: float
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.target_corr <= 1.0):
            raise ProblemError(f"target_corr must lie in (0, 1], got {self.target_corr}")


@dataclass(frozen=True)
class MoleculeRecord:
    id: str
    features: np.ndarray
    E_S1: float
    IP: float
    f_osc_S1: float

    def __post_init__(self):
        if not self.f_osc_S1 > 0:
            raise ProblemError(f"{self.id}: f_osc_S1 must be positive, got {self.f_osc_S1}")

    @property
    def target(self) -> float:
        return f_comb(self.E_S1, self.IP, self.f_osc_S1)


def noise_scale(sigma_f: float, target_corr: float) -> float:
    """Noise std that gives expected Pearson correlation ``target_corr``."""
    return sigma_f * math.sqrt(1.0 / target_corr ** 2 - 1.0)


def make_low_fidelity(y_high, noise: NoiseSpec) -> np.ndarray:
    """Add seeded Gaussian noise to ``y_high`` to reach ``noise.target_corr``.

    The noise std is ``sigma_f * sqrt(1/rho^2 - 1)`` with ``sigma_f`` the
    population std of ``y_high``.
    """
    y_high = np.asarray(y_high, dtype=float)
    sigma_f = float(y_high.std())
    if not sigma_f > 0:
        raise ProblemError("y_high has zero variance; correlation is undefined")
    sigma_n = noise_scale(sigma_f, noise.target_corr)
    if sigma_n == 0.0:
        return y_high.copy()
    rng = np.random.default_rng(noise.rng_seed)
    return y_high + rng.normal(0.0, sigma_n, size=y_high.shape)


# ---------------------------------------------------------------------------
# RKHS function

# Weighted sum of Gaussian RBF bumps in the style of the bo-benchmark-rkhs
# function (Assael et al.): a smooth component (width 0.1) on the left of
# [0, 1] and a narrow, rugged component (width 0.01) near x = 0.9.
# Provenance: these constants are a reconstruction with the same structure,
# not a copy of the reference implementation's values.
_RKHS_WIDE_CENTERS = np.array([0.1, 0.15, 0.08, 0.3, 0.4])
_RKHS_WIDE_WEIGHTS = np.array([2.0, 3.0, -1.0, 1.0, -1.0])
_RKHS_WIDE_WIDTH = 0.1
_RKHS_NARROW_CENTERS = np.array([0.8, 0.85, 0.9, 0.95, 0.92, 0.74, 0.91, 0.89, 0.79,
                                 0.88, 0.86, 0.96, 0.99, 0.82])
_RKHS_NARROW_WEIGHTS = np.array([3.0, 4.0, 2.0, 1.0, -1.0, 2.0, 2.0, 3.0, 3.0,
                                 4.0, 1.0, 2.0, 1.0, 1.0])
_RKHS_NARROW_WIDTH = 0.01

RKHS_N = 500


def rkhs(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()[:, None]
    wide = np.exp(-0.5 * ((x - _RKHS_WIDE_CENTERS) / _RKHS_WIDE_WIDTH) ** 2) @ _RKHS_WIDE_WEIGHTS
    narrow = np.exp(-0.5 * ((x - _RKHS_NARROW_CENTERS) / _RKHS_NARROW_WIDTH) ** 2) @ _RKHS_NARROW_WEIGHTS
    return wide + narrow


def rkhs_problem(cost_low: float = 0.1, noise: Optional[NoiseSpec] = None) -> ProblemSpec:
    noise = noise or NoiseSpec(0.88, 0)
    x = np.arange(RKHS_N) / (RKHS_N - 1)
    y_high = rkhs(x)
    return make_problem(x[:, None], y_high, make_low_fidelity(y_high, noise), cost_low, "rkhs")


# ---------------------------------------------------------------------------
# Hartmann-6

HARTMANN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN6_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
HARTMANN6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN6_ARGMAX = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
HARTMANN6_MAX = 3.32237


def neg_hartmann6(X) -> np.ndarray:
    """Negated Hartmann-6, maximized at ``HARTMANN6_ARGMAX`` with value ~3.32237."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    inner = (HARTMANN6_A[None, :, :] * (X[:, None, :] - HARTMANN6_P[None, :, :]) ** 2).sum(-1)
    return np.exp(-inner) @ HARTMANN6_ALPHA


def hartmann6_problem(n_points: int = 500, cost_low: float = 0.1,
                      noise: Optional[NoiseSpec] = None, rng_seed: int = 0) -> ProblemSpec:
    """``n_points`` candidates: ``n_points - 1`` uniform draws plus the known maximizer last."""
    if n_points < 2:
        raise ProblemError(f"n_points must be >= 2, got {n_points}")
    noise = noise or NoiseSpec(0.76, 0)
    rng = np.random.default_rng(rng_seed)
    X = np.vstack([rng.uniform(size=(n_points - 1, 6)), HARTMANN6_ARGMAX])
    y_high = neg_hartmann6(X)
    return make_problem(X, y_high, make_low_fidelity(y_high, noise), cost_low, "hartmann6")


# ---------------------------------------------------------------------------
# combined target for acceptor molecules


def f_comb(E_S1, IP, f_osc_S1):
    """``-|E_S1 - 3| - |IP - 5.5| + ln(f_osc_S1)``; scalar or elementwise."""
    f = np.asarray(f_osc_S1, dtype=float)
    if np.any(~(f > 0)):
        raise ProblemError("f_osc_S1 must be positive")
    out = -np.abs(np.asarray(E_S1, dtype=float) - 3.0) - np.abs(np.asarray(IP, dtype=float) - 5.5) + np.log(f)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# tabular datasets

_FEATURE = re.compile(r"^f_(\d+)$")
_BLOCK = re.compile(r"^b_(\d+)$")
PROPERTY_COLUMNS = ("E_S1", "IP", "f_osc_S1")


def _indexed_columns(header: list[str], pattern: re.Pattern, what: str) -> list[int]:
    found = {}
    for pos, name in enumerate(header):
        m = pattern.match(name)
        if m:
            found[int(m.group(1))] = pos
    if sorted(found) != list(range(len(found))):
        raise DataError(f"{what} columns must be numbered 0..k-1 without gaps, got {sorted(found)}")
    return [found[k] for k in range(len(found))]


def load_tabular_problem(path, cost_low: float, recompute_target: bool = False,
                         name: Optional[str] = None) -> ProblemSpec:
    """Load a candidate table from CSV.

    With ``recompute_target`` the ``y_high`` column is replaced by
    :func:`f_comb` of the ``E_S1, IP, f_osc_S1`` columns.

    Raises
    ------
    DataError
        Missing columns, ragged rows or non-finite entries; the message
        carries the file line number.
    """
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in ("id", "y_high", "y_low"):
            if col not in header:
                raise DataError(f"{path}: missing column '{col}'")
        fcols = _indexed_columns(header, _FEATURE, "feature")
        if not fcols:
            raise DataError(f"{path}: no feature columns f_0 ... f_(d-1)")
        bcols = _indexed_columns(header, _BLOCK, "block")
        if recompute_target:
            missing = [c for c in PROPERTY_COLUMNS if c not in header]
            if missing:
                raise DataError(f"{path}: --recompute-target needs columns {missing}")
        pcols = [header.index(c) for c in PROPERTY_COLUMNS] if recompute_target else []
        i_id, i_hi, i_lo = header.index("id"), header.index("y_high"), header.index("y_low")
        numeric = fcols + [i_hi, i_lo] + pcols

        ids, rows, blocks = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(row[c]) for c in numeric]
            except ValueError as e:
                raise DataError(f"{path}:{line_no}: {e}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{line_no}: non-finite value")
            if bcols:
                try:
                    blocks.append([int(row[c]) for c in bcols])
                except ValueError as e:
                    raise DataError(f"{path}:{line_no}: block index: {e}") from None
            ids.append(row[i_id].strip())
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(rows)}")
    table = np.array(rows)
    d = len(fcols)
    features, y_high, y_low = table[:, :d], table[:, d], table[:, d + 1]
    if recompute_target:
        try:
            y_high = f_comb(table[:, d + 2], table[:, d + 3], table[:, d + 4])
        except ProblemError as e:
            raise DataError(f"{path}: {e}") from None
    try:
        return make_problem(features, y_high, y_low, cost_low,
                            name or os.path.splitext(os.path.basename(path))[0],
                            ids=ids, blocks=np.array(blocks) if bcols else None)
    except ProblemError as e:
        raise DataError(f"{path}: {e}") from None


def write_tabular(problem: ProblemSpec, path, properties: Optional[dict] = None) -> None:
    """Write ``problem`` in the tabular CSV schema (inverse of the loader)."""
    d = problem.dim
    header = ["id"] + [f"f_{k}" for k in range(d)] + ["y_high", "y_low"]
    props = properties or {}
    header += [c for c in PROPERTY_COLUMNS if c in props]
    arity = 0 if problem.blocks is None else problem.blocks.shape[1]
    header += [f"b_{k}" for k in range(arity)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(problem.n):
            row = [problem.candidate_id(i)] + [repr(float(v)) for v in problem.features[i]]
            row += [repr(float(problem.y_high[i])), repr(float(problem.y_low[i]))]
            row += [repr(float(props[c][i])) for c in PROPERTY_COLUMNS if c in props]
            if arity:
                row += [str(int(b)) for b in problem.blocks[i]]
            w.writerow(row)


# ---------------------------------------------------------------------------
# stand-in tables

COF_N, COF_DIM = 608, 14
OLIGOMER_ARITY, OLIGOMER_FRAGMENTS, OLIGOMER_EMBED = 6, 306, 12
# per-position option counts; their product is the table size 44928
OLIGOMER_OPTIONS = (4, 4, 6, 6, 6, 13)


def make_cof_standin(cost_low: float = 0.2, target_corr: float = 0.97,
                     rng_seed: int = 0) -> ProblemSpec:
    """Porous-framework-shaped table: 4 structural + 10 compositional features.

    The target is a right-skewed selectivity built from a smooth function of
    the features.
    """
    rng = np.random.default_rng(rng_seed)
    structural = rng.uniform(size=(COF_N, 4))
    composition = rng.dirichlet(np.full(10, 0.5), size=COF_N)
    X = np.hstack([structural, composition])
    w = rng.normal(size=10)
    log_sel = (1.6 * np.exp(-((structural[:, 0] - 0.3) / 0.15) ** 2)
               + 0.8 * structural[:, 1] - 0.5 * structural[:, 2] * structural[:, 3]
               + composition @ w)
    y_high = np.exp(log_sel)
    y_low = make_low_fidelity(y_high, NoiseSpec(target_corr, rng_seed + 1))
    return make_problem(X, y_high, y_low, cost_low, "cof",
                        ids=[f"cof_{i:04d}" for i in range(COF_N)])


def oligomer_standin_records(rng_seed: int = 0):
    """Block tuples, features and (E_S1, IP, f_osc_S1) for the oligomer stand-in."""
    rng = np.random.default_rng(rng_seed)
    embed = rng.normal(size=(OLIGOMER_FRAGMENTS, OLIGOMER_EMBED))
    alphabets = [np.sort(rng.choice(OLIGOMER_FRAGMENTS, size=k, replace=False))
                 for k in OLIGOMER_OPTIONS]
    blocks = np.array(list(itertools.product(*alphabets)), dtype=np.int64)
    features = embed[blocks].reshape(blocks.shape[0], -1)
    pos_w = np.linspace(1.0, 0.5, OLIGOMER_ARITY)
    mean_embed = np.einsum("p,npk->nk", pos_w, embed[blocks]) / pos_w.sum()
    u = rng.normal(size=(3, OLIGOMER_EMBED)) / math.sqrt(OLIGOMER_EMBED)
    E_S1 = 3.0 + 1.5 * np.tanh(mean_embed @ u[0])
    IP = 5.5 + 1.2 * np.tanh(mean_embed @ u[1] + 0.3)
    f_osc = np.exp(np.clip(1.5 * (mean_embed @ u[2]) - 1.0, -30.0, 5.0))
    return blocks, features, E_S1, IP, f_osc


def make_oligomer_standin(cost_low: float = 0.1, target_corr: float = 0.91,
                          rng_seed: int = 0) -> tuple[ProblemSpec, dict]:
    """Six-block oligomer table with 72 features and block columns.

    Returns the problem and the property columns so that it can be written
    out with :func:`write_tabular`.
    """
    blocks, features, E_S1, IP, f_osc = oligomer_standin_records(rng_seed)
    y_high = f_comb(E_S1, IP, f_osc)
    y_low = make_low_fidelity(y_high, NoiseSpec(target_corr, rng_seed + 1))
    problem = make_problem(features, y_high, y_low, cost_low, "oligomer",
                           ids=[f"mol_{i:05d}" for i in range(blocks.shape[0])], blocks=blocks)
    return problem, {"E_S1": E_S1, "IP": IP, "f_osc_S1": f_osc}
