"""Two-fidelity Gaussian-process surrogate.

The covariance between ``(x, l)`` and ``(x', l')`` is

    k = s2 * c(|x - x'| / ell) * B[l, l'],   B = [[1, r], [r, 1]]

over min-max scaled features, with separate Gaussian noise per fidelity.
``c`` is Matern-5/2 by default; the squared-exponential (``"rbf"``) is the
alternative. The rougher default keeps some posterior variance between
observations on functions with narrow peaks, where a squared-exponential
fit becomes overconfident and entropy-based scores collapse to zero.
Targets are standardized over the pooled training set; hyperparameters live
in standardized units and posterior queries are reported in original units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf

from mfbo.core import HIGH, LOW, FitError, Observation, ProblemSpec, QueryError

log = logging.getLogger(__name__)

KERNEL_FAMILIES = ("rbf", "matern52")
JITTER_START = 1e-8
JITTER_MAX = 1e-2
_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float
    lengthscale: float | np.ndarray
    fidelity_corr: float
    noise_low: float
    noise_high: float
    family: str = "rbf"

    def __post_init__(self):
        ls = np.asarray(self.lengthscale, dtype=float)
        if not (math.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not -1.0 < self.fidelity_corr < 1.0:
            raise ValueError(f"fidelity_corr must lie in (-1, 1), got {self.fidelity_corr}")
        if self.noise_low < 0 or self.noise_high < 0:
            raise ValueError("noise variances must be nonnegative")
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family '{self.family}'")

    def noise(self, level) -> float:
        return self.noise_high if level == HIGH else self.noise_low


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameter search settings.

    ``n_restarts`` counts the fixed initializations tried; the previous fit's
    optimum (when supplied to :func:`fit`) is always tried in addition.
    """

    ard: bool = False
    kernel: str = "matern52"
    n_restarts: int = 4
    max_iter: int = 200
    initial_step: float = 1.0
    warm_step: float = 0.25
    tol: float = 1e-3
    noise_floor: float = 1e-6


@dataclass(frozen=True, eq=False)
class TrainingData:
    X: np.ndarray  # scaled features, (n, d)
    levels: np.ndarray  # (n,) ints, 0 = LOW, 1 = HIGH
    y: np.ndarray  # standardized targets, (n,)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True, eq=False)
class GpModel:
    params: KernelParams
    X: np.ndarray
    levels: np.ndarray
    y: np.ndarray
    target_mean: float
    target_std: float
    feature_lo: np.ndarray
    feature_scale: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    lml: float = float("nan")
    domain: Optional[np.ndarray] = None  # raw features of the full candidate table

    @property
    def n_train(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.feature_lo.shape[0]

    def training_inputs(self) -> list[tuple[np.ndarray, int]]:
        return [(self.X[i], int(self.levels[i])) for i in range(self.n_train)]

    def noise(self, level) -> float:
        """Observation noise variance in original target units."""
        return self.params.noise(level) * self.target_std ** 2

    def scale(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise QueryError(f"query features have dimension {X.shape[1]}, model expects {self.dim}")
        return (X - self.feature_lo) / self.feature_scale

    def domain_features(self, indices) -> np.ndarray:
        if self.domain is None:
            raise QueryError("model was fitted without a candidate domain")
        return self.domain[np.asarray(indices, dtype=np.int64)]


# ---------------------------------------------------------------------------
# kernel


def _sqdist(A: np.ndarray, B: np.ndarray, lengthscale) -> np.ndarray:
    ls = np.asarray(lengthscale, dtype=float)
    A = A / ls
    B = B / ls
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


_SQRT5 = math.sqrt(5.0)


def correlation(r2: np.ndarray, family: str) -> np.ndarray:
    """Stationary correlation as a function of lengthscale-scaled squared distance."""
    if family == "rbf":
        return np.exp(-0.5 * r2)
    if family == "matern52":
        r = _SQRT5 * np.sqrt(r2)
        return (1.0 + r + r * r / 3.0) * np.exp(-r)
    raise ValueError(f"unknown kernel family '{family}'")


def kernel_matrix(params: KernelParams, Xa, la, Xb, lb) -> np.ndarray:
    """Prior covariance between scaled inputs ``(Xa, la)`` and ``(Xb, lb)``."""
    Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    la = np.asarray(la).ravel()
    lb = np.asarray(lb).ravel()
    same = la[:, None] == lb[None, :]
    B = np.where(same, 1.0, params.fidelity_corr)
    return params.signal_variance * correlation(_sqdist(Xa, Xb, params.lengthscale), params.family) * B


def _cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + jitter*I`` with jitter escalation."""
    n = K.shape[0]
    jitter = JITTER_START
    eye = np.eye(n)
    while jitter <= JITTER_MAX * (1 + 1e-9):
        L, info = dpotrf(K + jitter * eye, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            return L, jitter
        jitter *= 10.0
    raise FitError(f"kernel matrix not positive definite after jitter {JITTER_MAX:g}")


def _train_cov(params: KernelParams, data: TrainingData) -> np.ndarray:
    K = kernel_matrix(params, data.X, data.levels, data.X, data.levels)
    K[np.diag_indices_from(K)] += np.where(data.levels == HIGH, params.noise_high, params.noise_low)
    return K


def log_marginal_likelihood(params: KernelParams, data: TrainingData) -> float:
    """Gaussian log marginal likelihood of the (already standardized) targets."""
    if data.n == 0:
        return 0.0
    L, _ = _cholesky(_train_cov(params, data))
    a = solve_triangular(L, data.y, lower=True, check_finite=False)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * data.n * _LOG2PI)


# ---------------------------------------------------------------------------
# model construction


def _feature_ranges(domain: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = domain.min(axis=0)
    span = domain.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return lo, span


def condition(params: KernelParams, X_raw, levels, targets, *,
              domain: Optional[np.ndarray] = None,
              target_mean: Optional[float] = None,
              target_std: Optional[float] = None) -> GpModel:
    """Condition the GP on raw data with fixed hyperparameters.

    Features are min-max scaled using ``domain`` (defaults to the training
    inputs themselves). An empty training set gives the prior.
    """
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    levels = np.asarray(levels, dtype=np.int64).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    ref = X_raw if domain is None else np.asarray(domain, dtype=float)
    lo, span = _feature_ranges(ref)
    if target_mean is None:
        target_mean = float(targets.mean()) if targets.size else 0.0
    if target_std is None:
        target_std = float(targets.std()) if targets.size else 1.0
        if not target_std > 0:
            target_std = 1.0
    X = (X_raw - lo) / span
    y = (targets - target_mean) / target_std
    data = TrainingData(X, levels, y)
    if data.n:
        L, jitter = _cholesky(_train_cov(params, data))
        alpha = solve_triangular(L.T, solve_triangular(L, y, lower=True, check_finite=False),
                                 lower=False, check_finite=False)
        a = solve_triangular(L, y, lower=True, check_finite=False)
        lml = float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * data.n * _LOG2PI)
    else:
        L, jitter, alpha, lml = np.zeros((0, 0)), 0.0, np.zeros(0), 0.0
    return GpModel(params=params, X=X, levels=levels, y=y, target_mean=target_mean,
                   target_std=target_std, feature_lo=lo, feature_scale=span, chol=L,
                   alpha=alpha, jitter=jitter, lml=lml, domain=domain)


# ---------------------------------------------------------------------------
# hyperparameter search


NOISE_CAP = 10.0


class _Codec:
    """Map KernelParams to an unconstrained-ish vector and back."""

    def __init__(self, dim: int, ard: bool, noise_floor: float, has_low: bool,
                 family: str = "rbf"):
        self.family = family
        self.n_ls = dim if ard else 1
        self.ard = ard
        self.noise_floor = noise_floor
        self.has_low = has_low
        n = 1 + self.n_ls + 3
        lower = np.empty(n)
        upper = np.empty(n)
        lower[0], upper[0] = math.log(1e-2), math.log(1e2)
        lower[1:1 + self.n_ls], upper[1:1 + self.n_ls] = math.log(1e-3), math.log(1e2)
        lower[-3], upper[-3] = math.atanh(-0.99), math.atanh(0.999)
        # standardized units; LOW noise can exceed the pooled target variance
        lower[-2:], upper[-2:] = math.log(noise_floor), math.log(NOISE_CAP)
        self.lower, self.upper = lower, upper
        # coordinates the pattern search may move
        self.active = np.ones(n, dtype=bool)
        if not has_low:
            self.active[-3] = False
            self.active[-2] = False

    def encode(self, p: KernelParams) -> np.ndarray:
        ls = np.broadcast_to(np.asarray(p.lengthscale, dtype=float), (self.n_ls,))
        corr = min(max(p.fidelity_corr, -0.99), 0.999)
        theta = np.concatenate([[math.log(p.signal_variance)], np.log(ls),
                                [math.atanh(corr), math.log(max(p.noise_low, self.noise_floor)),
                                 math.log(max(p.noise_high, self.noise_floor))]])
        return np.clip(theta, self.lower, self.upper)

    def decode(self, theta: np.ndarray) -> KernelParams:
        ls = np.exp(theta[1:1 + self.n_ls])
        return KernelParams(
            signal_variance=float(math.exp(theta[0])),
            lengthscale=ls if self.ard else float(ls[0]),
            fidelity_corr=float(math.tanh(theta[-3])),
            noise_low=float(math.exp(theta[-2])),
            noise_high=float(math.exp(theta[-1])),
            family=self.family,
        )


class _Objective:
    """LML over the encoded vector, with the distance matrix cached."""

    def __init__(self, data: TrainingData, codec: _Codec):
        self.data = data
        self.codec = codec
        self.same = data.levels[:, None] == data.levels[None, :]
        self.is_high = data.levels == HIGH
        if codec.ard:
            diff = data.X[:, None, :] - data.X[None, :, :]
            self.sq = diff * diff  # (n, n, d)
        else:
            self.sq = _sqdist(data.X, data.X, 1.0)
        self.eye = np.eye(data.n)
        self.n_evals = 0

    def __call__(self, theta: np.ndarray) -> float:
        self.n_evals += 1
        c = self.codec
        sv = math.exp(theta[0])
        if c.ard:
            inv = np.exp(-2.0 * theta[1:1 + c.n_ls])
            r2 = self.sq @ inv
        else:
            r2 = self.sq * math.exp(-2.0 * theta[1])
        corr = math.tanh(theta[-3])
        K = sv * correlation(r2, c.family)
        if c.has_low:
            K = np.where(self.same, K, corr * K)
        K[np.diag_indices_from(K)] += np.where(self.is_high, math.exp(theta[-1]), math.exp(theta[-2]))
        jitter = JITTER_START
        while jitter <= JITTER_MAX * (1 + 1e-9):
            L, info = dpotrf(K + jitter * self.eye, lower=1, clean=1)
            if info == 0:
                break
            jitter *= 10.0
        else:
            return -math.inf
        a = solve_triangular(L, self.data.y, lower=True, check_finite=False)
        val = -0.5 * float(a @ a) - float(np.log(np.diag(L)).sum()) - 0.5 * self.data.n * _LOG2PI
        return val if math.isfinite(val) else -math.inf


def pattern_search(f, x0, lower, upper, *, step: float = 1.0, tol: float = 1e-3,
                   max_iter: int = 200, active=None) -> tuple[np.ndarray, float]:
    """Maximize ``f`` by coordinate-wise compass search inside a box.

    One iteration polls +/- ``step`` along every active coordinate, moving
    greedily on improvement; a sweep without improvement halves the step.
    Only strict improvements are accepted, so the result is never worse than
    ``x0``.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    fx = f(x)
    coords = np.flatnonzero(np.ones_like(x, dtype=bool) if active is None else active)
    for _ in range(max_iter):
        if step < tol:
            break
        improved = False
        for i in coords:
            for sign in (1.0, -1.0):
                xi = min(max(x[i] + sign * step, lower[i]), upper[i])
                if xi == x[i]:
                    continue
                trial = x.copy()
                trial[i] = xi
                ft = f(trial)
                if ft > fx:
                    x, fx, improved = trial, ft, True
                    break
        if not improved:
            step *= 0.5
    return x, fx


_INIT_LENGTHSCALE_Q = (0.2, 0.4, 0.6, 0.8)
_INIT_CORR = (0.5, 0.8, 0.95, 0.2)


def initial_params(restart: int, dim: int, ard: bool, family: str = "rbf") -> KernelParams:
    """Fixed quantile initialization number ``restart``."""
    q = _INIT_LENGTHSCALE_Q[restart % len(_INIT_LENGTHSCALE_Q)]
    ls = math.exp(math.log(0.01) + q * (math.log(1.0) - math.log(0.01)))
    return KernelParams(
        signal_variance=1.0,
        lengthscale=np.full(dim, ls) if ard else ls,
        fidelity_corr=_INIT_CORR[restart % len(_INIT_CORR)],
        noise_low=1e-4,
        noise_high=1e-4,
        family=family,
    )



def fit(observations: Sequence[Observation], problem: ProblemSpec,
        config: Optional[FitConfig] = None,
        previous: Optional[KernelParams] = None) -> GpModel:
    """Fit hyperparameters by multi-start LML maximization and condition.

    Restarts are reduced deterministically: best LML wins, ties go to the
    earliest start (fixed initializations first, then ``previous``).
    """
    config = config or FitConfig()
    if len(observations) < 2:
        raise FitError(f"need at least 2 observations, got {len(observations)}")
    if not any(o.level == HIGH for o in observations):
        raise FitError("need at least one HIGH observation")
    idx = np.array([o.candidate_index for o in observations], dtype=np.int64)
    levels = np.array([int(o.level) for o in observations], dtype=np.int64)
    targets = np.array([o.value for o in observations], dtype=float)
    domain = problem.features
    X_raw = domain[idx]
    floor = config.noise_floor
    has_low = bool(np.any(levels == LOW))

    if np.ptp(targets) == 0.0:
        ls = np.ones(problem.dim) if config.ard else 1.0
        params = KernelParams(lengthscale=ls, noise_low=floor, noise_high=floor,
                              signal_variance=1.0, fidelity_corr=0.5, family=config.kernel)
        return condition(params, X_raw, levels, targets, domain=domain)

    mean = float(targets.mean())
    std = float(targets.std())
    lo, span = _feature_ranges(domain)
    data = TrainingData((X_raw - lo) / span, levels, (targets - mean) / std)
    codec = _Codec(problem.dim, config.ard, floor, has_low, config.kernel)
    objective = _Objective(data, codec)

    starts = [(codec.encode(initial_params(r, problem.dim, config.ard, config.kernel)), config.initial_step)
              for r in range(config.n_restarts)]
    if previous is not None:
        prev = previous
        prev = replace(prev, family=config.kernel)
        if config.ard and np.ndim(prev.lengthscale) == 0:
            prev = replace(prev, lengthscale=np.full(problem.dim, prev.lengthscale))
        elif not config.ard and np.ndim(prev.lengthscale) > 0:
            prev = replace(prev, lengthscale=float(np.exp(np.mean(np.log(prev.lengthscale)))))
        starts.append((codec.encode(prev), config.warm_step))
    if not starts:
        starts.append((codec.encode(initial_params(0, problem.dim, config.ard, config.kernel)), config.initial_step))

    best_theta, best_val = None, -math.inf
    for theta0, step in starts:
        theta, val = pattern_search(objective, theta0, codec.lower, codec.upper, step=step,
                                    tol=config.tol, max_iter=config.max_iter, active=codec.active)
        if val > best_val:
            best_theta, best_val = theta, val
    if best_theta is None:
        raise FitError("no restart produced a finite log marginal likelihood")
    log.debug("fit: n=%d evals=%d lml=%.4f", data.n, objective.n_evals, best_val)
    return condition(codec.decode(best_theta), X_raw, levels, targets, domain=domain,
                     target_mean=mean, target_std=std)


# ---------------------------------------------------------------------------
# posterior queries


def _project(model: GpModel, Xs: np.ndarray, ls: np.ndarray):
    """Return ``K(train, query)`` and ``L^-1 K(train, query)`` for scaled queries."""
    Ks = kernel_matrix(model.params, model.X, model.levels, Xs, ls)
    if model.n_train == 0:
        return Ks, Ks
    return Ks, solve_triangular(model.chol, Ks, lower=True, check_finite=False)


def _levels(levels, m: int) -> np.ndarray:
    ls = np.asarray(levels, dtype=np.int64).ravel()
    if ls.size == 1 and m > 1:
        ls = np.full(m, int(ls[0]))
    if ls.size != m:
        raise QueryError(f"got {ls.size} fidelity levels for {m} query points")
    if np.any((ls != LOW) & (ls != HIGH)):
        raise QueryError("fidelity levels must be LOW (0) or HIGH (1)")
    return ls


def posterior(model: GpModel, X, levels) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at raw-feature queries, original units."""
    Xs = model.scale(X)
    ls = _levels(levels, Xs.shape[0])
    Ks, V = _project(model, Xs, ls)
    prior = np.full(Xs.shape[0], model.params.signal_variance)
    if model.n_train:
        mean = Ks.T @ model.alpha
        var = prior - (V * V).sum(0)
    else:
        mean, var = np.zeros(Xs.shape[0]), prior
    var = np.maximum(var, 0.0)
    return model.target_mean + model.target_std * mean, var * model.target_std ** 2


def cross_covariance(model: GpModel, Xa, la, Xb, lb) -> np.ndarray:
    """Posterior covariance matrix between two sets of queries, original units."""
    Xa, Xb = model.scale(Xa), model.scale(Xb)
    la, lb = _levels(la, Xa.shape[0]), _levels(lb, Xb.shape[0])
    prior = kernel_matrix(model.params, Xa, la, Xb, lb)
    if model.n_train:
        _, Va = _project(model, Xa, la)
        _, Vb = _project(model, Xb, lb)
        prior = prior - Va.T @ Vb
    return prior * model.target_std ** 2


def paired_covariance(model: GpModel, Xa, la, Xb, lb) -> np.ndarray:
    """Elementwise posterior covariance ``cov(a_i, b_i)`` for aligned query lists."""
    Xa, Xb = model.scale(Xa), model.scale(Xb)
    if Xa.shape[0] != Xb.shape[0]:
        raise QueryError("paired queries must have equal length")
    la, lb = _levels(la, Xa.shape[0]), _levels(lb, Xb.shape[0])
    d = ((Xa - Xb) / np.asarray(model.params.lengthscale)) ** 2
    B = np.where(la == lb, 1.0, model.params.fidelity_corr)
    prior = model.params.signal_variance * correlation(d.sum(1), model.params.family) * B
    if model.n_train:
        _, Va = _project(model, Xa, la)
        _, Vb = _project(model, Xb, lb)
        prior = prior - (Va * Vb).sum(0)
    return prior * model.target_std ** 2


def posterior_cov(model: GpModel, a: tuple, b: tuple) -> float:
    """Posterior covariance between two ``(features, level)`` queries."""
    (xa, la), (xb, lb) = a, b
    return float(cross_covariance(model, np.atleast_2d(xa), [la], np.atleast_2d(xb), [lb])[0, 0])
