"""Acquisition functions over (candidate, fidelity) pairs and argmax selection.

Multi-fidelity scores are per unit cost: the information or variance
reduction of a pair is divided by its fidelity cost here and nowhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.special import log_ndtr, ndtr

from mfbo.core import HIGH, LOW, AcquisitionError, DomainExhausted, Level
from mfbo.surrogate import GpModel, paired_covariance, posterior

SIGMA_EPS = 1e-12
N_QUAD = 32
_SQRT2PI = math.sqrt(2.0 * math.pi)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(N_QUAD)
_GH_WEIGHTS = _GH_WEIGHTS / _SQRT2PI  # expectation under N(0, 1)


@dataclass(frozen=True, eq=False)
class AcqScores:
    """Scores for an ordered list of distinct (candidate_index, level) pairs."""

    indices: np.ndarray
    levels: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        if not (self.indices.shape == self.levels.shape == self.scores.shape):
            raise AcquisitionError("indices, levels and scores must have equal length")

    def __len__(self) -> int:
        return self.scores.shape[0]

    def pairs(self) -> list[tuple[int, Level]]:
        return [(int(i), Level(int(l))) for i, l in zip(self.indices, self.levels)]

    def same_pairs(self, other: "AcqScores") -> bool:
        return (np.array_equal(self.indices, other.indices)
                and np.array_equal(self.levels, other.levels))

    def as_dict(self) -> dict:
        return {p: float(s) for p, s in zip(self.pairs(), self.scores)}


def _pool(pool) -> np.ndarray:
    pool = np.asarray(pool, dtype=np.int64).ravel()
    if pool.size == 0:
        raise AcquisitionError("empty candidate pool")
    return pool


def _mf_pairs(pool: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # HIGH block first, then LOW block, both in pool order
    idx = np.concatenate([pool, pool])
    lev = np.concatenate([np.full(pool.size, int(HIGH)), np.full(pool.size, int(LOW))])
    return idx, lev


def expected_improvement(mu, sigma, incumbent: float) -> np.ndarray:
    """Closed-form EI for maximization; ``max(mu - incumbent, 0)`` where sigma ~ 0."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    diff = mu - incumbent
    safe = np.where(sigma < SIGMA_EPS, 1.0, sigma)
    g = diff / safe
    ei = safe * (g * ndtr(g) + np.exp(-0.5 * g * g) / _SQRT2PI)
    ei = np.where(sigma < SIGMA_EPS, np.maximum(diff, 0.0), ei)
    return np.maximum(ei, 0.0)


def sf_ei(model: GpModel, pool, incumbent: float) -> AcqScores:
    pool = _pool(pool)
    mu, var = posterior(model, model.domain_features(pool), HIGH)
    ei = expected_improvement(mu, np.sqrt(var), incumbent)
    return AcqScores(pool.copy(), np.full(pool.size, int(HIGH)), ei)


# ---------------------------------------------------------------------------
# max-value entropy search


def gumbel_fit(mu: np.ndarray, sigma: np.ndarray,
               quantiles=(0.25, 0.5, 0.75)) -> tuple[float, float]:
    """Fit Gumbel(location, scale) to the CDF of ``max_i N(mu_i, sigma_i^2)``.

    The CDF ``prod_i Phi((y - mu_i)/sigma_i)`` is inverted at the three
    quantiles by bisection; the outer two give the scale, the median the
    location.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.maximum(np.asarray(sigma, dtype=float), SIGMA_EPS)
    top = float(mu.max())
    spread = float(sigma.max())
    lo = np.full(len(quantiles), top - 10.0 * spread - 1e-9)
    hi = np.full(len(quantiles), float((mu + 10.0 * sigma).max()) + 1e-9)
    target = np.log(np.asarray(quantiles, dtype=float))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        logcdf = log_ndtr((mid[:, None] - mu[None, :]) / sigma[None, :]).sum(1)
        below = logcdf < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    q1, q2, q3 = 0.5 * (lo + hi)
    p1, _, p3 = quantiles
    scale = (q3 - q1) / (math.log(-math.log(p1)) - math.log(-math.log(p3)))
    scale = max(scale, SIGMA_EPS * max(1.0, abs(top)))
    loc = q2 + scale * math.log(math.log(2.0))
    return loc, scale


def sample_max_values(model: GpModel, pool: np.ndarray, incumbent: float,
                      rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Draw approximate samples of the HIGH-fidelity maximum over ``pool``."""
    mu, var = posterior(model, model.domain_features(pool), HIGH)
    loc, scale = gumbel_fit(mu, np.sqrt(var))
    u = rng.uniform(size=n_samples)
    fstar = loc - scale * np.log(-np.log(u))
    # the maximum cannot lie below the best observed value
    floor = incumbent + 5.0 * math.sqrt(model.noise(HIGH))
    return np.maximum(fstar, floor)


def mes_gain_high(mu, sigma, fstar) -> np.ndarray:
    """Information gain about f* from a noiseless HIGH observation.

    Mean over samples of ``g phi(g) / (2 Phi(g)) - log Phi(g)``,
    ``g = (f* - mu) / sigma``; zero where sigma vanishes.
    """
    mu = np.asarray(mu, dtype=float)[:, None]
    sigma = np.asarray(sigma, dtype=float)[:, None]
    fstar = np.asarray(fstar, dtype=float)[None, :]
    safe = np.where(sigma < SIGMA_EPS, 1.0, sigma)
    g = (fstar - mu) / safe
    log_cdf = log_ndtr(g)
    ratio = np.exp(-0.5 * g * g - _HALF_LOG_2PI - log_cdf)  # phi / Phi
    gain = (0.5 * g * ratio - log_cdf).mean(1)
    gain = np.where(sigma[:, 0] < SIGMA_EPS, 0.0, gain)
    return np.maximum(gain, 0.0)


def mes_gain_low(mu_low, var_low, mu_high, var_high, cov, fstar) -> np.ndarray:
    """Information gain about f* from a LOW observation, by quadrature.

    With ``y ~ N(mu_L, s_L^2)`` jointly Gaussian with ``f_H``, conditioning on
    ``f_H <= f*`` reweights the density of ``y`` by
    ``w(z) = Phi(a(z)) / Phi(g)``, ``z = (y - mu_L)/s_L``. Then

        I = H[y] - H[y | f_H <= f*] = E_N[w log w] - E_N[w (z^2 - 1)] / 2

    and both expectations are taken with Gauss-Hermite nodes.
    """
    mu_low = np.asarray(mu_low, dtype=float)[:, None, None]
    s_low = np.sqrt(np.maximum(np.asarray(var_low, dtype=float), 0.0))[:, None, None]
    mu_high = np.asarray(mu_high, dtype=float)[:, None, None]
    var_high = np.maximum(np.asarray(var_high, dtype=float), 0.0)[:, None, None]
    cov = np.asarray(cov, dtype=float)[:, None, None]
    fstar = np.asarray(fstar, dtype=float)[None, :, None]
    z = _GH_NODES[None, None, :]

    degenerate = (s_low[:, 0, 0] < SIGMA_EPS) | (var_high[:, 0, 0] < SIGMA_EPS ** 2)
    s_low_safe = np.where(s_low < SIGMA_EPS, 1.0, s_low)
    s_high = np.sqrt(np.where(var_high < SIGMA_EPS ** 2, 1.0, var_high))
    beta = cov / s_low_safe  # cov(f_H, z)
    cond_var = np.maximum(s_high ** 2 - beta ** 2, (SIGMA_EPS * s_high) ** 2)
    g = (fstar - mu_high) / s_high
    a = (fstar - mu_high - beta * z) / np.sqrt(cond_var)
    log_w = log_ndtr(a) - log_ndtr(g)
    w = np.exp(log_w)
    integrand = w * log_w - 0.5 * w * (z * z - 1.0)
    gain = (integrand * _GH_WEIGHTS).sum(-1).mean(1)
    gain = np.where(degenerate, 0.0, gain)
    return np.maximum(np.nan_to_num(gain, nan=0.0), 0.0)


def mf_mes(model: GpModel, pool, cost_low: float, rng_seed: int = 0, n_fstar: int = 16,
           incumbent: Optional[float] = None) -> AcqScores:
    """Multi-fidelity max-value entropy search, per unit cost."""
    pool = _pool(pool)
    if not np.any(model.levels == HIGH):
        raise AcquisitionError("MF-MES needs HIGH training data to sample f*")
    if incumbent is None:
        y_high = model.target_mean + model.target_std * model.y[model.levels == HIGH]
        incumbent = float(y_high.max())
    rng = np.random.default_rng(rng_seed)
    fstar = sample_max_values(model, pool, incumbent, rng, n_fstar)
    X = model.domain_features(pool)
    mu_h, var_h = posterior(model, X, HIGH)
    mu_l, var_l = posterior(model, X, LOW)
    cov_lh = paired_covariance(model, X, LOW, X, HIGH)
    gain_h = mes_gain_high(mu_h, np.sqrt(var_h), fstar)
    gain_l = mes_gain_low(mu_l, var_l + model.noise(LOW), mu_h, var_h, cov_lh, fstar)
    idx, lev = _mf_pairs(pool)
    return AcqScores(idx, lev, np.concatenate([gain_h / 1.0, gain_l / cost_low]))


# ---------------------------------------------------------------------------
# targeted variance reduction


def mf_tvr(model: GpModel, pool, cost_low: float, incumbent: float) -> AcqScores:
    """Variance reduction at the EI-optimal candidate, scaled by its EI, per unit cost.

    Observing ``y_m(x)`` reduces the HIGH variance at the target ``x_t`` by
    ``cov(f_H(x_t), f_m(x))^2 / (var(f_m(x)) + noise_m)``.
    """
    pool = _pool(pool)
    ei = sf_ei(model, pool, incumbent).scores
    t = int(np.argmax(ei))
    X = model.domain_features(pool)
    xt = np.repeat(X[t:t + 1], pool.size, axis=0)
    terms = []
    for level, cost in ((HIGH, 1.0), (LOW, cost_low)):
        c = paired_covariance(model, xt, HIGH, X, level)
        _, var = posterior(model, X, level)
        terms.append(ei[t] * c * c / ((var + model.noise(level)) * cost))
    idx, lev = _mf_pairs(pool)
    return AcqScores(idx, lev, np.concatenate(terms))


def mf_custom(mes: AcqScores, tvr: AcqScores) -> AcqScores:
    """Sum of the two score vectors, each divided by its Euclidean norm."""
    if not mes.same_pairs(tvr):
        raise AcquisitionError("MF-MES and MF-TVR scores cover different pairs")

    def unit(v: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(v))
        return v / norm if norm > 0 else np.zeros_like(v)

    return AcqScores(mes.indices.copy(), mes.levels.copy(), unit(mes.scores) + unit(tvr.scores))


def select_next(scores: AcqScores, exclude: Optional[Iterable[tuple[int, int]]] = None
                ) -> tuple[int, Level]:
    """Highest-scoring pair; ties prefer HIGH, then the lowest candidate index.

    Pairs in ``exclude`` (already observed without noise) cannot be chosen.
    """
    if len(scores) == 0:
        raise AcquisitionError("no scores to select from")
    allowed = np.ones(len(scores), dtype=bool)
    if exclude:
        ex = {(int(i), int(l)) for i, l in exclude}
        allowed = np.array([(int(i), int(l)) not in ex
                            for i, l in zip(scores.indices, scores.levels)], dtype=bool)
    if not allowed.any():
        raise DomainExhausted("every candidate/fidelity pair has already been observed")
    pos = np.flatnonzero(allowed)
    # lexsort: last key is primary
    order = np.lexsort((scores.indices[pos], -scores.levels[pos], -scores.scores[pos]))
    k = pos[order[0]]
    return int(scores.indices[k]), Level(int(scores.levels[k]))
