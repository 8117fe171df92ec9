import math

import numpy as np
import pytest

from mfbo.core import HIGH, LOW, Observation, make_problem
from mfbo.surrogate import KernelParams, condition


def dense_kernel(params, xa, la, xb, lb):
    """Kernel entry built by hand, independent of the vectorized code."""
    ls = np.broadcast_to(np.asarray(params.lengthscale, dtype=float), np.shape(xa))
    r2 = sum(((a - b) / l) ** 2 for a, b, l in zip(xa, xb, ls))
    if params.family == "rbf":
        c = math.exp(-0.5 * r2)
    else:
        r = math.sqrt(5.0 * r2)
        c = (1.0 + r + r * r / 3.0) * math.exp(-r)
    return params.signal_variance * c * (1.0 if la == lb else params.fidelity_corr)


class DenseGP:
    """Reference posterior via an explicit matrix inverse on scaled inputs."""

    def __init__(self, params, X, levels, y, jitter):
        self.params = params
        self.X = [np.asarray(x, dtype=float) for x in X]
        self.levels = list(levels)
        n = len(self.X)
        K = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                K[i, j] = dense_kernel(params, self.X[i], self.levels[i], self.X[j], self.levels[j])
            K[i, i] += params.noise(self.levels[i]) + jitter
        self.Kinv = np.linalg.inv(K)
        self.y = np.asarray(y, dtype=float)

    def kvec(self, x, l):
        return np.array([dense_kernel(self.params, xi, li, x, l) for xi, li in zip(self.X, self.levels)])

    def mean(self, x, l):
        return float(self.kvec(x, l) @ self.Kinv @ self.y)

    def cov(self, xa, la, xb, lb):
        ka, kb = self.kvec(xa, la), self.kvec(xb, lb)
        return dense_kernel(self.params, xa, la, xb, lb) - float(ka @ self.Kinv @ kb)


def dense_oracle(model):
    return DenseGP(model.params, model.X, model.levels, model.y, model.jitter)


def random_instance(rng, n=10, d=2, family="rbf"):
    X = rng.uniform(size=(n, d))
    levels = rng.integers(0, 2, size=n)
    levels[0] = HIGH
    y = np.sin(3 * X).sum(1) + 0.3 * rng.normal(size=n)
    params = KernelParams(
        signal_variance=float(rng.uniform(0.5, 2.0)),
        lengthscale=float(rng.uniform(0.2, 0.8)),
        fidelity_corr=float(rng.uniform(-0.9, 0.95)),
        noise_low=float(rng.uniform(1e-4, 0.1)),
        noise_high=float(rng.uniform(1e-6, 0.05)),
        family=family,
    )
    domain = np.vstack([X, np.zeros(d), np.ones(d)])
    return condition(params, X, levels, y, domain=domain)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_problem():
    x = np.linspace(0, 1, 12)
    y_high = np.sin(6 * x) + x
    y_low = y_high + 0.1 * np.cos(17 * x)
    return make_problem(x[:, None], y_high, y_low, 0.2, "tiny")


def observe(problem, pairs):
    obs, spent = [], 0.0
    for i, level in pairs:
        fid = problem.fidelity(level)
        spent += fid.cost
        obs.append(Observation(i, fid, problem.value(i, level), spent))
    return obs
