import math

import numpy as np
import pytest

from mfbo.core import HIGH, LOW, FitError, QueryError, make_problem
from mfbo.surrogate import (
    FitConfig,
    KernelParams,
    TrainingData,
    condition,
    cross_covariance,
    fit,
    initial_params,
    log_marginal_likelihood,
    pattern_search,
    posterior,
    posterior_cov,
)
from mfbo.problems import NoiseSpec, rkhs_problem
from mfbo.engine import seed_design

from conftest import DenseGP, dense_kernel, dense_oracle, observe, random_instance


def unit_params(**kw):
    base = dict(signal_variance=1.0, lengthscale=1.0, fidelity_corr=0.5, noise_low=0.0, noise_high=0.0)
    base.update(kw)
    return KernelParams(**base)


@pytest.mark.parametrize("family", ["rbf", "matern52"])
def test_posterior_matches_dense_oracle(rng, family):
    for _ in range(10):
        m = random_instance(rng, n=10, d=2, family=family)
        oracle = dense_oracle(m)
        Xq = rng.uniform(size=(6, 2))
        lq = rng.integers(0, 2, size=6)
        mu, var = posterior(m, Xq, lq)
        Xs = m.scale(Xq)
        for k in range(6):
            ref_mu = m.target_mean + m.target_std * oracle.mean(Xs[k], lq[k])
            ref_var = oracle.cov(Xs[k], lq[k], Xs[k], lq[k]) * m.target_std ** 2
            assert mu[k] == pytest.approx(ref_mu, abs=1e-8)
            assert var[k] == pytest.approx(max(ref_var, 0.0), abs=1e-8)
        C = cross_covariance(m, Xq, lq, Xq, lq)
        for a in range(6):
            for b in range(6):
                ref = oracle.cov(Xs[a], lq[a], Xs[b], lq[b]) * m.target_std ** 2
                assert C[a, b] == pytest.approx(ref, abs=1e-8)


def test_posterior_cov_symmetric_and_matches_variance(rng):
    m = random_instance(rng)
    a = (rng.uniform(size=2), LOW)
    b = (rng.uniform(size=2), HIGH)
    assert posterior_cov(m, a, b) == pytest.approx(posterior_cov(m, b, a), abs=1e-12)
    _, var = posterior(m, a[0][None, :], [a[1]])
    assert posterior_cov(m, a, a) == pytest.approx(var[0], abs=1e-10)


def test_prior_covariance_without_data():
    p = unit_params(signal_variance=1.7, lengthscale=0.3, fidelity_corr=0.4)
    m = condition(p, np.zeros((0, 1)), [], [], domain=np.array([[0.0], [1.0]]), target_mean=0.0,
                  target_std=1.0)
    a, b = (np.array([0.2]), LOW), (np.array([0.5]), HIGH)
    assert posterior_cov(m, a, b) == pytest.approx(dense_kernel(p, [0.2], LOW, [0.5], HIGH), abs=1e-14)


def test_prior_recovery_far_from_data():
    p = unit_params(lengthscale=0.01, noise_high=1e-6, noise_low=1e-6)
    X = np.array([[0.0], [0.01]])
    y = np.array([1.0, 3.0])
    m = condition(p, X, [HIGH, HIGH], y, domain=np.array([[0.0], [1.0]]))
    mu, var = posterior(m, [[1.0]], [HIGH])
    assert mu[0] == pytest.approx(m.target_mean, rel=1e-2)
    assert var[0] == pytest.approx(p.signal_variance * m.target_std ** 2, rel=1e-2)


def test_noiseless_interpolation(tiny_problem):
    obs = observe(tiny_problem, [(i, HIGH) for i in range(0, 12, 3)] + [(1, LOW), (5, LOW)])
    p = unit_params(lengthscale=0.3, noise_low=0.0, noise_high=0.0)
    idx = [o.candidate_index for o in obs]
    m = condition(p, tiny_problem.features[idx], [o.level for o in obs], [o.value for o in obs],
                  domain=tiny_problem.features)
    mu, _ = posterior(m, tiny_problem.features[idx], [o.level for o in obs])
    np.testing.assert_allclose(mu, [o.value for o in obs], atol=1e-6)


def test_noiseless_gp_interpolates_linear_data():
    x = np.linspace(0, 1, 5)
    m = condition(unit_params(lengthscale=0.3), x[:, None], [HIGH] * 5, x)
    mu, _ = posterior(m, x[:, None], HIGH)
    np.testing.assert_allclose(mu, x, atol=1e-6)


def test_fitted_gp_nearly_interpolates_linear_data():
    # the noise floor keeps the fitted model from interpolating exactly
    x = np.linspace(0, 1, 5)
    prob = make_problem(x[:, None], x, x, 0.5, "line")
    m = fit(observe(prob, [(i, HIGH) for i in range(5)]), prob)
    mu, _ = posterior(m, x[:, None], HIGH)
    np.testing.assert_allclose(mu, x, atol=1e-3)


def test_duplicate_equal_observations():
    x = np.linspace(0, 1, 4)
    prob = make_problem(x[:, None], [1.0, 2.0, 2.5, 0.0], [1.0, 2.0, 2.5, 0.0], 0.5, "dup")
    obs = observe(prob, [(1, HIGH), (1, HIGH)])
    m = fit(obs, prob)
    mu, var = posterior(m, x[1:2, None], HIGH)
    assert mu[0] == pytest.approx(2.0)
    assert var[0] <= m.noise(HIGH) + 1e-12


def test_degenerate_targets_use_fixed_params(tiny_problem):
    obs = observe(tiny_problem, [(0, HIGH), (0, HIGH), (0, HIGH)])
    m = fit(obs, tiny_problem)
    assert m.params.signal_variance == 1.0
    assert m.params.lengthscale == 1.0
    assert m.params.fidelity_corr == 0.5
    assert m.target_std > 0


def test_fit_preconditions(tiny_problem):
    with pytest.raises(FitError):
        fit(observe(tiny_problem, [(0, HIGH)]), tiny_problem)
    with pytest.raises(FitError):
        fit(observe(tiny_problem, [(0, LOW), (1, LOW)]), tiny_problem)


def test_factorization_reconstructs_kernel(rng):
    m = random_instance(rng, n=15)
    K = np.array([[dense_kernel(m.params, a, la, b, lb) for b, lb in zip(m.X, m.levels)]
                  for a, la in zip(m.X, m.levels)])
    K += np.diag([m.params.noise(l) for l in m.levels]) + m.jitter * np.eye(15)
    L = m.chol
    assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) < 1e-8
    assert np.allclose(L, np.tril(L))


def test_query_dimension_mismatch(rng):
    m = random_instance(rng, d=2)
    with pytest.raises(QueryError):
        posterior(m, np.zeros((3, 5)), HIGH)
    with pytest.raises(QueryError):
        posterior(m, np.zeros((3, 2)), [HIGH, LOW])


# -- log marginal likelihood -------------------------------------------------


def test_lml_single_point_closed_form():
    p = unit_params()
    y = 1.0
    data = TrainingData(np.zeros((1, 1)), np.array([HIGH]), np.array([y]))
    expected = -0.5 * y ** 2 - 0.5 * math.log(2 * math.pi * (1 + 0.0))
    assert log_marginal_likelihood(p, data) == pytest.approx(expected, abs=1e-7)


def test_lml_matches_dense_oracle_with_duplicates(rng):
    X = rng.uniform(size=(6, 1))
    X = np.vstack([X, X[:1]])
    levels = np.array([1, 0, 1, 1, 0, 1, 1])
    y = rng.normal(size=7)
    p = unit_params(lengthscale=0.4, noise_low=0.05, noise_high=0.01, fidelity_corr=0.7)
    data = TrainingData(X, levels, y)
    K = np.array([[dense_kernel(p, a, la, b, lb) for b, lb in zip(X, levels)] for a, la in zip(X, levels)])
    K += np.diag([p.noise(l) for l in levels]) + 1e-8 * np.eye(7)
    sign, logdet = np.linalg.slogdet(K)
    ref = -0.5 * y @ np.linalg.inv(K) @ y - 0.5 * logdet - 3.5 * math.log(2 * math.pi)
    assert log_marginal_likelihood(p, data) == pytest.approx(ref, abs=1e-8)


def test_lml_invariant_to_target_scale(tiny_problem):
    obs = observe(tiny_problem, [(i, HIGH) for i in range(0, 12, 2)])
    idx = [o.candidate_index for o in obs]
    y = np.array([o.value for o in obs])
    p = unit_params(lengthscale=0.3, noise_high=1e-3)
    a = condition(p, tiny_problem.features[idx], [HIGH] * 6, y, domain=tiny_problem.features)
    b = condition(p, tiny_problem.features[idx], [HIGH] * 6, 7.5 * y + 3.0, domain=tiny_problem.features)
    assert a.lml == pytest.approx(b.lml, abs=1e-9)


# -- properties ----------------------------------------------------------------


def test_variance_nonincreasing_when_observing_query(rng):
    for _ in range(20):
        m = random_instance(rng, n=8)
        x = rng.uniform(size=2)
        level = int(rng.integers(0, 2))
        _, before = posterior(m, x[None, :], [level])
        raw = m.X * m.feature_scale + m.feature_lo
        targets = m.target_mean + m.target_std * m.y
        m2 = condition(m.params, np.vstack([raw, x]), np.append(m.levels, level),
                       np.append(targets, 0.0), domain=m.domain, target_mean=m.target_mean,
                       target_std=m.target_std)
        _, after = posterior(m2, x[None, :], [level])
        assert after[0] <= before[0] + 1e-9


def test_zero_correlation_decouples_fidelities(rng):
    X = rng.uniform(size=(6, 1))
    p = unit_params(lengthscale=0.3, fidelity_corr=0.0, noise_low=1e-3, noise_high=1e-3)
    y = rng.normal(size=6)
    domain = np.array([[0.0], [1.0]])
    only_high = condition(p, X[:3], [HIGH] * 3, y[:3], domain=domain, target_mean=0.0, target_std=1.0)
    both = condition(p, X, [HIGH] * 3 + [LOW] * 3, y, domain=domain, target_mean=0.0, target_std=1.0)
    Xq = np.linspace(0, 1, 9)[:, None]
    m1, v1 = posterior(only_high, Xq, HIGH)
    m2, v2 = posterior(both, Xq, HIGH)
    np.testing.assert_allclose(m1, m2, atol=1e-9)
    np.testing.assert_allclose(v1, v2, atol=1e-9)


def test_pattern_search_never_worse_than_start(rng):
    f = lambda x: -float(((x - 0.3) ** 2).sum()) + math.sin(5 * x[0])
    for _ in range(10):
        x0 = rng.uniform(-2, 2, size=3)
        x, fx = pattern_search(f, x0, np.full(3, -2.0), np.full(3, 2.0))
        assert fx >= f(x0)
        assert fx == pytest.approx(f(x))


def test_fit_beats_every_initialization():
    prob = rkhs_problem(0.1, NoiseSpec(0.88, 3))
    obs = seed_design(prob, 8, 2)
    cfg = FitConfig()
    m = fit(obs, prob, cfg)
    for r in range(cfg.n_restarts):
        start = condition(initial_params(r, 1, False), prob.features[[o.candidate_index for o in obs]],
                          [o.level for o in obs], [o.value for o in obs], domain=prob.features)
        assert m.lml >= start.lml - 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_fitted_correlation_on_rkhs(seed):
    prob = rkhs_problem(0.1, NoiseSpec(0.88, seed))
    obs = seed_design(prob, 20, seed)
    m = fit(obs, prob)
    assert 0.6 <= m.params.fidelity_corr <= 0.999


def test_ard_fit_runs(tiny_problem):
    X = np.random.default_rng(0).uniform(size=(12, 3))
    prob = make_problem(X, X.sum(1), X.sum(1) + 0.1, 0.2, "ard")
    obs = observe(prob, [(i, HIGH) for i in range(6)] + [(i, LOW) for i in range(6, 12)])
    m = fit(obs, prob, FitConfig(ard=True))
    assert np.shape(m.params.lengthscale) == (3,)
