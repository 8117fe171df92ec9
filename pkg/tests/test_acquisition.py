import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mfbo.acquisition import (
    AcqScores,
    expected_improvement,
    gumbel_fit,
    mes_gain_high,
    mes_gain_low,
    mf_custom,
    mf_mes,
    mf_tvr,
    select_next,
    sf_ei,
)
from mfbo.core import HIGH, LOW, AcquisitionError, DomainExhausted
from mfbo.engine import seed_design
from mfbo.problems import NoiseSpec, rkhs_problem
from mfbo.surrogate import KernelParams, condition, fit, paired_covariance, posterior

from conftest import DenseGP, random_instance


def Phi(x):
    return 0.5 * (1 + math.erf(x / math.sqrt(2)))


def phi(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def scores(pairs):
    idx = np.array([p[0] for p in pairs])
    lev = np.array([int(p[1]) for p in pairs])
    val = np.array([p[2] for p in pairs], dtype=float)
    return AcqScores(idx, lev, val)


def model_on(values_at, corr=0.8, ls=0.15, n=20):
    x = np.linspace(0, 1, n)
    X = x[values_at][:, None]
    y = np.sin(7 * X[:, 0])
    params = KernelParams(1.0, ls, corr, 1e-3, 1e-6)
    levels = [HIGH] * len(values_at)
    return condition(params, X, levels, y, domain=x[:, None])


# -- SF-EI ---------------------------------------------------------------------


def test_ei_closed_form_cases():
    assert expected_improvement([0.0], [1.0], 0.0)[0] == pytest.approx(0.3989422804, abs=1e-10)
    assert expected_improvement([2.0], [0.0], 0.0)[0] == 2.0
    assert expected_improvement([-2.0], [0.0], 0.0)[0] == 0.0


def test_ei_matches_monte_carlo():
    rng = np.random.default_rng(7)
    for _ in range(5):
        mu, sigma, inc = rng.normal(), rng.uniform(0.1, 2.0), rng.normal()
        draws = np.maximum(mu + sigma * rng.standard_normal(1_000_000) - inc, 0.0)
        se = draws.std() / math.sqrt(draws.size)
        assert abs(expected_improvement([mu], [sigma], inc)[0] - draws.mean()) < 3 * se


def test_ei_monotone_in_mean():
    mus = np.linspace(-3, 3, 61)
    for s in (1e-13, 0.1, 1.0, 3.0):
        ei = expected_improvement(mus, np.full_like(mus, s), 0.5)
        assert np.all(np.diff(ei) >= -1e-15)


def test_sf_ei_scores_high_only_and_nonnegative():
    m = model_on([0, 5, 10, 15])
    s = sf_ei(m, np.arange(20), incumbent=0.9)
    assert np.all(s.levels == HIGH)
    assert np.all(s.scores >= 0)
    with pytest.raises(AcquisitionError):
        sf_ei(m, [], 0.0)


# -- MF-MES --------------------------------------------------------------------


def test_mes_high_gain_hand_value():
    g = 1.0
    ref = g * phi(g) / (2 * Phi(g)) - math.log(Phi(g))
    assert ref == pytest.approx(0.31655, abs=5e-5)
    got = mes_gain_high([0.0], [1.0], [1.0])[0]
    assert got == pytest.approx(ref, abs=1e-12)


def test_mes_zero_sigma_gives_zero_gain():
    assert mes_gain_high([0.3], [0.0], [1.0, 2.0])[0] == 0.0
    assert mes_gain_low([0.0], [0.0], [0.0], [1.0], [0.0], [1.0])[0] == 0.0


def test_mes_low_gain_zero_without_correlation():
    gain = mes_gain_low([0.2], [1.3], [0.0], [0.8], [0.0], [0.5, 1.0, 2.5])
    assert abs(gain[0]) < 1e-6


def _low_gain_by_quad(mu_l, var_l, mu_h, var_h, cov, fstar):
    s_l, s_h = math.sqrt(var_l), math.sqrt(var_h)
    cond_sd = math.sqrt(var_h - cov ** 2 / var_l)
    g = (fstar - mu_h) / s_h

    def dens(y):
        a = (fstar - mu_h - cov / var_l * (y - mu_l)) / cond_sd
        return phi((y - mu_l) / s_l) / s_l * Phi(a) / Phi(g)

    def ent(y):
        p = dens(y)
        return -p * math.log(p) if p > 0 else 0.0

    lo, hi = mu_l - 12 * s_l, mu_l + 12 * s_l
    h_cond = integrate.quad(ent, lo, hi, limit=400, points=[mu_l])[0]
    h_prior = 0.5 * math.log(2 * math.pi * math.e * var_l)
    return h_prior - h_cond


@pytest.mark.parametrize("rho", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("fstar", [0.5, 1.5])
def test_mes_low_gain_matches_adaptive_quadrature(rho, fstar):
    var_l, var_h = 1.4, 0.9
    cov = rho * math.sqrt(var_l * var_h)
    ref = _low_gain_by_quad(0.1, var_l, 0.0, var_h, cov, fstar)
    got = mes_gain_low([0.1], [var_l], [0.0], [var_h], [cov], [fstar])[0]
    assert got == pytest.approx(ref, abs=1e-4)


def test_mes_low_gain_increases_with_correlation():
    gains = [mes_gain_low([0.0], [1.0], [0.0], [1.0], [r], [1.0])[0] for r in (0.0, 0.2, 0.5, 0.8, 0.95)]
    assert abs(gains[0]) < 1e-6
    assert all(b > a for a, b in zip(gains, gains[1:]))
    assert gains[-1] < mes_gain_high([0.0], [1.0], [1.0])[0]


def test_gumbel_fit_matches_max_cdf():
    rng = np.random.default_rng(3)
    mu, sd = rng.normal(size=30), rng.uniform(0.2, 1.0, size=30)
    loc, scale = gumbel_fit(mu, sd)
    cdf = lambda y: np.prod([Phi((y - m) / s) for m, s in zip(mu, sd)])
    gumbel = lambda y: math.exp(-math.exp(-(y - loc) / scale))
    median = loc - scale * math.log(math.log(2))
    assert cdf(median) == pytest.approx(0.5, abs=1e-6)
    for y in np.linspace(median - scale, median + 2 * scale, 7):
        assert gumbel(y) == pytest.approx(cdf(y), abs=0.05)


def test_mf_mes_requires_high_data():
    x = np.linspace(0, 1, 5)[:, None]
    m = condition(KernelParams(1.0, 0.3, 0.5, 1e-3, 1e-3), x[:2], [LOW, LOW], [0.0, 1.0], domain=x)
    with pytest.raises(AcquisitionError):
        mf_mes(m, np.arange(5), 0.1)


def test_mf_mes_deterministic_and_cost_scaled():
    prob = rkhs_problem(0.1, NoiseSpec(0.88, 0))
    m = fit(seed_design(prob, 5, 1), prob)
    pool = np.arange(prob.n)
    a = mf_mes(m, pool, 0.1, rng_seed=11)
    b = mf_mes(m, pool, 0.1, rng_seed=11)
    half = mf_mes(m, pool, 0.05, rng_seed=11)
    np.testing.assert_array_equal(a.scores, b.scores)
    low = a.levels == LOW
    np.testing.assert_allclose(half.scores[low], 2 * a.scores[low], rtol=1e-12, atol=0)
    np.testing.assert_array_equal(half.scores[~low], a.scores[~low])
    assert len(set(a.pairs())) == len(a) == 2 * prob.n


def test_mf_mes_low_scores_vanish_at_zero_correlation():
    x = np.linspace(0, 1, 30)[:, None]
    obs_at = [2, 9, 17, 25]
    gains = []
    for corr in (0.0, 0.2, 0.5, 0.8, 0.95):
        params = KernelParams(1.0, 0.2, corr, 1e-4, 1e-6)
        m = condition(params, x[obs_at], [HIGH] * 4, np.sin(5 * x[obs_at, 0]), domain=x)
        s = mf_mes(m, np.arange(30), 1.0, rng_seed=0)
        gains.append(s.scores[s.levels == LOW])
    assert np.max(np.abs(gains[0])) < 1e-6
    for a, b in zip(gains, gains[1:]):
        assert np.sum(b) > np.sum(a)


# -- MF-TVR --------------------------------------------------------------------


def test_tvr_reduction_matches_refit(rng):
    for _ in range(10):
        m = random_instance(rng, n=10, d=2)
        raw = m.X * m.feature_scale + m.feature_lo
        pool = np.arange(m.domain.shape[0])
        inc = float(m.target_mean + m.target_std * m.y.max())
        s = mf_tvr(m, pool, 0.3, inc)
        ei = sf_ei(m, pool, inc).scores
        t = int(np.argmax(ei))
        xt = m.domain[t:t + 1]
        for k in rng.choice(len(s), size=3, replace=False):
            i, level = int(s.indices[k]), int(s.levels[k])
            cost = 1.0 if level == HIGH else 0.3
            term = s.scores[k] * cost / ei[t] if ei[t] > 0 else 0.0
            # refit with the hypothetical observation appended
            before = DenseGP(m.params, m.X, m.levels, m.y, m.jitter)
            after = DenseGP(m.params, list(m.X) + [m.scale(m.domain[i])[0]], list(m.levels) + [level],
                            np.append(m.y, 0.0), m.jitter)
            xs = m.scale(xt)[0]
            drop = (before.cov(xs, HIGH, xs, HIGH) - after.cov(xs, HIGH, xs, HIGH)) * m.target_std ** 2
            assert term == pytest.approx(drop, abs=1e-6)


def test_tvr_zero_covariance_gives_zero():
    x = np.linspace(0, 1, 40)[:, None]
    params = KernelParams(1.0, 0.01, 0.0, 1e-3, 1e-3)
    m = condition(params, x[[0, 39]], [HIGH, HIGH], [0.0, 1.0], domain=x)
    s = mf_tvr(m, np.arange(40), 0.2, 1.0)
    assert np.all(s.scores[s.levels == LOW] == 0.0)


def test_tvr_target_pair_is_max_reducer():
    m = model_on([0, 7, 14], corr=0.5)
    pool = np.arange(20)
    s = mf_tvr(m, pool, 1.0, incumbent=0.5)
    t = int(np.argmax(sf_ei(m, pool, 0.5).scores))
    k = int(np.flatnonzero((s.indices == t) & (s.levels == HIGH))[0])
    assert s.scores[k] == pytest.approx(s.scores.max())


def test_tvr_cost_scaling():
    m = model_on([0, 7, 14])
    a = mf_tvr(m, np.arange(20), 0.2, 0.5)
    b = mf_tvr(m, np.arange(20), 0.1, 0.5)
    low = a.levels == LOW
    np.testing.assert_allclose(b.scores[low], 2 * a.scores[low], rtol=1e-12, atol=0)


# -- MF-Custom -----------------------------------------------------------------


def test_custom_hand_cases():
    pairs = [(0, HIGH), (1, HIGH)]
    mes = scores([(i, l, v) for (i, l), v in zip(pairs, [3.0, 4.0])])
    tvr = scores([(i, l, 0.0) for i, l in pairs])
    np.testing.assert_allclose(mf_custom(mes, tvr).scores, [0.6, 0.8])
    v = np.array([1.0, -2.0])
    both = scores([(i, l, x) for (i, l), x in zip(pairs, v)])
    np.testing.assert_allclose(mf_custom(both, both).scores, 2 * v / np.linalg.norm(v))


def test_custom_pair_mismatch():
    a = scores([(0, HIGH, 1.0), (1, LOW, 1.0)])
    b = scores([(1, LOW, 1.0), (0, HIGH, 1.0)])
    with pytest.raises(AcquisitionError):
        mf_custom(a, b)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=2, max_size=30),
       st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_custom_argmax_scale_invariant(vals, a, b):
    n = len(vals)
    mes = np.array([v[0] for v in vals])
    tvr = np.array([v[1] for v in vals])
    idx, lev = np.arange(n), np.full(n, int(HIGH))
    base = mf_custom(AcqScores(idx, lev, mes), AcqScores(idx, lev, tvr)).scores
    scaled = mf_custom(AcqScores(idx, lev, a * mes), AcqScores(idx, lev, b * tvr)).scores
    np.testing.assert_allclose(scaled, base, rtol=1e-9, atol=1e-12)


# -- selection -----------------------------------------------------------------


def test_select_next_rules():
    assert select_next(scores([(0, HIGH, 1.0), (1, LOW, 2.0)])) == (1, LOW)
    assert select_next(scores([(0, LOW, 1.0), (0, HIGH, 1.0)])) == (0, HIGH)
    assert select_next(scores([(3, HIGH, 1.0), (2, HIGH, 1.0)])) == (2, HIGH)
    s = scores([(0, HIGH, 5.0), (1, HIGH, 1.0)])
    assert select_next(s, exclude={(0, int(HIGH))}) == (1, HIGH)
    with pytest.raises(DomainExhausted):
        select_next(s, exclude={(0, 1), (1, 1)})


def test_rkhs_selection_reproducible():
    prob = rkhs_problem(0.1, NoiseSpec(0.88, 0))
    picks = []
    for _ in range(2):
        m = fit(seed_design(prob, 5, 4), prob)
        picks.append(select_next(mf_mes(m, np.arange(prob.n), 0.1, rng_seed=4)))
    assert picks[0] == picks[1]


def test_scores_finite_for_random_models(rng):
    for _ in range(25):
        m = random_instance(rng, n=int(rng.integers(3, 15)), d=2, family=rng.choice(["rbf", "matern52"]))
        pool = np.arange(m.domain.shape[0])
        inc = float(m.target_mean + m.target_std * m.y.max())
        mes = mf_mes(m, pool, 0.1, rng_seed=int(rng.integers(100)))
        tvr = mf_tvr(m, pool, 0.1, inc)
        for s in (sf_ei(m, pool, inc), mes, tvr, mf_custom(mes, tvr)):
            assert np.all(np.isfinite(s.scores))
