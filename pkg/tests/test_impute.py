import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal, norm

from swarmstat.errors import DataError, DomainError
from swarmstat.impute import (
    COMPARTMENT_SIGMA,
    INFEASIBLE,
    BivariateData,
    compartment_means,
    compartment_table_path,
    e_step,
    em_fit,
    load_bivariate,
    observed_loglik,
    q_function,
    q_objective,
    simulate_bivariate,
    theta4,
)
from swarmstat.swarm import OptConfig

THETA = np.array([0.4, 0.05, 0.3])
X = np.array([0.33, 2, 3, 5, 8, 12, 24, 48, 72], dtype=float)


def conditional_oracle(mu, S, y_obs, k):
    """Schur complement for one missing coordinate given the other."""
    o = 1 - k
    mean = mu[k] + S[k, o] * (y_obs - mu[o]) / S[o, o]
    var = S[k, k] - S[k, o] * S[o, k] / S[o, o]
    return mean, var


def _data(seed=0, n_missing=5):
    return simulate_bivariate(THETA, X, COMPARTMENT_SIGMA, n_missing, np.random.default_rng(seed))


class TestMeans:
    def test_theta4_closed_form(self):
        t1, t2, t3 = THETA
        assert theta4(THETA) == pytest.approx((t3 - t2) * t1 * (1 - t1) / ((t3 - t2) * t1 + t2), rel=1e-15)

    def test_theta4_undefined(self):
        with pytest.raises(DomainError, match="theta4"):
            theta4([0.0, 0.0, 0.5])

    def test_label_swap_symmetry(self):
        swapped = [1 - THETA[0], THETA[2], THETA[1]]
        np.testing.assert_allclose(compartment_means(X, swapped), compartment_means(X, THETA), rtol=1e-12)

    def test_initial_conditions(self):
        mu1, mu2 = compartment_means(0.0, THETA)
        assert mu1 == pytest.approx(1.0, abs=1e-15)
        assert mu2 == pytest.approx(0.0, abs=1e-15)

    def test_batch_matches_scalar(self):
        T = np.array([THETA, [0.2, 0.3, 0.9], [0.0, 0.0, 0.5]])
        obj = q_objective(np.zeros((X.size, 2)), _data())
        vals = obj.evaluate(T)
        assert vals[2] == INFEASIBLE
        mu = np.column_stack(compartment_means(X, T[1]))
        Sinv = np.linalg.inv(COMPARTMENT_SIGMA)
        assert vals[1] == pytest.approx(0.5 * np.einsum("ni,ij,nj->", mu, Sinv, mu), rel=1e-12)


class TestEStep:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_schur_oracle(self, seed):
        data = _data(seed)
        y, c = e_step(data, THETA)
        mu = np.column_stack(compartment_means(X, THETA))
        for i in range(data.n):
            miss = data.missing[i]
            if miss.all():
                np.testing.assert_allclose(y[i], mu[i], rtol=1e-14)
                np.testing.assert_allclose(c[i], COMPARTMENT_SIGMA, rtol=1e-14)
            elif miss.any():
                k = int(np.flatnonzero(miss)[0])
                mean, var = conditional_oracle(mu[i], COMPARTMENT_SIGMA, data.y[i, 1 - k], k)
                assert y[i, k] == pytest.approx(mean, abs=1e-14)
                assert c[i, k, k] == pytest.approx(var, abs=1e-14)
                assert y[i, 1 - k] == data.y[i, 1 - k]
            else:
                np.testing.assert_array_equal(y[i], data.y[i])
                np.testing.assert_array_equal(c[i], 0.0)

    def test_q_trace_term(self):
        data = _data(1)
        y, c = e_step(data, THETA)
        Sinv = np.linalg.inv(COMPARTMENT_SIGMA)
        extra = -0.5 * sum(np.trace(Sinv @ ci) for ci in c)
        diff = q_function(THETA, y, c, data, with_trace=True) - q_function(THETA, y, c, data)
        assert diff == pytest.approx(extra, rel=1e-13)

    def test_objective_is_negated_q(self):
        data = _data(2)
        y, c = e_step(data, THETA)
        assert q_objective(y, data)(THETA) == pytest.approx(-q_function(THETA, y, c, data), rel=1e-13)


class TestLikelihood:
    @pytest.mark.parametrize("seed", range(3))
    def test_observed_loglik_oracle(self, seed):
        data = _data(seed, n_missing=6)
        mu = np.column_stack(compartment_means(X, THETA))
        expected = 0.0
        for i in range(data.n):
            miss = data.missing[i]
            if not miss.any():
                expected += multivariate_normal(mu[i], COMPARTMENT_SIGMA).logpdf(data.y[i])
            elif not miss.all():
                k = int(np.flatnonzero(~miss)[0])
                expected += norm(mu[i, k], math.sqrt(COMPARTMENT_SIGMA[k, k])).logpdf(data.y[i, k])
        assert observed_loglik(data, THETA) == pytest.approx(expected, rel=1e-12)


class TestEM:
    def test_loglik_monotone_and_recovers(self):
        rng = np.random.default_rng(3)
        x = np.linspace(0.3, 72, 40)
        data = simulate_bivariate(THETA, x, COMPARTMENT_SIGMA / 25, 10, rng)
        res = em_fit(data, [0.2, 0.2, 0.2], em_iters=8, opt_config=OptConfig(swarm_size=20, max_evals=2220, tolerance=0.0, seed=1))
        assert np.all(np.diff(res.loglik_trace) >= -1e-9)
        # swapping the two exponentials leaves the means unchanged
        t = res.theta if res.theta[1] < res.theta[2] else np.array([1 - res.theta[0], res.theta[2], res.theta[1]])
        np.testing.assert_allclose(t, THETA, atol=0.1)
        assert not np.isnan(res.y_imputed).any()

    def test_bad_iterations(self):
        with pytest.raises(DomainError):
            em_fit(_data(), THETA, em_iters=0)

    def test_reproducible(self):
        cfg = OptConfig(swarm_size=10, max_evals=10 + 6 * 30, tolerance=0.0, seed=5)
        a = em_fit(_data(), [0.3, 0.3, 0.6], em_iters=2, opt_config=cfg)
        b = em_fit(_data(), [0.3, 0.3, 0.6], em_iters=2, opt_config=cfg)
        np.testing.assert_array_equal(a.theta, b.theta)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n_missing=st.integers(0, 9))
def test_property_estep_never_touches_observed(seed, n_missing):
    data = _data(seed, n_missing)
    y, _ = e_step(data, THETA)
    obs = ~data.missing
    np.testing.assert_array_equal(y[obs], data.y[obs])
    assert np.all(np.isfinite(y))


class TestData:
    def test_shipped_table(self):
        data = load_bivariate(compartment_table_path(), COMPARTMENT_SIGMA)
        assert data.n == 9
        assert int(data.missing.sum()) == 5

    def test_complete_case_sigma(self):
        data = load_bivariate(compartment_table_path())
        full = data.y[~data.missing.any(axis=1)]
        np.testing.assert_allclose(data.Sigma, np.cov(full.T, ddof=1), rtol=1e-14)

    def test_bad_files(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(DataError):
            load_bivariate(p, COMPARTMENT_SIGMA)
        p.write_text("x,y1,y2\n1,zz,2\n")
        with pytest.raises(DataError, match="t.csv:2"):
            load_bivariate(p, COMPARTMENT_SIGMA)

    def test_bad_sigma_and_shapes(self):
        with pytest.raises(DomainError):
            BivariateData(X, np.zeros((9, 2)), [[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(DomainError):
            BivariateData(X, np.zeros((9, 2)), [[1.0, 0.1], [0.2, 1.0]])
        with pytest.raises(DataError):
            BivariateData(X, np.zeros((8, 2)), COMPARTMENT_SIGMA)
