import math

import mpmath
import numpy as np
import pytest
from scipy import optimize

from trendeq import fiproc
from trendeq.core import InsufficientDataError


def gamma_weights(d, L):
    """Independent high-precision oracle for the (1 - B)**d coefficients."""
    mpmath.mp.dps = 40
    out = [mpmath.mpf(1)]
    for i in range(1, L + 1):
        out.append(mpmath.gamma(i - d) / (mpmath.gamma(i + 1) * mpmath.gamma(-d)))
    return np.array([float(v) for v in out])


def recursive_fi(eps, d, mu=0.0):
    """Direct recursion y_t = mu - sum_i pi_i (y_{t-i} - mu) + eps_t from an empty past."""
    pi = fiproc.frac_weights(d, eps.size)
    y = np.empty(eps.size)
    for t in range(eps.size):
        acc = sum(pi[i] * (y[t - i] - mu) for i in range(1, t + 1))
        y[t] = mu - acc + eps[t]
    return y


class TestFracWeights:
    def test_integer_orders(self):
        np.testing.assert_array_equal(fiproc.frac_weights(1.0, 5), [1, -1, 0, 0, 0, 0])
        np.testing.assert_array_equal(fiproc.frac_weights(0.0, 4), [1, 0, 0, 0, 0])

    def test_half(self):
        pi = fiproc.frac_weights(0.5, 3)
        np.testing.assert_allclose(pi[1:], [-0.5, -0.125, -0.0625], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("d", [-0.45, -0.25, 0.25, 0.75, 1.25, 1.45])
    def test_gamma_oracle(self, d):
        ref = gamma_weights(d, 100)
        got = fiproc.frac_weights(d, 100)
        assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-10
        # the scipy Gamma-form helper agrees too
        np.testing.assert_allclose(fiproc.frac_weights_gamma(d, 100), ref, rtol=1e-10)

    def test_recursion_identity(self):
        for d in np.linspace(-0.49, 1.49, 41):
            pi = fiproc.frac_weights(d, 60)
            i = np.arange(1, 61)
            np.testing.assert_allclose(pi[1:], pi[:-1] * (i - 1 - d) / i, rtol=0, atol=1e-12)

    def test_negative_length(self):
        with pytest.raises(ValueError):
            fiproc.frac_weights(0.2, -1)


class TestConditionalMeans:
    def test_white_noise_returns_mu(self):
        y = np.random.default_rng(0).normal(size=30)
        assert fiproc.fi_conditional_mean_step(y, 20, 1.5, 0.0, 5) == 1.5
        assert fiproc.fi_conditional_mean_sigmoid(y, 20, 1.5, 0.0, -3.0, 0.7) == 1.5

    def test_at_change_point_returns_mu(self):
        y = np.random.default_rng(1).normal(size=30)
        assert fiproc.fi_conditional_mean_step(y, 10, 0.3, 0.7, 10) == 0.3

    def test_random_walk(self):
        y = np.zeros(20)
        tau = 5
        y[tau + 2] = 2.0
        assert fiproc.fi_conditional_mean_step(y, tau + 3, 0.0, 1.0, tau) == pytest.approx(2.0)

    def test_precondition(self):
        with pytest.raises(ValueError):
            fiproc.fi_conditional_mean_step(np.zeros(10), 3, 0.0, 0.2, 4)

    def test_sigmoid_near_step_limit(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=80)
        dt = 70 / 400
        times = dt * np.arange(y.size)
        tau = 30
        a1 = 40 / dt
        a0 = -a1 * (tau - 0.5) * dt  # centred between tau-1 and tau
        for t in range(tau + 2, y.size):
            g_step = fiproc.fi_conditional_mean_step(y, t, 0.2, 0.35, tau)
            g_sig = fiproc.fi_conditional_mean_sigmoid(y, t, 0.2, 0.35, a0, a1, times)
            assert abs(g_sig - g_step) < 1e-6

    def test_constant_half_weight(self):
        rng = np.random.default_rng(4)
        y = rng.normal(size=25)
        t, mu, d = 24, 0.4, 0.6
        pi = fiproc.frac_weights(d, t)
        expect = mu - 0.5 * sum(pi[i] * (y[t - i] - mu) for i in range(1, t + 1))
        assert fiproc.fi_conditional_mean_sigmoid(y, t, mu, d, 0.0, 0.0) == pytest.approx(expect)

    def test_residuals_match_pointwise_means(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=60)
        tau, mu, d = 12, 0.1, 0.8
        e = fiproc.fi_residuals(y, tau, mu, d)
        g = [fiproc.fi_conditional_mean_step(y, t, mu, d, tau) for t in range(tau, y.size)]
        np.testing.assert_allclose(e, y[tau:] - g, atol=1e-12)

    def test_long_convolution_path(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=900), rng.normal(size=900)
        np.testing.assert_allclose(fiproc.truncated_convolve(a, b),
                                   np.convolve(a, b)[:900], atol=1e-9)

    def test_first_difference_composition(self):
        # weights for d equal differencing once and then applying d - 1
        rng = np.random.default_rng(7)
        for d in (0.6, 0.95, 1.3):
            y = rng.normal(size=70)
            tau, mu = 10, 0.0
            seg = y[tau:]
            direct = fiproc.fi_residuals(y, tau, mu, d)
            diff = np.concatenate([[seg[0]], np.diff(seg)])
            composed = fiproc.truncated_convolve(fiproc.frac_weights(d - 1, seg.size - 1), diff)
            np.testing.assert_allclose(direct, composed, atol=1e-8)


class TestLoglik:
    def test_white_noise_mle_identity(self):
        rng = np.random.default_rng(8)
        y = rng.normal(2.0, 1.3, size=120)
        tau = 20
        seg = y[tau:]
        mu, nu2 = seg.mean(), np.mean((seg - seg.mean()) ** 2)
        n = seg.size
        assert fiproc.fi_loglik(y, tau, mu, 0.0, nu2) == pytest.approx(-n / 2 * (1 + math.log(nu2)))

    def test_nu2_argmax(self):
        rng = np.random.default_rng(9)
        y = fiproc.simulate_fi(200, 0.3, seed=rng)
        e = fiproc.fi_residuals(y, 0, 0.0, 0.3)
        analytic = e @ e / e.size
        res = optimize.minimize_scalar(lambda v: -fiproc.fi_loglik(y, 0, 0.0, 0.3, v),
                                       bounds=(analytic / 3, analytic * 3), method="bounded",
                                       options={"xatol": 1e-12})
        assert res.x == pytest.approx(analytic, rel=1e-6)
        # profiled value matches the analytic maximum
        ll, mu, nu2 = fiproc.profile_fi(y, 0.3)
        assert ll >= fiproc.fi_loglik(y, 0, mu, 0.3, analytic) - 1e-8
        assert abs(fiproc.fi_loglik(y, 0, mu, 0.3, nu2) - ll) < 1e-8

    def test_true_d_preferred(self):
        wins = 0
        for r in range(100):
            y = fiproc.simulate_fi(300, 0.25, seed=r)
            l1 = fiproc.profile_fi(y, 0.25)[0]
            l2 = fiproc.profile_fi(y, -0.25)[0]
            wins += l1 > l2
        assert wins >= 95

    def test_profile_continuous_in_d(self):
        y = fiproc.simulate_fi(300, 0.6, seed=11)
        for lo, hi in fiproc.D_RANGES:
            grid = np.linspace(lo, hi, 2001)
            vals = np.array([fiproc.profile_fi(y, d)[0] for d in grid])
            jumps = np.abs(np.diff(vals))
            # a smooth curve's increments shrink with the step; no isolated jumps
            assert np.max(jumps) < 20 * np.median(jumps) + 1e-6


class TestFitFi:
    def test_mean_d_recovery(self):
        for d, tol in ((0.25, 0.10), (0.95, 0.15)):
            est = [fiproc.fit_fi(fiproc.simulate_fi(350, d, seed=1000 + r)).d for r in range(100)]
            assert abs(np.mean(est) - d) < tol

    def test_upper_range_selected_for_large_d(self):
        hits = sum(fiproc.fit_fi(fiproc.simulate_fi(350, 1.35, seed=r)).d > 0.5
                   for r in range(100))
        assert hits >= 90

    def test_constant_series(self):
        fit = fiproc.fit_fi(np.full(50, 3.0))
        assert fit.mu == pytest.approx(3.0)
        assert fit.nu2 == fiproc.NU2_FLOOR

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            fiproc.fit_fi(np.zeros(30), tau=15)

    def test_dual_range_selection(self):
        y = fiproc.simulate_fi(300, 0.15, seed=3)
        best, cands = fiproc.fit_fi_segment(y)
        assert len(cands) == 2
        assert all(abs(best.d - 0.5) >= abs(c.d - 0.5) for c in cands)
        assert best.d != 0.5


class TestSimulation:
    def test_matches_explicit_recursion(self):
        for d in (-0.3, 0.25, 0.9, 1.4):
            eps = np.random.default_rng(12).normal(0.0, 0.5, 150)
            y = fiproc.simulate_fi(150, d, mu=1.0, eps_sd=0.5, seed=12)
            np.testing.assert_allclose(y, recursive_fi(eps, d, mu=1.0), atol=1e-9)

    def test_reproducible(self):
        a = fiproc.simulate_fi(100, 0.3, seed=5)
        b = fiproc.simulate_fi(100, 0.3, seed=5)
        assert np.array_equal(a, b)
        assert np.array_equal(fiproc.simulate_arfima(100, 0.3, 0.2, 0.4, seed=5),
                              fiproc.simulate_arfima(100, 0.3, 0.2, 0.4, seed=5))

    def test_white_noise(self):
        n = 4000
        y = fiproc.simulate_fi(n, 0.0, mu=2.0, eps_sd=0.5, seed=1)
        assert abs(fiproc.sample_acf(y, 1)[1]) < 3 / math.sqrt(n)

    def test_random_walk_variance_growth(self):
        sims = np.array([fiproc.simulate_fi(100, 1.0, seed=r) for r in range(200)])
        v = sims.var(axis=0)
        slope = np.polyfit(np.arange(1, 101), v, 1)[0]
        assert abs(slope - 0.25) < 0.2 * 0.25

    def test_hyperbolic_acf_decay(self):
        # average the ACFs first; single-replicate ratios at lag 50 are too noisy
        k = 50
        acf = np.mean([fiproc.sample_acf(fiproc.simulate_fi(5000, 0.25, seed=r), 2 * k)
                       for r in range(50)], axis=0)
        assert abs(acf[2 * k] / acf[k] - 2 ** (2 * 0.25 - 1)) < 0.15

    def test_arfima_reduces_to_fi(self):
        np.testing.assert_array_equal(fiproc.simulate_arfima(200, 0.4, 0.0, 0.0, seed=9),
                                      fiproc.simulate_fi(200, 0.4, seed=9))

    def test_arma_lag1_acf(self):
        phi, th = 0.5, 0.3
        y = fiproc.simulate_arfima(5000, 0.0, phi, th, seed=4)
        rho1 = (1 + phi * th) * (phi + th) / (1 + 2 * phi * th + th ** 2)
        assert abs(fiproc.sample_acf(y, 1)[1] - rho1) < 0.05

    def test_arfima_rejects_unit_root(self):
        with pytest.raises(ValueError):
            fiproc.simulate_arfima(10, 0.2, 1.0, 0.0)

    @pytest.mark.xfail(strict=True, reason="the conditional FI likelihood absorbs the positive "
                       "ARMA(1,1) short memory into d; the median estimate is about 1.09")
    def test_arfima_d_recovery(self):
        est = [fiproc.fit_fi(fiproc.simulate_arfima(5000, 0.3, 0.5, 0.5, seed=r)).d
               for r in range(11)]
        assert abs(np.median(est) - 0.3) <= 0.25


class TestAcf:
    def test_values(self):
        assert fiproc.acf_asymptote(0.25, 1) == pytest.approx(0.3380, abs=5e-5)
        assert fiproc.acf_asymptote(0.25, 4) == pytest.approx(0.1690, abs=5e-5)
        assert fiproc.acf_asymptote(1e-6, 2) < 1e-5

    def test_domain(self):
        for d in (0.0, 0.5, -0.1):
            with pytest.raises(ValueError):
                fiproc.acf_asymptote(d, 3)
