"""Fractionally integrated processes: weights, conditional means, likelihood, simulation.

The one-step residual of an FI(d) segment starting at index ``tau`` is the
truncated convolution ``e = pi(d) * (y[tau:] - mu)``, where ``pi(d)`` are the
coefficients of ``(1 - B)**d``. Since ``e`` is affine in ``mu``, both ``mu``
and ``nu2`` are profiled out in closed form and only ``d`` is searched.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, signal, special

from .core import EstimationError, FIFit, InsufficientDataError

D_RANGES = ((-0.49, 0.49), (0.51, 1.49))
NU2_FLOOR = 1e-12
MIN_EQUILIBRIUM = 20
_D_GRID = 25


def frac_weights(d: float, L: int) -> np.ndarray:
    """Coefficients ``pi[0..L]`` of ``(1 - B)**d``: ``pi[i] = pi[i-1] * (i - 1 - d) / i``."""
    if L < 0:
        raise ValueError("L must be non-negative")
    i = np.arange(1, L + 1, dtype=float)
    return np.concatenate(([1.0], np.cumprod((i - 1.0 - d) / i)))


def frac_weights_gamma(d: float, L: int) -> np.ndarray:
    """Gamma-function form ``Gamma(i - d) / (Gamma(i + 1) Gamma(-d))`` (non-integer ``d``)."""
    i = np.arange(L + 1, dtype=float)
    return special.poch(-d, i) / special.factorial(i)


def truncated_convolve(a, b, n: int | None = None) -> np.ndarray:
    """First ``n`` terms of the full convolution of ``a`` and ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = min(a.size, b.size) if n is None else n
    if n <= 600:
        return np.convolve(a[:n], b[:n])[:n]
    return signal.fftconvolve(a[:n], b[:n])[:n]


def sigmoid_weight(times, alpha0: float, alpha1: float) -> np.ndarray:
    """Transition ``w(t) = 1 / (1 + exp(-alpha0 - alpha1 t))``."""
    return special.expit(alpha0 + alpha1 * np.asarray(times, dtype=float))


def fi_conditional_mean_step(y, t: int, mu: float, d: float, tau: int) -> float:
    """One-step conditional mean at index ``t`` with history truncated at ``tau``."""
    if t < tau:
        raise ValueError("t must not precede the change point")
    y = np.asarray(y, dtype=float)
    pi = frac_weights(d, t)
    lags = np.arange(1, t - tau + 1)
    return float(mu - np.sum(pi[lags] * (y[t - lags] - mu)))


def fi_conditional_mean_sigmoid(y, t: int, mu: float, d: float, alpha0: float,
                                alpha1: float, times=None) -> float:
    """Conditional mean with the step indicator replaced by a sigmoid of the lag's time.

    ``times`` maps indices to the transition's time axis (defaults to the index).
    """
    y = np.asarray(y, dtype=float)
    times = np.arange(y.size, dtype=float) if times is None else np.asarray(times, dtype=float)
    pi = frac_weights(d, t)
    lags = np.arange(1, t + 1)
    w = sigmoid_weight(times[t - lags], alpha0, alpha1)
    return float(mu - np.sum(pi[lags] * (y[t - lags] - mu) * w))


def fi_residuals(y, tau: int, mu: float, d: float) -> np.ndarray:
    """Residuals ``y_t - g_t`` for ``t = tau .. T-1``."""
    seg = np.asarray(y, dtype=float)[tau:] - mu
    return truncated_convolve(frac_weights(d, seg.size - 1), seg)


def fi_loglik(y, tau: int, mu: float, d: float, nu2: float) -> float:
    """Conditional Gaussian log-likelihood of ``y[tau:]``, constants dropped."""
    e = fi_residuals(y, tau, mu, d)
    return float(-0.5 * (e @ e) / nu2 - 0.5 * e.size * math.log(nu2))


def _profile_terms(seg, d):
    pi = frac_weights(d, seg.size - 1)
    a = truncated_convolve(pi, seg)
    b = np.cumsum(pi)
    return a, b


def profile_fi(seg, d: float, weights=None):
    """Maximize over ``mu`` and ``nu2`` at fixed ``d``.

    Returns ``(loglik, mu, nu2)``. With ``weights`` each squared residual and
    log-variance term is multiplied by the corresponding weight.
    """
    a, b = _profile_terms(seg, d)
    return _profile_from_ab(a, b, weights)


def _profile_from_ab(a, b, weights=None):
    if weights is None:
        bb = b @ b
        mu = (a @ b) / bb
        r = a - mu * b
        sse, n = float(r @ r), a.size
    else:
        wb = weights * b
        mu = (wb @ a) / (wb @ b)
        r = a - mu * b
        sse, n = float(weights @ (r * r)), float(np.sum(weights))
    nu2 = max(sse / n, NU2_FLOOR)
    return -0.5 * sse / nu2 - 0.5 * n * math.log(nu2), float(mu), nu2


def maximize_scalar(fun, lo: float, hi: float, n_grid: int = _D_GRID):
    """Global-ish 1-D maximization: grid scan, then bounded Brent in the best cell."""
    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([fun(x) for x in grid])
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k = int(np.argmax(vals))
    if not np.isfinite(vals[k]):
        return None, -np.inf
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    res = optimize.minimize_scalar(lambda x: -fun(x), bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-6})
    if res.success and np.isfinite(res.fun) and -res.fun >= vals[k]:
        return float(res.x), float(-res.fun)
    return float(grid[k]), float(vals[k])


def fit_fi_segment(seg, d_ranges=D_RANGES, weights=None) -> tuple[FIFit, list[FIFit]]:
    """Dual-range FI fit on a segment; returns the chosen fit and every range's optimum."""
    seg = np.asarray(seg, dtype=float)
    cands = []
    for lo, hi in d_ranges:
        d, ll = maximize_scalar(lambda x: profile_fi(seg, x, weights)[0], lo, hi)
        if d is None:
            continue
        ll, mu, nu2 = profile_fi(seg, d, weights)
        cands.append(FIFit(d, mu, nu2, ll))
    if not cands:
        raise EstimationError("FI likelihood could not be evaluated in either d-range")
    # first candidate wins exact ties so the selection is deterministic
    best = max(cands, key=lambda f: abs(f.d - 0.5))
    return best, cands


def fit_fi(y, tau: int = 0, min_length: int = MIN_EQUILIBRIUM) -> FIFit:
    """Estimate ``(d, mu, nu2)`` on ``y[tau:]``.

    ``d`` is searched separately on ``(-0.5, 0.5)`` and ``(0.5, 1.5)`` and the
    estimate further from 0.5 is kept.
    """
    seg = np.asarray(y, dtype=float)[tau:]
    if seg.size < min_length:
        raise InsufficientDataError(
            f"equilibrium segment has {seg.size} points, need at least {min_length}")
    return fit_fi_segment(seg)[0]


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def fractionally_integrate(u, d: float) -> np.ndarray:
    """Apply ``(1 - B)**(-d)`` to ``u`` with zero pre-sample history."""
    u = np.asarray(u, dtype=float)
    return truncated_convolve(frac_weights(-d, u.size - 1), u)


def simulate_fi(n: int, d: float, mu: float = 0.0, eps_sd: float = 0.5, seed=None) -> np.ndarray:
    """Draw ``n`` values of ``(1 - B)**d (y_t - mu) = eps_t`` started from an empty history."""
    if n < 1:
        raise ValueError("n must be positive")
    eps = _rng(seed).normal(0.0, eps_sd, n)
    return mu + fractionally_integrate(eps, d)


def simulate_arfima(n: int, d: float, phi: float, theta_ma: float, mu: float = 0.0,
                    eps_sd: float = 0.5, seed=None) -> np.ndarray:
    """ARFIMA(1, d, 1): ``(1 - phi B)(1 - B)**d (y_t - mu) = (1 + theta B) eps_t``."""
    if abs(phi) >= 1:
        raise ValueError("|phi| must be < 1")
    eps = _rng(seed).normal(0.0, eps_sd, n)
    u = np.empty(n)
    prev_u = prev_e = 0.0
    for t in range(n):
        u[t] = phi * prev_u + eps[t] + theta_ma * prev_e
        prev_u, prev_e = u[t], eps[t]
    return mu + fractionally_integrate(u, d)


def acf_asymptote(d: float, k: int) -> float:
    """Large-lag autocorrelation ``Gamma(1-d)/Gamma(d) * k**(2d-1)`` for ``0 < d < 0.5``."""
    if not 0 < d < 0.5:
        raise ValueError("asymptotic ACF is defined for 0 < d < 0.5")
    if k < 1:
        raise ValueError("k must be >= 1")
    return math.gamma(1 - d) / math.gamma(d) * k ** (2 * d - 1)


def sample_acf(x, max_lag: int) -> np.ndarray:
    x = np.asarray(x, dtype=float) - np.mean(x)
    c0 = x @ x
    return np.array([1.0] + [x[k:] @ x[:-k] / c0 for k in range(1, max_lag + 1)])
