"""Penalized B-splines for the trend mean and log-variance.

The smoothing parameter search runs over a normalized scale,
``lambda = ratio * 10**u`` with ``ratio = tr(X'W^-1 X) / tr(M)`` and
``u in [-6, 6]``, so the selected smoother does not depend on the overall
scale of the weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .core import InsufficientDataError, SplineBasisSpec, TimeSeries, TrendFit

LOG_LAMBDA_BOUNDS = (-6.0, 6.0)
GOLDEN_REL_WIDTH = 1e-3
LOG_SQ_FLOOR = 1e-12
_GRID_POINTS = 25
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def knot_grid_spec(degree: int, spacing: float, domain: tuple[float, float],
                   origin: float = 0.0) -> SplineBasisSpec:
    """Basis with interior knots at ``origin + k*spacing`` strictly inside ``domain``."""
    low, high = domain
    k0 = math.floor((low - origin) / spacing) + 1
    k1 = math.ceil((high - origin) / spacing) - 1
    knots = [origin + k * spacing for k in range(k0, k1 + 1)]
    eps = 1e-9 * max(1.0, abs(high - low))
    knots = [k for k in knots if low + eps < k < high - eps]
    return SplineBasisSpec(degree, tuple(knots), (low, high))


def restrict_spec(spec: SplineBasisSpec, low: float, high: float) -> SplineBasisSpec:
    """Same degree and knots, domain narrowed to ``[low, high]``; knots outside are dropped."""
    eps = 1e-9 * max(1.0, abs(high - low))
    knots = tuple(k for k in spec.interior_knots if low + eps < k < high - eps)
    return SplineBasisSpec(spec.degree, knots, (low, high))


def _basis_functions(spec: SplineBasisSpec) -> BSpline:
    return BSpline(spec.knot_vector, np.eye(spec.dim), spec.degree, extrapolate=False)


def build_basis(spec: SplineBasisSpec, times) -> np.ndarray:
    """Dense ``len(times) x dim`` B-spline design matrix."""
    x = np.atleast_1d(np.asarray(times, dtype=float))
    low, high = spec.domain
    tol = 1e-9 * max(1.0, high - low)
    if np.any(x < low - tol) or np.any(x > high + tol):
        raise ValueError("evaluation time outside the spline domain")
    x = np.clip(x, low, high)
    B = _basis_functions(spec)(x)
    # the clamped right end evaluates to the last polynomial piece
    at_end = x >= high
    if np.any(at_end):
        B[at_end] = 0.0
        B[at_end, -1] = 1.0
    return B


def build_penalty(spec: SplineBasisSpec) -> np.ndarray:
    """Exact roughness penalty ``M[i, j] = int B_i''(u) B_j''(u) du`` over the domain."""
    if spec.degree < 2:
        raise ValueError("second-derivative penalty needs degree >= 2")
    d2 = _basis_functions(spec).derivative(2)
    breaks = np.unique(spec.knot_vector)
    # product of two degree-(D-2) pieces: Gauss-Legendre with D points is exact
    nodes, wts = np.polynomial.legendre.leggauss(spec.degree)
    M = np.zeros((spec.dim, spec.dim))
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        u = a + half * (nodes + 1.0)
        D2 = d2(u)
        M += (D2 * (half * wts)[:, None]).T @ D2
    return 0.5 * (M + M.T)


def penalized_wls(X, y, weights, M, lam) -> np.ndarray:
    """Minimize ``sum((y - X b)**2 / weights) + lam * b' M b``.

    ``weights`` are noise variances (the diagonal of W).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    Xw = X / w[:, None]
    A = X.T @ Xw + lam * np.asarray(M)
    rhs = Xw.T @ y
    try:
        cf = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("penalized normal equations are singular") from exc
    return linalg.cho_solve(cf, rhs, check_finite=False)


def golden_section(fun, a: float, b: float, rel_width: float = GOLDEN_REL_WIDTH):
    """Minimize a unimodal scalar function on ``[a, b]``.

    Stops once the bracket is narrower than ``rel_width * (b - a)``.
    Returns ``(x_best, f_best)`` among all evaluated points.
    """
    target = rel_width * (b - a)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    best = min((fc, c), (fd, d))
    while b - a > target:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fun(c)
            best = min(best, (fc, c))
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fun(d)
            best = min(best, (fd, d))
    return best[1], best[0]


class Smoother:
    """Penalized weighted spline smoother with fast LOOCV over ``lambda``.

    Uses the Demmler-Reinsch diagonalization of ``X'W^-1 X`` against ``M`` so
    that each ``lambda`` costs O(n k). Falls back to a direct solve per
    ``lambda`` when ``X'W^-1 X`` is singular.
    """

    def __init__(self, X, weights, M):
        self.X = np.asarray(X, dtype=float)
        w = np.asarray(weights, dtype=float)
        # work with weights scaled to max 1 so a constant weight vector reproduces
        # the unit-weight computation bit for bit; lambdas are reported unscaled
        self.scale = float(np.max(w))
        self.w = w / self.scale
        self.M = np.asarray(M, dtype=float)
        self.XtWX = self.X.T @ (self.X / self.w[:, None])
        self.ratio = np.trace(self.XtWX) / np.trace(self.M)
        try:
            R = linalg.cholesky(self.XtWX, lower=False, check_finite=False)
            Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]), lower=False, check_finite=False)
            s, U = linalg.eigh(Rinv.T @ self.M @ Rinv, check_finite=False)
            self.s = np.clip(s, 0.0, None)
            self.G = self.X @ (Rinv @ U)
            self.G2 = self.G ** 2
            self.diag = True
        except linalg.LinAlgError:
            self.diag = False

    def lam(self, u: float) -> float:
        """Penalty on the caller's weight scale for normalized log-penalty ``u``."""
        return self._lam(u) / self.scale

    def _lam(self, u):
        return self.ratio * 10.0 ** u

    def _fit_and_leverage(self, y, lam):
        if self.diag:
            shrink = 1.0 / (1.0 + lam * self.s)
            c = self.G.T @ (y / self.w)
            fitted = self.G @ (shrink * c)
            lev = (self.G2 @ shrink) / self.w
        else:
            A = self.XtWX + lam * self.M
            cf = linalg.cho_factor(A, lower=True, check_finite=False)
            Xw = self.X / self.w[:, None]
            fitted = self.X @ linalg.cho_solve(cf, Xw.T @ y, check_finite=False)
            lev = np.einsum("ij,ji->i", self.X, linalg.cho_solve(cf, Xw.T, check_finite=False))
        return fitted, lev

    def loocv(self, y, lam) -> float:
        """LOOCV score at penalty ``lam`` on the caller's weight scale."""
        return self._loocv(y, lam * self.scale)

    def _loocv(self, y, lam_n):
        fitted, lev = self._fit_and_leverage(y, lam_n)
        denom = np.maximum(1.0 - lev, 1e-10)
        return float(np.sum(((y - fitted) / denom) ** 2))

    def _scorer(self, y):
        if not self.diag:
            return lambda lam: self._loocv(y, lam)
        c = self.G.T @ (y / self.w)
        G, G2, s, w = self.G, self.G2, self.s, self.w

        def score(lam):
            shrink = 1.0 / (1.0 + lam * s)
            r = (y - G @ (shrink * c)) / np.maximum(1.0 - (G2 @ shrink) / w, 1e-10)
            return float(r @ r)
        return score

    def loocv_grid(self, y, us) -> np.ndarray:
        """LOOCV scores at the normalized log-penalties ``us`` (see :meth:`lam`)."""
        lams = self.ratio * 10.0 ** np.asarray(us, dtype=float)
        if not self.diag:
            return np.array([self._loocv(y, lam) for lam in lams])
        shrink = 1.0 / (1.0 + np.outer(self.s, lams))
        c = self.G.T @ (y / self.w)
        fitted = self.G @ (shrink * c[:, None])
        lev = (self.G2 @ shrink) / self.w[:, None]
        r = (y[:, None] - fitted) / np.maximum(1.0 - lev, 1e-10)
        return np.sum(r ** 2, axis=0)

    def select(self, y):
        """Return ``(lambda, u)`` minimizing LOOCV.

        A 25-point grid over ``u`` locates the best basin; golden-section
        search then refines inside the neighbouring grid cells.
        """
        lo, hi = LOG_LAMBDA_BOUNDS
        grid = np.linspace(lo, hi, _GRID_POINTS)
        scores = self.loocv_grid(y, grid)
        k = int(np.argmin(scores))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, _GRID_POINTS - 1)]
        score = self._scorer(y)
        u, f = golden_section(lambda v: score(self._lam(v)), a, b,
                              rel_width=GOLDEN_REL_WIDTH * (hi - lo) / (b - a))
        if scores[k] <= f:
            u = float(grid[k])
        return self.lam(u), float(u)


def select_lambda_loocv(X, y, weights, M) -> float:
    """LOOCV-optimal smoothing penalty for :func:`penalized_wls`."""
    return Smoother(X, weights, M).select(np.asarray(y, dtype=float))[0]


def loocv_score(X, y, weights, M, lam) -> float:
    return Smoother(X, weights, M).loocv(np.asarray(y, dtype=float), lam)


@dataclass(frozen=True)
class FGLSControl:
    max_iters: int = 10
    tol: float = 1e-6


def _trend_specs(times, spec_f, spec_h):
    low, high = float(times[0]), float(times[-1])
    return restrict_spec(spec_f, low, high), restrict_spec(spec_h, low, high)


def fit_fgls_arrays(times, y, spec_f: SplineBasisSpec, spec_h: SplineBasisSpec,
                    max_iters: int = 10, tol: float = 1e-6, start: int = 0) -> TrendFit:
    """Iterative FGLS fit of trend mean and log-variance splines on ``(times, y)``."""
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    degree_min = max(spec_f.degree, spec_h.degree) + 2
    if n < degree_min:
        raise InsufficientDataError(f"trend segment of {n} points is shorter than {degree_min}")
    sf, sh = _trend_specs(times, spec_f, spec_h)
    X, V = build_basis(sf, times), build_basis(sh, times)
    Mf, Mh = build_penalty(sf), build_penalty(sh)
    ones = np.ones(n)

    # (i) homoscedastic penalized least squares
    sm_f = Smoother(X, ones, Mf)
    lam_f, _ = sm_f.select(y)
    beta = penalized_wls(X, y, ones, Mf, lam_f)
    mean = X @ beta

    sm_h = Smoother(V, ones, Mh)
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        # (ii) spline on log squared residuals
        z = np.log(np.maximum((y - mean) ** 2, LOG_SQ_FLOOR))
        lam_h, _ = sm_h.select(z)
        theta = penalized_wls(V, z, ones, Mh, lam_h)
        var = np.exp(V @ theta)
        # (iii) reweighted penalized least squares
        lam_f, _ = Smoother(X, var, Mf).select(y)
        beta = penalized_wls(X, y, var, Mf, lam_f)
        new_mean = X @ beta
        change = np.max(np.abs(new_mean - mean)) / max(np.max(np.abs(mean)), 1e-300)
        mean = new_mean
        if change < tol:
            break
    return TrendFit(beta, theta, lam_f, lam_h, sf, sh, start=start, stop=start + n, n_iter=n_iter)


def fit_fgls(ts: TimeSeries, start: int, stop: int, spec_f: SplineBasisSpec,
             spec_h: SplineBasisSpec, max_iters: int = 10, tol: float = 1e-6) -> TrendFit:
    """Fit the heteroscedastic trend model on indices ``[start, stop)`` of ``ts``.

    Knots of ``spec_f``/``spec_h`` outside the range are dropped and each
    basis domain is narrowed to the range's time span.
    """
    return fit_fgls_arrays(ts.times[start:stop], ts.values[start:stop], spec_f, spec_h,
                           max_iters=max_iters, tol=tol, start=start)


def trend_design(fit: TrendFit, times):
    return build_basis(fit.basis_spec_f, times), build_basis(fit.basis_spec_h, times)


def trend_pointwise_nll(fit: TrendFit, times, y) -> np.ndarray:
    """Per-point ``v't theta / 2 + (y - x't beta)^2 / (2 exp(v't theta))``."""
    X, V = trend_design(fit, times)
    logvar = V @ fit.theta
    resid = np.asarray(y) - X @ fit.beta
    return 0.5 * logvar + 0.5 * resid ** 2 * np.exp(-logvar)


def trend_penalty(fit: TrendFit) -> float:
    """``0.5 lambda_f b'M_f b + 0.5 lambda_h th'M_h th``."""
    Mf, Mh = build_penalty(fit.basis_spec_f), build_penalty(fit.basis_spec_h)
    return 0.5 * fit.lambda_f * float(fit.beta @ Mf @ fit.beta) \
        + 0.5 * fit.lambda_h * float(fit.theta @ Mh @ fit.theta)


def trend_loglik(fit: TrendFit, times, y) -> float:
    """Penalized trend log-likelihood (additive constants dropped)."""
    return -float(np.sum(trend_pointwise_nll(fit, times, y))) - trend_penalty(fit)
