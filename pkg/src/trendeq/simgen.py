"""Synthetic trend-then-equilibrium series.

A trend regime (Gaussian-process or random polynomial mean with a noise sd
ramping between 0.1 and 2.0 with the trend level) is followed by an FI or
ARFIMA(1, d, 1) equilibrium started from an empty history at the change point.
All randomness derives from one seed through ``numpy.random.SeedSequence``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from . import fiproc
from .core import MultiSeries, TimeSeries, index_of

# nine-value grid of the main simulations and the 20-value grid of the trend-fit study
D_GRID_MAIN = tuple(round(-0.25 + 0.2 * k, 2) for k in range(9))
D_GRID_EXTENDED = tuple(round(-0.45 + 0.1 * k, 2) for k in range(20))
TAU_GRID_HOURS = (15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0)

SD_LOW, SD_HIGH = 0.1, 2.0


class DegenerateTrendError(ValueError):
    pass


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_trend_gp(n: int, seed=None, dt: float = 70 / 400, variance: float = 10.0,
                 lengthscale: float = 1.0) -> np.ndarray:
    """Draw a zero-mean GP path with kernel ``variance * exp(-0.5 (s - t)**2 / lengthscale**2)``.

    Sample ``k`` sits at ``k * dt`` hours. The Cholesky factorization gets a
    diagonal jitter of 1e-8, raised tenfold up to 1e-4 if needed.
    """
    if n < 1:
        raise ValueError("n must be positive")
    t = dt * np.arange(n)
    K = variance * np.exp(-0.5 * ((t[:, None] - t[None, :]) / lengthscale) ** 2)
    jitter = 1e-8
    while True:
        try:
            L = linalg.cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
            break
        except linalg.LinAlgError:
            jitter *= 10
            if jitter > 1e-4 * (1 + 1e-9):
                raise np.linalg.LinAlgError("GP covariance not factorizable with jitter <= 1e-4")
    return L @ _rng(seed).standard_normal(n)


def poly_coefficients(seed=None) -> np.ndarray:
    c = _rng(seed).normal(0.0, 0.1, 6)
    j = np.arange(6)
    return np.where(j >= 3, c * 0.1 ** j, c)


def gen_trend_poly(n: int, seed=None, dt: float = 70 / 400) -> np.ndarray:
    """Random degree-5 polynomial in hours; coefficients of degree ``j >= 3`` shrunk by ``0.1**j``."""
    if n < 1:
        raise ValueError("n must be positive")
    c = poly_coefficients(seed)
    return np.polynomial.polynomial.polyval(dt * np.arange(n), c)


def apply_noise_schedule(f, low: float = SD_LOW, high: float = SD_HIGH) -> np.ndarray:
    """Map the trend affinely onto noise standard deviations in ``[low, high]``."""
    f = np.asarray(f, dtype=float)
    span = f.max() - f.min()
    if not span > 0:
        raise DegenerateTrendError("constant trend has no range to map onto noise levels")
    return (high - low) / span * (f - f.min()) + low


@dataclass(frozen=True)
class ScenarioSpec:
    T: int = 400
    horizon_hours: float = 70.0
    tau_hours: tuple[float, ...] = (20.0,)
    d: float = 0.25
    trend: str = "gp"  # gp | poly
    gp_variance: float = 10.0
    gp_lengthscale: float = 1.0
    equilibrium: str = "fi"  # fi | arfima
    phi: float | None = None  # ARFIMA; None draws Unif(0, 1) per series
    theta_ma: float | None = None
    eps_sd: float = 0.5
    noise: str = "ramp"  # ramp | constant
    noise_sd: float = 1.0
    p: int = 1
    seed: int = 0

    def __post_init__(self):
        taus = self.tau_hours
        if np.isscalar(taus):
            taus = (float(taus),)
        taus = tuple(float(t) for t in taus)
        if len(taus) == 1 and self.p > 1:
            taus = taus * self.p
        object.__setattr__(self, "tau_hours", taus)
        if len(taus) != self.p:
            raise ValueError("need one change point per series")
        if self.T < 50:
            raise ValueError("T must be at least 50")
        if any(not 0 <= t < self.horizon_hours for t in taus):
            raise ValueError("change points must lie in [0, horizon)")
        if self.trend not in ("gp", "poly"):
            raise ValueError(f"unknown trend family {self.trend!r}")
        if self.equilibrium not in ("fi", "arfima"):
            raise ValueError(f"unknown equilibrium model {self.equilibrium!r}")
        if self.noise not in ("ramp", "constant"):
            raise ValueError(f"unknown noise schedule {self.noise!r}")

    @property
    def dt(self) -> float:
        return self.horizon_hours / self.T

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["tau_hours"] = list(self.tau_hours)
        return doc


@dataclass(frozen=True)
class SeriesTruth:
    tau_hours: float
    tau_index: int
    d: float
    trend: tuple[float, ...]
    noise_sd: tuple[float, ...]
    phi: float | None = None
    theta_ma: float | None = None

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["trend"] = list(self.trend)
        doc["noise_sd"] = list(self.noise_sd)
        return doc


@dataclass(frozen=True)
class Scenario:
    data: MultiSeries
    truth: tuple[SeriesTruth, ...]
    spec: ScenarioSpec = field(repr=False, default=None)


def series_streams(seed, p: int):
    """Per-series ``(trend, noise, equilibrium, arma)`` seed sequences."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [tuple(child.spawn(4)) for child in root.spawn(p)]


def gen_scenario(spec: ScenarioSpec, seed=None) -> Scenario:
    """Simulate ``spec.p`` series; ``seed`` overrides ``spec.seed`` (e.g. a replicate stream)."""
    seed = spec.seed if seed is None else seed
    dt = spec.dt
    grid = TimeSeries(np.zeros(spec.T), 0.0, dt)
    series, truth = [], []
    for j, (s_trend, s_noise, s_eq, s_arma) in enumerate(series_streams(seed, spec.p)):
        tau = index_of(grid, spec.tau_hours[j])
        if spec.trend == "gp":
            f = gen_trend_gp(tau, np.random.default_rng(s_trend), dt,
                             spec.gp_variance, spec.gp_lengthscale) if tau else np.empty(0)
        else:
            f = gen_trend_poly(tau, np.random.default_rng(s_trend), dt) if tau else np.empty(0)
        if tau == 0:
            sd = np.empty(0)
        elif spec.noise == "ramp":
            sd = apply_noise_schedule(f)
        else:
            sd = np.full(tau, spec.noise_sd)
        trend_part = f + sd * np.random.default_rng(s_noise).standard_normal(tau)
        n_eq = spec.T - tau
        phi = theta = None
        if spec.equilibrium == "fi":
            eq = fiproc.simulate_fi(n_eq, spec.d, 0.0, spec.eps_sd, np.random.default_rng(s_eq))
        else:
            arma_rng = np.random.default_rng(s_arma)
            phi = spec.phi if spec.phi is not None else float(arma_rng.uniform(0, 1))
            theta = spec.theta_ma if spec.theta_ma is not None else float(arma_rng.uniform(0, 1))
            eq = fiproc.simulate_arfima(n_eq, spec.d, phi, theta, 0.0, spec.eps_sd,
                                        np.random.default_rng(s_eq))
        series.append(TimeSeries(np.concatenate([trend_part, eq]), 0.0, dt, f"y{j}"))
        truth.append(SeriesTruth(spec.tau_hours[j], tau, spec.d, tuple(f), tuple(sd), phi, theta))
    return Scenario(MultiSeries(tuple(series)), tuple(truth), spec)


def replicate_seeds(seed: int, reps: int):
    """Independent seed sequences for ``reps`` replicates of one scenario."""
    return np.random.SeedSequence(seed).spawn(reps)
