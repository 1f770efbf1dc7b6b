"""Per-timestep kernel density estimation and mode-centered intervals.

Scenario ensembles are summarized pointwise: a Gaussian KDE is fitted over
the N scenario values at each timestep, the sample point of maximum density
acts as the deterministic forecast, and prediction intervals are either
mode-centered runs of sorted sample points (adaptive) or symmetric CDF
quantiles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect
from scipy.special import ndtr

from .errors import PreconditionError

log = logging.getLogger(__name__)

INTERVAL_KINDS = ("adaptive", "symmetric")


@dataclass(frozen=True)
class KdeModel:
    """Gaussian-kernel density model over a sorted sample vector."""

    samples: np.ndarray  # sorted ascending
    bandwidth: float

    @property
    def n(self) -> int:
        return len(self.samples)


def fit_kde(samples: np.ndarray) -> KdeModel:
    """Fit a KDE with Silverman's bandwidth:
    0.9 * min(sample std, IQR/1.34) * n^(-1/5), falling back to
    1e-6 * (1 + |mean|) when the rule yields zero (e.g. all values equal).
    """
    z = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(z)
    if n < 2:
        raise PreconditionError(f"KDE needs at least 2 samples, got {n}")
    sigma = float(np.std(z, ddof=1))
    q75, q25 = np.percentile(z, [75.0, 25.0])
    h = 0.9 * min(sigma, (q75 - q25) / 1.34) * n ** (-0.2)
    if h <= 0.0:
        h = 1e-6 * (1.0 + abs(float(np.mean(z))))
    return KdeModel(samples=z, bandwidth=float(h))


def pdf(model: KdeModel, z) -> np.ndarray | float:
    """Kernel density at z (scalar or array):
    (1/(n h)) * sum_i phi((z - z_i)/h)."""
    zq = np.atleast_1d(np.asarray(z, dtype=np.float64))
    u = (zq[:, None] - model.samples[None, :]) / model.bandwidth
    vals = np.exp(-0.5 * u * u).sum(axis=1) / (model.n * model.bandwidth * np.sqrt(2.0 * np.pi))
    return float(vals[0]) if np.isscalar(z) or np.ndim(z) == 0 else vals


def cdf(model: KdeModel, z) -> np.ndarray | float:
    """KDE distribution function: (1/n) * sum_i Phi((z - z_i)/h)."""
    zq = np.atleast_1d(np.asarray(z, dtype=np.float64))
    u = (zq[:, None] - model.samples[None, :]) / model.bandwidth
    vals = ndtr(u).mean(axis=1)
    return float(vals[0]) if np.isscalar(z) or np.ndim(z) == 0 else vals


def quantile(model: KdeModel, alpha: float) -> float:
    """Invert the KDE CDF by bisection to absolute tolerance 1e-6 * h."""
    if not 0.0 < alpha < 1.0:
        raise PreconditionError(f"quantile level must be in (0, 1), got {alpha}")
    h = model.bandwidth
    lo = float(model.samples[0]) - 10.0 * h
    hi = float(model.samples[-1]) + 10.0 * h
    # expand until the bracket straddles alpha; 10h steps converge fast
    while cdf(model, lo) >= alpha:
        lo -= 10.0 * h
    while cdf(model, hi) <= alpha:
        hi += 10.0 * h
    return float(bisect(lambda q: cdf(model, q) - alpha, lo, hi, xtol=1e-6 * h, maxiter=200))


def max_density_point(model: KdeModel) -> tuple[int, float]:
    """Index and value of the sample point with the highest KDE density;
    ties resolve to the smallest index."""
    dens = pdf(model, model.samples)
    c = int(np.argmax(dens))
    return c, float(model.samples[c])


def adaptive_interval(model: KdeModel, gamma: float) -> tuple[float, float]:
    """Mode-centered interval of sorted sample points.

    With n_g = round-half-even(gamma * n) and c the max-density index
    (0-based): near the lower edge (c < n_g) the interval is
    [z_0, z_{n_g}]; near the upper edge (c >= n - n_g) it is
    [z_{n-1-n_g}, z_{n-1}]; otherwise it is
    [z_{c - floor(n_g/2)}, z_{c + ceil(n_g/2)}], always spanning n_g + 1
    sample points.
    """
    if not 0.0 < gamma < 1.0:
        raise PreconditionError(f"interval level must be in (0, 1), got {gamma}")
    z = model.samples
    n = model.n
    n_g = min(round(gamma * n), n - 1)
    c, _ = max_density_point(model)
    if c < n_g:
        lo, hi = z[0], z[n_g]
    elif c >= n - n_g:
        lo, hi = z[n - 1 - n_g], z[n - 1]
    else:
        lo, hi = z[c - n_g // 2], z[c + (n_g + 1) // 2]
    return float(lo), float(hi)


@dataclass(frozen=True)
class IntervalForecast:
    """Pointwise forecast summary for one day: the max-density point, the
    KDE median, and lower/upper bounds per requested level."""

    z_max: np.ndarray  # [s]
    median: np.ndarray  # [s]
    lower: dict[float, np.ndarray]  # level -> [s]
    upper: dict[float, np.ndarray]
    interval_kind: str

    @property
    def horizon(self) -> int:
        return len(self.z_max)

    def levels(self) -> list[float]:
        return sorted(self.lower)


def interval_forecast(scenarios, gammas: list[float], kind: str) -> IntervalForecast:
    """Fit per-timestep KDEs over a scenario matrix ([N, s] array or an
    object with a ``.scenarios`` attribute) and assemble interval bounds."""
    matrix = np.asarray(getattr(scenarios, "scenarios", scenarios), dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise PreconditionError(f"need an [N>=2, s] scenario matrix, got shape {matrix.shape}")
    if kind not in INTERVAL_KINDS:
        raise PreconditionError(f"interval kind must be one of {INTERVAL_KINDS}, got {kind!r}")
    for g in gammas:
        if not 0.0 < g < 1.0:
            raise PreconditionError(f"interval level must be in (0, 1), got {g}")
    s = matrix.shape[1]
    z_max = np.empty(s)
    median = np.empty(s)
    lower = {g: np.empty(s) for g in gammas}
    upper = {g: np.empty(s) for g in gammas}
    for k in range(s):
        column = matrix[:, k]
        if np.all(column == column[0]):
            log.warning("degenerate scenario column at timestep %d: all values equal", k)
            z_max[k] = median[k] = column[0]
            for g in gammas:
                lower[g][k] = upper[g][k] = column[0]
            continue
        model = fit_kde(column)
        _, z_max[k] = max_density_point(model)
        median[k] = quantile(model, 0.5)
        for g in gammas:
            if kind == "adaptive":
                lower[g][k], upper[g][k] = adaptive_interval(model, g)
            else:
                lower[g][k] = quantile(model, (1.0 - g) / 2.0)
                upper[g][k] = quantile(model, (1.0 + g) / 2.0)
    return IntervalForecast(z_max=z_max, median=median, lower=lower, upper=upper, interval_kind=kind)
