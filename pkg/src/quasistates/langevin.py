"""Kramers-Moyal drift/diffusion estimation and potentials of 1-D series.

The conditional moments

    M_tau^(n)(x) = < (X(t+tau) - X(t))^n | X(t) = x >

are estimated by Nadaraya-Watson regression with an Epanechnikov kernel,
and D^(n)(x) = M_tau^(n)(x) / (n! tau). The potential is the negative
primitive of the drift, fixed to zero at the left end of the grid.

Units: with a series sampled once per trading day, D1, D2 and the
potential are all per trading day.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.signal import find_peaks, lfilter

from .errors import ConfigurationError, EstimationError, InsufficientDataError

MIN_SERIES_LENGTH = 100


class Minimum(NamedTuple):
    x: float
    phi: float
    prominence: float


@dataclass(frozen=True)
class MomentGrid:
    grid: np.ndarray
    taus: tuple
    orders: tuple
    moments: np.ndarray  # (n_orders, n_taus, n_grid); NaN where counts == 0
    counts: np.ndarray  # effective sample weight sum_t K_h(X(t) - x) * h
    bandwidth: float

    def moment(self, order: int, tau: int) -> np.ndarray:
        return self.moments[self.orders.index(order), self.taus.index(tau)]


@dataclass(frozen=True)
class DriftEstimate:
    grid: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    counts: np.ndarray
    valid: np.ndarray
    bandwidth: float
    window: tuple = (0, 0)


@dataclass(frozen=True)
class PotentialCurve:
    grid: np.ndarray
    phi: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    counts: np.ndarray
    window: tuple = (0, 0)
    minima: tuple = ()
    discarded: tuple = ()  # (start, end) grid-index ranges of unused valid blocks
    failed: bool = False
    message: str = ""

    def deepest(self) -> Minimum | None:
        """Minimum with the largest prominence (the deepest well)."""
        if not self.minima:
            return None
        return max(self.minima, key=lambda m: (m.prominence, -m.x))


@dataclass(frozen=True)
class EstimationConfig:
    n_grid: int = 101
    quantiles: tuple = (0.01, 0.99)
    bandwidth: float | None = None  # None -> Silverman-type rule
    tau_policy: str = "tau1"
    count_min: float = 10.0
    prominence: float = 0.05  # fraction of the potential's range


@dataclass(frozen=True)
class OUParams:
    gamma: float
    level: float
    noise: float
    x0: float
    dt: float = 1.0
    n_points: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0 or not self.dt > 0 or self.noise < 0 or self.n_points < 1:
            raise ConfigurationError("OU parameters need gamma > 0, dt > 0, noise >= 0")


def default_grid(series, n_grid: int = 101, quantiles=(0.01, 0.99)) -> np.ndarray:
    lo, hi = np.quantile(np.asarray(series, dtype=float), quantiles)
    if not hi > lo:
        raise EstimationError("series has no spread between the grid quantiles")
    return np.linspace(lo, hi, n_grid)


def silverman_bandwidth(series) -> float:
    x = np.asarray(series, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * len(x) ** (-0.2)


def epanechnikov(u, h):
    """K_h(u) = 3/(4h) (1 - (u/h)^2) on |u| < h."""
    z = np.asarray(u) / h
    return np.where(np.abs(z) < 1.0, 0.75 / h * (1.0 - z * z), 0.0)


def conditional_moments(series, orders=(1, 2), taus=(1,), grid=None, bandwidth=None,
                        chunk: int = 16) -> MomentGrid:
    series = np.asarray(series, dtype=float)
    orders = tuple(int(n) for n in np.atleast_1d(orders))
    taus = tuple(int(t) for t in np.atleast_1d(taus))
    if any(n not in (1, 2) for n in orders):
        raise ConfigurationError("only moments of order 1 and 2 are supported")
    if min(taus) < 1 or len(series) <= max(taus):
        raise InsufficientDataError("series must be longer than the largest lag")
    if grid is None:
        grid = default_grid(series)
    grid = np.asarray(grid, dtype=float)
    if len(grid) > 1 and np.any(np.diff(grid) <= 0):
        raise ConfigurationError("grid must be strictly increasing")
    h = silverman_bandwidth(series) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ConfigurationError("bandwidth must be positive")

    n_use = len(series) - max(taus)
    start = series[:n_use]
    incs = np.stack([series[tau:tau + n_use] - start for tau in taus])  # (n_taus, n_use)
    powers = np.stack([incs ** n for n in orders])  # (n_orders, n_taus, n_use)
    sums = np.zeros((len(orders), len(taus), len(grid)))
    mass = np.zeros(len(grid))
    for lo in range(0, len(grid), chunk):
        w = epanechnikov(grid[lo:lo + chunk, None] - start[None, :], h)
        mass[lo:lo + chunk] = w.sum(axis=1)
        sums[:, :, lo:lo + chunk] = np.einsum("gt,nkt->nkg", w, powers)
    with np.errstate(invalid="ignore", divide="ignore"):
        moments = np.where(mass > 0, sums / mass, np.nan)
    return MomentGrid(grid, taus, orders, moments, mass * h, h)


def estimate_drift(series, grid=None, bandwidth=None, tau_policy: str = "tau1",
                   count_min: float = 10.0, window=(0, 0), n_grid: int = 101) -> DriftEstimate:
    """Drift D1 and diffusion D2 on a grid.

    ``tau_policy="tau1"`` uses the single lag tau = 1; ``"extrapolate"`` fits
    M_tau = slope * tau through the origin over tau in {1, 2, 3} with
    weights 1/tau and takes slope / n! as the coefficient.
    """
    series = np.asarray(series, dtype=float)
    if len(series) < MIN_SERIES_LENGTH:
        raise InsufficientDataError(
            f"need at least {MIN_SERIES_LENGTH} points, got {len(series)}"
        )
    if grid is None:
        grid = default_grid(series, n_grid)
    grid = np.asarray(grid, dtype=float)
    if grid[0] < series.min() or grid[-1] > series.max():
        raise ConfigurationError("grid extends beyond the observed data range")
    if tau_policy == "tau1":
        taus = (1,)
    elif tau_policy == "extrapolate":
        taus = (1, 2, 3)
    else:
        raise ConfigurationError(f"unknown tau policy {tau_policy!r}")
    mg = conditional_moments(series, (1, 2), taus, grid, bandwidth)
    tau_arr = np.asarray(taus, dtype=float)
    # weighted (1/tau) least squares through the origin: slope = sum M / sum tau
    slopes = mg.moments.sum(axis=1) / tau_arr.sum()
    d1 = slopes[0] / math.factorial(1)
    d2 = slopes[1] / math.factorial(2)
    valid = (mg.counts >= count_min) & np.isfinite(d1) & np.isfinite(d2)
    if not valid.any():
        raise EstimationError("no grid point has enough kernel support")
    return DriftEstimate(grid, d1, d2, mg.counts, valid, mg.bandwidth, tuple(window))


def _blocks(mask):
    """(start, end) index ranges, inclusive, of runs of True."""
    edges = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def integrate_potential(drift: DriftEstimate, min_points: int = 5) -> PotentialCurve:
    """Phi(x) = -int D1 dx by the cumulative trapezoidal rule, Phi = 0 at block start.

    Only the contiguous run of valid grid points carrying the most kernel
    mass is used; the other runs are listed in ``discarded``.
    """
    blocks = _blocks(np.asarray(drift.valid, dtype=bool))
    if not blocks:
        raise EstimationError("drift estimate has no valid grid points")
    counts = np.asarray(drift.counts, dtype=float)
    main = max(blocks, key=lambda b: (counts[b[0]:b[1] + 1].sum(), b[1] - b[0], -b[0]))
    a, b = main
    if b - a + 1 < min_points:
        raise EstimationError(f"largest valid block has only {b - a + 1} grid points")
    x = drift.grid[a:b + 1]
    f = -drift.d1[a:b + 1]
    phi = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
    return PotentialCurve(
        grid=x,
        phi=phi,
        d1=drift.d1[a:b + 1],
        d2=drift.d2[a:b + 1],
        counts=drift.counts[a:b + 1],
        window=drift.window,
        discarded=tuple(blk for blk in blocks if blk != main),
    )


def find_minima(curve: PotentialCurve, prominence_min: float | None = None,
                relative: float = 0.05):
    """Local minima of the 3-point smoothed potential with enough prominence.

    ``prominence_min`` defaults to ``relative`` times the range of Phi. A
    flat-bottomed well is reported once, at the middle of its bottom.
    """
    phi = np.asarray(curve.phi, dtype=float)
    if len(phi) < 3:
        return []
    span = float(phi.max() - phi.min())
    if prominence_min is None:
        prominence_min = relative * span
    if span == 0.0:
        return []
    padded = np.concatenate([[phi[0]], phi, [phi[-1]]])
    smooth = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
    peaks, props = find_peaks(-smooth, prominence=max(prominence_min, np.finfo(float).tiny))
    return [
        Minimum(float(curve.grid[i]), float(phi[i]), float(p))
        for i, p in zip(peaks, props["prominences"])
    ]


def potential(series, config: EstimationConfig = EstimationConfig(), window=(0, 0)) -> PotentialCurve:
    """Drift estimate -> potential -> minima, with ``config`` conventions."""
    series = np.asarray(series, dtype=float)
    if len(series) < MIN_SERIES_LENGTH:
        raise InsufficientDataError(
            f"need at least {MIN_SERIES_LENGTH} points, got {len(series)}"
        )
    grid = default_grid(series, config.n_grid, config.quantiles)
    drift = estimate_drift(series, grid, config.bandwidth, config.tau_policy,
                           config.count_min, window)
    curve = integrate_potential(drift)
    minima = find_minima(curve, relative=config.prominence)
    return replace(curve, minima=tuple(minima))


def sliding_potentials(series, window: int = 1000, shift: int = 21,
                       config: EstimationConfig = EstimationConfig(), times=None):
    """One potential per window position; failed windows are flagged, not skipped.

    ``series`` may be a :class:`~quasistates.clustering.DistanceSeries`, in
    which case its time stamps label the windows.
    """
    if hasattr(series, "values") and hasattr(series, "times"):
        times = series.times if times is None else times
        series = series.values
    series = np.asarray(series, dtype=float)
    if times is None:
        times = np.arange(len(series))
    if window < 1 or shift < 1:
        raise ConfigurationError("window and shift must be positive")
    if len(series) < window:
        raise InsufficientDataError(f"series length {len(series)} < window {window}")
    curves = []
    for start in range(0, len(series) - window + 1, shift):
        span = (int(times[start]), int(times[start + window - 1]))
        try:
            curves.append(potential(series[start:start + window], config, span))
        except (EstimationError, InsufficientDataError, ConfigurationError) as exc:
            empty = np.empty(0)
            curves.append(PotentialCurve(empty, empty, empty, empty, empty, span,
                                         failed=True, message=str(exc)))
    return curves


def simulate_ou(params: OUParams) -> np.ndarray:
    """Euler-Maruyama path of dX = -gamma (X - level) dt + sqrt(2 D dt) xi.

    The returned array has ``n_points`` values, the first being ``x0``.
    """
    rng = np.random.default_rng(params.seed)
    a = 1.0 - params.gamma * params.dt
    e = np.empty(params.n_points)
    e[0] = params.x0 - params.level
    e[1:] = math.sqrt(2.0 * params.noise * params.dt) * rng.standard_normal(params.n_points - 1)
    # AR(1) recursion y[t] = a*y[t-1] + e[t], i.e. the Euler step written as a filter
    return params.level + lfilter([1.0], [1.0, -a], e)
