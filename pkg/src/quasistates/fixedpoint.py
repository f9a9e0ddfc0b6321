"""Fixed points as minimizers of a distance sum, free or on a sphere.

The constrained problem

    minimize  sum_t ||L - C(t)||   subject to  ||mu - L|| = X0

is solved by projected Weiszfeld iterations. Each Weiszfeld step minimizes
an isotropic quadratic majorizer of the distance sum, and the closest point
of the sphere to the unconstrained minimizer of an isotropic quadratic is
its radial projection, so every projected step is a majorize-minimize step
and the objective never increases.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .correlation import StateSeries
from .errors import ConfigurationError, DataError

COINCIDE = 1e-12


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FixedPointProblem:
    points: np.ndarray
    reference: np.ndarray
    radius: float
    tol: float = 1e-10
    max_iter: int = 10_000

    def __post_init__(self):
        pts = self.points.coords if isinstance(self.points, StateSeries) else self.points
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ref = np.asarray(self.reference, dtype=float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "reference", ref)
        if pts.shape[1] != ref.shape[0]:
            raise DataError("points and reference differ in dimension")
        if not self.radius > 0:
            raise ConfigurationError("radius must be positive")


@dataclass(frozen=True)
class FixedPointResult:
    point: np.ndarray
    objective: float
    iterations: int
    converged: bool
    residual: float  # | ||mu - C0|| - X0 |
    history: np.ndarray  # objective after every iterate, starting point first
    unique: bool = True
    tangential_gradient: float = 0.0  # relative size of the off-normal gradient


@dataclass(frozen=True)
class ConsistencyReport:
    results: tuple
    distances: np.ndarray  # pairwise ||C0_a - C0_b||
    consistent: bool
    failures: tuple = ()  # (reference index, message)


@dataclass(frozen=True)
class DeltaSeries:
    times: np.ndarray
    values: np.ndarray
    fixed_point: np.ndarray
    mean: np.ndarray


def distance_sum(point, points) -> float:
    return float(np.linalg.norm(points - point, axis=1).sum())


def _weiszfeld_step(y, x):
    """One Weiszfeld update with the Vardi-Zhang correction at data points."""
    diff = x - y
    dist = np.linalg.norm(diff, axis=1)
    at = dist <= COINCIDE
    w = 1.0 / dist[~at]
    if w.size == 0:
        return y.copy()
    t = (w[:, None] * x[~at]).sum(axis=0) / w.sum()
    if not at.any():
        return t
    # y sits on data point(s): move only if the pull of the others is strong enough
    r = np.linalg.norm((w[:, None] * diff[~at]).sum(axis=0))
    eta = float(at.sum())
    if r <= eta:
        return y.copy()
    return (1.0 - eta / r) * t + (eta / r) * y


def geometric_median(points, tol: float = 1e-10, max_iter: int = 10_000,
                     return_result: bool = False):
    """Point minimizing the sum of Euclidean distances (Weiszfeld iteration).

    Starts at the arithmetic mean; stops when a step is shorter than
    ``tol`` times the points' scale. Emits :class:`ConvergenceWarning` if
    ``max_iter`` is hit.
    """
    x = points.coords if isinstance(points, StateSeries) else points
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(x) == 0:
        raise DataError("geometric median of an empty set")
    scale = max(float(np.abs(x).max()), 1.0)
    y = x.mean(axis=0)
    history = [distance_sum(y, x)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y_new = _weiszfeld_step(y, x)
        step = float(np.linalg.norm(y_new - y))
        y = y_new
        history.append(distance_sum(y, x))
        if step <= tol * scale:
            converged = True
            break
    if not converged:
        warnings.warn(f"Weiszfeld did not converge in {max_iter} iterations", ConvergenceWarning)
    if return_result:
        return FixedPointResult(y, history[-1], it, converged, 0.0, np.array(history))
    return y


def _project(y, mu, radius, fallback):
    v = y - mu
    n = np.linalg.norm(v)
    if n <= COINCIDE:
        v, n = fallback - mu, np.linalg.norm(fallback - mu)
    return mu + radius * v / n


def _start_point(x, mu, radius):
    cbar = x.mean(axis=0)
    if np.linalg.norm(cbar - mu) > COINCIDE:
        return _project(cbar, mu, radius, cbar)
    far = x[int(np.argmax(np.linalg.norm(x - mu, axis=1)))]
    return mu + radius * (far - mu) / np.linalg.norm(far - mu)


def _solve_on_sphere(x, mu, radius, start, tol, max_iter):
    y = start
    history = [distance_sum(y, x)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y_new = _project(_weiszfeld_step(y, x), mu, radius, y)
        step = float(np.linalg.norm(y_new - y))
        y = y_new
        history.append(distance_sum(y, x))
        if step <= tol * radius:
            converged = True
            break
    return y, np.array(history), it, converged


def _tangential_gradient(y, x, mu):
    diff = y - x
    dist = np.linalg.norm(diff, axis=1)
    keep = dist > COINCIDE
    g = (diff[keep] / dist[keep, None]).sum(axis=0)
    n = (y - mu) / np.linalg.norm(y - mu)
    tangential = g - (g @ n) * n
    return float(np.linalg.norm(tangential) / max(np.linalg.norm(g), COINCIDE))


def constrained_fixed_point(problem: FixedPointProblem, n_starts: int = 5, seed: int = 0,
                            unique_tol: float = 1e-6) -> FixedPointResult:
    """Minimize the distance sum over the sphere ||mu - L|| = X0.

    The main run starts at the radial projection of the points' mean onto
    the sphere. ``n_starts`` additional runs from random sphere points
    (seeded) check uniqueness: if any ends with a lower objective more than
    ``unique_tol * X0`` away, the better point is returned and the result
    is marked non-unique.
    """
    x, mu, radius = problem.points, problem.reference, float(problem.radius)
    if np.all(np.linalg.norm(x - mu, axis=1) <= COINCIDE):
        raise DataError("all points coincide with the reference; the constraint is degenerate")
    start = _start_point(x, mu, radius)
    y, history, iters, converged = _solve_on_sphere(x, mu, radius, start, problem.tol,
                                                    problem.max_iter)
    best = (history[-1], y, history, iters, converged)
    unique = True
    rng = np.random.default_rng(seed)
    for _ in range(n_starts):
        direction = rng.standard_normal(len(mu))
        s = mu + radius * direction / np.linalg.norm(direction)
        y2, h2, i2, c2 = _solve_on_sphere(x, mu, radius, s, problem.tol, problem.max_iter)
        if np.linalg.norm(y2 - y) > unique_tol * radius:
            unique = False
            if h2[-1] < best[0]:
                best = (h2[-1], y2, h2, i2, c2)
    obj, y, history, iters, converged = best
    if not converged:
        warnings.warn(f"projected Weiszfeld did not converge in {problem.max_iter} iterations",
                      ConvergenceWarning)
    residual = abs(float(np.linalg.norm(mu - y)) - radius)
    return FixedPointResult(y, float(obj), iters, converged, residual, history, unique,
                            _tangential_gradient(y, x, mu))


def reference_consistency(points, references, tol_match: float, **solver) -> ConsistencyReport:
    """Solve the constrained problem once per ``(mu, X0)`` and compare solutions."""
    if len(references) < 2:
        raise ConfigurationError("consistency check needs at least two references")
    results, failures = [], []
    for k, (mu, radius) in enumerate(references):
        try:
            results.append(constrained_fixed_point(FixedPointProblem(points, mu, radius), **solver))
        except (DataError, ConfigurationError) as exc:
            results.append(None)
            failures.append((k, str(exc)))
    n = len(results)
    dist = np.full((n, n), np.nan)
    for a in range(n):
        for b in range(n):
            if results[a] is not None and results[b] is not None:
                dist[a, b] = np.linalg.norm(results[a].point - results[b].point)
    ok = not failures and bool(np.all(dist[~np.eye(n, dtype=bool)] < tol_match))
    return ConsistencyReport(tuple(results), dist, ok, tuple(failures))


def delta_series(points, fixed_point, mean, times=None) -> DeltaSeries:
    """Delta(t) = ||C(t) - C0|| - ||C(t) - Cbar||; negative means nearer to C0."""
    if isinstance(points, StateSeries):
        times = points.t_end if times is None else times
        points = points.coords
    x = np.atleast_2d(np.asarray(points, dtype=float))
    c0 = np.asarray(fixed_point, dtype=float)
    cbar = np.asarray(mean, dtype=float)
    if x.shape[1] != c0.shape[0] or c0.shape != cbar.shape:
        raise DataError("points, fixed point and mean must share a dimension")
    values = np.linalg.norm(x - c0, axis=1) - np.linalg.norm(x - cbar, axis=1)
    if times is None:
        times = np.arange(len(x))
    return DeltaSeries(np.asarray(times), values, c0, cbar)
