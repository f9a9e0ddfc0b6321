"""Seeded regime-switching price panels with known sector correlation structure.

Every regime is an S x S *sector template*: entry (a, a) is the correlation
between two distinct stocks of sector a, entry (a, b) the correlation
between a stock of sector a and one of sector b. Daily returns inside a
regime are Gaussian with the stock-level correlation matrix implied by the
template; prices are the compounded returns.

A regime may carry a ``wobble``: a symmetric S x S direction added to the
template with a piecewise-constant amplitude that cycles through
``wobble_levels`` every ``wobble_period`` days. This produces one dynamical
state whose correlation matrices form several geometric sub-clusters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .ingest import PricePanel, SectorMap


@dataclass(frozen=True)
class Regime:
    name: str
    template: np.ndarray
    wobble: np.ndarray | None = None
    wobble_levels: tuple = ()
    wobble_period: int = 100


@dataclass(frozen=True)
class Scenario:
    sectors: tuple
    stocks_per_sector: int
    regimes: tuple
    schedule: tuple  # ((regime index, n_days), ...)
    volatility: float = 0.01
    seed: int = 0
    start_date: str = "2000-01-03"
    start_price: float = 100.0
    extra: dict = field(default_factory=dict)  # pipeline hints (e.g. threshold)

    @property
    def n_days(self) -> int:
        """Number of price dates (one more than the number of returns)."""
        return sum(n for _, n in self.schedule) + 1


@dataclass(frozen=True)
class SyntheticData:
    prices: PricePanel
    sectors: SectorMap
    labels: np.ndarray  # regime index of the return starting at each price date
    templates: tuple  # sector template per regime (without wobble)


def stock_correlation(template, sector_of) -> np.ndarray:
    t = np.asarray(template, dtype=float)
    c = t[np.ix_(sector_of, sector_of)].copy()
    np.fill_diagonal(c, 1.0)
    return c


def _factor(corr, name):
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < -1e-10:
        raise DataError(f"regime {name!r}: template implies a correlation matrix that is not "
                        f"positive semidefinite (min eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def generate(scenario: Scenario) -> SyntheticData:
    n_sec = len(scenario.sectors)
    sector_of = np.repeat(np.arange(n_sec), scenario.stocks_per_sector)
    n_stocks = len(sector_of)
    tickers = tuple(f"S{k:03d}" for k in range(n_stocks))
    for idx, _ in scenario.schedule:
        if not 0 <= idx < len(scenario.regimes):
            raise ConfigurationError(f"schedule refers to unknown regime {idx}")

    # factor per (regime, wobble level); PSD checked up front for every variant
    factors = {}
    for r, reg in enumerate(scenario.regimes):
        template = np.asarray(reg.template, dtype=float)
        if template.shape != (n_sec, n_sec) or not np.allclose(template, template.T):
            raise DataError(f"regime {reg.name!r}: template must be a symmetric {n_sec}x{n_sec} matrix")
        levels = reg.wobble_levels if reg.wobble is not None else (0.0,)
        for lv in levels:
            t = template + lv * np.asarray(reg.wobble if reg.wobble is not None else 0.0)
            factors[(r, lv)] = _factor(stock_correlation(t, sector_of), reg.name)

    rng = np.random.default_rng(scenario.seed)
    vols = scenario.volatility * rng.uniform(0.5, 1.5, n_stocks)
    n_ret = scenario.n_days - 1
    returns = np.empty((n_ret, n_stocks))
    labels = np.empty(n_ret + 1, dtype=int)
    t = 0
    for r, n in scenario.schedule:
        reg = scenario.regimes[r]
        z = rng.standard_normal((n, n_stocks))
        if reg.wobble is None:
            returns[t:t + n] = z @ factors[(r, 0.0)].T
        else:
            k = len(reg.wobble_levels)
            for s in range(0, n, reg.wobble_period):
                lv = reg.wobble_levels[((t + s) // reg.wobble_period) % k]
                e = min(s + reg.wobble_period, n)
                returns[t + s:t + e] = z[s:e] @ factors[(r, lv)].T
        labels[t:t + n] = r
        t += n
    labels[-1] = labels[-2]
    returns *= vols
    growth = np.vstack([np.ones(n_stocks), np.cumprod(1.0 + returns, axis=0)])
    prices = scenario.start_price * growth
    dates = np.busday_offset(np.datetime64(scenario.start_date, "D"), np.arange(scenario.n_days),
                             roll="forward")
    sectors = SectorMap(
        {tk: scenario.sectors[s] for tk, s in zip(tickers, sector_of)}, tuple(scenario.sectors)
    )
    templates = tuple(np.asarray(reg.template, dtype=float) for reg in scenario.regimes)
    return SyntheticData(PricePanel(dates, tickers, prices), sectors, labels, templates)


def _uniform_template(within, between, n_sec=3):
    within = np.broadcast_to(np.asarray(within, dtype=float), (n_sec,))
    t = np.full((n_sec, n_sec), float(between))
    t[np.diag_indices(n_sec)] = within
    return t


SECTORS3 = ("Energy", "Financials", "Technology")


def three_regime(seed: int = 0, n_days: int = 4000) -> Scenario:
    """Three well-separated regimes, 3 sectors x 10 stocks."""
    regimes = (
        Regime("calm", _uniform_template(0.1, 0.0)),
        Regime("crisis", _uniform_template(0.95, 0.85)),
        Regime("rotation", _uniform_template(0.95, -0.2)),
    )
    schedule = _scale_schedule(((0, 1400), (1, 1300), (2, 1300)), n_days - 1)
    return Scenario(SECTORS3, 10, regimes, schedule, seed=seed, extra={"threshold": 0.3})


def one_regime(seed: int = 0, n_days: int = 1500) -> Scenario:
    regimes = (Regime("calm", _uniform_template(0.4, 0.2)),)
    return Scenario(SECTORS3, 10, regimes, ((0, n_days - 1),), seed=seed, extra={"threshold": 5.0})


def oversplit(seed: int = 0, n_days: int = 4000) -> Scenario:
    """Three regimes where the middle one ("moderate") wobbles between three
    sub-structures along a direction orthogonal to the other two regimes.

    A tight threshold splits "moderate" into three sibling leaves while the
    other regimes stay whole.
    """
    wobble = np.diag([1.0, -1.0, 0.0])
    regimes = (
        Regime("moderate", _uniform_template(0.55, 0.25), wobble, (-0.4, 0.0, 0.4), 150),
        Regime("crisis", _uniform_template(0.95, 0.85)),
        Regime("rotation", _uniform_template(0.95, -0.2)),
    )
    schedule = _scale_schedule(((1, 1000), (0, 2000), (2, 1000)), n_days - 1)
    return Scenario(SECTORS3, 10, regimes, schedule, seed=seed,
                    extra={"threshold": 0.25, "merge_tol": 0.25})


def _scale_schedule(schedule, total):
    lengths = np.array([n for _, n in schedule], dtype=float)
    scaled = np.floor(lengths * total / lengths.sum()).astype(int)
    scaled[-1] += total - scaled.sum()
    return tuple((r, int(n)) for (r, _), n in zip(schedule, scaled))


BUNDLED = {"three_regime": three_regime, "one_regime": one_regime, "oversplit": oversplit}


def bundled(name: str, seed: int = 0, n_days: int | None = None) -> Scenario:
    try:
        factory = BUNDLED[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown scenario {name!r}; bundled: {', '.join(sorted(BUNDLED))}"
        ) from None
    return factory(seed) if n_days is None else factory(seed, n_days)


def load_scenario(path, seed: int | None = None) -> Scenario:
    """Scenario from JSON: sectors, stocks_per_sector, regimes, schedule, ..."""
    spec = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        regimes = tuple(
            Regime(
                r["name"],
                np.asarray(r["template"], dtype=float),
                None if r.get("wobble") is None else np.asarray(r["wobble"], dtype=float),
                tuple(r.get("wobble_levels", ())),
                int(r.get("wobble_period", 100)),
            )
            for r in spec["regimes"]
        )
        return Scenario(
            tuple(spec["sectors"]),
            int(spec["stocks_per_sector"]),
            regimes,
            tuple((int(a), int(b)) for a, b in spec["schedule"]),
            float(spec.get("volatility", 0.01)),
            int(spec.get("seed", 0) if seed is None else seed),
            spec.get("start_date", "2000-01-03"),
            float(spec.get("start_price", 100.0)),
            dict(spec.get("extra", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: invalid scenario ({exc})") from None


def window_truth(labels, t_start, t_end) -> np.ndarray:
    """Majority regime over each window [t_start, t_end] (ties -> higher regime index)."""
    labels = np.asarray(labels)
    n_reg = labels.max() + 1
    cum = np.vstack([np.zeros(n_reg, dtype=int),
                     np.cumsum(np.eye(n_reg, dtype=int)[labels], axis=0)])
    counts = cum[np.asarray(t_end) + 1] - cum[np.asarray(t_start)]
    return n_reg - 1 - np.argmax(counts[:, ::-1], axis=1)


def write_labels(path, data: SyntheticData):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("t,date,regime\n")
        for t, (d, lab) in enumerate(zip(data.prices.dates, data.labels)):
            fh.write(f"{t},{d},{int(lab)}\n")
