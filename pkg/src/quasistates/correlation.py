"""Rolling Pearson correlations, sector averaging and the R^d embedding.

A sector-averaged S x S matrix is identified with the vector of its upper
triangle (diagonal included, row-major, unit weights), so d = S(S+1)/2.
Note that the Euclidean norm in this space is *not* the Frobenius norm of
the matrix: off-diagonal entries are counted once.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, DegenerateVarianceError
from .ingest import FLOAT_FMT, ReturnPanel, SectorMap


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    window: tuple  # (start, end) trading-day indices, inclusive
    tickers: tuple = ()


@dataclass(frozen=True)
class SectorMatrix:
    values: np.ndarray
    window: tuple
    sectors: tuple = ()


@dataclass(frozen=True)
class StateSeries:
    """Embedded state points C(t), one row per correlation window."""

    coords: np.ndarray  # (n, d)
    t_start: np.ndarray
    t_end: np.ndarray
    sectors: tuple = ()

    def __len__(self):
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class IntervalStats:
    interval: tuple  # (start, end) positions into the point sequence, inclusive
    n: int
    mean: np.ndarray


def _as_matrix(panel):
    if isinstance(panel, ReturnPanel):
        if not panel.normalized:
            raise DataError("rolling correlations expect a locally normalized panel")
        return panel.values, panel.index, panel.tickers
    values = np.asarray(panel, dtype=float)
    if values.ndim != 2:
        raise DataError("expected a 2-D (time x instrument) array")
    return values, np.arange(len(values)), tuple(str(k) for k in range(values.shape[1]))


def pearson(x: np.ndarray) -> np.ndarray:
    """Pearson matrix of the columns of ``x`` (population normalization)."""
    xm = x - x.mean(axis=0)
    std = np.sqrt((xm * xm).mean(axis=0))
    z = xm / std
    c = (z.T @ z) / len(x)
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return c


def rolling_correlations(panel, window: int = 42, step: int = 1):
    """Yield one :class:`CorrelationMatrix` per window position.

    Windows end at rows ``window-1, window-1+step, ...``. Each window is
    computed independently, so a stride-s sweep is exactly the stride-1
    sweep subsampled.
    """
    values, index, tickers = _as_matrix(panel)
    if step < 1:
        raise ConfigurationError("correlation step must be >= 1")
    if window < 2 or window > len(values):
        raise DataError(f"correlation window {window} invalid for series of length {len(values)}")
    for start in range(0, len(values) - window + 1, step):
        x = values[start:start + window]
        flat = x.max(axis=0) == x.min(axis=0)
        if flat.any():
            k = int(np.argmax(flat))
            win = (int(index[start]), int(index[start + window - 1]))
            raise DegenerateVarianceError(
                f"zero variance for {tickers[k]} in window {win}", ticker=tickers[k], time=win
            )
        yield CorrelationMatrix(
            pearson(x), (int(index[start]), int(index[start + window - 1])), tickers
        )


def n_windows(length: int, window: int, step: int = 1) -> int:
    return max(0, (length - window) // step + 1)


def sector_average(matrix: CorrelationMatrix, sectors: SectorMap) -> SectorMatrix:
    """Average correlations within and between sectors.

    Diagonal entries average the distinct pairs i < j inside a sector (unit
    self-correlations excluded), so each sector needs at least two members.
    """
    idx = sectors.sector_index(matrix.tickers)
    n_sec = len(sectors.sectors)
    counts = np.bincount(idx, minlength=n_sec)
    if np.any(counts == 0):
        empty = [s for s, c in zip(sectors.sectors, counts) if c == 0]
        raise ConfigurationError(f"sectors without instruments: {', '.join(empty)}")
    if np.any(counts == 1):
        single = [s for s, c in zip(sectors.sectors, counts) if c == 1]
        raise ConfigurationError(
            f"sectors with a single instrument have no within-sector pairs: {', '.join(single)}"
        )
    g = np.zeros((len(idx), n_sec))
    g[np.arange(len(idx)), idx] = 1.0
    sums = g.T @ matrix.values @ g
    pairs = np.outer(counts, counts).astype(float)
    diag = np.diag_indices(n_sec)
    # drop the unit self-correlations from each within-sector block
    sums[diag] -= np.bincount(idx, weights=np.diag(matrix.values), minlength=n_sec)
    pairs[diag] = counts * (counts - 1.0)
    avg = sums / pairs
    avg = 0.5 * (avg + avg.T)
    return SectorMatrix(np.clip(avg, -1.0, 1.0), matrix.window, sectors.sectors)


def embed(matrix) -> np.ndarray:
    """Upper triangle (with diagonal) of a symmetric matrix, row-major."""
    values = matrix.values if isinstance(matrix, SectorMatrix) else np.asarray(matrix)
    n = values.shape[0]
    if values.shape != (n, n):
        raise DataError("embed expects a square matrix")
    return values[np.triu_indices(n)].copy()


def embedded_size(n_sectors: int) -> int:
    return n_sectors * (n_sectors + 1) // 2


def unembed(coords) -> np.ndarray:
    coords = np.asarray(coords)
    d = coords.shape[-1]
    s = int(round((np.sqrt(8 * d + 1) - 1) / 2))
    if embedded_size(s) != d:
        raise DataError(f"{d} is not a triangular number")
    out = np.empty((s, s), dtype=coords.dtype)
    iu = np.triu_indices(s)
    out[iu] = coords
    out[(iu[1], iu[0])] = coords
    return out


def distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def interval_mean(points, interval=None) -> IntervalStats:
    """Arithmetic mean of the points at positions ``start..end`` (inclusive)."""
    coords = points.coords if isinstance(points, StateSeries) else np.asarray(points, dtype=float)
    if interval is None:
        interval = (0, len(coords) - 1)
    start, end = int(interval[0]), int(interval[1])
    if start < 0 or end >= len(coords) or end < start:
        raise DataError(f"interval {interval} empty or outside 0..{len(coords) - 1}")
    block = coords[start:end + 1]
    return IntervalStats((start, end), len(block), block.mean(axis=0))


def state_points(panel, sectors: SectorMap, window: int = 42, step: int = 1) -> StateSeries:
    """Rolling correlation -> sector average -> embedding, for every window."""
    coords, starts, ends = [], [], []
    for cm in rolling_correlations(panel, window, step):
        sm = sector_average(cm, sectors)
        coords.append(embed(sm))
        starts.append(cm.window[0])
        ends.append(cm.window[1])
    d = embedded_size(len(sectors.sectors))
    return StateSeries(
        np.array(coords, dtype=float).reshape(len(coords), d),
        np.array(starts, dtype=int),
        np.array(ends, dtype=int),
        tuple(sectors.sectors),
    )


def write_states(path, series: StateSeries):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("# sectors=" + "|".join(series.sectors) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(series.dim)] + ["t_start", "t_end"])
        for row, a, b in zip(series.coords, series.t_start, series.t_end):
            w.writerow([FLOAT_FMT % v for v in row] + [int(a), int(b)])


def read_states(path) -> StateSeries:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        first = fh.readline()
        sectors = ()
        if first.startswith("# sectors="):
            text = first[len("# sectors="):].rstrip("\n")
            sectors = tuple(text.split("|")) if text else ()
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    d = len(header) - 2
    coords = np.array([[float(v) for v in r[:d]] for r in rows], dtype=float).reshape(len(rows), d)
    return StateSeries(
        coords,
        np.array([int(r[d]) for r in rows], dtype=int),
        np.array([int(r[d + 1]) for r in rows], dtype=int),
        sectors,
    )
