"""Price panels, sector maps, returns and local normalization.

Price files are long-format CSV with header ``date,ticker,close``. Only
instruments quoted on every date of the file are kept; the rest are
reported in :attr:`PricePanel.dropped`.
"""
from __future__ import annotations

import csv
import math
import datetime as _dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateVarianceError,
    InsufficientDataError,
    ParseError,
)

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class PricePanel:
    dates: np.ndarray  # datetime64[D], strictly increasing
    tickers: tuple
    prices: np.ndarray  # (n_dates, n_tickers)
    dropped: tuple = ()

    def __post_init__(self):
        if self.prices.shape != (len(self.dates), len(self.tickers)):
            raise DataError("price matrix shape does not match dates x tickers")
        if len(self.dates) > 1 and np.any(np.diff(self.dates) <= np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")
        if np.any(~(self.prices > 0)):
            raise DataError("all prices must be strictly positive")

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class ReturnPanel:
    """Returns r_k(t) (or their locally normalized version).

    ``index`` holds the trading-day position t of each row in the originating
    price panel, so that row i is the return from t to t + horizon.
    """

    dates: np.ndarray
    index: np.ndarray
    tickers: tuple
    values: np.ndarray
    horizon: int
    norm_window: int | None = None

    @property
    def normalized(self) -> bool:
        return self.norm_window is not None

    def __len__(self):
        return len(self.index)


@dataclass(frozen=True)
class SectorMap:
    assignments: dict
    sectors: tuple = field(default=())

    def __post_init__(self):
        if not self.sectors:
            object.__setattr__(self, "sectors", tuple(sorted(set(self.assignments.values()))))
        if len(self.sectors) < 1:
            raise ConfigurationError("sector map is empty")

    def sector_index(self, tickers) -> np.ndarray:
        """Sector position (into ``self.sectors``) for every ticker."""
        pos = {s: i for i, s in enumerate(self.sectors)}
        missing = [t for t in tickers if t not in self.assignments]
        if missing:
            raise ConfigurationError(f"tickers without sector: {', '.join(missing[:10])}")
        return np.array([pos[self.assignments[t]] for t in tickers], dtype=int)

    def restrict(self, tickers) -> "SectorMap":
        """Map limited to ``tickers``; sectors left without members are dropped."""
        self.sector_index(tickers)
        kept = {t: self.assignments[t] for t in tickers}
        used = set(kept.values())
        return SectorMap(kept, tuple(s for s in self.sectors if s in used))


def _parse_date(text, path, line):
    try:
        return np.datetime64(_dt.date.fromisoformat(text.strip()), "D")
    except ValueError:
        raise ParseError(f"invalid ISO-8601 date {text!r}", path, line) from None


def load_prices(path) -> PricePanel:
    """Read a long-format ``date,ticker,close`` CSV into a :class:`PricePanel`."""
    path = Path(path)
    quotes = {}  # (date text, ticker) -> close
    first_line = {}  # date text -> first line it appears on
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InsufficientDataError(f"{path}: file is empty")
        if [h.strip() for h in header] != ["date", "ticker", "close"]:
            raise ParseError("expected header 'date,ticker,close'", path, 1)
        for row in reader:
            if len(row) != 3:
                if not row or all(not c.strip() for c in row):
                    continue
                raise ParseError(f"expected 3 fields, got {len(row)}", path, reader.line_num)
            date, ticker, text = row
            ticker = ticker.strip()
            try:
                close = float(text)
            except ValueError:
                raise ParseError(f"invalid price {text!r}", path, reader.line_num) from None
            if not 0 < close < math.inf or not ticker:
                line = reader.line_num
                if not ticker:
                    raise ParseError("empty ticker", path, line)
                raise DataError(f"{path}:{line}: non-positive price {close!r} for {ticker}")
            date = date.strip()
            key = (date, ticker)
            if key in quotes:
                raise ParseError(f"duplicate row for {ticker} on {date}", path, reader.line_num)
            quotes[key] = close
            if date not in first_line:
                first_line[date] = reader.line_num

    day = {d: _parse_date(d, path, line) for d, line in first_line.items()}
    if len(set(day.values())) != len(day):
        raise ParseError("the same date is written in two different ways", path)
    order = sorted(day, key=day.get)
    if len(order) < 2:
        raise InsufficientDataError(f"{path}: need at least 2 dates, found {len(order)}")
    row_of = {d: i for i, d in enumerate(order)}
    all_tickers = sorted({t for _, t in quotes})
    col_of = {t: k for k, t in enumerate(all_tickers)}
    full = np.full((len(order), len(all_tickers)), np.nan)
    for (d, t), close in quotes.items():
        full[row_of[d], col_of[t]] = close
    complete = ~np.isnan(full).any(axis=0)
    kept = tuple(t for t, ok in zip(all_tickers, complete) if ok)
    dropped = tuple(t for t, ok in zip(all_tickers, complete) if not ok)
    if not kept:
        raise InsufficientDataError(f"{path}: no ticker is quoted on every date")
    dates = np.array([day[d] for d in order], dtype="datetime64[D]")
    return PricePanel(dates, kept, full[:, complete], dropped)


def load_sectors(path) -> SectorMap:
    path = Path(path)
    assignments = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["ticker", "sector"]:
            raise ParseError("expected header 'ticker,sector'", path, 1)
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", path, reader.line_num)
            ticker, sector = row[0].strip(), row[1].strip()
            if ticker in assignments and assignments[ticker] != sector:
                raise ParseError(f"ticker {ticker} assigned to two sectors", path, reader.line_num)
            assignments[ticker] = sector
    if not assignments:
        raise InsufficientDataError(f"{path}: no sector assignments")
    return SectorMap(assignments)


def compute_returns(panel: PricePanel, horizon: int = 1) -> ReturnPanel:
    """Relative price changes over ``horizon`` trading days."""
    if horizon < 1:
        raise ConfigurationError("return horizon must be a positive integer")
    n = len(panel)
    if horizon >= n:
        raise InsufficientDataError(f"horizon {horizon} >= panel length {n}")
    s = panel.prices
    values = (s[horizon:] - s[:-horizon]) / s[:-horizon]
    return ReturnPanel(
        dates=panel.dates[: n - horizon],
        index=np.arange(n - horizon),
        tickers=panel.tickers,
        values=values,
        horizon=horizon,
    )


def local_normalize(returns: ReturnPanel, window: int = 13) -> ReturnPanel:
    """Standardize each return by the mean/std of its trailing ``window`` points.

    The window includes the current point; the population (1/n) standard
    deviation is used. The first ``window - 1`` rows are dropped.
    """
    if returns.normalized:
        raise DataError("panel is already locally normalized")
    if window < 2:
        raise ConfigurationError("normalization window must be >= 2")
    if len(returns) < window:
        raise InsufficientDataError(
            f"normalization window {window} exceeds panel length {len(returns)}"
        )
    r = returns.values
    # (n_out, n_tickers, window)
    windows = sliding_window_view(r, window, axis=0)
    mean = windows.mean(axis=-1)
    std = windows.std(axis=-1)
    flat = windows.max(axis=-1) == windows.min(axis=-1)
    bad = flat | (std == 0)
    if bad.any():
        t, k = np.argwhere(bad)[0]
        row = t + window - 1
        raise DegenerateVarianceError(
            f"zero local variance for {returns.tickers[k]} at t={returns.index[row]}",
            ticker=returns.tickers[k],
            time=int(returns.index[row]),
        )
    values = (r[window - 1:] - mean) / std
    return ReturnPanel(
        dates=returns.dates[window - 1:],
        index=returns.index[window - 1:],
        tickers=returns.tickers,
        values=values,
        horizon=returns.horizon,
        norm_window=window,
    )


def write_prices(path, panel: PricePanel):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", "close"])
        for d, row in zip(panel.dates, panel.prices):
            w.writerows(zip((str(d),) * len(row), panel.tickers, (FLOAT_FMT % v for v in row)))


def write_sectors(path, sectors: SectorMap):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "sector"])
        for t in sorted(sectors.assignments):
            w.writerow([t, sectors.assignments[t]])


def write_returns(path, panel: ReturnPanel):
    """Wide CSV: ``t,date,<tickers...>``; horizon/window go in a comment line."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# horizon={panel.horizon} norm_window={panel.norm_window or 0}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "date", *panel.tickers])
        for i in range(len(panel)):
            w.writerow(
                [int(panel.index[i]), str(panel.dates[i])]
                + [FLOAT_FMT % v for v in panel.values[i]]
            )


def read_returns(path) -> ReturnPanel:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        meta = fh.readline()
        if not meta.startswith("#"):
            raise ParseError("missing '# horizon=... norm_window=...' line", path, 1)
        opts = dict(tok.split("=") for tok in meta[1:].split())
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:2] != ["t", "date"]:
        raise ParseError("expected columns 't,date,...'", path, 2)
    index = np.array([int(r[0]) for r in rows], dtype=int)
    dates = np.array([r[1] for r in rows], dtype="datetime64[D]")
    values = np.array([[float(v) for v in r[2:]] for r in rows], dtype=float)
    values = values.reshape(len(rows), len(header) - 2)
    norm = int(opts.get("norm_window", 0)) or None
    return ReturnPanel(dates, index, tuple(header[2:]), values, int(opts["horizon"]), norm)
