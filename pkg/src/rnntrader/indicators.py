"""Trailing technical indicators and assembly of the model feature matrix.

Every indicator is computed over a trailing window ending at the current day,
so appending new data never changes a historical value.  Entries that lack a
full window are NaN; the feature-matrix builder drops those rows.

The daily return here is the price change divided by the *current* day's
price, not the previous day's.  That is deliberate (it matches the data the
models are trained on); pass ``denominator="previous"`` for the conventional
form.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ZeroPriceError(ValueError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"price at index {index} is zero; return undefined")


class WindowTooLargeError(ValueError):
    def __init__(self, window: int, length: int):
        super().__init__(f"window {window} exceeds series length {length}")


class AlignmentMismatchError(ValueError):
    """Volatility series does not line up with the price series."""


@dataclass(frozen=True)
class IndicatorConfig:
    """Windows for each indicator; defaults are the standard daily settings."""

    var_windows: tuple[int, int] = (10, 20)
    ma_windows: tuple[int, int] = (10, 30)
    boll_window: int = 20
    psy_window: int = 12
    rsi_window: int = 14
    return_denominator: str = "current"  # or "previous"

    def __post_init__(self):
        for w in (*self.var_windows, *self.ma_windows, self.boll_window,
                  self.psy_window, self.rsi_window):
            if w < 2:
                raise ValueError(f"indicator window {w} must be >= 2")
        if self.return_denominator not in ("current", "previous"):
            raise ValueError(f"bad return denominator {self.return_denominator!r}")


def returns(prices: np.ndarray, denominator: str = "current") -> np.ndarray:
    """Daily return series; index 0 is NaN.

    ``current``:  (p_t - p_{t-1}) / p_t
    ``previous``: (p_t - p_{t-1}) / p_{t-1}
    """
    prices = np.asarray(prices, dtype=np.float64)
    if denominator == "current":
        denom = prices[1:]
    elif denominator == "previous":
        denom = prices[:-1]
    else:
        raise ValueError(f"bad denominator {denominator!r}")
    zero = np.flatnonzero(denom == 0.0)
    if zero.size:
        offset = 1 if denominator == "current" else 0
        raise ZeroPriceError(int(zero[0]) + offset)
    out = np.full(prices.shape, np.nan)
    out[1:] = (prices[1:] - prices[:-1]) / denom
    return out


def _trailing(values: np.ndarray, window: int) -> np.ndarray:
    """(n - window + 1, window) view of trailing windows; caller pads the front."""
    values = np.asarray(values, dtype=np.float64)
    if window > len(values):
        raise WindowTooLargeError(window, len(values))
    return sliding_window_view(values, window)


def _pad_front(tail: np.ndarray, n: int) -> np.ndarray:
    out = np.full(n, np.nan)
    out[n - len(tail):] = tail
    return out


def moving_average(prices: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean including the current day."""
    return _pad_front(_trailing(prices, window).mean(axis=1), len(prices))


def rolling_variance(prices: np.ndarray, window: int) -> np.ndarray:
    """Trailing population variance (divide by N, not N-1)."""
    return _pad_front(_trailing(prices, window).var(axis=1), len(prices))


def bollinger(prices: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(upper, middle, lower) bands: trailing mean +/- 2 population std devs."""
    mid = moving_average(prices, window)
    sd = np.sqrt(rolling_variance(prices, window))
    return mid + 2.0 * sd, mid, mid - 2.0 * sd


def psych_index(ret: np.ndarray, window: int) -> np.ndarray:
    """Fraction of strictly positive returns in the trailing window, in [0, 1].

    Zero returns count as neither up nor down days.  Takes the return series,
    not prices; windows touching the leading NaN return are NaN.
    """
    ret = np.asarray(ret, dtype=np.float64)
    views = _trailing(ret, window)
    up = np.where(views > 0.0, 1.0, 0.0).mean(axis=1)
    up[np.isnan(views).any(axis=1)] = np.nan
    return _pad_front(up, len(ret))


def rsi(prices: np.ndarray, window: int) -> np.ndarray:
    """Relative strength over the trailing `window` price changes, in [0, 100].

    100 - 100 / (1 + avg_gain / avg_loss), with the conventions: no losses in
    the window -> 100, no gains -> 0, a flat window (neither) -> 50.
    """
    prices = np.asarray(prices, dtype=np.float64)
    diffs = np.diff(prices)
    if window > len(diffs):
        raise WindowTooLargeError(window, len(prices))
    gains = _trailing(np.maximum(diffs, 0.0), window).mean(axis=1)
    losses = _trailing(np.maximum(-diffs, 0.0), window).mean(axis=1)
    out = np.empty_like(gains)
    flat = (gains == 0.0) & (losses == 0.0)
    all_gain = (losses == 0.0) & ~flat
    all_loss = (gains == 0.0) & ~flat
    rest = ~(flat | all_gain | all_loss)
    out[flat] = 50.0
    out[all_gain] = 100.0
    out[all_loss] = 0.0
    out[rest] = 100.0 - 100.0 / (1.0 + gains[rest] / losses[rest])
    return _pad_front(out, len(prices))


@dataclass(frozen=True)
class FeatureMatrix:
    """Aligned per-day feature rows plus the next-day-return target.

    Column order is a format contract:
    return, var{short}, var{long}, ma{short}, ma{long}, boll_high, boll_mid,
    boll_low, psy, rsi, garch_mu, garch_sigma2.
    """

    dates: tuple[dt.date, ...]
    columns: tuple[str, ...]
    values: np.ndarray  # (n_rows, n_columns)
    target: np.ndarray  # (n_rows,) return realized the following day

    def __post_init__(self):
        if self.values.shape != (len(self.dates), len(self.columns)):
            raise ValueError("values shape does not match dates/columns")
        if self.target.shape != (len(self.dates),):
            raise ValueError("target length does not match dates")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def returns(self) -> np.ndarray:
        return self.values[:, self.columns.index("return")]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", *self.columns, "target"])
            for i, date in enumerate(self.dates):
                writer.writerow(
                    [date.isoformat()]
                    + [repr(float(v)) for v in self.values[i]]
                    + [repr(float(self.target[i]))]
                )

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[0] != "date" or header[-1] != "target":
                raise ValueError(f"{path}: not a feature matrix file")
            columns = tuple(header[1:-1])
            dates, rows, target = [], [], []
            for row in reader:
                dates.append(dt.date.fromisoformat(row[0]))
                rows.append([float(v) for v in row[1:-1]])
                target.append(float(row[-1]))
        return cls(tuple(dates), columns, np.array(rows, dtype=np.float64),
                   np.array(target, dtype=np.float64))


def build_feature_matrix(
    series,
    garch_mu: np.ndarray,
    garch_sigma2: np.ndarray,
    cfg: IndicatorConfig | None = None,
) -> FeatureMatrix:
    """Compute all indicator columns for a cleaned price series.

    `garch_mu` / `garch_sigma2` must be aligned to the series dates (NaN where
    undefined); anything else raises :class:`AlignmentMismatchError`.  Rows
    containing any NaN, and the final row (whose next-day return does not
    exist), are dropped.
    """
    cfg = cfg or IndicatorConfig()
    prices = np.asarray(series.prices, dtype=np.float64)
    n = len(prices)
    garch_mu = np.asarray(garch_mu, dtype=np.float64)
    garch_sigma2 = np.asarray(garch_sigma2, dtype=np.float64)
    if garch_mu.shape != (n,) or garch_sigma2.shape != (n,):
        raise AlignmentMismatchError(
            f"volatility series of shape {garch_mu.shape}/{garch_sigma2.shape} "
            f"for {n} prices"
        )

    ret = returns(prices, cfg.return_denominator)
    high, mid, low = bollinger(prices, cfg.boll_window)
    cols = {
        "return": ret,
        f"var{cfg.var_windows[0]}": rolling_variance(prices, cfg.var_windows[0]),
        f"var{cfg.var_windows[1]}": rolling_variance(prices, cfg.var_windows[1]),
        f"ma{cfg.ma_windows[0]}": moving_average(prices, cfg.ma_windows[0]),
        f"ma{cfg.ma_windows[1]}": moving_average(prices, cfg.ma_windows[1]),
        "boll_high": high,
        "boll_mid": mid,
        "boll_low": low,
        "psy": psych_index(ret, cfg.psy_window),
        "rsi": rsi(prices, cfg.rsi_window),
        "garch_mu": garch_mu,
        "garch_sigma2": garch_sigma2,
    }
    values = np.column_stack(list(cols.values()))
    target = np.full(n, np.nan)
    target[:-1] = ret[1:]
    keep = np.isfinite(values).all(axis=1) & np.isfinite(target)
    idx = np.flatnonzero(keep)
    return FeatureMatrix(
        tuple(series.dates[int(i)] for i in idx),
        tuple(cols.keys()),
        values[idx],
        target[idx],
    )
