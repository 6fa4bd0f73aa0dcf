"""Load daily price quotes from CSV, align them to a shared calendar, and fill gaps.

Input files are two-column CSVs (date, price).  A header row is optional.
Dates may be ISO (``2016-09-11``) or US short form (``9/11/16``).  Rows with
an empty price field are treated as dates with no observation; they are not
errors.  Rows that cannot be parsed at all are.

Cleaning happens in two stages: every calendar date absent from the quotes is
either carried forward from the most recent prior observation, or marked for
polynomial interpolation and filled from its nearest observed neighbours.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_DATE_FORMATS = ("%Y-%m-%d", "%m/%d/%y", "%m/%d/%Y")

DEFAULT_FILL_WINDOW = 4


class Asset(enum.Enum):
    GOLD = "gold"
    BITCOIN = "bitcoin"


class FillFlag(enum.Enum):
    OBSERVED = "observed"
    FORWARD_FILLED = "forward_filled"
    INTERPOLATED = "interpolated"


class MalformedRowError(ValueError):
    """A CSV row whose date or price cannot be parsed."""

    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {reason}")


class DuplicateDateError(ValueError):
    def __init__(self, date: dt.date):
        self.date = date
        super().__init__(f"duplicate quote for {date.isoformat()}")


class NoAnchorError(ValueError):
    """Raised when the first calendar date has no observation to fill from."""


class InsufficientNeighborsError(ValueError):
    def __init__(self, date: dt.date, available: int, needed: int):
        self.date = date
        super().__init__(
            f"cannot interpolate {date.isoformat()}: "
            f"{available} observed neighbours, {needed} required"
        )


@dataclass(frozen=True, slots=True)
class RawQuote:
    """One observed closing price."""

    date: dt.date
    price: float
    asset: Asset


@dataclass(frozen=True)
class PriceSeries:
    """A gap-free daily price series on an explicit calendar.

    ``fill_flags[i]`` records how ``prices[i]`` was obtained.  Mid-pipeline a
    series may hold NaN prices at entries awaiting interpolation; a finished
    series has none (see :meth:`validate`).
    """

    dates: tuple[dt.date, ...]
    prices: np.ndarray
    fill_flags: tuple[FillFlag, ...]

    def __post_init__(self):
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=np.float64))
        if not (len(self.dates) == len(self.prices) == len(self.fill_flags)):
            raise ValueError("dates, prices and fill_flags must have equal length")
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise ValueError(f"dates not strictly increasing at {b.isoformat()}")

    def __len__(self) -> int:
        return len(self.dates)

    def day_offsets(self) -> np.ndarray:
        """Integer day counts from the first date; the x-axis for interpolation."""
        start = self.dates[0]
        return np.array([(d - start).days for d in self.dates], dtype=np.int64)

    def validate(self) -> None:
        """Assert the cleaned-series invariants: finite, strictly positive prices."""
        if np.any(~np.isfinite(self.prices)):
            bad = self.dates[int(np.flatnonzero(~np.isfinite(self.prices))[0])]
            raise ValueError(f"non-finite price at {bad.isoformat()}")
        if np.any(self.prices <= 0.0):
            bad = self.dates[int(np.flatnonzero(self.prices <= 0.0)[0])]
            raise ValueError(f"non-positive price at {bad.isoformat()}")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "price", "fill_flag"])
            for date, price, flag in zip(self.dates, self.prices, self.fill_flags):
                writer.writerow([date.isoformat(), repr(float(price)), flag.value])

    @classmethod
    def from_csv(cls, path: str | Path) -> "PriceSeries":
        dates, prices, flags = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["date", "price", "fill_flag"]:
                raise ValueError(f"{path}: not a cleaned price series file")
            for row in reader:
                dates.append(dt.date.fromisoformat(row[0]))
                prices.append(float(row[1]))
                flags.append(FillFlag(row[2]))
        return cls(tuple(dates), np.array(prices), tuple(flags))


def _parse_date(text: str) -> dt.date | None:
    text = text.strip()
    for fmt in _DATE_FORMATS:
        try:
            return dt.datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    return None


def parse_price_csv(path: str | Path, asset: Asset) -> list[RawQuote]:
    """Read a two-column (date, price) CSV into quotes sorted by date.

    A first row whose date cell does not parse is taken as a header.  A row
    with an empty price cell is a date without an observation and is skipped;
    any other unparseable row raises :class:`MalformedRowError` with its line
    number rather than being dropped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    quotes: list[RawQuote] = []
    seen: set[dt.date] = set()
    with open(path, newline="") as fh:
        for line_number, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise MalformedRowError(line_number, f"expected 2 columns, got {len(row)}")
            date = _parse_date(row[0])
            if date is None:
                if line_number == 1:
                    continue  # header
                raise MalformedRowError(line_number, f"unparseable date {row[0]!r}")
            if date in seen:
                raise DuplicateDateError(date)
            seen.add(date)
            price_text = row[1].strip()
            if not price_text:
                continue  # date listed with no observation
            try:
                price = float(price_text)
            except ValueError:
                raise MalformedRowError(line_number, f"unparseable price {row[1]!r}") from None
            if not np.isfinite(price) or price <= 0.0:
                raise MalformedRowError(line_number, f"non-positive price {price!r}")
            quotes.append(RawQuote(date, price, asset))
    quotes.sort(key=lambda q: q.date)
    return quotes


def master_calendar(*quote_lists: list[RawQuote]) -> tuple[dt.date, ...]:
    """Union of all observed dates across the given quote lists, sorted."""
    dates: set[dt.date] = set()
    for quotes in quote_lists:
        dates.update(q.date for q in quotes)
    return tuple(sorted(dates))


def continuous_calendar(*quote_lists: list[RawQuote]) -> tuple[dt.date, ...]:
    """Every calendar day from the first observation through the last.

    This is the seven-day index the assets share once aligned; dates the
    market did not trade pick up fills per :func:`clean_series`'s convention.
    """
    dates = [q.date for quotes in quote_lists for q in quotes]
    if not dates:
        return ()
    first, last = min(dates), max(dates)
    return tuple(first + dt.timedelta(days=i) for i in range((last - first).days + 1))


def align_calendar(
    quotes: list[RawQuote],
    calendar: tuple[dt.date, ...] | list[dt.date],
    *,
    leave_missing=None,
) -> PriceSeries:
    """Place quotes on `calendar`, carrying unobserved dates forward.

    The fill value is always the most recent prior observation, never a filled
    value's fill.  `leave_missing` is an optional ``date -> bool`` predicate;
    unobserved dates it accepts are left as NaN and flagged for interpolation
    instead of being carried forward.  Raises :class:`NoAnchorError` if the
    first calendar date is unobserved.
    """
    calendar = tuple(calendar)
    by_date = {q.date: q.price for q in quotes}
    if not calendar:
        raise ValueError("empty calendar")
    if calendar[0] not in by_date:
        raise NoAnchorError(
            f"first calendar date {calendar[0].isoformat()} has no observation"
        )
    prices = np.empty(len(calendar), dtype=np.float64)
    flags: list[FillFlag] = []
    last_observed = np.nan
    for i, date in enumerate(calendar):
        if date in by_date:
            last_observed = by_date[date]
            prices[i] = last_observed
            flags.append(FillFlag.OBSERVED)
        elif leave_missing is not None and leave_missing(date):
            prices[i] = np.nan
            flags.append(FillFlag.INTERPOLATED)
        else:
            prices[i] = last_observed
            flags.append(FillFlag.FORWARD_FILLED)
    return PriceSeries(calendar, prices, tuple(flags))


def lagrange_interpolate(
    xs: np.ndarray, ys: np.ndarray, x: float, window: int
) -> float:
    """Evaluate the Lagrange polynomial through the `window` nearest points at x.

    Nodes are chosen by distance |x - xs[j]| (ties broken toward smaller x).
    The interpolant passes through its nodes exactly, so evaluating at an
    observed x returns that y unchanged.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) < window:
        raise ValueError(f"need {window} nodes, have {len(xs)}")
    order = np.lexsort((xs, np.abs(xs - x)))
    nodes = np.sort(order[:window])
    total = 0.0
    for j in nodes:
        basis = 1.0
        for k in nodes:
            if k != j:
                basis *= (x - xs[k]) / (xs[j] - xs[k])
        total += basis * ys[j]
    return total


def lagrange_fill(series: PriceSeries, window: int = DEFAULT_FILL_WINDOW) -> PriceSeries:
    """Fill every NaN entry from the `window` nearest observed points.

    Only entries flagged ``OBSERVED`` serve as interpolation nodes; carried-
    forward values are synthetic and excluded.  Entries that already hold a
    value are untouched, so the operation is idempotent.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    missing = np.flatnonzero(np.isnan(series.prices))
    if missing.size == 0:
        return series
    observed = [i for i, f in enumerate(series.fill_flags) if f is FillFlag.OBSERVED]
    xs_all = series.day_offsets().astype(np.float64)
    obs_x = xs_all[observed]
    obs_y = series.prices[observed]
    if len(observed) < window:
        raise InsufficientNeighborsError(
            series.dates[int(missing[0])], len(observed), window
        )
    prices = series.prices.copy()
    for i in missing:
        prices[i] = lagrange_interpolate(obs_x, obs_y, xs_all[i], window)
    return PriceSeries(series.dates, prices, series.fill_flags)


def _is_weekday(date: dt.date) -> bool:
    return date.weekday() < 5


def clean_series(
    quotes: list[RawQuote],
    calendar: tuple[dt.date, ...] | list[dt.date],
    *,
    window: int = DEFAULT_FILL_WINDOW,
    interpolate_weekdays: bool = True,
) -> PriceSeries:
    """Full cleaning pass: align to `calendar`, then fill.

    Convention: weekend dates the asset did not trade are carried forward
    (gold is closed, the Friday price stands); missing weekdays sit inside the
    asset's own trading calendar and are interpolated instead.  Set
    `interpolate_weekdays` False to carry everything forward.
    """
    predicate = _is_weekday if interpolate_weekdays else None
    series = align_calendar(quotes, calendar, leave_missing=predicate)
    series = lagrange_fill(series, window)
    series.validate()
    return series


def fill_counts(series: PriceSeries) -> dict[str, int]:
    counts = {flag.value: 0 for flag in FillFlag}
    for flag in series.fill_flags:
        counts[flag.value] += 1
    return counts
