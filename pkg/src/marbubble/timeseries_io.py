"""Loading, monthly resampling, spline detrending and summaries of price series."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import make_interp_spline, make_lsq_spline

__all__ = [
    "TimeSeries",
    "SummaryStats",
    "DataError",
    "load_csv",
    "write_csv",
    "resample_monthly_last",
    "spline_detrend",
    "month_position",
    "rolling_variance",
    "summary",
]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class TimeSeries:
    """Strictly increasing dates with finite values."""

    dates: np.ndarray  # datetime64[D]
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        d = np.asarray(self.dates, dtype="datetime64[D]")
        v = np.asarray(self.values, dtype=float)
        if d.shape != v.shape or d.ndim != 1:
            raise DataError("dates and values must be 1-d and of equal length")
        if v.size and not np.all(np.isfinite(v)):
            raise DataError("values must be finite")
        if np.any(np.diff(d) <= np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")
        object.__setattr__(self, "dates", d)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def from_values(cls, values, start: str = "2000-01", label: str = "") -> "TimeSeries":
        """Attach month-end dates starting at ``start`` to a bare array."""
        v = np.asarray(values, dtype=float)
        m0 = np.datetime64(start, "M")
        d = (m0 + np.arange(1, v.size + 1)).astype("datetime64[D]") - np.timedelta64(1, "D")
        return cls(d, v, label)

    def date_strings(self) -> list[str]:
        return [str(d) for d in self.dates]


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    min: float
    max: float
    sd: float
    skewness: float
    excess_kurtosis: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def load_csv(path, date_col: str = "date", value_col: str = "value", label: Optional[str] = None) -> TimeSeries:
    """Read ``date,value`` rows (ISO dates); rows are sorted by date.

    Malformed rows raise :class:`DataError` with the file line number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or date_col not in reader.fieldnames or value_col not in reader.fieldnames:
            raise DataError(f"{path}: header must contain columns {date_col!r} and {value_col!r}")
        dates, values = [], []
        for row in reader:
            line = reader.line_num
            try:
                d = np.datetime64(row[date_col].strip(), "D")
                v = float(row[value_col])
            except (ValueError, TypeError, AttributeError) as exc:
                raise DataError(f"{path}:{line}: cannot parse row ({exc})") from None
            if not np.isfinite(v):
                raise DataError(f"{path}:{line}: non-finite value")
            dates.append(d)
            values.append(v)
    d = np.array(dates, dtype="datetime64[D]")
    v = np.array(values, dtype=float)
    order = np.argsort(d, kind="stable")
    d, v = d[order], v[order]
    dup = d[1:][d[1:] == d[:-1]]
    if dup.size:
        raise DataError(f"{path}: duplicate date {dup[0]}")
    return TimeSeries(d, v, label if label is not None else path.stem)


def write_csv(path, ts: TimeSeries, extra: Optional[dict] = None) -> None:
    """Write ``date,value`` plus any extra equal-length columns, values with repr precision."""
    cols = {"value": ts.values}
    cols.update(extra or {})
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *cols])
        for i, d in enumerate(ts.dates):
            w.writerow([str(d), *(repr(float(c[i])) for c in cols.values())])


def resample_monthly_last(ts: TimeSeries) -> TimeSeries:
    """One value per calendar month: the last available observation in that month.

    A calendar month without any observation inside the span is an error.
    """
    if len(ts) == 0:
        return ts
    months = ts.dates.astype("datetime64[M]")
    last = np.flatnonzero(np.append(months[1:] != months[:-1], True))
    kept = months[last]
    full = np.arange(kept[0], kept[-1] + 1)
    if full.size != kept.size:
        missing = sorted(set(full.tolist()) - set(kept.tolist()))
        raise DataError("no observation in month(s): " + ", ".join(str(np.datetime64(m, "M")) for m in missing))
    return TimeSeries(ts.dates[last], ts.values[last], ts.label)


def month_position(dates: np.ndarray) -> np.ndarray:
    """Months elapsed since the first date.

    Consecutive monthly observations map to 0, 1, 2, ...; other spacings
    use days divided by the mean month length.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    m = dates.astype("datetime64[M]").astype(np.int64)
    if np.all(np.diff(m) == 1):
        return (m - m[0]).astype(float)
    return (dates - dates[0]).astype(float) / (365.2425 / 12)


def spline_detrend(
    ts: TimeSeries, knot_spacing_months: int = 24, boundary: str = "free"
) -> tuple[TimeSeries, np.ndarray]:
    """Least-squares cubic spline trend with knots every ``knot_spacing_months``.

    Interior knots sit at whole multiples of the spacing counted from the
    first observation.  ``boundary="free"`` fits the full cubic B-spline
    space, which reproduces any cubic polynomial; ``"natural"`` adds zero
    second derivatives at both ends.  Returns the residual series and the
    fitted trend.
    """
    if knot_spacing_months < 1:
        raise ValueError("knot spacing must be >= 1 month")
    x = month_position(ts.dates)
    y = ts.values
    if x.size < 2 or x[-1] < knot_spacing_months:
        raise DataError("series shorter than one knot interval")
    inner = np.arange(knot_spacing_months, x[-1], knot_spacing_months, dtype=float)
    inner = inner[inner < x[-1] - 1e-9]
    if x.size < inner.size + 4:
        raise DataError("too few observations for the number of knots")
    if boundary == "free":
        t = np.r_[[x[0]] * 4, inner, [x[-1]] * 4]
        spl = make_lsq_spline(x, y, t, k=3)
        trend = spl(x)
    elif boundary == "natural":
        trend = _natural_lsq(x, y, inner)
    else:
        raise ValueError("boundary must be 'free' or 'natural'")
    resid = TimeSeries(ts.dates, y - trend, ts.label)
    return resid, trend


def _natural_lsq(x, y, inner) -> np.ndarray:
    # basis: natural cubic interpolants through unit vectors at the knots
    knots = np.r_[x[0], inner, x[-1]]
    basis = np.empty((x.size, knots.size))
    for j in range(knots.size):
        e = np.zeros(knots.size)
        e[j] = 1.0
        basis[:, j] = make_interp_spline(knots, e, k=3, bc_type="natural")(x)
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return basis @ coef


def rolling_variance(ts: TimeSeries, window: int = 5) -> TimeSeries:
    """Unbiased sample variance over windows ``t..t+window-1``, dated at the window end."""
    if window < 2:
        raise ValueError("window must be >= 2")
    if window > len(ts):
        raise DataError("window longer than the series")
    v = np.lib.stride_tricks.sliding_window_view(ts.values, window).var(axis=1, ddof=1)
    return TimeSeries(ts.dates[window - 1 :], v, ts.label)


def summary(ts: TimeSeries) -> SummaryStats:
    """Moments with sample (n - 1) standard deviation.

    Skewness is m3 / m2^1.5 and excess kurtosis m4 / m2^2 - 3 with central
    moments m_k averaged over n; both are NaN for a constant series.
    """
    v = ts.values
    n = v.size
    if n < 2:
        raise DataError("need at least 2 observations")
    mean = float(v.mean())
    d = v - mean
    m2 = float(np.mean(d**2))
    if m2 == 0:
        skew = kurt = float("nan")
    else:
        skew = float(np.mean(d**3) / m2**1.5)
        kurt = float(np.mean(d**4) / m2**2 - 3.0)
    return SummaryStats(n, mean, float(v.min()), float(v.max()), float(v.std(ddof=1)), skew, kurt)
