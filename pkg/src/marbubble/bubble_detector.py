"""Tail-process diagnostics for bubbles in MAR series.

For a fitted MAR(1,1) the statistic at time t and horizon h is

    xi_t(h) = (y_{t+h+1}/y_t - phi y_{t+h}/y_t) (y_{t+h}/y_t - psi y_{t+h+1}/y_t)
            = u_{t+h+1} v_{t+h} / y_t^2,

which is close to zero while the series follows an explosive bubble path
after a large y_t.  Its variance follows from the delta method with the
parameter covariance of the fit.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .estimation import MarFit

__all__ = [
    "Z975",
    "XiPoint",
    "BubbleEpisode",
    "DetectionReport",
    "known_fit",
    "xi",
    "xi_sigma",
    "xi_series",
    "diagnose",
    "delta_xi",
    "detect_episodes",
    "forward_conditional_prob",
    "detect",
]

Z975 = 1.96
ZERO_GUARD = 1e-6


@dataclass(frozen=True)
class XiPoint:
    """Statistic at (t, h).  ``rejected`` is None for points excluded by the zero guard."""

    t: int
    h: int
    xi: float
    sigma: float
    band_halfwidth: float
    rejected: Optional[bool]

    @property
    def decision(self) -> Optional[int]:
        """1 = not rejected (bubble-consistent), 0 = rejected."""
        return None if self.rejected is None else int(not self.rejected)


@dataclass(frozen=True)
class BubbleEpisode:
    start: int
    end: int
    peak: int
    trigger: float

    def __post_init__(self):
        if not self.start <= self.peak <= self.end:
            raise ValueError("episode needs start <= peak <= end")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def known_fit(r: int, s: int, phi: float = 0.0, psi: float = 0.0, omega=None, T: int = 1) -> MarFit:
    """A :class:`MarFit` with given coefficients, e.g. to evaluate statistics at true values."""
    theta = np.array(([phi] if r else []) + ([psi] if s else []), dtype=float)
    dim = theta.size
    om = np.zeros((dim, dim)) if omega is None else np.atleast_2d(np.asarray(omega, dtype=float))
    return MarFit(r=r, s=s, theta=theta, omega=om, nobs=T, method="given")


def _guard(y: np.ndarray) -> float:
    sd = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
    return ZERO_GUARD * sd


def _xi_arrays(y: np.ndarray, fit: MarFit, t: np.ndarray, h: int):
    """Vectorised (xi, sigma, valid) at times ``t`` for one horizon."""
    yt = y[t]
    valid = np.abs(yt) >= _guard(y)
    if _guard(y) == 0:
        valid &= yt != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = y[t + h + 1] / yt
        b = y[t + h] / yt
    phi, psi = fit.phi, fit.psi
    omega = np.asarray(fit.omega, dtype=float)
    if fit.r and fit.s:
        x = (a - phi * b) * (b - psi * a)
        g1 = b * (b - psi * a)
        g2 = a * (a - phi * b)
        var = omega[0, 0] * g1**2 + 2 * omega[0, 1] * g1 * g2 + omega[1, 1] * g2**2
    elif fit.s:
        x = b - psi * a
        var = omega[0, 0] * a**2
    elif fit.r:
        x = a - phi * b
        var = omega[0, 0] * b**2
    else:
        raise ValueError("statistic needs r + s >= 1")
    sigma = np.sqrt(np.clip(var, 0, None))
    x = np.where(valid, x, np.nan)
    sigma = np.where(valid, sigma, np.nan)
    return x, sigma, valid


def _points(y, fit, t, h) -> list[XiPoint]:
    T = y.size
    x, sig, valid = _xi_arrays(y, fit, np.asarray(t), h)
    band = Z975 * sig / np.sqrt(T)
    out = []
    for ti, xi_, s_, b_, ok in zip(np.atleast_1d(t), x, sig, band, valid):
        rej = bool(abs(xi_) > b_) if ok else None
        out.append(XiPoint(int(ti), h, float(xi_), float(s_), float(b_), rej))
    return out


def _check_index(T: int, t: int, h: int) -> None:
    if h < 0:
        raise ValueError("horizon must be >= 0")
    if t < 0 or t + h + 1 > T - 1:
        raise IndexError(f"t + h + 1 = {t + h + 1} outside the sample (T = {T})")


def xi(y, fit: MarFit, t: int, h: int = 0) -> float:
    """Statistic xi_t(h); NaN when ``|y_t|`` is below the zero guard."""
    y = np.asarray(y, dtype=float)
    _check_index(y.size, t, h)
    return float(_xi_arrays(y, fit, np.array([t]), h)[0][0])


def xi_sigma(y, fit: MarFit, t: int, h: int = 0) -> float:
    """Delta-method standard deviation sigma_t(h) = sqrt(g' Omega g)."""
    y = np.asarray(y, dtype=float)
    _check_index(y.size, t, h)
    return float(_xi_arrays(y, fit, np.array([t]), h)[1][0])


def xi_series(y, fit: MarFit, h: int = 0) -> list[XiPoint]:
    """Statistic at every t with t + h + 1 inside the sample."""
    y = np.asarray(y, dtype=float)
    return _points(y, fit, np.arange(0, y.size - h - 1), h)


def diagnose(y, fit: MarFit, t: int, horizons: Sequence[int] = range(1, 11)) -> list[XiPoint]:
    """Statistics at a fixed conditioning time over several horizons.

    Horizons that run past the sample end are dropped with a warning.
    """
    y = np.asarray(y, dtype=float)
    hs = [int(h) for h in horizons]
    keep = [h for h in hs if t + h + 1 <= y.size - 1]
    if len(keep) < len(hs):
        warnings.warn(f"horizons beyond the sample end dropped: {sorted(set(hs) - set(keep))}", RuntimeWarning)
    if not 0 <= t < y.size:
        raise IndexError("t outside the sample")
    return [_points(y, fit, np.array([t]), h)[0] for h in keep]


def delta_xi(y, fit: MarFit) -> np.ndarray:
    """First difference of xi_t(0); NaN where either end is excluded.

    Entry ``i`` is xi_{i+1}(0) - xi_i(0).
    """
    y = np.asarray(y, dtype=float)
    if y.size < 3:
        raise ValueError("need at least 3 observations")
    x, _, _ = _xi_arrays(y, fit, np.arange(0, y.size - 1), 0)
    return np.diff(x)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive (start, end) pairs."""
    m = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(m)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _merge_runs(runs, min_run):
    merged = []
    for st, en in runs:
        if merged:
            pst, pen = merged[-1]
            if st - pen == 2 and (pen - pst + 1) >= min_run and (en - st + 1) >= min_run:
                merged[-1] = (pst, en)
                continue
        merged.append((st, en))
    return merged


def detect_episodes(
    y, fit: MarFit, threshold_q: float = 0.975, min_run: int = 2, points: Optional[list] = None
) -> list[BubbleEpisode]:
    """Date bubble episodes around exceedances of the ``threshold_q`` quantile.

    Each exceedance t pulls in the maximal run of consecutive non-rejected
    h = 0 points that contains t or touches it (ends at t - 1 or starts at
    t + 1); the exceedance itself is added to the span so the burst point
    belongs to the episode.  Runs separated by one rejected point are merged
    when both sides reach ``min_run``; shorter runs are discarded.
    """
    y = np.asarray(y, dtype=float)
    if y.size < 20:
        raise ValueError("need at least 20 observations")
    if not 0 < threshold_q < 1:
        raise ValueError("threshold_q must lie in (0, 1)")
    if min_run < 1:
        raise ValueError("min_run must be >= 1")
    q = float(np.quantile(y, threshold_q))
    exceed = np.flatnonzero(y > q)
    if exceed.size == 0:
        return []
    pts = points if points is not None else xi_series(y, fit, 0)
    ok = np.zeros(y.size, dtype=bool)
    for p in pts:
        ok[p.t] = p.rejected is False
    runs = [r for r in _merge_runs(_runs(ok), min_run) if r[1] - r[0] + 1 >= min_run]

    spans = {}
    for t in exceed:
        for st, en in runs:
            if st - 1 <= t <= en + 1:
                lo, hi = spans.get((st, en), (st, en))
                spans[(st, en)] = (min(lo, t), max(hi, t))
                break
    out = []
    for lo, hi in sorted(spans.values()):
        peak = lo + int(np.argmax(y[lo : hi + 1]))
        out.append(BubbleEpisode(lo, hi, peak, threshold_q))
    return out


def forward_conditional_prob(y, threshold_q: float = 0.975) -> float:
    """Share of exceedances of the ``threshold_q`` quantile followed by a non-decrease.

    The last observation is not counted.  NaN when there are no exceedances.
    """
    y = np.asarray(y, dtype=float)
    q = np.quantile(y, threshold_q)
    t = np.flatnonzero(y[:-1] > q)
    if t.size == 0:
        return float("nan")
    return float(np.mean(y[t + 1] / y[t] >= 1))


@dataclass
class DetectionReport:
    points: list
    episodes: list
    forward_prob: float
    threshold_q: float
    y: np.ndarray
    dates: Optional[list] = None

    def _date(self, i: int):
        return str(self.dates[i]) if self.dates is not None else int(i)

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        return {
            "points": [
                {
                    "t": p.t,
                    "date": self._date(p.t),
                    "xi": num(p.xi),
                    "sigma": num(p.sigma),
                    "band": num(p.band_halfwidth),
                    "rejected": p.rejected,
                }
                for p in self.points
            ],
            "episodes": [
                {
                    "start_date": self._date(e.start),
                    "end_date": self._date(e.end),
                    "peak_date": self._date(e.peak),
                    "threshold_q": e.trigger,
                }
                for e in self.episodes
            ],
            "forward_prob": num(self.forward_prob),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_csv(self) -> str:
        inside = np.zeros(self.y.size, dtype=bool)
        for e in self.episodes:
            inside[e.start : e.end + 1] = True
        by_t = {p.t: p for p in self.points}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "y", "xi", "band_lo", "band_hi", "in_episode"])
        for i, v in enumerate(self.y):
            p = by_t.get(i)
            if p is None or p.rejected is None:
                x = lo = hi = ""
            else:
                x, lo, hi = repr(p.xi), repr(-p.band_halfwidth), repr(p.band_halfwidth)
            w.writerow([self._date(i), repr(float(v)), x, lo, hi, int(inside[i])])
        return buf.getvalue()


def detect(y, fit: MarFit, threshold_q: float = 0.975, min_run: int = 2, dates=None) -> DetectionReport:
    """Statistics at h = 0, dated episodes and the forward probability in one report."""
    y = np.asarray(y, dtype=float)
    pts = xi_series(y, fit, 0)
    eps = detect_episodes(y, fit, threshold_q, min_run, points=pts)
    return DetectionReport(pts, eps, forward_conditional_prob(y, threshold_q), threshold_q, y, dates)
