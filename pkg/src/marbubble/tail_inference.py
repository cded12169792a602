"""Tail-process laws of MAR(1,1), MAR(0,1) and MAR(1,0) processes.

Conditional on a large ``y_t``, ``y_{t+h} / y_t`` behaves like
``X_h = c_{h+N} / c_N`` where the peak offset ``N`` has
``P[N = h] proportional to c_h ** alpha``.  For the first-order models the law
of ``N`` is a mixture of two geometric distributions, so every functional
below has a closed form; nothing is summed numerically except in
:func:`generic_pmf`, which serves the AR(2) variants.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .mar_model import MarModel, UnsupportedModelError, ma_coefficients, truncation_depth, validate

__all__ = [
    "TailLaw",
    "TailPath",
    "DurationReport",
    "n_pmf",
    "n_cdf",
    "n_survival",
    "expected_n",
    "expected_n_given_negative",
    "prediction_interval_n",
    "median_n",
    "mode_n",
    "sample_n",
    "sample_tail_path",
    "tail_path_from_n",
    "hill_estimate",
    "default_hill_k",
    "time_to_peak_report",
    "generic_pmf",
    "pmf_depth",
]


def _kind(model: MarModel) -> str:
    validate(model)
    if model.is_ar2:
        raise UnsupportedModelError("closed-form tail laws cover first-order models only")
    phi = model.phi if model.r else 0.0
    psi = model.psi if model.s else 0.0
    if phi < 0 or psi < 0:
        raise UnsupportedModelError("tail laws assume nonnegative coefficients")
    return {(1, 1): "mar11", (0, 1): "mar01", (1, 0): "mar10", (0, 0): "wn"}[model.order]


def _weights(model: MarModel, alpha: float) -> tuple[float, float, float]:
    """(phi**alpha, psi**alpha, D) with D the MAR(1,1) normaliser."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    phi = model.phi if model.r else 0.0
    psi = model.psi if model.s else 0.0
    pa = phi**alpha
    qa = psi**alpha
    D = 1.0 / (1.0 - pa) + 1.0 / (1.0 - qa) - 1.0
    return pa, qa, D


def _pow0(base: float, k) -> np.ndarray:
    # base ** k for integer k >= 0 with 0 ** 0 = 1
    k = np.asarray(k, dtype=float)
    return np.where(k == 0, 1.0, np.float64(base) ** k)


def n_pmf(model: MarModel, alpha: float, h) -> np.ndarray | float:
    """P[N = h].  Vectorised in ``h``.

    For MAR(0,1) and MAR(1,0) the general MAR(1,1) expression reduces to the
    one-sided geometric laws, since the missing coefficient is zero.
    """
    _kind(model)
    pa, qa, D = _weights(model, alpha)
    h_arr = np.asarray(h)
    k = np.abs(h_arr)
    out = np.where(h_arr <= 0, _pow0(qa, k), _pow0(pa, k)) / D
    return float(out) if out.ndim == 0 else out


def n_cdf(model: MarModel, alpha: float, h) -> np.ndarray | float:
    """P[N <= h], from the geometric tails (no summation)."""
    _kind(model)
    pa, qa, D = _weights(model, alpha)
    h_arr = np.asarray(h)
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = _pow0(qa, -np.minimum(h_arr, 0)) / ((1.0 - qa) * D)
        upper = 1.0 - _pow0(pa, np.maximum(h_arr, 0) + 1) / ((1.0 - pa) * D)
    out = np.where(h_arr <= 0, lower, upper)
    return float(out) if out.ndim == 0 else out


def n_survival(model: MarModel, alpha: float, h) -> np.ndarray | float:
    """P[N > h]; the right tail is sum_{i > h} phi^(i alpha) / D."""
    _kind(model)
    pa, qa, D = _weights(model, alpha)
    h_arr = np.asarray(h)
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = 1.0 - _pow0(qa, -np.minimum(h_arr, 0)) / ((1.0 - qa) * D)
        upper = _pow0(pa, np.maximum(h_arr, 0) + 1) / ((1.0 - pa) * D)
    out = np.where(h_arr >= 0, upper, lower)
    return float(out) if out.ndim == 0 else out


def expected_n(model: MarModel, alpha: float) -> float:
    """Marginal E(N); zero when phi = psi."""
    _kind(model)
    pa, qa, D = _weights(model, alpha)
    return (pa / (1.0 - pa) ** 2 - qa / (1.0 - qa) ** 2) / D


def expected_n_given_negative(model: MarModel, alpha: float) -> float:
    """E(N | N < 0) = -1 - psi^a / (1 - psi^a); ``-1 - N`` is geometric given N < 0."""
    kind = _kind(model)
    if kind in ("mar10", "wn") or model.psi == 0:
        raise ValueError("N < 0 has probability zero without a noncausal root")
    _, qa, _ = _weights(model, alpha)
    return -1.0 - qa / (1.0 - qa)


def _left_quantile(model: MarModel, alpha: float, p: float) -> float:
    """Continuous h <= 0 solving psi^(-h alpha) / ((1 - psi^alpha) D) = p."""
    _, qa, D = _weights(model, alpha)
    if qa == 0:
        return 0.0
    return min(-math.log(p * (1.0 - qa) * D) / math.log(qa), 0.0)


def _right_quantile(model: MarModel, alpha: float, p: float) -> float:
    """Continuous h >= 0 solving P[N > h] = phi^((h+1) alpha) / ((1 - phi^alpha) D) = p."""
    pa, _, D = _weights(model, alpha)
    if pa == 0:
        return 0.0
    return max(math.log(p * (1.0 - pa) * D) / math.log(pa) - 1.0, 0.0)


def prediction_interval_n(model: MarModel, alpha: float, level: float = 0.10) -> tuple[int, int]:
    """Integer interval holding N with probability at least ``1 - level``.

    ``level / 2`` is left in each tail.  The continuous quantiles of the
    geometric tails are rounded outward (floor the lower end, ceil the
    upper one).  For MAR(0,1) this gives
    ``(-log(level/2) / (alpha log psi), -log(1 - level/2) / (alpha log psi))``
    before rounding.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    kind = _kind(model)
    g = level / 2.0
    if kind == "mar01":
        _, qa, _ = _weights(model, alpha)
        if qa == 0:
            return 0, 0
        lo = -math.log(g) / math.log(qa)
        hi = -math.log(1.0 - g) / math.log(qa)
        return int(math.floor(lo)), int(math.ceil(hi))
    lo = _left_quantile(model, alpha, g)
    hi = _right_quantile(model, alpha, g)
    return int(math.floor(lo)), int(math.ceil(hi))


def median_n(model: MarModel, alpha: float) -> int:
    """Smallest integer h with P[N <= h] >= 1/2.

    For MAR(0,1) this is the integer part of log 2 / (alpha log psi).
    """
    _kind(model)
    if n_cdf(model, alpha, 0) >= 0.5:
        h = int(math.floor(_left_quantile(model, alpha, 0.5)))
    else:
        h = int(math.floor(_right_quantile(model, alpha, 0.5)))
    while n_cdf(model, alpha, h - 1) >= 0.5:
        h -= 1
    while n_cdf(model, alpha, h) < 0.5:
        h += 1
    return h


def pmf_depth(model: MarModel, alpha: float, tol: float = 1e-12) -> int:
    """Smallest H with P[|N| > H] <= tol, from the geometric tails."""
    _kind(model)
    H = int(math.ceil(max(_right_quantile(model, alpha, tol / 2), -_left_quantile(model, alpha, tol / 2) - 1)))
    while n_survival(model, alpha, H) + n_cdf(model, alpha, -H - 1) > tol:
        H += 1
    return H


def mode_n(model: MarModel, alpha: float) -> int:
    """Mode of N: 0, since both geometric branches decrease away from 0."""
    _kind(model)
    return 0


def sample_n(model: MarModel, alpha: float, size: int, seed=0) -> np.ndarray:
    """Draw N from its mixture-of-geometrics law."""
    _kind(model)
    pa, qa, D = _weights(model, alpha)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    p_nonneg = (1.0 / (1.0 - pa)) / D
    branch = rng.random(size) < p_nonneg
    out = np.empty(size, dtype=np.int64)
    n_pos = int(branch.sum())
    # numpy's geometric counts trials (support 1, 2, ...): subtract one
    out[branch] = rng.geometric(1.0 - pa, n_pos) - 1 if pa > 0 else 0
    if size - n_pos:
        out[~branch] = -rng.geometric(1.0 - qa, size - n_pos)
    return out


@dataclass
class TailPath:
    """Spectral tail path on horizons ``-H..H`` (``X[H]`` is X_0 = 1)."""

    horizons: np.ndarray
    X: np.ndarray
    N: int

    def at(self, h: int) -> float:
        return float(self.X[h + (len(self.X) - 1) // 2])


def _coef(phi: float, psi: float, k: np.ndarray) -> np.ndarray:
    """MA coefficients up to the common factor 1/(1 - phi psi)."""
    kk = np.abs(k).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.where(kk == 0, 1.0, np.float64(phi) ** kk)
        neg = np.where(kk == 0, 1.0, np.float64(psi) ** kk)
    return np.where(k >= 0, pos, neg)


def tail_path_from_n(model: MarModel, N: int, H: int) -> TailPath:
    """Tail path X_h = c_{h+N} / c_N for a given peak offset N.

    On the four regions this is phi^h (N > max(-h, 0)),
    psi^(-h-N) phi^(-N) (0 < N <= -h), phi^(h+N) psi^N (-h < N <= 0) and
    psi^(-h) (N <= min(-h, 0)).
    """
    _kind(model)
    phi = model.phi if model.r else 0.0
    psi = model.psi if model.s else 0.0
    h = np.arange(-H, H + 1)
    X = _coef(phi, psi, h + N) / _coef(phi, psi, np.array(N))
    X[H] = 1.0
    return TailPath(horizons=h, X=X, N=int(N))


def sample_tail_path(model: MarModel, alpha: float, H: int, seed=0) -> TailPath:
    """Draw N and return the corresponding tail path on ``-H..H``."""
    if H < 1:
        raise ValueError("H must be >= 1")
    N = int(sample_n(model, alpha, 1, seed=seed)[0])
    return tail_path_from_n(model, N, H)


def generic_pmf(model: MarModel, alpha: float, depth: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """P[N = h] from normalised ``|c_h| ** alpha`` over a truncated range.

    Works for any supported model including the AR(2) variants; returns
    ``(h, pmf)``.
    """
    if depth is None:
        depth = truncation_depth(model) + 5
    h = np.arange(-depth, depth + 1)
    c = np.abs(ma_coefficients(model, -depth, depth)) ** alpha
    return h, c / c.sum()


def default_hill_k(n: int) -> int:
    """floor(0.1 n) clipped to [10, n - 1]."""
    return int(min(max(int(0.1 * n), 10), n - 1))


def hill_estimate(values: Iterable[float], k: Optional[int] = None) -> tuple[float, float]:
    """Hill estimate of the tail index from the ``k`` largest ``|values|``.

    Returns ``(alpha_hat, std_error)`` with std error ``alpha_hat / sqrt(k)``.
    """
    z = np.abs(np.asarray(values, dtype=float))
    z = z[np.isfinite(z)]
    n = z.size
    if k is None:
        k = default_hill_k(n)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k >= n:
        raise ValueError(f"k = {k} must be smaller than the sample size {n}")
    top = np.partition(z, n - k - 1)[n - k - 1 :]
    threshold = top.min()
    if threshold <= 0:
        raise ValueError("fewer than k + 1 positive values")
    logs = np.log(np.sort(top)[1:] / threshold)
    denom = logs.sum()
    if denom <= 0:
        raise ValueError("zero log-spacings (tied order statistics)")
    alpha = k / denom
    return float(alpha), float(alpha / math.sqrt(k))


@dataclass
class DurationReport:
    """Time-to-peak summary under the marginal law and the law given N < 0.

    ``exceed_probs[m]`` is the probability that the peak is more than ``m``
    periods ahead, P[-N > m] = P[N <= -m - 1].
    """

    alpha: float
    phi: float
    psi: float
    E_N: float
    E_N_given_neg: Optional[float]
    median: int
    mode: int
    interval: dict
    exceed_probs: dict = field(default_factory=dict)
    exceed_probs_given_neg: dict = field(default_factory=dict)

    def to_json(self, **kw) -> str:
        d = asdict(self)
        d["exceed_probs"] = {str(m): p for m, p in self.exceed_probs.items()}
        d["exceed_probs_given_neg"] = {str(m): p for m, p in self.exceed_probs_given_neg.items()}
        return json.dumps(d, **kw)


def time_to_peak_report(
    model: MarModel,
    alpha: float,
    horizons: Sequence[int] = (1, 2, 3, 4, 5, 6),
    level: float = 0.10,
) -> DurationReport:
    """Bundle the N functionals used to describe how far away a bubble peak is."""
    kind = _kind(model)
    has_neg = kind in ("mar11", "mar01") and (model.psi > 0)
    p_neg = float(n_cdf(model, alpha, -1)) if has_neg else 0.0
    exceed = {}
    exceed_neg = {}
    for m in horizons:
        m = int(m)
        if m < 0:
            raise ValueError("horizons must be >= 0")
        exceed[m] = float(n_cdf(model, alpha, -m - 1))
        if has_neg:
            exceed_neg[m] = exceed[m] / p_neg
    lo, hi = prediction_interval_n(model, alpha, level)
    return DurationReport(
        alpha=float(alpha),
        phi=float(model.phi if model.r else 0.0),
        psi=float(model.psi if model.s else 0.0),
        E_N=float(expected_n(model, alpha)),
        E_N_given_neg=float(expected_n_given_negative(model, alpha)) if has_neg else None,
        median=median_n(model, alpha),
        mode=mode_n(model, alpha),
        interval={"gamma": level, "lo": lo, "hi": hi},
        exceed_probs=exceed,
        exceed_probs_given_neg=exceed_neg,
    )


@dataclass(frozen=True)
class TailLaw:
    """Law of the peak offset N for a first-order model and tail index."""

    model: MarModel
    alpha: float

    def __post_init__(self):
        _kind(self.model)
        _weights(self.model, self.alpha)

    @property
    def normalizer(self) -> float:
        return _weights(self.model, self.alpha)[2]

    def pmf(self, h):
        return n_pmf(self.model, self.alpha, h)

    def cdf(self, h):
        return n_cdf(self.model, self.alpha, h)

    def sf(self, h):
        return n_survival(self.model, self.alpha, h)

    def mean(self) -> float:
        return expected_n(self.model, self.alpha)

    def interval(self, level: float = 0.10) -> tuple[int, int]:
        return prediction_interval_n(self.model, self.alpha, level)

    def sample(self, size: int, seed=0) -> np.ndarray:
        return sample_n(self.model, self.alpha, size, seed=seed)
