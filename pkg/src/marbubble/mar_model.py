"""Mixed causal-noncausal autoregressive (MAR) processes.

A MAR(r, s) process with r, s <= 1 satisfies

    (1 - phi L)(1 - psi L^{-1}) y_t = eps_t,

with i.i.d. heavy-tailed errors.  Two pure AR(2) variants with real distinct
root reciprocals (both inside or both outside the unit circle) are also
represented, for their moving-average coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "ErrorDist",
    "MarModel",
    "LatentComponents",
    "StationarityError",
    "UnsupportedModelError",
    "validate",
    "draw_errors",
    "simulate",
    "filter_innovations",
    "simulate_with_innovations",
    "latent_components",
    "ma_coefficients",
    "ar_representation",
    "truncation_depth",
]


class StationarityError(ValueError):
    """Coefficients violate the strict-stationarity root conditions."""


class UnsupportedModelError(ValueError):
    """Model variant outside the supported family."""


@dataclass(frozen=True)
class ErrorDist:
    """Heavy-tailed error law.

    ``kind`` is ``"student_t"`` (``param`` = degrees of freedom) or
    ``"cauchy"`` (``param`` = scale).
    """

    kind: str = "student_t"
    param: float = 3.0

    @classmethod
    def student_t(cls, df: float) -> "ErrorDist":
        return cls("student_t", float(df))

    @classmethod
    def cauchy(cls, scale: float = 1.0) -> "ErrorDist":
        return cls("cauchy", float(scale))

    @classmethod
    def parse(cls, text: str) -> "ErrorDist":
        """Parse ``t3``, ``t4.5``, ``cauchy`` or ``cauchy2`` (scale 2)."""
        text = text.strip().lower()
        if text.startswith("cauchy"):
            rest = text[len("cauchy"):].lstrip(":")
            return cls.cauchy(float(rest) if rest else 1.0)
        if text.startswith("t"):
            return cls.student_t(float(text[1:].lstrip(":")))
        raise ValueError(f"unknown error distribution {text!r}")

    @property
    def tail_index(self) -> float:
        return self.param if self.kind == "student_t" else 1.0

    @property
    def label(self) -> str:
        if self.kind == "cauchy":
            return "cauchy" if self.param == 1.0 else f"cauchy{self.param:g}"
        return f"t{self.param:g}"

    def check(self) -> None:
        if self.kind not in ("student_t", "cauchy"):
            raise ValueError(f"unknown error kind {self.kind!r}")
        if not self.param > 0:
            raise ValueError("distribution parameter must be positive")


@dataclass(frozen=True)
class MarModel:
    """MAR(r, s) model with r, s in {0, 1}, or a pure AR(2) variant.

    ``ar2_roots`` holds the root reciprocals (lambda_1, lambda_2) of
    ``1 - t1 L - t2 L^2 = (1 - lambda_1 L)(1 - lambda_2 L)``; when set,
    ``r``, ``s``, ``phi`` and ``psi`` are ignored.
    """

    r: int = 1
    s: int = 1
    phi: float = 0.0
    psi: float = 0.0
    dist: ErrorDist = ErrorDist()
    ar2_roots: Optional[tuple[float, float]] = None

    @property
    def order(self) -> tuple[int, int]:
        return (self.r, self.s)

    @property
    def theta(self) -> np.ndarray:
        """Free parameters in the order (phi, psi), restricted to r, s."""
        out = []
        if self.r:
            out.append(self.phi)
        if self.s:
            out.append(self.psi)
        return np.array(out, dtype=float)

    @property
    def is_ar2(self) -> bool:
        return self.ar2_roots is not None

    @property
    def ar2_kind(self) -> str:
        lam = np.abs(self.ar2_roots)
        return "causal" if lam.max() < 1 else "noncausal"

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "s": self.s,
            "phi": self.phi,
            "psi": self.psi,
            "dist.kind": self.dist.kind,
            "dist.param": self.dist.param,
        }


@dataclass
class LatentComponents:
    """Causal ``u_t = y_t - phi y_{t-1}`` and noncausal ``v_t = y_t - psi y_{t+1}``.

    Both arrays have the length of ``y``; undefined entries (u at t=0, v at
    t=T-1) are NaN so that ``u[t]`` and ``v[t]`` align with ``y[t]``.
    """

    u: np.ndarray
    v: np.ndarray


def validate(model: MarModel) -> MarModel:
    """Return ``model`` unchanged if it is a supported stationary model."""
    model.dist.check()
    if model.is_ar2:
        lam1, lam2 = (float(x) for x in model.ar2_roots)
        if lam1 == lam2:
            raise UnsupportedModelError("double root: not geometrically ergodic")
        a1, a2 = abs(lam1), abs(lam2)
        if a1 == 1 or a2 == 1:
            raise StationarityError("unit root")
        if (a1 < 1) != (a2 < 1):
            raise UnsupportedModelError(
                "AR(2) roots on both sides of the unit circle; use the MAR(1,1) form"
            )
        return model
    if model.r not in (0, 1) or model.s not in (0, 1):
        raise UnsupportedModelError("orders r, s must be 0 or 1")
    if model.r and not abs(model.phi) < 1:
        raise StationarityError(f"|phi| must be < 1, got {model.phi}")
    if model.s and not abs(model.psi) < 1:
        raise StationarityError(f"|psi| must be < 1, got {model.psi}")
    return model


def _effective(model: MarModel) -> tuple[float, float]:
    return (model.phi if model.r else 0.0, model.psi if model.s else 0.0)


def draw_errors(dist: ErrorDist, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` errors: numpy's Student-t sampler, Cauchy by tangent inversion."""
    if dist.kind == "student_t":
        return rng.standard_t(dist.param, size=n)
    u = rng.random(n)
    return dist.param * np.tan(np.pi * (u - 0.5))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def filter_innovations(model: MarModel, eps: np.ndarray) -> np.ndarray:
    """Apply the inverse MAR filter to ``eps`` (zero initial and terminal values)."""
    eps = np.asarray(eps, dtype=float)
    if model.is_ar2:
        lam1, lam2 = model.ar2_roots
        if model.ar2_kind == "causal":
            return lfilter([1.0], [1.0, -(lam1 + lam2), lam1 * lam2], eps)
        # (1 - l1 L)(1 - l2 L) = l1 l2 L^2 (1 - L^{-1}/l1)(1 - L^{-1}/l2)
        m1, m2 = 1.0 / lam1, 1.0 / lam2
        back = lfilter([m1 * m2], [1.0, -(m1 + m2), m1 * m2], eps[::-1])[::-1]
        y = np.zeros_like(eps)
        y[:-2] = back[2:]
        return y
    phi, psi = _effective(model)
    v = lfilter([1.0], [1.0, -phi], eps)
    return lfilter([1.0], [1.0, -psi], v[::-1])[::-1]


def simulate_with_innovations(
    model: MarModel, T: int, seed=0, burn: int = 200
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate a path and return it with the aligned innovations.

    Errors of length ``T + 2 burn`` are filtered forward by the causal
    polynomial and then backward by the noncausal one (terminal value 0);
    ``burn`` points are discarded at each end.  For MAR(1,1) the returned
    ``eps[t]`` satisfies ``(1 - phi L)(1 - psi L^{-1}) y_t = eps_t``.

    ``seed`` is anything accepted by :class:`numpy.random.SeedSequence`
    (an int, or a sequence such as ``[base, replication]``) or a Generator.
    """
    validate(model)
    if T < 1:
        raise ValueError("T must be >= 1")
    if burn < 0:
        raise ValueError("burn must be >= 0")
    eps = draw_errors(model.dist, T + 2 * burn, _rng(seed))
    y = filter_innovations(model, eps)
    return y[burn : burn + T].copy(), eps[burn : burn + T].copy()


def simulate(model: MarModel, T: int, seed=0, burn: int = 200) -> np.ndarray:
    """Simulate a strictly stationary path of length ``T``; deterministic in ``seed``."""
    return simulate_with_innovations(model, T, seed=seed, burn=burn)[0]


def latent_components(y, phi: float, psi: float) -> LatentComponents:
    """Causal and noncausal components of ``y`` for coefficients (phi, psi)."""
    y = np.asarray(y, dtype=float)
    if y.size < 3:
        raise ValueError("need at least 3 observations")
    if phi * psi == 1:
        raise ValueError("phi * psi = 1: reconstruction is degenerate")
    u = np.full_like(y, np.nan)
    v = np.full_like(y, np.nan)
    u[1:] = y[1:] - phi * y[:-1]
    v[:-1] = y[:-1] - psi * y[1:]
    return LatentComponents(u=u, v=v)


def truncation_depth(model: MarModel, tol: float = 1e-12) -> int:
    """Smallest H with max coefficient modulus ** H below ``tol``."""
    if model.is_ar2:
        lam = np.abs(model.ar2_roots)
        rho = lam.max() if model.ar2_kind == "causal" else 1.0 / lam.min()
    else:
        rho = max(abs(model.phi) * model.r, abs(model.psi) * model.s)
    if rho == 0:
        return 1
    return int(np.ceil(np.log(tol) / np.log(rho)))


def _power(base: float, k: np.ndarray) -> np.ndarray:
    # 0 ** 0 = 1 by convention; k >= 0 here
    with np.errstate(divide="ignore"):
        return np.where(k == 0, 1.0, np.float64(base) ** k)


def ma_coefficients(model: MarModel, h_min: int, h_max: int) -> np.ndarray:
    """Coefficients c_h, h = h_min..h_max, of ``y_t = sum_h c_h eps_{t-h}``."""
    validate(model)
    if h_min > h_max:
        raise ValueError("h_min must be <= h_max")
    h = np.arange(h_min, h_max + 1)
    if model.is_ar2:
        lam1, lam2 = (float(x) for x in model.ar2_roots)
        if model.ar2_kind == "causal":
            k = np.clip(h, 0, None)
            c = (lam1 ** (k + 1) - lam2 ** (k + 1)) / (lam1 - lam2)
            return np.where(h >= 0, c, 0.0)
        m1, m2 = 1.0 / lam1, 1.0 / lam2
        j = np.clip(-h - 2, 0, None)
        c = m1 * m2 * (m1 ** (j + 1) - m2 ** (j + 1)) / (m1 - m2)
        return np.where(h <= -2, c, 0.0)
    phi, psi = _effective(model)
    scale = 1.0 / (1.0 - phi * psi)
    pos = _power(phi, np.clip(h, 0, None))
    neg = _power(psi, np.clip(-h, 0, None))
    return scale * np.where(h >= 0, pos, neg)


def ar_representation(model: MarModel) -> np.ndarray:
    """Pseudo-causal AR coefficients (varphi_1, ..., varphi_p).

    The noncausal root 1/psi is moved inside the unit circle:
    ``(1 - phi L)(1 - L/psi) = 1 - varphi_1 L - ... - varphi_p L^p``.
    """
    validate(model)
    if model.is_ar2:
        lam1, lam2 = model.ar2_roots
        return np.array([lam1 + lam2, -lam1 * lam2])
    phi, psi = _effective(model)
    if model.s and psi == 0:
        raise ValueError("psi = 0 with s = 1: noncausal root is degenerate")
    poly = np.array([1.0])
    if model.r:
        poly = np.convolve(poly, [1.0, -phi])
    if model.s:
        poly = np.convolve(poly, [1.0, -1.0 / psi])
    return -poly[1:]


def with_params(model: MarModel, **kw) -> MarModel:
    return replace(model, **kw)
