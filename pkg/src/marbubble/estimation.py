"""GCov and OLS estimation of first-order MAR models.

The GCov objective is the portmanteau-type statistic

    L_T(theta, H) = sum_{h=1}^{H} Tr[G(h) G(0)^{-1} G(h)' G(0)^{-1}],

where ``G(h)`` are sample autocovariances of nonlinear transformations of
the model residuals.  It is minimised by a multi-start simplex search over
the open stationarity box.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .mar_model import MarModel, ErrorDist, filter_innovations

__all__ = [
    "TransformSpec",
    "DEFAULT_TRANSFORMS",
    "HEAVY_TAIL_TRANSFORMS",
    "MarFit",
    "GcovFit",
    "SpecTest",
    "SingularCovarianceError",
    "OptimizationError",
    "residuals",
    "gcov_objective",
    "gcov_estimate",
    "gcov_spec_test",
    "ols_noncausal",
    "fit_ols_noncausal",
    "param_covariance",
    "nearest_psd",
    "hessian_steps",
]

log = logging.getLogger(__name__)

BOX = 0.999


class SingularCovarianceError(np.linalg.LinAlgError):
    """The variance of the transformed residuals is numerically singular."""


class OptimizationError(RuntimeError):
    """No start of the multi-start search produced a finite optimum."""

    def __init__(self, msg, traces=None):
        super().__init__(msg)
        self.traces = traces or []


@dataclass(frozen=True)
class TransformSpec:
    """Nonlinear transformations ``a_1(e), ..., a_K(e)`` of the residuals.

    ``powers`` maps ``e`` to ``e ** p`` for integer ``p`` and to ``|e| ** p``
    otherwise; ``log_abs_powers`` maps ``e`` to ``log(|e|) ** p``.
    """

    kind: str = "powers"
    exponents: tuple = (1, 2)

    def __post_init__(self):
        if self.kind not in ("powers", "log_abs_powers"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        exps = tuple(float(p) for p in self.exponents)
        if any(p <= 0 for p in exps):
            raise ValueError("exponents must be positive")
        if len(set(exps)) != len(exps):
            raise ValueError("exponents must be distinct")
        object.__setattr__(self, "exponents", exps)

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        """``powers:1,2`` or ``logabs:1,2``."""
        kind, _, rest = text.partition(":")
        kind = {"logabs": "log_abs_powers", "log_abs_powers": "log_abs_powers", "powers": "powers"}[kind]
        return cls(kind, tuple(float(x) for x in rest.split(",")))

    @property
    def K(self) -> int:
        return len(self.exponents)

    def __str__(self) -> str:
        name = "powers" if self.kind == "powers" else "logabs"
        return f"{name}:" + ",".join(f"{p:g}" for p in self.exponents)

    def apply(self, e: np.ndarray) -> np.ndarray:
        """Stack the transforms along a new last axis."""
        e = np.asarray(e, dtype=float)
        cols = []
        if self.kind == "powers":
            for p in self.exponents:
                cols.append(e**p if float(p).is_integer() else np.abs(e) ** p)
        else:
            la = np.log(np.maximum(np.abs(e), 1e-300))
            for p in self.exponents:
                cols.append(la**p if float(p).is_integer() else np.sign(la) * np.abs(la) ** p)
        return np.stack(cols, axis=-1)


DEFAULT_TRANSFORMS = TransformSpec("powers", (1, 2))
HEAVY_TAIL_TRANSFORMS = TransformSpec("powers", (0.5, 1, 1.5, 2))


def _theta_to_coefs(theta, r: int, s: int):
    theta = np.asarray(theta, dtype=float)
    i = 0
    phi = psi = 0.0
    if r:
        phi = theta[..., i]
        i += 1
    if s:
        psi = theta[..., i]
    return phi, psi


def residuals(y, r: int, s: int, theta) -> np.ndarray:
    """Residuals ``(1 - phi L)(1 - psi L^{-1}) y_t`` for t = r..T-1-s (0-based).

    ``theta`` may be a single parameter vector or a batch of shape
    ``(m, r + s)``; the output then has shape ``(m, T - r - s)``.
    """
    y = np.asarray(y, dtype=float)
    T = y.size
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != r + s:
        raise ValueError(f"theta must have {r + s} components")
    phi, psi = _theta_to_coefs(theta, r, s)
    phi = np.asarray(phi)[..., None] if np.ndim(phi) else phi
    psi = np.asarray(psi)[..., None] if np.ndim(psi) else psi
    cur = y[r : T - s]
    out = cur
    if s:
        out = out - psi * y[r + 1 : T - s + 1]
    if r:
        out = out - phi * y[: T - s - 1] if s else out - phi * y[: T - 1]
        if s:
            out = out + phi * psi * cur
    return np.broadcast_to(out, theta.shape[:-1] + (T - r - s,)).copy()


def _autocov(a: np.ndarray, H: int) -> np.ndarray:
    """Autocovariances (..., H+1, K, K) of demeaned rows of ``a`` (..., n, K), 1/n scaling."""
    n = a.shape[-2]
    a = a - a.mean(axis=-2, keepdims=True)
    out = [np.einsum("...tk,...tl->...kl", a, a) / n]
    for h in range(1, H + 1):
        out.append(np.einsum("...tk,...tl->...kl", a[..., h:, :], a[..., :-h, :]) / n)
    return np.stack(out, axis=-3)


def _check_gamma0(g0: np.ndarray, transforms: TransformSpec) -> None:
    d = np.sqrt(np.clip(np.diag(g0), 0, None))
    if np.any(d <= 0) or not np.all(np.isfinite(g0)):
        bad = int(np.argmin(d)) if np.all(np.isfinite(d)) else 0
        raise SingularCovarianceError(
            f"transformation {transforms.exponents[bad]:g} has zero or non-finite variance"
        )
    corr = g0 / np.outer(d, d)
    np.fill_diagonal(corr, 0.0)
    i, j = np.unravel_index(np.argmax(np.abs(corr)), corr.shape)
    if np.linalg.eigvalsh(g0 / np.outer(d, d)).min() < 1e-10:
        raise SingularCovarianceError(
            "variance of transformed residuals is singular; offending pair "
            f"({transforms.exponents[i]:g}, {transforms.exponents[j]:g}), "
            f"correlation {corr[i, j]:.12f}"
        )


def _objective_from_gammas(gam: np.ndarray, diagonal: bool = False) -> np.ndarray:
    """Trace criterion from autocovariances (..., H+1, K, K)."""
    g0 = gam[..., 0, :, :]
    if diagonal:
        w = 1.0 / np.sqrt(np.diagonal(g0, axis1=-2, axis2=-1))
        std = gam[..., 1:, :, :] * w[..., None, :, None] * w[..., None, None, :]
    else:
        L = np.linalg.cholesky(g0)
        Linv = np.linalg.inv(L)
        std = Linv[..., None, :, :] @ gam[..., 1:, :, :] @ np.swapaxes(Linv, -1, -2)[..., None, :, :]
    return np.sum(std**2, axis=(-3, -2, -1))


def gcov_objective(
    y,
    theta,
    transforms: TransformSpec = DEFAULT_TRANSFORMS,
    H: int = 2,
    r: int = 1,
    s: int = 1,
    diagonal: bool = False,
) -> float:
    """L_T(theta, H) for a single parameter vector."""
    if H < 1:
        raise ValueError("H must be >= 1")
    e = residuals(y, r, s, theta)
    if e.size < H + 2:
        raise ValueError("residual series too short for the requested H")
    gam = _autocov(transforms.apply(e), H)
    if not diagonal:
        _check_gamma0(gam[0], transforms)
    return float(_objective_from_gammas(gam, diagonal))


def _batch_objective(y, thetas, transforms, H, r, s, diagonal) -> np.ndarray:
    e = residuals(y, r, s, thetas)
    gam = _autocov(transforms.apply(e), H)
    out = np.full(len(thetas), np.inf)
    g0 = gam[:, 0]
    ok = np.all(np.isfinite(gam.reshape(len(thetas), -1)), axis=1)
    if not diagonal:
        # guard the batched Cholesky against singular members
        ev_ok = np.zeros(len(thetas), dtype=bool)
        d = np.sqrt(np.clip(np.diagonal(g0, axis1=1, axis2=2), 1e-300, None))
        corr = g0 / (d[:, :, None] * d[:, None, :])
        ev_ok[ok] = np.linalg.eigvalsh(corr[ok]).min(axis=1) > 1e-10
        ok &= ev_ok
    if ok.any():
        out[ok] = _objective_from_gammas(gam[ok], diagonal)
    return out


class SpecTest(NamedTuple):
    statistic: float
    df: int
    pvalue: float
    reject_at_5pct: bool


@dataclass
class MarFit:
    """Fitted MAR(r, s) parameters with the covariance of sqrt(T)(theta_hat - theta).

    ``omega`` is scaled by the series length ``nobs``: standard errors are
    ``sqrt(diag(omega) / nobs)``.
    """

    r: int
    s: int
    theta: np.ndarray
    omega: np.ndarray
    nobs: int
    method: str = "gcov"
    objective: Optional[float] = None
    residuals: Optional[np.ndarray] = None
    transforms: Optional[TransformSpec] = None
    H: Optional[int] = None
    status: str = "ok"
    trace: list = field(default_factory=list)
    diagonal: bool = False

    @property
    def phi(self) -> float:
        return float(self.theta[0]) if self.r else 0.0

    @property
    def psi(self) -> float:
        return float(self.theta[self.r]) if self.s else 0.0

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.omega), 0, None) / self.nobs)

    @property
    def n_resid(self) -> int:
        return self.nobs - self.r - self.s

    def model(self, dist: ErrorDist = ErrorDist()) -> MarModel:
        return MarModel(self.r, self.s, self.phi, self.psi, dist)

    def to_dict(self) -> dict:
        names = (["phi"] if self.r else []) + (["psi"] if self.s else [])
        d = {
            "method": self.method,
            "order": [self.r, self.s],
            "theta": dict(zip(names, map(float, self.theta))),
            "stderr": dict(zip(names, map(float, self.stderr))),
            "omega": np.asarray(self.omega).tolist(),
            "objective": self.objective,
            "nobs": self.nobs,
            "status": self.status,
        }
        if self.method == "gcov":
            t = gcov_spec_test(self)
            d["test"] = {"stat": t.statistic, "df": t.df, "pvalue": t.pvalue}
            d["config"] = {"K": self.transforms.K, "H": self.H, "transforms": str(self.transforms)}
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


GcovFit = MarFit


def _start_grid(dim: int, spacing: float) -> np.ndarray:
    pts = np.arange(-0.9, 0.9 + 1e-9, spacing)
    pts = np.round(pts, 10)
    mesh = np.meshgrid(*([pts] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def gcov_estimate(
    y,
    r: int = 1,
    s: int = 1,
    transforms: TransformSpec = DEFAULT_TRANSFORMS,
    H: int = 2,
    *,
    grid_spacing: float = 0.1,
    n_starts: int = 3,
    diagonal: bool = False,
    covariance: str = "sandwich",
    seed=0,
) -> MarFit:
    """Minimise the GCov objective over the open box (-0.999, 0.999)^(r+s).

    The objective is evaluated on a ``grid_spacing`` lattice; the
    ``n_starts`` best lattice points seed Nelder-Mead searches and the best
    terminal value wins.  ``covariance`` is ``"sandwich"`` or
    ``"bootstrap"``.
    """
    if (r, s) not in ((1, 0), (0, 1), (1, 1)):
        raise ValueError("(r, s) must be (1,0), (0,1) or (1,1)")
    if H < 1:
        raise ValueError("H must be >= 1")
    y = np.asarray(y, dtype=float)
    if y.size - r - s <= H + 10:
        raise ValueError("series too short for the requested H")
    dim = r + s

    grid = _start_grid(dim, grid_spacing)
    vals = _batch_objective(y, grid, transforms, H, r, s, diagonal)
    order = np.argsort(vals, kind="stable")
    starts = [grid[i] for i in order[:n_starts] if np.isfinite(vals[i])]
    if not starts:
        raise OptimizationError("objective not finite at any grid point")

    def f(th):
        if np.any(np.abs(th) >= BOX):
            return np.inf
        v = _batch_objective(y, th[None, :], transforms, H, r, s, diagonal)[0]
        return v

    traces = []
    best = None
    for x0 in starts:
        res = optimize.minimize(
            f,
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000, "maxfev": 8000},
        )
        traces.append(
            {"start": x0.tolist(), "x": res.x.tolist(), "fun": float(res.fun), "nit": int(res.nit), "success": bool(res.success)}
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimizationError("all starts failed", traces)

    theta = np.asarray(best.x, dtype=float)
    status = "boundary" if np.any(np.abs(theta) > 0.999 - 1e-6) else "ok"
    if status == "boundary":
        warnings.warn("GCov optimum on the boundary of the stationarity box", RuntimeWarning)
    fit = MarFit(
        r=r,
        s=s,
        theta=theta,
        omega=np.full((dim, dim), np.nan),
        nobs=y.size,
        method="gcov",
        objective=float(best.fun),
        residuals=residuals(y, r, s, theta),
        transforms=transforms,
        H=H,
        status=status,
        trace=traces,
        diagonal=diagonal,
    )
    fit.omega = param_covariance(y, fit, method=covariance, seed=seed)
    return fit


def gcov_spec_test(fit: MarFit, T: Optional[int] = None) -> SpecTest:
    """Chi-square test of residual serial independence, df = H K^2 - dim(theta)."""
    if fit.transforms is None or fit.H is None:
        raise ValueError("specification test needs a GCov fit")
    df = fit.H * fit.transforms.K**2 - (fit.r + fit.s)
    if df <= 0:
        raise ValueError("H K^2 must exceed dim(theta)")
    if T is None:
        T = fit.nobs
    stat = float(T * fit.objective)
    p = float(stats.chi2.sf(stat, df))
    return SpecTest(stat, int(df), p, bool(p < 0.05))


def ols_noncausal(y) -> tuple[float, float]:
    """Reverse-time AR(1) least squares: regress y_t on y_{t+1} without intercept.

    Returns ``(psi_hat, std_error)``.
    """
    y = np.asarray(y, dtype=float)
    if y.size < 10:
        raise ValueError("need at least 10 observations")
    x = y[1:]
    z = y[:-1]
    sxx = float(x @ x)
    if sxx <= 0:
        raise ValueError("regressor has zero variance")
    psi = float(x @ z) / sxx
    res = z - psi * x
    s2 = float(res @ res) / (z.size - 1)
    return psi, float(np.sqrt(s2 / sxx))


def fit_ols_noncausal(y) -> MarFit:
    """MAR(0,1) fit by :func:`ols_noncausal`, packaged for the bubble statistics."""
    y = np.asarray(y, dtype=float)
    psi, se = ols_noncausal(y)
    T = y.size
    return MarFit(
        r=0,
        s=1,
        theta=np.array([psi]),
        omega=np.array([[T * se**2]]),
        nobs=T,
        method="ols",
        residuals=y[:-1] - psi * y[1:],
    )


def nearest_psd(a: np.ndarray) -> np.ndarray:
    """Symmetrise and clip negative eigenvalues to zero."""
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if w.min() < 0:
        warnings.warn("covariance estimate not PSD; projected", RuntimeWarning)
        w = np.clip(w, 0, None)
        a = (v * w) @ v.T
    return a


def _gammas_at(y, theta, fit: MarFit) -> np.ndarray:
    e = residuals(y, fit.r, fit.s, theta)
    return _autocov(fit.transforms.apply(e), fit.H)


def hessian_steps(theta, T: int) -> np.ndarray:
    """Second-difference steps max(1e-5 max(1, |theta_i|), T^{-1/2}), kept inside the box.

    Fractional powers make the sample objective rough at scales far below
    the sampling error.  Holding the step at T^{-1/2} or above measures the
    curvature; a tiny step would only measure the roughness.
    """
    theta = np.asarray(theta, dtype=float)
    steps = np.maximum(1e-5 * np.maximum(1.0, np.abs(theta)), T**-0.5)
    room = (BOX - np.abs(theta)) / 2.01
    return np.maximum(np.minimum(steps, room), 1e-7)


def _sandwich(y, fit: MarFit, curvature: str = "hessian") -> np.ndarray:
    theta = fit.theta
    dim = theta.size
    dstep = 1e-5 * np.maximum(1.0, np.abs(theta))

    # derivatives of the autocovariances, and per-observation score terms
    gam = _gammas_at(y, theta, fit)
    dgam = []
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = dstep[i]
        dgam.append((_gammas_at(y, theta + ei, fit) - _gammas_at(y, theta - ei, fit)) / (2 * dstep[i]))
    a = fit.transforms.apply(residuals(y, fit.r, fit.s, theta))
    a = a - a.mean(axis=0)
    n, H = a.shape[0], fit.H
    if fit.diagonal:
        W = np.diag(1.0 / np.diag(gam[0]))
    else:
        W = np.linalg.inv(gam[0])
    g = np.zeros((n - H, dim))
    cur = a[H:]
    for i in range(dim):
        for h in range(1, H + 1):
            M = W @ dgam[i][h] @ W
            g[:, i] += 2.0 * np.einsum("tk,kl,tl->t", cur, M, a[H - h : n - h])
    I = g.T @ g / g.shape[0]

    J = None
    if curvature == "hessian":
        J = _fd_hessian(lambda th: float(_objective_from_gammas(_gammas_at(y, th, fit), fit.diagonal)),
                        theta, hessian_steps(theta, y.size))
        if not np.all(np.isfinite(J)) or np.linalg.eigvalsh(0.5 * (J + J.T)).min() <= 0:
            log.info("finite-difference Hessian not positive definite; using Gauss-Newton form")
            J = None
    if J is None:
        # Gauss-Newton curvature 2 sum_h Tr[dG_i W dG_j' W], always PSD
        J = np.empty((dim, dim))
        for i in range(dim):
            for j in range(dim):
                J[i, j] = 2 * sum(np.trace(dgam[i][h] @ W @ dgam[j][h].T @ W) for h in range(1, H + 1))
    Jinv = np.linalg.pinv(J)
    omega_n = Jinv @ I @ Jinv
    # rescale from the residual count to the series length
    return nearest_psd(omega_n * y.size / n)


def _fd_hessian(f, x, steps) -> np.ndarray:
    dim = x.size
    J = np.empty((dim, dim))
    f0 = f(x)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = steps[i]
        J[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / steps[i] ** 2
        for j in range(i + 1, dim):
            ej = np.zeros(dim)
            ej[j] = steps[j]
            J[i, j] = J[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                4 * steps[i] * steps[j]
            )
    return J


def _bootstrap(y, fit: MarFit, B: int = 199, burn: int = 200, seed=0) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    model = MarModel(fit.r, fit.s, fit.phi, fit.psi)
    e = np.asarray(fit.residuals)
    e = e - e.mean()
    T = y.size
    draws = []
    for _ in range(B):
        eps = rng.choice(e, size=T + 2 * burn, replace=True)
        yb = filter_innovations(model, eps)[burn : burn + T]
        try:
            fb = gcov_estimate(yb, fit.r, fit.s, fit.transforms, fit.H, diagonal=fit.diagonal, covariance="none")
        except (OptimizationError, np.linalg.LinAlgError, ValueError):
            continue
        draws.append(fb.theta)
    draws = np.asarray(draws)
    # refits that landed in another local minimum (swapped roots, box edge)
    med = np.median(draws, axis=0)
    mad = 1.4826 * np.median(np.abs(draws - med), axis=0)
    keep = np.all(np.abs(draws - med) <= 5 * np.maximum(mad, 1e-12), axis=1)
    if (~keep).any():
        log.info("bootstrap: dropped %d outlying refits of %d", int((~keep).sum()), len(draws))
    draws = draws[keep]
    if len(draws) < 2:
        raise OptimizationError("bootstrap produced fewer than two fits")
    return nearest_psd(np.atleast_2d(np.cov(draws, rowvar=False)) * T)


def param_covariance(y, fit: MarFit, method: str = "sandwich", B: int = 199, seed=0) -> np.ndarray:
    """Covariance of sqrt(T)(theta_hat - theta) for a GCov fit.

    ``"sandwich"``: J^{-1} I J^{-1} with J the central second-difference
    Hessian of the objective (steps from :func:`hessian_steps`, Gauss-Newton
    curvature if that is not positive definite) and I the outer-product mean
    of per-observation score contributions.  ``"gauss_newton"``: the same with the Gauss-Newton curvature.
    ``"bootstrap"``: residual resampling with ``B`` refits; refits more than
    five robust scales from the median are dropped before the covariance.
    ``"none"`` returns NaNs (used inside the bootstrap).
    """
    y = np.asarray(y, dtype=float)
    dim = fit.r + fit.s
    if method == "none":
        return np.full((dim, dim), np.nan)
    if method == "sandwich":
        return _sandwich(y, fit)
    if method == "gauss_newton":
        return _sandwich(y, fit, curvature="gauss_newton")
    if method == "bootstrap":
        return _bootstrap(y, fit, B=B, seed=seed)
    raise ValueError(f"unknown covariance method {method!r}")
