"""Size and power experiments for the h = 0 bubble test.

Size: the statistic is evaluated at an exceedance of the upper
``size_quantile`` of each simulated path, where the null (bubble) is meant
to hold.  Power: it is evaluated at the order statistic of ascending rank
ceil(power_quantile T), provided the next value is at most the upper quantile.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bubble_detector import Z975, _xi_arrays
from .estimation import (
    DEFAULT_TRANSFORMS,
    OptimizationError,
    TransformSpec,
    fit_ols_noncausal,
    gcov_estimate,
)
from .mar_model import ErrorDist, MarModel, simulate

__all__ = ["McConfig", "McCell", "McTable", "run", "run_size", "run_power", "size_time", "power_time"]

log = logging.getLogger(__name__)

FAMILIES = ("ols01", "gcov11")


@dataclass(frozen=True)
class McConfig:
    """Grid and protocol for one experiment.

    ``family`` is ``"ols01"`` (MAR(0,1) fitted by OLS; ``phis`` ignored) or
    ``"gcov11"`` (MAR(1,1) fitted by GCov).  ``rate_tol`` optionally keeps
    only exceedances whose next step grows at close to the fitted explosion
    rate, |psi_hat y_{t+1} / y_t - 1| < rate_tol.
    """

    family: str = "ols01"
    dists: tuple = ("t3", "t4", "t5")
    psis: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    phis: tuple = (0.0,)
    T: int = 400
    R: int = 200
    burn: int = 200
    size_quantile: float = 0.975
    power_quantile: float = 0.525
    seed: int = 0
    pick: str = "first"
    rate_tol: Optional[float] = None
    transforms: TransformSpec = DEFAULT_TRANSFORMS
    H: int = 4
    threads: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if not self.dists or not self.psis or not self.phis:
            raise ValueError("grids must be non-empty")
        for q in (self.size_quantile, self.power_quantile):
            if not 0 < q < 1:
                raise ValueError("quantile levels must lie in (0, 1)")
        if self.pick not in ("first", "last", "max"):
            raise ValueError("pick must be first, last or max")
        for d in self.dists:
            ErrorDist.parse(d)

    @property
    def phi_grid(self) -> tuple:
        return (0.0,) if self.family == "ols01" else tuple(self.phis)


@dataclass(frozen=True)
class McCell:
    dist: str
    psi: float
    phi: float
    metric: str
    value: float
    R: int
    failures: int
    used: int
    flags: tuple = ()


@dataclass
class McTable:
    config: McConfig
    cells: list = field(default_factory=list)

    def select(self, metric: str) -> "McTable":
        return McTable(self.config, [c for c in self.cells if c.metric == metric])

    def value(self, dist: str, psi: float, phi: float = 0.0, metric: str = "size") -> float:
        for c in self.cells:
            if c.dist == dist and np.isclose(c.psi, psi) and np.isclose(c.phi, phi) and c.metric == metric:
                return c.value
        raise KeyError((dist, psi, phi, metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dist", "psi", "phi", "metric", "value", "R", "failures"])
        for c in self.cells:
            w.writerow([c.dist, f"{c.psi:g}", f"{c.phi:g}", c.metric, f"{c.value:.6g}", c.R, c.failures])
        return buf.getvalue()

    def render(self) -> str:
        """Aligned text: one block per metric (and psi for MAR(1,1)), rows = distributions."""
        lines = []
        for metric in dict.fromkeys(c.metric for c in self.cells):
            cells = [c for c in self.cells if c.metric == metric]
            if self.config.family == "ols01":
                blocks = [(None, cells)]
                col_name, col_of = "psi", (lambda c: c.psi)
            else:
                psis = list(dict.fromkeys(c.psi for c in cells))
                blocks = [(p, [c for c in cells if c.psi == p]) for p in psis]
                col_name, col_of = "phi", (lambda c: c.phi)
            for psi, bc in blocks:
                title = metric if psi is None else f"{metric}, psi = {psi:g}"
                cols = list(dict.fromkeys(col_of(c) for c in bc))
                lines.append(title)
                lines.append(f"{col_name:<8}" + "".join(f"{x:>8g}" for x in cols))
                for d in dict.fromkeys(c.dist for c in bc):
                    row = {col_of(c): c for c in bc if c.dist == d}
                    txt = "".join(
                        f"{row[x].value:>8.3f}".replace("0.", " .") + ("*" if row[x].flags else "")
                        if not np.isnan(row[x].value) else f"{'nan':>8}"
                        for x in cols
                    )
                    lines.append(f"{d:<8}" + txt)
                lines.append("")
        if any(c.flags for c in self.cells):
            lines.append("* " + "; ".join(sorted({f for c in self.cells for f in c.flags})))
        return "\n".join(lines).rstrip() + "\n"


def size_time(y: np.ndarray, q_level: float, pick: str = "first", psi_hat=None, rate_tol=None) -> Optional[int]:
    """Conditioning time for the size experiment, or None."""
    q = np.quantile(y, q_level)
    cand = np.flatnonzero(y[:-1] > q)
    if rate_tol is not None and psi_hat is not None:
        cand = cand[np.abs(psi_hat * y[cand + 1] / y[cand] - 1) < rate_tol]
    if cand.size == 0:
        return None
    if pick == "first":
        return int(cand[0])
    if pick == "last":
        return int(cand[-1])
    return int(cand[np.argmax(y[cand])])


def power_time(y: np.ndarray, q_level: float, upper_level: float) -> Optional[int]:
    """Order statistic of rank ceil(q_level T) followed by a value at most the upper quantile.

    With T = 400 and level 0.525 this is the 210th smallest value; when it
    does not qualify the nearest ranks are tried in turn, lower rank first.
    """
    T = y.size
    upper = np.quantile(y, upper_level)
    order = np.argsort(y, kind="stable")
    k0 = int(np.ceil(T * q_level - 1e-9)) - 1
    for d in range(T):
        for k in (k0 - d, k0 + d) if d else (k0,):
            if 0 <= k < T:
                t = int(order[k])
                if t < T - 1 and y[t + 1] <= upper and y[t] != 0:
                    return t
    return None


def _rejects(y, fit, t) -> Optional[bool]:
    x, s, ok = _xi_arrays(y, fit, np.array([t]), 0)
    if not ok[0]:
        return None
    return bool(abs(x[0]) > Z975 * s[0] / np.sqrt(y.size))


def _cell(args):
    cfg, dist, psi, phi, metrics = args
    d = ErrorDist.parse(dist)
    model = MarModel(0, 1, 0.0, psi, d) if cfg.family == "ols01" else MarModel(1, 1, phi, psi, d)
    hits = {m: [] for m in metrics}
    failures = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for rep in range(cfg.R):
            y = simulate(model, cfg.T, seed=[cfg.seed, rep], burn=cfg.burn)
            try:
                if cfg.family == "ols01":
                    fit = fit_ols_noncausal(y)
                else:
                    fit = gcov_estimate(y, 1, 1, cfg.transforms, cfg.H)
                if not np.all(np.isfinite(fit.omega)):
                    raise FloatingPointError("non-finite covariance")
            except (OptimizationError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
                log.debug("replication %d failed: %s", rep, exc)
                failures += 1
                continue
            for m in metrics:
                if m == "size":
                    t = size_time(y, cfg.size_quantile, cfg.pick, fit.psi, cfg.rate_tol)
                else:
                    t = power_time(y, cfg.power_quantile, cfg.size_quantile)
                if t is None:
                    continue
                r = _rejects(y, fit, t)
                if r is not None:
                    hits[m].append(r)
    flags = ("psi = 0: noncausal coefficient not identified",) if psi == 0 else ()
    out = []
    for m in metrics:
        v = float(np.mean(hits[m])) if hits[m] else float("nan")
        out.append(McCell(dist, float(psi), float(phi), m, v, cfg.R, failures, len(hits[m]), flags))
    return out


def run(cfg: McConfig, metrics=("size", "power")) -> McTable:
    """All cells of the grid; identical configs give identical tables."""
    tasks = [(cfg, d, p, f, tuple(metrics)) for d in cfg.dists for p in cfg.psis for f in cfg.phi_grid]
    if cfg.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(_cell, tasks))
    else:
        results = [_cell(t) for t in tasks]
    cells = [c for metric in metrics for res in results for c in res if c.metric == metric]
    return McTable(cfg, cells)


def run_size(cfg: McConfig) -> McTable:
    return run(cfg, ("size",))


def run_power(cfg: McConfig) -> McTable:
    return run(cfg, ("power",))
