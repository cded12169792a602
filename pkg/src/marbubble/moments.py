"""Conditional moments of the latent components of a Cauchy MAR(1,1) process.

With Cauchy errors of scale sigma and 0 < psi < 1, the causal component
u_t = y_t - phi y_{t-1} is a noncausal Cauchy AR(1) whose causal transition
has finite first and second moments:

    E[u_{t+1} | past] = u_t,
    E[u_{t+1}^2 | past] = u_t^2 / psi + sigma^2 / (psi (1 - psi)).

Everything here conditions on the pair (y_t, y_{t-1}).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConditionalState",
    "BuildingBlocks",
    "cond_building_blocks",
    "cond_cov_uv",
    "cond_cov_uv_composed",
    "conditional_xi",
    "divergence_report",
    "horizon_polynomials",
]


@dataclass(frozen=True)
class ConditionalState:
    y_t: float
    y_prev: float
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class BuildingBlocks:
    mean: float  # E[y_{t+1} | y_t, y_{t-1}]
    second_moment: float  # E[y_{t+1}^2 | y_t, y_{t-1}]
    a: float
    b: float
    c: float


def _check_psi(psi: float) -> None:
    if not 0 < psi < 1:
        raise ValueError("conditional moments implemented for 0 < psi < 1 only")


def cond_building_blocks(state: ConditionalState, phi: float, psi: float) -> BuildingBlocks:
    """First two conditional moments of y_{t+1}.

    The second moment is a y_t^2 - 2 b y_t y_{t-1} + c y_{t-1}^2 +
    sigma^2 / (|psi| (1 - |psi|)) with a = phi^2 + 2 phi sign(psi) + 1/|psi|,
    b = phi^2 sign(psi) + phi/|psi| and c = phi^2/|psi|.
    """
    if psi == 0:
        raise ZeroDivisionError("psi = 0")
    _check_psi(psi)
    y, yp, s = state.y_t, state.y_prev, state.sigma
    sg, ap = np.sign(psi), abs(psi)
    a = phi**2 + 2 * phi * sg + 1 / ap
    b = phi**2 * sg + phi / ap
    c = phi**2 / ap
    mean = (y - phi * yp) + phi * y
    second = a * y**2 - 2 * b * y * yp + c * yp**2 + s**2 / (ap * (1 - ap))
    return BuildingBlocks(float(mean), float(second), float(a), float(b), float(c))


def cond_cov_uv(state: ConditionalState, phi: float, psi: float) -> float:
    """Closed form as printed for E[u_{t+1} v_t | y_t, y_{t-1}].

    Kept for comparison only: it disagrees with the composition of the
    building blocks (see :func:`divergence_report`), which is the value to use.
    """
    _check_psi(psi)
    y, yp, s = state.y_t, state.y_prev, state.sigma
    return float(
        y**2 * ((phi - 1) * phi * psi)
        + y * yp * (2 * phi - phi * (1 - phi * psi))
        - yp**2
        + s**2 / (1 - abs(psi))
    )


def cond_cov_uv_composed(state: ConditionalState, phi: float, psi: float) -> float:
    """E[u_{t+1} v_t | .] = -phi y_t^2 - psi E[y_{t+1}^2 | .] + (phi psi + 1) y_t E[y_{t+1} | .].

    Expands to -phi psi y_t^2 + phi (1 + phi psi) y_t y_{t-1} - phi^2 y_{t-1}^2
    - sigma^2 / (1 - psi).
    """
    bb = cond_building_blocks(state, phi, psi)
    y = state.y_t
    return float(-phi * y**2 - psi * bb.second_moment + (phi * psi + 1) * y * bb.mean)


def conditional_xi(state: ConditionalState, phi: float, psi: float) -> float:
    """E[u_{t+1} v_t | .] / y_t^2 (composed form); NaN at y_t = 0."""
    if state.y_t == 0:
        return float("nan")
    return cond_cov_uv_composed(state, phi, psi) / state.y_t**2


def divergence_report(state: ConditionalState, phi: float, psi: float) -> dict:
    """Both forms side by side with their coefficients on y_t^2, y_t y_{t-1}, y_{t-1}^2 and 1."""
    _check_psi(psi)
    s2 = state.sigma**2
    printed = {
        "y_t^2": (phi - 1) * phi * psi,
        "y_t*y_prev": 2 * phi - phi * (1 - phi * psi),
        "y_prev^2": -1.0,
        "const": s2 / (1 - psi),
    }
    composed = {
        "y_t^2": -phi * psi,
        "y_t*y_prev": phi * (1 + phi * psi),
        "y_prev^2": -(phi**2),
        "const": -s2 / (1 - psi),
    }
    p = cond_cov_uv(state, phi, psi)
    c = cond_cov_uv_composed(state, phi, psi)
    return {
        "state": {"y_t": state.y_t, "y_prev": state.y_prev, "sigma": state.sigma},
        "phi": phi,
        "psi": psi,
        "printed": p,
        "composed": c,
        "difference": p - c,
        "coefficients": {"printed": printed, "composed": composed},
        "mismatched_terms": sorted(k for k in printed if not np.isclose(printed[k], composed[k])),
    }


def horizon_polynomials(phi: float, h: int) -> tuple[float, np.ndarray]:
    """(P_h, q) in y_{t+h} = P_h y_{t-1} + sum_j q[j] u_{t+j}, j = 0..h.

    P_h = phi^{h+1} and q[j] = phi^{h-j}; only h in {0, 1, 2} is supported.
    """
    if h not in (0, 1, 2):
        raise ValueError("only h in {0, 1, 2} is implemented")
    q = np.array([phi ** (h - j) for j in range(h + 1)], dtype=float)
    return float(phi ** (h + 1)), q
