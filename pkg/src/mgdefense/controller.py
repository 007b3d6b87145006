"""Secondary control: conventional consensus/containment and the resilient compensator.

All per-inverter functions take the full state vectors but read only the
entries of inverter i, its in-neighbours and its pinned leaders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .topology import CommGraph

MODES = ("conventional", "resilient")


def _per_node(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or a length-{n} vector")
    return arr


@dataclass(frozen=True)
class ControllerParams:
    c_f: np.ndarray
    c_v: np.ndarray
    beta_f: np.ndarray
    beta_v: np.ndarray
    alpha_f: np.ndarray
    alpha_v: np.ndarray
    gamma: int = 3
    mode: str = "resilient"
    chi_f0: np.ndarray | float = 0.01
    chi_v0: np.ndarray | float = 0.01

    @classmethod
    def uniform(cls, n: int, *, c_f=20.0, c_v=10.0, beta_f=350.0, beta_v=20.0, alpha_f=0.01,
                alpha_v=0.01, gamma=3, mode="resilient", chi_f0=0.01, chi_v0=0.01) -> "ControllerParams":
        return cls(*(_per_node(v, n, k) for k, v in (("c_f", c_f), ("c_v", c_v), ("beta_f", beta_f),
                                                      ("beta_v", beta_v), ("alpha_f", alpha_f),
                                                      ("alpha_v", alpha_v))),
                   gamma=gamma, mode=mode, chi_f0=_per_node(chi_f0, n, "chi_f0"),
                   chi_v0=_per_node(chi_v0, n, "chi_v0"))

    def __post_init__(self):
        n = np.atleast_1d(np.asarray(self.c_f)).size
        for name in ("c_f", "c_v", "beta_f", "beta_v", "alpha_f", "alpha_v", "chi_f0", "chi_v0"):
            arr = _per_node(getattr(self, name), n, name)
            if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be positive and finite")
            object.__setattr__(self, name, arr)
        if int(self.gamma) != self.gamma or self.gamma < 1:
            raise ValueError("gamma must be an integer >= 1")
        object.__setattr__(self, "gamma", int(self.gamma))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def n(self) -> int:
        return self.c_f.size

    @property
    def resilient(self) -> bool:
        return self.mode == "resilient"


@dataclass(frozen=True)
class LeaderSignal:
    omega_ref: float  # rad/s, broadcast by both leaders
    v_upper: float
    v_lower: float

    def __post_init__(self):
        if not self.v_upper > self.v_lower:
            raise ValueError("v_upper must exceed v_lower")

    @classmethod
    def from_hz(cls, f_hz: float, v_upper: float, v_lower: float) -> "LeaderSignal":
        return cls(2 * math.pi * f_hz, v_upper, v_lower)

    @property
    def voltages(self) -> tuple[float, float]:
        return (self.v_upper, self.v_lower)


@dataclass
class ControllerState:
    omega_n: np.ndarray
    V_n: np.ndarray
    chi_f_chain: np.ndarray  # (N, gamma): [chi, chi', ..., chi^(gamma-1)]
    chi_v_chain: np.ndarray

    @classmethod
    def initial(cls, omega_n, V_n, params: ControllerParams) -> "ControllerState":
        n, g = params.n, params.gamma
        cf = np.zeros((n, g))
        cv = np.zeros((n, g))
        cf[:, 0] = params.chi_f0
        cv[:, 0] = params.chi_v0
        return cls(np.array(omega_n, dtype=float), np.array(V_n, dtype=float), cf, cv)


def _containment_term(i: int, x, leader_values, graph: CommGraph) -> float:
    a = graph.adjacency
    s = 0.0
    for j in np.flatnonzero(a[i]):
        s += a[i, j] * (x[j] - x[i])
    for k in range(2):
        if graph.pinning[k, i] > 0:
            s += graph.pinning[k, i] * (leader_values[k] - x[i])
    return s


def neighborhood_term_f(i: int, omega_n, P, graph: CommGraph, leaders: LeaderSignal,
                        c_f, m_p) -> float:
    """Frequency neighbourhood term of inverter i.

    The leader value seen by inverter i is ``omega_ref + m_p[i] * P[i]``, so
    the pinning term equals ``g_ik * (omega_ref - omega_i)``.
    """
    ref = leaders.omega_ref + m_p[i] * P[i]
    return float(c_f[i] * _containment_term(i, omega_n, (ref, ref), graph))


def neighborhood_term_v(i: int, V_n, Q, graph: CommGraph, leaders: LeaderSignal, c_v, n_q) -> float:
    refs = tuple(v + n_q[i] * Q[i] for v in leaders.voltages)
    return float(c_v[i] * _containment_term(i, V_n, refs, graph))


def zeta_f_all(omega_n, P, graph: CommGraph, leaders: LeaderSignal, c_f, m_p) -> np.ndarray:
    """Stacked frequency neighbourhood terms (vectorised form of neighborhood_term_f)."""
    a = graph.adjacency
    x = np.asarray(omega_n, dtype=float)
    ref = leaders.omega_ref + m_p * np.asarray(P, dtype=float)
    g = graph.pinning.sum(axis=0)
    return c_f * (a @ x - a.sum(axis=1) * x + g * (ref - x))


def zeta_v_all(V_n, Q, graph: CommGraph, leaders: LeaderSignal, c_v, n_q) -> np.ndarray:
    a = graph.adjacency
    x = np.asarray(V_n, dtype=float)
    nqq = n_q * np.asarray(Q, dtype=float)
    pin = graph.pinning
    return c_v * (a @ x - a.sum(axis=1) * x + pin[0] * (leaders.v_upper + nqq - x)
                  + pin[1] * (leaders.v_lower + nqq - x))


def conventional_input(zeta):
    return zeta


def eta(t: float, alpha) -> np.ndarray:
    """Exponentially decaying regulariser of the compensator."""
    return np.exp(-np.asarray(alpha, dtype=float) * t)


def compensation(zeta, chi, eta_value):
    zeta = np.asarray(zeta, dtype=float)
    return zeta * chi / (np.abs(zeta) + eta_value)


def resilient_input(zeta, chi, t: float, alpha):
    """``zeta + zeta*chi/(|zeta| + exp(-alpha t))``; the compensating part is bounded by chi."""
    if np.any(np.asarray(chi) <= 0):
        raise ValueError("adaptive parameter chi must be positive")
    return zeta + compensation(zeta, chi, eta(t, alpha))


def adaptive_chain_derivative(zeta, chain, beta) -> np.ndarray:
    """Integrator chain whose last state is driven by ``beta*|zeta|``.

    ``chain`` is (..., gamma); chi = chain[..., 0] is the gamma-fold integral.
    """
    chain = np.asarray(chain, dtype=float)
    out = np.empty_like(chain)
    out[..., :-1] = chain[..., 1:]
    out[..., -1] = np.asarray(beta, dtype=float) * np.abs(zeta)
    return out


def setpoint_derivative(u_f, u_v, attack_f=0.0, attack_v=0.0):
    """Setpoint rates; attacks enter additively on the input channels."""
    return np.asarray(u_f, dtype=float) + attack_f, np.asarray(u_v, dtype=float) + attack_v
