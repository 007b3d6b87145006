"""Reduced physical layer: droop relations and a lossless linearized network.

Angles live in a frame rotating at the reference frequency, so
``d(delta)/dt = omega - omega_ref`` and delta stays bounded in steady state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import laplacian


@dataclass(frozen=True)
class InverterParams:
    m_p: np.ndarray  # P-omega droop, rad/s per W
    n_q: np.ndarray  # Q-v droop, V per var
    rating: tuple[str, ...] = ()

    def __post_init__(self):
        m_p = np.atleast_1d(np.asarray(self.m_p, dtype=float))
        n_q = np.atleast_1d(np.asarray(self.n_q, dtype=float))
        if m_p.shape != n_q.shape or m_p.ndim != 1:
            raise ValueError("m_p and n_q must be vectors of equal length")
        if np.any(m_p <= 0) or np.any(n_q <= 0):
            raise ValueError("droop gains must be positive")
        object.__setattr__(self, "m_p", m_p)
        object.__setattr__(self, "n_q", n_q)

    @property
    def n(self) -> int:
        return self.m_p.size


@dataclass(frozen=True)
class ElectricalNetwork:
    """Symmetric couplings (W/rad and var/V per electrically adjacent pair) plus bus loads.

    ``load_p``/``load_q`` are the base loads; time variation is applied by the
    engine as events (load steps and schedule breakpoints).
    """

    b_active: np.ndarray
    b_reactive: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray
    schedule: tuple = field(default=())  # ((time, bus, load_p, load_q), ...) absolute values

    def __post_init__(self):
        ba = np.asarray(self.b_active, dtype=float)
        br = np.asarray(self.b_reactive, dtype=float)
        n = ba.shape[0]
        for name, b in (("b_active", ba), ("b_reactive", br)):
            if b.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if not np.allclose(b, b.T, rtol=0, atol=0):
                raise ValueError(f"{name} must be symmetric")
            if np.any(np.diag(b) != 0) or np.any(b < 0):
                raise ValueError(f"{name} must be nonnegative with zero diagonal")
        if not _connected(ba):
            raise ValueError("active-power coupling graph must be connected")
        lp = np.asarray(self.load_p, dtype=float).reshape(n)
        lq = np.asarray(self.load_q, dtype=float).reshape(n)
        object.__setattr__(self, "b_active", ba)
        object.__setattr__(self, "b_reactive", br)
        object.__setattr__(self, "load_p", lp)
        object.__setattr__(self, "load_q", lq)

    @property
    def n(self) -> int:
        return self.b_active.shape[0]

    def loads_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Base loads with schedule breakpoints at or before t applied."""
        lp, lq = self.load_p.copy(), self.load_q.copy()
        for time, bus, p, q in sorted(self.schedule):
            if time <= t:
                lp[bus], lq[bus] = p, q
        return lp, lq

    def active_laplacian(self) -> np.ndarray:
        return laplacian(self.b_active)

    def reactive_laplacian(self) -> np.ndarray:
        return laplacian(self.b_reactive)


def _connected(b: np.ndarray) -> bool:
    n = b.shape[0]
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(b[i] > 0):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return len(seen) == n


def line_network(n: int, b_active: float, b_reactive: float, load_p, load_q) -> ElectricalNetwork:
    """Inverters 1-2-...-n connected in a line with uniform couplings."""
    adj = np.zeros((n, n))
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1.0
    return ElectricalNetwork(b_active * adj, b_reactive * adj, load_p, load_q)


@dataclass(frozen=True)
class PlantState:
    delta: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    omega: np.ndarray
    v_od: np.ndarray


def droop_outputs(omega_n, V_n, P, Q, params: InverterParams):
    """Terminal frequency and d-axis voltage from the droop setpoints."""
    omega = np.asarray(omega_n, dtype=float) - params.m_p * np.asarray(P, dtype=float)
    v_od = np.asarray(V_n, dtype=float) - params.n_q * np.asarray(Q, dtype=float)
    return omega, v_od


def network_flows(delta, v_od, net: ElectricalNetwork, t: float | None = None, load_p=None, load_q=None):
    """Injected powers of the lossless linearized network, including the local loads.

    Loads come from ``load_p``/``load_q`` when given, else from the schedule at t
    (base loads when t is None).
    """
    lp, lq = net.loads_at(t) if t is not None else (net.load_p, net.load_q)
    lp = lp if load_p is None else load_p
    lq = lq if load_q is None else load_q
    P = net.active_laplacian() @ np.asarray(delta, dtype=float) + lp
    Q = net.reactive_laplacian() @ np.asarray(v_od, dtype=float) + lq
    return P, Q


def voltage_map(params: InverterParams, net: ElectricalNetwork) -> np.ndarray:
    """``(I + diag(n_q) B_r)^-1``: resolves the algebraic loop between v_od and Q."""
    return np.linalg.inv(np.eye(net.n) + params.n_q[:, None] * net.reactive_laplacian())


def operating_point(delta, omega_n, V_n, params: InverterParams, net: ElectricalNetwork,
                    load_p=None, load_q=None) -> PlantState:
    """Solve droop + network jointly for the algebraic plant variables."""
    lp = net.load_p if load_p is None else np.asarray(load_p, dtype=float)
    lq = net.load_q if load_q is None else np.asarray(load_q, dtype=float)
    delta = np.asarray(delta, dtype=float)
    P = net.active_laplacian() @ delta + lp
    v_od = np.linalg.solve(np.eye(net.n) + params.n_q[:, None] * net.reactive_laplacian(),
                           np.asarray(V_n, dtype=float) - params.n_q * lq)
    Q = net.reactive_laplacian() @ v_od + lq
    omega, _ = droop_outputs(omega_n, V_n, P, Q, params)
    return PlantState(delta, P, Q, omega, v_od)


def plant_derivative(omega, omega_ref: float) -> np.ndarray:
    return np.asarray(omega, dtype=float) - omega_ref
