"""Fixed-step simulation of the coupled plant, controller and attack signals.

Events are snapped to the nearest step boundary and applied between steps.
Divergence is an outcome recorded on the trace, not an exception, except in
the single-step API where it raises ``Diverged``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _backend
from .attacks import encode, evaluate
from .controller import compensation, eta
from .plant import voltage_map
from .scenario import ConfigError, ScenarioConfig, ScenarioEvent
from .topology import (CommGraph, GraphMatrices, SingularPhiSum, assumption1_holds, build_matrices,
                       follower_reachability)

InvalidScenario = ConfigError

METHOD_CODES = {"sdirk4": 0, "rk4": 1}
STATUS = {0: "completed", 1: "diverged", 2: "solver_failure"}

SERIES = ("delta", "omega_n", "V_n", "omega", "freq_hz", "v_od", "P", "Q", "zeta_f", "zeta_v",
          "chi_f", "chi_v", "Lambda_f", "Lambda_v", "Delta_f", "Delta_v")


class Diverged(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"divergence detected at t = {t:.6g} s")
        self.t = t


class SolverFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------- state layout


def state_size(n: int, gamma: int) -> int:
    return 3 * n + 2 * n * gamma


def pack(delta, omega_n, V_n, chi_f_chain, chi_v_chain) -> np.ndarray:
    return np.concatenate([np.ravel(delta), np.ravel(omega_n), np.ravel(V_n),
                           np.ravel(chi_f_chain), np.ravel(chi_v_chain)]).astype(float)


def unpack(y, n: int, gamma: int) -> dict:
    """Views into a state vector (or a stack of them along the first axis)."""
    y = np.asarray(y)
    lead = y.shape[:-1]
    c0 = 3 * n
    c1 = c0 + n * gamma
    return {
        "delta": y[..., :n],
        "omega_n": y[..., n:2 * n],
        "V_n": y[..., 2 * n:3 * n],
        "chi_f_chain": y[..., c0:c1].reshape(*lead, n, gamma),
        "chi_v_chain": y[..., c1:].reshape(*lead, n, gamma),
    }


# --------------------------------------------------------------------------- event plan


@dataclass(frozen=True)
class Epoch:
    """Configuration in force between two consecutive event steps."""

    step: int
    graph: CommGraph
    matrices: GraphMatrices | None  # None when the summed containment matrix is singular
    load_p: np.ndarray
    load_q: np.ndarray
    assumption1: bool


def _all_events(cfg: ScenarioConfig) -> list[ScenarioEvent]:
    sched = [ScenarioEvent(t, "load_set", bus=b, load_p=p, load_q=q) for t, b, p, q in cfg.network.schedule]
    return sorted([*cfg.events, *sched], key=lambda e: e.time)


def _matrices(graph: CommGraph):
    try:
        return build_matrices(graph)
    except SingularPhiSum:
        return None


def plan_epochs(cfg: ScenarioConfig) -> tuple[list[Epoch], list[str]]:
    """Replay the event list on the topology and loads; raises InvalidScenario on bad events."""
    notes: list[str] = []
    graph = cfg.graph
    lp = cfg.network.load_p.copy()
    lq = cfg.network.load_q.copy()
    active_loads: dict[str, tuple[int, float, float]] = {}
    removed_links: dict[tuple[int, int], tuple[float, float]] = {}
    groups: dict[int, list[ScenarioEvent]] = {}
    for e in _all_events(cfg):
        step = int(round(e.time / cfg.dt))
        if e.time < 0:
            raise InvalidScenario(f"event at t={e.time} precedes t=0", "events")
        if step >= cfg.n_steps:
            notes.append(f"event {e.kind} at t={e.time:g} s lies at or beyond t_end and is ignored")
            continue
        if abs(step * cfg.dt - e.time) > 1e-12 * max(1.0, e.time):
            notes.append(f"event {e.kind} at t={e.time:g} s snapped to t={step * cfg.dt:.9g} s")
        groups.setdefault(step, []).append(e)

    epochs = [Epoch(0, graph, _matrices(graph), lp.copy(), lq.copy(), assumption1_holds(graph))]
    for step in sorted(groups):
        for e in groups[step]:
            if e.kind == "load_step":
                key = e.id if e.id is not None else f"_anon{len(active_loads)}"
                if key in active_loads:
                    raise InvalidScenario(f"load id {key!r} is already active", "events")
                active_loads[key] = (e.bus, e.dP, e.dQ)
                lp[e.bus] += e.dP
                lq[e.bus] += e.dQ
            elif e.kind == "load_remove":
                if e.id not in active_loads:
                    raise InvalidScenario(f"load_remove at t={e.time:g} references unknown load {e.id!r}", "events")
                bus, dp, dq = active_loads.pop(e.id)
                lp[bus] -= dp
                lq[bus] -= dq
            elif e.kind == "load_set":
                lp[e.bus] = lp[e.bus] if e.load_p is None else float(e.load_p)
                lq[e.bus] = lq[e.bus] if e.load_q is None else float(e.load_q)
            elif e.kind == "link_down":
                a = graph.adjacency
                if a[e.i, e.j] == 0 and (e.directed or a[e.j, e.i] == 0):
                    raise InvalidScenario(f"link_down at t={e.time:g} references a missing link "
                                          f"{e.i + 1}-{e.j + 1}", "events")
                removed_links[(e.i, e.j)] = (a[e.i, e.j], a[e.j, e.i])
                graph = graph.without_link(e.i, e.j, e.directed)
            elif e.kind == "link_up":
                if (e.i, e.j) in removed_links:
                    w_ij, w_ji = removed_links.pop((e.i, e.j))
                elif (e.j, e.i) in removed_links:
                    w_ji, w_ij = removed_links.pop((e.j, e.i))
                else:
                    w_ij = w_ji = 1.0
                if e.weight is not None:
                    w_ij = w_ji = float(e.weight)
                a = graph.adjacency.copy()
                a[e.i, e.j] = w_ij
                if not e.directed:
                    a[e.j, e.i] = w_ji
                graph = CommGraph(a, graph.pinning)
        ok = assumption1_holds(graph)
        if not ok:
            lost = [int(i) + 1 for i in np.flatnonzero(~follower_reachability(graph))]
            notes.append(f"after events at t={step * cfg.dt:.9g} s followers {lost} are unreachable from every leader")
        epochs.append(Epoch(step, graph, _matrices(graph), lp.copy(), lq.copy(), ok))
    return epochs, notes


# --------------------------------------------------------------------------- initial states


def flat_state(cfg: ScenarioConfig) -> np.ndarray:
    n, c = cfg.n, cfg.controller
    chain_f = np.zeros((n, c.gamma))
    chain_v = np.zeros((n, c.gamma))
    chain_f[:, 0] = c.chi_f0
    chain_v[:, 0] = c.chi_v0
    vmid = 0.5 * (cfg.leaders.v_upper + cfg.leaders.v_lower)
    return pack(np.zeros(n), np.full(n, cfg.leaders.omega_ref), np.full(n, vmid), chain_f, chain_v)


def equilibrium_state(cfg: ScenarioConfig, epoch: Epoch | None = None) -> np.ndarray:
    """Attack-free steady state: nominal frequency, shared power, zero neighbourhood terms."""
    epoch = epoch or plan_epochs(cfg)[0][0]
    n = cfg.n
    mp, nq = cfg.inverters.m_p, cfg.inverters.n_q
    ba = cfg.network.active_laplacian()
    br = cfg.network.reactive_laplacian()
    lp, lq = epoch.load_p, epoch.load_q
    wref = cfg.leaders.omega_ref
    c = wref + lp.sum() / np.sum(1.0 / mp)
    P = (c - wref) / mp
    delta = np.linalg.lstsq(ba, P - lp, rcond=None)[0]
    delta -= delta.mean()

    a = epoch.graph.adjacency
    pin = epoch.graph.pinning
    mv = voltage_map(cfg.inverters, cfg.network)
    lap = np.diag(a.sum(axis=1)) - a
    g = pin.sum(axis=0)
    # zeta_v = 0  <=>  (L + G Mv) V = pin_u v_u + pin_l v_l + G Mv (n_q * l_q)
    lhs = lap + g[:, None] * mv
    rhs = pin[0] * cfg.leaders.v_upper + pin[1] * cfg.leaders.v_lower + g * (mv @ (nq * lq))
    V = np.linalg.solve(lhs, rhs)
    st = flat_state(cfg)
    parts = unpack(st, n, cfg.controller.gamma)
    return pack(delta, np.full(n, c), V, parts["chi_f_chain"], parts["chi_v_chain"])


def initial_state(cfg: ScenarioConfig, epoch: Epoch | None = None) -> np.ndarray:
    init = cfg.initial
    if isinstance(init, str):
        if init == "flat":
            return flat_state(cfg)
        return equilibrium_state(cfg, epoch)
    base = unpack(flat_state(cfg), cfg.n, cfg.controller.gamma)
    return pack(init["delta"], init["omega_n"], init["V_n"], base["chi_f_chain"], base["chi_v_chain"])


# --------------------------------------------------------------------------- trace


@dataclass
class SimTrace:
    config: ScenarioConfig
    time: np.ndarray
    steps: np.ndarray
    state: np.ndarray
    epoch_index: np.ndarray
    epochs: list[Epoch]
    series: dict[str, np.ndarray]
    status: str
    diverged_at: float | None = None
    notes: list[str] = field(default_factory=list)
    backend: str = ""

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def n(self) -> int:
        return self.config.n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def __len__(self) -> int:
        return self.time.size

    def window(self, t_lo: float, t_hi: float = math.inf) -> np.ndarray:
        """Boolean mask of samples with t_lo <= t <= t_hi (half-step slack)."""
        eps = 0.5 * self.config.dt
        return (self.time >= t_lo - eps) & (self.time <= t_hi + eps)

    def at(self, k: int) -> dict:
        """One recorded sample: every series row plus the epoch in force."""
        row = {name: arr[k] for name, arr in self.series.items()}
        row["time"] = float(self.time[k])
        row["epoch"] = self.epochs[int(self.epoch_index[k])]
        return row


def derive_series(cfg: ScenarioConfig, time, state, epoch_index, epochs) -> dict[str, np.ndarray]:
    n, c = cfg.n, cfg.controller
    parts = unpack(state, n, c.gamma)
    mp, nq = cfg.inverters.m_p, cfg.inverters.n_q
    ba = cfg.network.active_laplacian()
    br = cfg.network.reactive_laplacian()
    mv = voltage_map(cfg.inverters, cfg.network)
    m = time.size
    P = np.empty((m, n))
    Q = np.empty((m, n))
    v = np.empty((m, n))
    zf = np.empty((m, n))
    zv = np.empty((m, n))
    x, V = parts["omega_n"], parts["V_n"]
    wref = cfg.leaders.omega_ref
    for k, ep in enumerate(epochs):
        sel = epoch_index == k
        if not sel.any():
            continue
        P[sel] = parts["delta"][sel] @ ba.T + ep.load_p
        v[sel] = (V[sel] - nq * ep.load_q) @ mv.T
        Q[sel] = v[sel] @ br.T + ep.load_q
        a = ep.graph.adjacency
        deg = a.sum(axis=1)
        pin = ep.graph.pinning
        g = pin.sum(axis=0)
        xs, Vs = x[sel], V[sel]
        zf[sel] = c.c_f * (xs @ a.T - deg * xs + g * (wref + mp * P[sel] - xs))
        nqq = nq * Q[sel]
        zv[sel] = c.c_v * (Vs @ a.T - deg * Vs + pin[0] * (cfg.leaders.v_upper + nqq - Vs)
                           + pin[1] * (cfg.leaders.v_lower + nqq - Vs))
    omega = x - mp * P
    chi_f = parts["chi_f_chain"][..., 0]
    chi_v = parts["chi_v_chain"][..., 0]
    if c.resilient:
        lam_f = compensation(zf, chi_f, eta(time[:, None], c.alpha_f))
        lam_v = compensation(zv, chi_v, eta(time[:, None], c.alpha_v))
    else:
        lam_f = np.zeros_like(zf)
        lam_v = np.zeros_like(zv)
    d_f = np.zeros((m, n))
    d_v = np.zeros((m, n))
    for sig in cfg.attacks:
        (d_f if sig.channel == "frequency" else d_v)[:, sig.inverter] += evaluate(sig, time)
    return {
        "delta": parts["delta"].copy(), "omega_n": x.copy(), "V_n": V.copy(), "omega": omega,
        "freq_hz": omega / (2 * math.pi), "v_od": v, "P": P, "Q": Q, "zeta_f": zf, "zeta_v": zv,
        "chi_f": chi_f.copy(), "chi_v": chi_v.copy(), "Lambda_f": lam_f, "Lambda_v": lam_v,
        "Delta_f": d_f, "Delta_v": d_v,
    }


# --------------------------------------------------------------------------- simulator


class Simulator:
    """Compiled model for one scenario; owns the kernel and the event plan."""

    def __init__(self, cfg: ScenarioConfig, backend: str | None = None):
        if not assumption1_holds(cfg.graph):
            lost = [int(i) + 1 for i in np.flatnonzero(~follower_reachability(cfg.graph))]
            raise InvalidScenario(f"initial graph leaves followers {lost} unreachable from every leader", "graph")
        self.cfg = cfg
        self.epochs, self.notes = plan_epochs(cfg)
        self.kernel_cls = _backend.kernel_class(backend)
        self.backend = "python" if self.kernel_cls.__module__.endswith("_pykernel") else "compiled"
        self.kernel = self._make_kernel(self.epochs[0])

    def _make_kernel(self, ep: Epoch):
        cfg, c = self.cfg, self.cfg.controller
        wlim, vmin, vmax = cfg.divergence.resolve(cfg.leaders)
        return self.kernel_cls(
            cfg.n, c.gamma, c.resilient, ep.graph.adjacency, ep.graph.pinning[0], ep.graph.pinning[1],
            cfg.network.active_laplacian(), cfg.network.reactive_laplacian(), cfg.inverters.m_p,
            cfg.inverters.n_q, ep.load_p, ep.load_q, c.c_f, c.c_v, c.beta_f, c.beta_v, c.alpha_f,
            c.alpha_v, cfg.leaders.omega_ref, cfg.leaders.v_upper, cfg.leaders.v_lower,
            encode(cfg.attacks, cfg.n), wlim, vmin, vmax, METHOD_CODES[cfg.method])

    def _apply_epoch(self, ep: Epoch):
        self.kernel.set_graph(ep.graph.adjacency, ep.graph.pinning[0], ep.graph.pinning[1])
        self.kernel.set_loads(ep.load_p, ep.load_q)

    @property
    def state_size(self) -> int:
        return state_size(self.cfg.n, self.cfg.controller.gamma)

    def initial_state(self) -> np.ndarray:
        return initial_state(self.cfg, self.epochs[0])

    def rhs(self, t: float, y) -> np.ndarray:
        return np.asarray(self.kernel.rhs(t, np.asarray(y, dtype=float)))

    def jacobian(self, t: float, y) -> np.ndarray:
        return np.asarray(self.kernel.jacobian(t, np.asarray(y, dtype=float)))

    def step(self, y, t: float, dt: float | None = None) -> np.ndarray:
        """One step from (t, y) with the configuration currently loaded in the kernel."""
        dt = self.cfg.dt if dt is None else dt
        y = np.array(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("state must be finite")
        rec = np.zeros((1, y.size))
        rec_step = np.zeros(1, dtype=np.int64)
        status, _, _ = self.kernel.run(y, float(t), 0, 1, float(dt), 1, rec, rec_step)
        if status == 1:
            raise Diverged(t + dt)
        if status == 2:
            raise SolverFailure(f"implicit stage equations did not converge at t = {t:.6g} s")
        return y

    def run(self) -> SimTrace:
        cfg = self.cfg
        dt, total, every = cfg.dt, cfg.n_steps, cfg.record_every
        y = self.initial_state()
        self._apply_epoch(self.epochs[0])
        cap = total // every + len(self.epochs) + 2
        rec = np.empty((cap, y.size))
        rec_step = np.empty(cap, dtype=np.int64)
        rec_epoch = np.empty(cap, dtype=np.int64)
        rec[0] = y
        rec_step[0] = 0
        rec_epoch[0] = 0
        nrec = 1
        bounds = [ep.step for ep in self.epochs[1:]] + [total]
        status = 0
        for k, end in enumerate(bounds):
            start = self.epochs[k].step
            if k > 0:
                self._apply_epoch(self.epochs[k])
            if end <= start:
                continue
            status, _, got = self.kernel.run(y, start * dt, start, end - start, dt, every,
                                             rec[nrec:], rec_step[nrec:])
            rec_epoch[nrec:nrec + got] = k
            nrec += got
            if status != 0:
                break
        time = rec_step[:nrec] * dt
        state = rec[:nrec].copy()
        epoch_index = rec_epoch[:nrec].copy()
        series = derive_series(cfg, time, state, epoch_index, self.epochs)
        notes = list(self.notes)
        splits = int(getattr(self.kernel, "n_split", 0))
        if splits:
            notes.append(f"{splits} step(s) split to resolve the implicit stage equations")
        if status == 2:
            notes.append("implicit stage equations failed to converge; trace truncated")
        return SimTrace(config=cfg, time=time, steps=rec_step[:nrec].copy(), state=state,
                        epoch_index=epoch_index, epochs=self.epochs, series=series,
                        status=STATUS[status], diverged_at=float(time[-1]) if status == 1 else None,
                        notes=notes, backend=self.backend)


def run(cfg: ScenarioConfig, backend: str | None = None) -> SimTrace:
    return Simulator(cfg, backend).run()


def step(state, t: float, cfg: ScenarioConfig, backend: str | None = None) -> np.ndarray:
    """Advance a raw state vector by one step of ``cfg.dt`` from time t.

    Uses the topology and loads in force at t.
    """
    sim = Simulator(cfg, backend)
    k = int(round(t / cfg.dt))
    ep = [e for e in sim.epochs if e.step <= k][-1]
    sim._apply_epoch(ep)
    return sim.step(state, t)


def with_solver(cfg: ScenarioConfig, *, dt=None, t_end=None, record_every=None, method=None) -> ScenarioConfig:
    kw = {k: v for k, v in (("dt", dt), ("t_end", t_end), ("record_every", record_every),
                            ("method", method)) if v is not None}
    return replace(cfg, **kw)

