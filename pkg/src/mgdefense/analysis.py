"""Post-processing of simulation traces: containment errors, Lyapunov monitor,
ultimate-bound estimates, power sharing and divergence classification.

Angular quantities are in rad/s internally; helpers suffixed ``_hz`` report Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attacks import certify_assumption2
from .controller import LeaderSignal
from .engine import SimTrace
from .plant import InverterParams
from .topology import GraphMatrices, SingularPhiSum

LYAPUNOV_FLOOR = 1e-9
LYAPUNOV_AFTER = 10.0
TWO_PI = 2 * math.pi


class DivergedTrace(ValueError):
    """The trace terminated before its horizon; no ultimate bound exists."""


# --------------------------------------------------------------------------- containment error


@dataclass(frozen=True)
class ContainmentError:
    e_f: np.ndarray  # rad/s, (..., N)
    e_v: np.ndarray  # V

    @property
    def norm_f(self) -> np.ndarray:
        return np.max(np.abs(self.e_f), axis=-1)

    @property
    def norm_v(self) -> np.ndarray:
        return np.max(np.abs(self.e_v), axis=-1)


def leader_targets(P, Q, leaders: LeaderSignal, inverters: InverterParams):
    """Per-inverter leader values as seen through the droop: (w, v_upper, v_lower)."""
    w = leaders.omega_ref + inverters.m_p * np.asarray(P, dtype=float)
    nqq = inverters.n_q * np.asarray(Q, dtype=float)
    return w, leaders.v_upper + nqq, leaders.v_lower + nqq


def containment_error(omega_n, V_n, P, Q, matrices: GraphMatrices, pinning, leaders: LeaderSignal,
                      inverters: InverterParams) -> ContainmentError:
    """``x - (sum Phi)^-1 sum_k G_k w_k`` for frequency and voltage.

    Inputs may be stacked along a leading time axis.  With this form the
    neighbourhood term satisfies ``zeta = -diag(c) (sum Phi) e`` exactly.
    """
    if matrices is None:
        raise SingularPhiSum("containment error undefined: summed containment matrix is singular")
    pin = np.asarray(pinning, dtype=float)
    g = pin.sum(axis=0)
    w, vu, vl = leader_targets(P, Q, leaders, inverters)
    inv = matrices.phi_sum_inverse
    target_f = (g * w) @ inv.T
    target_v = (pin[0] * vu + pin[1] * vl) @ inv.T
    return ContainmentError(np.asarray(omega_n, dtype=float) - target_f,
                            np.asarray(V_n, dtype=float) - target_v)


def containment_error_at(trace: SimTrace, k: int) -> ContainmentError:
    ep = trace.epochs[int(trace.epoch_index[k])]
    s = trace.series
    cfg = trace.config
    return containment_error(s["omega_n"][k], s["V_n"][k], s["P"][k], s["Q"][k], ep.matrices,
                             ep.graph.pinning, cfg.leaders, cfg.inverters)


def containment_errors(trace: SimTrace) -> ContainmentError:
    """Errors at every recorded sample; NaN where the epoch's matrix is singular."""
    m, n = trace.time.size, trace.n
    e_f = np.full((m, n), np.nan)
    e_v = np.full((m, n), np.nan)
    s, cfg = trace.series, trace.config
    for k, ep in enumerate(trace.epochs):
        sel = trace.epoch_index == k
        if not sel.any() or ep.matrices is None:
            continue
        ce = containment_error(s["omega_n"][sel], s["V_n"][sel], s["P"][sel], s["Q"][sel], ep.matrices,
                               ep.graph.pinning, cfg.leaders, cfg.inverters)
        e_f[sel] = ce.e_f
        e_v[sel] = ce.e_v
    return ContainmentError(e_f, e_v)


def global_form_gap(trace: SimTrace) -> np.ndarray:
    """Per-sample ``max |zeta_f + diag(c_f) (sum Phi) e_f|``."""
    ce = containment_errors(trace)
    out = np.full(trace.time.size, np.nan)
    c = trace.config.controller.c_f
    for k, ep in enumerate(trace.epochs):
        sel = trace.epoch_index == k
        if sel.any() and ep.matrices is not None:
            pred = -c * (ce.e_f[sel] @ ep.matrices.phi_sum.T)
            out[sel] = np.max(np.abs(trace["zeta_f"][sel] - pred), axis=-1)
    return out


def zeta_f_rate_prediction(trace: SimTrace, include_plant_drift: bool = False) -> np.ndarray:
    """Model-based d(zeta_f)/dt at each sample.

    The closed-loop part is ``-diag(c_f) (sum Phi)(zeta_f + Delta_f + Lambda_f)``.
    With ``include_plant_drift`` the term ``diag(c_f) G m_P dP/dt`` from the
    droop-shifted leader values is added, giving the exact derivative.
    """
    cfg = trace.config
    c = cfg.controller.c_f
    u = trace["zeta_f"] + trace["Delta_f"] + trace["Lambda_f"]
    out = np.full(u.shape, np.nan)
    ba = cfg.network.active_laplacian()
    for k, ep in enumerate(trace.epochs):
        sel = trace.epoch_index == k
        if not sel.any():
            continue
        phi = ep.matrices.phi_sum if ep.matrices is not None else None
        if phi is None:
            continue
        out[sel] = -c * (u[sel] @ phi.T)
        if include_plant_drift:
            g = ep.graph.pinning.sum(axis=0)
            p_dot = (trace["omega"][sel] - cfg.leaders.omega_ref) @ ba.T
            out[sel] += c * g * cfg.inverters.m_p * p_dot
    return out


def zeta_f_rate_mismatch(trace: SimTrace, t_lo: float, t_hi: float, include_plant_drift: bool = False) -> float:
    """``max |fd - pred| / max |pred|`` over the window, fd by central differences on the recorded grid."""
    fd = np.gradient(trace["zeta_f"], trace.time, axis=0)
    pred = zeta_f_rate_prediction(trace, include_plant_drift)
    sel = trace.window(t_lo, t_hi)
    # one-sided differences at the trace ends are excluded
    sel[[0, -1]] = False
    return float(np.max(np.abs(fd[sel] - pred[sel])) / np.max(np.abs(pred[sel])))


# --------------------------------------------------------------------------- Lyapunov monitor


@dataclass(frozen=True)
class LyapunovSample:
    E: float
    dE_dt: float
    zeta_norm: float


@dataclass(frozen=True)
class LyapunovSeries:
    time: np.ndarray
    E: np.ndarray
    dE_dt: np.ndarray
    zeta_norm: np.ndarray
    threshold: float
    after: float

    @property
    def decrease_region(self) -> np.ndarray:
        return (self.time > self.after) & (self.zeta_norm > self.threshold)

    @property
    def violations(self) -> np.ndarray:
        return self.decrease_region & (self.dE_dt > 0)

    @property
    def violation_fraction(self) -> float:
        """Share of post-transient samples that lie in the decrease region yet have dE/dt > 0."""
        considered = self.time > self.after
        if not considered.any():
            return 0.0
        return float(self.violations.sum() / considered.sum())

    def samples(self) -> list[LyapunovSample]:
        return [LyapunovSample(float(e), float(d), float(z)) for e, d, z in zip(self.E, self.dE_dt, self.zeta_norm)]


def lyapunov_value(zeta, phi_sum_inverse) -> np.ndarray:
    """``E = 1/2 zeta^T (sum Phi)^-1 zeta`` (zeta may be stacked over time)."""
    z = np.asarray(zeta, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", z, np.asarray(phi_sum_inverse), z)


def attack_threshold(trace: SimTrace, channel: str = "frequency") -> float:
    """``max_i kappa_i / beta_i`` over the attacked inverters, floored at LYAPUNOV_FLOOR."""
    cfg = trace.config
    gamma = cfg.controller.gamma
    beta = cfg.controller.beta_f if channel == "frequency" else cfg.controller.beta_v
    kappa = np.zeros(cfg.n)
    for sig in cfg.attacks:
        if sig.channel != channel:
            continue
        b = certify_assumption2(sig, gamma, cfg.t_end)
        kappa[sig.inverter] += b.kappa if b.bounded else math.inf
    return max(float(np.max(kappa / beta)), LYAPUNOV_FLOOR)


def lyapunov_monitor(trace: SimTrace, matrices: GraphMatrices | None = None, channel: str = "frequency",
                     after: float = LYAPUNOV_AFTER) -> LyapunovSeries:
    """E(t), its central-difference rate and the decrease-region bookkeeping.

    Uses ``matrices`` for every sample when given, else the matrices of the
    epoch in force at each sample.
    """
    zeta = trace["zeta_f" if channel == "frequency" else "zeta_v"]
    E = np.full(trace.time.size, np.nan)
    if matrices is not None:
        E = lyapunov_value(zeta, matrices.phi_sum_inverse)
    else:
        for k, ep in enumerate(trace.epochs):
            sel = trace.epoch_index == k
            if sel.any() and ep.matrices is not None:
                E[sel] = lyapunov_value(zeta[sel], ep.matrices.phi_sum_inverse)
    dE = np.gradient(E, trace.time) if E.size > 1 else np.zeros_like(E)
    return LyapunovSeries(trace.time, E, dE, np.max(np.abs(zeta), axis=-1),
                          attack_threshold(trace, channel), after)


# --------------------------------------------------------------------------- ultimate bound


@dataclass(frozen=True)
class UltimateBoundEstimate:
    bound: float
    window: tuple[float, float]
    converged: bool


def _selected(trace: SimTrace, selector) -> np.ndarray:
    if callable(selector):
        return np.asarray(selector(trace), dtype=float)
    if selector in ("e_f", "e_f_hz", "e_v"):
        ce = containment_errors(trace)
        if selector == "e_v":
            return ce.norm_v
        return ce.norm_f / (TWO_PI if selector == "e_f_hz" else 1.0)
    if selector == "freq_dev_hz":
        return frequency_deviation_hz(trace)
    if selector in ("zeta_f", "zeta_v"):
        return np.max(np.abs(trace[selector]), axis=-1)
    raise ValueError(f"unknown signal selector {selector!r}")


def ultimate_bound(trace: SimTrace, selector="e_f", window_fraction: float = 0.2) -> UltimateBoundEstimate:
    """Sup of the selected error norm over the last ``window_fraction`` of the horizon."""
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    if not trace.completed:
        raise DivergedTrace(f"trace status is {trace.status!r}; no ultimate bound")
    t_hi = trace.config.t_end
    t_lo = t_hi * (1 - window_fraction)
    sig = _selected(trace, selector)
    b = float(np.max(sig[trace.window(t_lo, t_hi)]))
    return UltimateBoundEstimate(b, (t_lo, t_hi), bool(np.isfinite(b)))


# --------------------------------------------------------------------------- power sharing, frequency


def power_sharing_spread(P, m_p) -> np.ndarray | float:
    """``max_ij |m_i P_i - m_j P_j| / mean(m P)``; rows of a stacked P give one value each."""
    mpp = np.asarray(m_p, dtype=float) * np.asarray(P, dtype=float)
    spread = np.ptp(mpp, axis=-1)
    mean = np.mean(mpp, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(spread == 0, 0.0, spread / np.abs(mean))
    return float(out) if np.ndim(out) == 0 else out


def frequency_deviation_hz(trace: SimTrace) -> np.ndarray:
    f_ref = trace.config.leaders.omega_ref / TWO_PI
    return np.max(np.abs(trace["freq_hz"] - f_ref), axis=-1)


def growth_is_monotone(trace: SimTrace, seconds: float = 1.0) -> bool:
    """Whether the worst frequency deviation is nondecreasing over the final ``seconds`` of the trace."""
    dev = frequency_deviation_hz(trace)
    sel = trace.time >= trace.time[-1] - seconds - 1e-12
    return bool(np.all(np.diff(dev[sel]) >= 0))


def classify(trace: SimTrace) -> str:
    return "diverged" if trace.diverged else ("bounded" if trace.completed else trace.status)


# --------------------------------------------------------------------------- tables


METRIC_COLUMNS = ("e_f_inf", "e_f_inf_hz", "e_v_inf", "freq_dev_hz", "v_od_min", "v_od_max",
                  "power_spread", "E_f", "E_v", "zeta_f_inf", "zeta_v_inf", "chi_f_max", "chi_v_max")


def metrics_table(trace: SimTrace) -> dict[str, np.ndarray]:
    ce = containment_errors(trace)
    lf = lyapunov_monitor(trace, channel="frequency")
    lv = lyapunov_monitor(trace, channel="voltage")
    return {
        "e_f_inf": ce.norm_f,
        "e_f_inf_hz": ce.norm_f / TWO_PI,
        "e_v_inf": ce.norm_v,
        "freq_dev_hz": frequency_deviation_hz(trace),
        "v_od_min": trace["v_od"].min(axis=-1),
        "v_od_max": trace["v_od"].max(axis=-1),
        "power_spread": power_sharing_spread(trace["P"], trace.config.inverters.m_p),
        "E_f": lf.E,
        "E_v": lv.E,
        "zeta_f_inf": lf.zeta_norm,
        "zeta_v_inf": lv.zeta_norm,
        "chi_f_max": trace["chi_f"].max(axis=-1),
        "chi_v_max": trace["chi_v"].max(axis=-1),
    }


def _f(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def summary(trace: SimTrace, window_fraction: float = 0.2) -> dict:
    cfg = trace.config
    out: dict = {
        "name": cfg.name,
        "mode": cfg.controller.mode,
        "status": trace.status,
        "classification": classify(trace),
        "converged": trace.completed,
        "diverged_at": trace.diverged_at,
        "t_end": cfg.t_end,
        "dt": cfg.dt,
        "method": cfg.method,
        "backend": trace.backend,
        "samples": int(trace.time.size),
        "notes": list(trace.notes),
    }
    if trace.completed:
        t_lo = cfg.t_end * (1 - window_fraction)
        tail = trace.window(t_lo, cfg.t_end)
        bounds = {}
        for sel in ("e_f", "e_f_hz", "e_v", "freq_dev_hz"):
            est = ultimate_bound(trace, sel, window_fraction)
            bounds[sel] = _f(est.bound)
        out["tail_window"] = [t_lo, cfg.t_end]
        out["ultimate_bounds"] = bounds
        out["tail"] = {
            "freq_dev_hz_max": _f(frequency_deviation_hz(trace)[tail].max()),
            "v_od_min": _f(trace["v_od"][tail].min()),
            "v_od_max": _f(trace["v_od"][tail].max()),
            "power_spread_max": _f(np.max(power_sharing_spread(trace["P"][tail], cfg.inverters.m_p))),
        }
    else:
        out["ultimate_bounds"] = None
        out["final_freq_dev_hz"] = _f(frequency_deviation_hz(trace)[-1])
        out["final_growth_monotone_1s"] = growth_is_monotone(trace) if trace.diverged else None
    if cfg.controller.resilient:
        lm = lyapunov_monitor(trace)
        out["lyapunov"] = {"threshold": lm.threshold, "after": lm.after,
                           "violation_fraction": lm.violation_fraction}
    return out
