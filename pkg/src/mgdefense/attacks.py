"""False-data-injection signals on the control input channels.

Every shape is a function of the time since onset, ``tau = t - start_time``,
and is gated to zero before onset.  Smoothness is certified on
``[start_time, inf)``; derivative jumps at the onset itself are accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

CHANNELS = ("frequency", "voltage")

# kernel encoding
KIND_POLY, KIND_SIN, KIND_POWER = 0, 1, 2
MAX_POLY_DEGREE = 7


class NotSmoothEnough(ValueError):
    """The shape is not gamma times continuously differentiable after onset."""


@dataclass(frozen=True)
class Polynomial:
    coeffs: tuple[float, ...]  # c0 + c1*tau + c2*tau^2 + ...

    def __post_init__(self):
        c = tuple(float(x) for x in self.coeffs)
        if len(c) == 0:
            c = (0.0,)
        if len(c) - 1 > MAX_POLY_DEGREE:
            raise ValueError(f"polynomial degree above {MAX_POLY_DEGREE} is not supported")
        object.__setattr__(self, "coeffs", c)

    def derivative(self, order: int, tau):
        p = np.polynomial.Polynomial(self.coeffs).deriv(order)
        return p(tau)

    def sup_abs_derivative(self, order: int, horizon: float) -> float:
        p = np.polynomial.Polynomial(self.coeffs).deriv(order)
        pts = [0.0, horizon]
        if p.degree() >= 1:
            pts += [r.real for r in p.deriv().roots() if abs(r.imag) < 1e-12 and 0 < r.real < horizon]
        return float(max(abs(p(x)) for x in pts))

    def derivative_bounded(self, order: int) -> bool:
        return len(self.coeffs) - 1 <= order or all(c == 0 for c in self.coeffs[order + 1:])


def Ramp(slope: float) -> Polynomial:
    return Polynomial((0.0, float(slope)))


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    frequency: float  # rad/s
    phase: float = 0.0

    def derivative(self, order: int, tau):
        a, w = self.amplitude, self.frequency
        return a * w**order * np.sin(w * np.asarray(tau, dtype=float) + self.phase + order * math.pi / 2)

    def sup_abs_derivative(self, order: int, horizon: float) -> float:
        a, w = abs(self.amplitude), abs(self.frequency)
        peak = a * w**order
        if w == 0:
            return float(abs(self.derivative(order, 0.0)))
        # argument of the sine over the window; a peak sits at pi/2 + m*pi
        lo = self.phase + order * math.pi / 2
        hi = lo + self.frequency * horizon
        lo, hi = min(lo, hi), max(lo, hi)
        m = math.ceil((lo - math.pi / 2) / math.pi)
        if math.pi / 2 + m * math.pi <= hi:
            return float(peak)
        return float(max(abs(self.derivative(order, 0.0)), abs(self.derivative(order, horizon))))

    def derivative_bounded(self, order: int) -> bool:
        return True


@dataclass(frozen=True)
class Power:
    """``coef * tau**exponent`` with a real exponent > 0."""

    coef: float
    exponent: float

    def __post_init__(self):
        if self.exponent <= 0:
            raise ValueError("power exponent must be positive")

    def _is_integer(self) -> bool:
        return float(self.exponent).is_integer()

    def _falling(self, order: int) -> float:
        out = 1.0
        for k in range(order):
            out *= self.exponent - k
        return out

    def derivative(self, order: int, tau):
        tau = np.asarray(tau, dtype=float)
        fac = self._falling(order)
        if fac == 0.0:
            return np.zeros_like(tau)
        e = self.exponent - order
        at_zero = 0.0 if e > 0 else (1.0 if e == 0 else np.inf)
        safe = np.where(tau > 0, tau, 1.0)
        return self.coef * fac * np.where(tau > 0, safe**e, at_zero)

    def smooth(self, order: int) -> bool:
        return self._is_integer() or self.exponent - order >= 0

    def sup_abs_derivative(self, order: int, horizon: float) -> float:
        if not self.smooth(order):
            return math.inf
        fac = self._falling(order)
        e = self.exponent - order
        if fac == 0.0:
            return 0.0
        if e == 0:
            return abs(self.coef * fac)
        return abs(self.coef * fac) * horizon**e

    def derivative_bounded(self, order: int) -> bool:
        return self._falling(order) == 0.0 or self.exponent - order == 0


@dataclass(frozen=True)
class Sum:
    terms: tuple

    def derivative(self, order: int, tau):
        return sum(term.derivative(order, tau) for term in self.terms)

    def sup_abs_derivative(self, order: int, horizon: float) -> float:
        polys = [t for t in self.terms if isinstance(t, Polynomial)]
        other = [t for t in self.terms if not isinstance(t, Polynomial)]
        total = 0.0
        if polys:
            width = max(len(p.coeffs) for p in polys)
            merged = np.zeros(width)
            for p in polys:
                merged[: len(p.coeffs)] += p.coeffs
            total += Polynomial(tuple(merged)).sup_abs_derivative(order, horizon)
        # triangle inequality: a certified upper bound for mixed sums
        return float(total + sum(t.sup_abs_derivative(order, horizon) for t in other))

    def derivative_bounded(self, order: int) -> bool:
        return all(t.derivative_bounded(order) for t in self.terms)


Shape = Union[Polynomial, Sinusoid, Power, Sum]


@dataclass(frozen=True)
class AttackSignal:
    inverter: int  # 0-based
    channel: str
    start_time: float
    shape: Shape

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        if self.inverter < 0:
            raise ValueError("inverter index must be nonnegative")


@dataclass(frozen=True)
class DerivativeBound:
    gamma: int
    kappa: float
    bounded: bool  # gamma-th derivative bounded on [start, inf), not only on the horizon

    @property
    def satisfied(self) -> bool:
        return self.bounded and math.isfinite(self.kappa)


def evaluate(sig: AttackSignal, t):
    """Injected value at absolute time t (scalar or array); zero before onset."""
    t_arr = np.asarray(t, dtype=float)
    tau = t_arr - sig.start_time
    val = np.where(tau >= 0, sig.shape.derivative(0, np.maximum(tau, 0.0)), 0.0)
    return float(val) if np.ndim(val) == 0 else val


def derivative(sig: AttackSignal, order: int, t):
    t_arr = np.asarray(t, dtype=float)
    tau = t_arr - sig.start_time
    val = np.where(tau >= 0, sig.shape.derivative(order, np.maximum(tau, 0.0)), 0.0)
    return float(val) if np.ndim(val) == 0 else val


def _smooth(shape, order: int) -> bool:
    if isinstance(shape, Power):
        return shape.smooth(order)
    if isinstance(shape, Sum):
        return all(_smooth(s, order) for s in shape.terms)
    return True


def certify_assumption2(sig: AttackSignal, gamma: int, horizon: float) -> DerivativeBound:
    """Sup of the gamma-th derivative over ``[start_time, horizon]``.

    ``bounded`` reports whether that derivative stays bounded for all time
    after onset; a finite horizon always yields a finite kappa for smooth
    shapes, so ``bounded`` is what decides whether the assumption holds.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if not math.isfinite(horizon):
        raise ValueError("horizon must be finite")
    if not _smooth(sig.shape, gamma):
        raise NotSmoothEnough(f"{sig.shape} is not C^{gamma} after onset")
    span = max(horizon - sig.start_time, 0.0)
    kappa = sig.shape.sup_abs_derivative(gamma, span)
    return DerivativeBound(gamma, float(kappa), bool(sig.shape.derivative_bounded(gamma)))


def encode(attacks, n: int):
    """Flatten attacks into the kernel's term table.

    Returns (node, channel, kind, start, params[nterms, 8]).
    """
    rows = []

    def add(sig, shape):
        if isinstance(shape, Sum):
            for s in shape.terms:
                add(sig, s)
            return
        par = np.zeros(8)
        if isinstance(shape, Polynomial):
            kind = KIND_POLY
            par[: len(shape.coeffs)] = shape.coeffs
        elif isinstance(shape, Sinusoid):
            kind = KIND_SIN
            par[:3] = (shape.amplitude, shape.frequency, shape.phase)
        elif isinstance(shape, Power):
            kind = KIND_POWER
            par[:2] = (shape.coef, shape.exponent)
        else:
            raise TypeError(f"unsupported attack shape {shape!r}")
        rows.append((sig.inverter, CHANNELS.index(sig.channel), kind, sig.start_time, par))

    for sig in attacks:
        if sig.inverter >= n:
            raise ValueError(f"attack targets inverter {sig.inverter + 1} but only {n} exist")
        add(sig, sig.shape)
    m = len(rows)
    node = np.array([r[0] for r in rows], dtype=np.int64).reshape(m)
    chan = np.array([r[1] for r in rows], dtype=np.int64).reshape(m)
    kind = np.array([r[2] for r in rows], dtype=np.int64).reshape(m)
    start = np.array([r[3] for r in rows], dtype=float).reshape(m)
    par = np.array([r[4] for r in rows], dtype=float).reshape(m, 8)
    return node, chan, kind, start, par


def injections(attacks, n: int, t):
    """Stacked (Delta_f, Delta_v) at time t."""
    df = np.zeros(n)
    dv = np.zeros(n)
    for sig in attacks:
        (df if sig.channel == "frequency" else dv)[sig.inverter] += evaluate(sig, t)
    return df, dv


def case1_attacks(start: float = 5.0) -> list[AttackSignal]:
    """Quadratic injections of the unbounded-attack case study."""
    f = (0.5, 0.4, 0.5, 0.3)
    v = (0.5, 1.0, 0.3, 0.4)
    out = [AttackSignal(i, "frequency", start, Polynomial((0.0, 0.0, c))) for i, c in enumerate(f)]
    out += [AttackSignal(i, "voltage", start, Polynomial((0.0, 0.0, c))) for i, c in enumerate(v)]
    return out
