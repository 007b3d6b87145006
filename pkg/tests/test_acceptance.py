"""Acceptance suite: one check per criterion, each reporting a PASS/FAIL line.

Run under pytest (lines are repeated in the terminal summary) or directly:
``python3 tests/test_acceptance.py``.
"""

import math

import numpy as np
import pytest

from mgdefense import preset, run
from mgdefense.analysis import (frequency_deviation_hz, global_form_gap, growth_is_monotone,
                                lyapunov_monitor, power_sharing_spread, ultimate_bound,
                                zeta_f_rate_mismatch, containment_errors)
from mgdefense.controller import adaptive_chain_derivative
from mgdefense.engine import plan_epochs, with_solver
from mgdefense.integrators import sdirk4_step
from mgdefense.topology import (CommGraph, SingularPhiSum, assumption1_holds, build_matrices,
                                follower_reachability, positive_definiteness_check)

ACCEPTANCE_LINES = {}

TAIL = (25.0, 30.0)
FREQ_TOL_HZ = 0.1
V_BAND = (329.0, 351.0)
SPREAD_TOL = 0.02


def report(num, title, ok, detail):
    line = f"criterion {num:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES[num] = line
    print(line)
    return ok


def tail_checks(tr):
    sel = tr.window(*TAIL)
    fdev = float(frequency_deviation_hz(tr)[sel].max())
    vmin, vmax = float(tr["v_od"][sel].min()), float(tr["v_od"][sel].max())
    spread = float(np.max(power_sharing_spread(tr["P"][sel], tr.config.inverters.m_p)))
    ok = fdev <= FREQ_TOL_HZ and V_BAND[0] <= vmin and vmax <= V_BAND[1] and spread <= SPREAD_TOL
    return ok, f"max|f-60| = {fdev:.3g} Hz, v_od in [{vmin:.2f}, {vmax:.2f}] V, spread = {spread:.3g}"


# --------------------------------------------------------------------------- checks


def check_1(runs):
    tr = runs.get("case1_conventional")
    t = tr.diverged_at
    ok = tr.diverged and t is not None and 5.0 < t < 30.0 and growth_is_monotone(tr, 1.0)
    return ok, f"status {tr.status} at t = {t} s, monotone growth over last 1 s: {growth_is_monotone(tr, 1.0)}"


def check_2(runs):
    tr = runs.get("case1_resilient")
    ok, detail = tail_checks(tr)
    return ok and tr.completed, f"{tr.status}; {detail}"


def check_3(runs):
    traces = runs.sweep()
    betas = [float(tr.config.controller.beta_f[0]) for tr in traces]
    bounds = [ultimate_bound(tr, "e_f").bound for tr in traces]
    ok = betas == sorted(betas) and all(a > b for a, b in zip(bounds, bounds[1:]))
    pairs = ", ".join(f"b(beta_f={b:g}) = {v:.3g}" for b, v in zip(betas, bounds))
    return ok, pairs + " rad/s"


def check_4(runs):
    tr = runs.get("case2")
    ok, detail = tail_checks(tr)
    events = [e.time for e in tr.config.events]
    return ok and tr.completed and not tr.diverged, f"{tr.status} through events at {events} s; {detail}"


def check_5(runs):
    tr = runs.get("case3")
    epochs, _ = plan_epochs(tr.config)
    reach = all(assumption1_holds(ep.graph) for ep in epochs)
    cut = any(ep.graph.adjacency[0, 1] == 0 and ep.graph.adjacency[1, 0] == 0 for ep in epochs)
    ok, detail = tail_checks(tr)
    return ok and reach and cut and tr.completed, f"reachability in all {len(epochs)} topologies: {reach}; {detail}"


def check_6(runs):
    lm = lyapunov_monitor(runs.get("case1_resilient"))
    frac = lm.violation_fraction
    return frac < 0.01, (f"violation fraction {frac:.3g} after t = {lm.after:g} s "
                         f"(threshold {lm.threshold:.3g}, {int(lm.decrease_region.sum())} samples in region)")


def _random_digraph(rng, n):
    a = (rng.random((n, n)) < rng.uniform(0.1, 0.6)) * rng.uniform(0.5, 2.0, (n, n))
    np.fill_diagonal(a, 0.0)
    pins = np.zeros((2, n))
    for k in range(2):
        pins[k, rng.integers(n)] = rng.uniform(0.5, 2.0)
    return CommGraph(a, pins)


def _broken_digraph(rng, n):
    """Random digraph with one follower that has no incoming edge and no pin."""
    g = _random_digraph(rng, n)
    a, pins = g.adjacency.copy(), g.pinning.copy()
    lost = rng.integers(n)
    a[lost, :] = 0.0
    pins[:, lost] = 0.0
    if not pins.any():
        other = (lost + 1) % n
        pins[0, other] = 1.0
    return CommGraph(a, pins)


def check_7(_runs=None, count=100, seed=7):
    rng = np.random.default_rng(seed)
    valid = nonsingular = pd = 0
    while valid < count:
        g = _random_digraph(rng, int(rng.integers(2, 11)))
        if not assumption1_holds(g):
            continue
        valid += 1
        try:
            m = build_matrices(g)
        except SingularPhiSum:
            continue
        nonsingular += 1
        pd += positive_definiteness_check(m)
    invalid = flagged = 0
    while invalid < count:
        g = _broken_digraph(rng, int(rng.integers(2, 11)))
        if assumption1_holds(g):
            continue
        invalid += 1
        flagged += bool((~follower_reachability(g)).any())
    ok = nonsingular == valid and pd == valid and flagged == invalid
    return ok, (f"{valid} reachable digraphs: {nonsingular} nonsingular, {pd} with positive-definite "
                f"symmetric part; {invalid} unreachable: {flagged} flagged")


def check_8(_runs=None):
    tr = run(with_solver(preset("case1_resilient"), dt=1e-4, record_every=1, t_end=7.0))
    gap = float(np.nanmax(global_form_gap(tr)))
    # finite-difference rate against -sum(Phi) diag(c_f) (zeta_f + Delta_f + Lambda_f)
    phi = tr.epochs[0].matrices.phi_sum
    c = tr.config.controller.c_f
    u = tr["zeta_f"] + tr["Delta_f"] + tr["Lambda_f"]
    pred = -(c * u) @ phi.T
    fd = np.gradient(tr["zeta_f"], tr.time, axis=0)
    sel = tr.window(5.0, 7.0)
    sel[[0, -1]] = False
    rel = float(np.max(np.abs(fd[sel] - pred[sel])) / np.max(np.abs(pred[sel])))
    exact = zeta_f_rate_mismatch(tr, 5.0, 7.0, include_plant_drift=True)
    ok = gap < 1e-10 and rel < 1e-3
    return ok, (f"identity residual {gap:.2g} (tol 1e-10); rate mismatch {rel:.3g} relative on [5, 7] s "
                f"(tol 1e-3); with leader-drift term {exact:.2g}")


def check_9(_runs=None):
    zeta = np.array([1.0])
    chi0 = 0.01
    f = lambda t, y: adaptive_chain_derivative(zeta, y.reshape(1, 2), 1.0).ravel()
    jac = lambda t, y: np.array([[0.0, 1.0], [0.0, 0.0]])
    y = np.array([chi0, 0.0])
    dt = 1e-3
    for k in range(2000):
        y = sdirk4_step(f, jac, k * dt, y, dt)
    err = abs(y[0] - (chi0 + 2.0**2 / 2))
    return err < 1e-8, f"|chi(2) - (chi(0) + 2)| = {err:.2g}"


def check_10(_runs=None):
    f = lambda t, y: -y
    jac = lambda t, y: -np.eye(1)
    dts = (1e-2, 5e-3, 2.5e-3)
    errs = []
    for dt in dts:
        y = np.array([1.0])
        for k in range(int(round(1.0 / dt))):
            y = sdirk4_step(f, jac, k * dt, y, dt)
        errs.append(abs(y[0] - math.exp(-1.0)))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    return min(orders) >= 3.9, f"observed orders {orders[0]:.3f}, {orders[1]:.3f}"


def check_11(runs):
    parts, ok = [], True
    for mode in ("conventional", "resilient"):
        tr = runs.get(f"baseline_{mode}")
        ce = containment_errors(tr)
        sel = tr.time >= 5.0 - 1e-9
        ef, ev = float(np.max(ce.norm_f[sel])), float(np.max(ce.norm_v[sel]))
        spread = float(power_sharing_spread(tr["P"][-1], tr.config.inverters.m_p))
        ok &= tr.completed and ef < 1e-3 and ev < 1e-3 and spread < 1e-3
        parts.append(f"{mode}: |e_f| {ef:.2g}, |e_v| {ev:.2g} after 5 s, spread {spread:.2g}")
    return ok, "; ".join(parts)


CRITERIA = {
    1: ("conventional control diverges under unbounded attacks", check_1),
    2: ("resilient control keeps frequency and voltage bounded", check_2),
    3: ("ultimate bound decreases with the adaptation gain", check_3),
    4: ("load step and removal", check_4),
    5: ("communication link failure and restoration", check_5),
    6: ("Lyapunov decrease outside the attack threshold", check_6),
    7: ("containment matrix properties on random digraphs", check_7),
    8: ("stacked neighbourhood term and its rate", check_8),
    9: ("adaptive chain double-integral oracle", check_9),
    10: ("integrator order", check_10),
    11: ("attack-free baseline", check_11),
}


@pytest.mark.parametrize("num", sorted(CRITERIA))
def test_criterion(num, runs):
    title, check = CRITERIA[num]
    ok, detail = check(runs)
    assert report(num, title, ok, detail), detail


if __name__ == "__main__":
    from conftest import RunCache

    cache = RunCache()
    failed = 0
    for num in sorted(CRITERIA):
        title, check = CRITERIA[num]
        failed += not report(num, title, *check(cache))
    raise SystemExit(1 if failed else 0)
