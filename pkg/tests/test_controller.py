import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgdefense.controller import (ControllerParams, ControllerState, LeaderSignal,
                                  adaptive_chain_derivative, compensation, conventional_input, eta,
                                  neighborhood_term_f, neighborhood_term_v, resilient_input,
                                  setpoint_derivative, zeta_f_all, zeta_v_all)
from mgdefense.integrators import rk4_step, sdirk4_step
from mgdefense.topology import CommGraph, ring_graph

W60 = 2 * math.pi * 60
LEAD = LeaderSignal.from_hz(60.0, 350.0, 330.0)
MP = np.array([9.4e-5, 9.4e-5, 18.8e-5, 18.8e-5])
NQ = np.array([1.3e-3, 1.3e-3, 2.6e-3, 2.6e-3])


def test_two_node_consensus_term():
    g = CommGraph(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros((2, 2)))
    z = zeta_f_all([W60 + 1, W60], [0.0, 0.0], g, LEAD, np.full(2, 20.0), np.full(2, 1e-4))
    np.testing.assert_allclose(z, [-20.0, 20.0], atol=1e-9)
    for i in range(2):
        assert neighborhood_term_f(i, [W60 + 1, W60], [0.0, 0.0], g, LEAD, np.full(2, 20.0),
                                   np.full(2, 1e-4)) == pytest.approx(z[i], abs=1e-9)


def test_compensation_example():
    assert compensation(1.0, 2.0, 1.0) == pytest.approx(1.0)
    assert resilient_input(1.0, 2.0, 0.0, 0.01) == pytest.approx(2.0)
    assert conventional_input(1.5) == 1.5


def test_eta_decay():
    np.testing.assert_allclose(eta(0.0, [0.01, 1.0]), [1.0, 1.0])
    assert eta(100.0, 0.01) == pytest.approx(math.exp(-1.0))


def test_chain_double_integral_oracle():
    zeta = np.array([1.0])
    f = lambda t, y: adaptive_chain_derivative(zeta, y.reshape(1, 2), 1.0).ravel()
    jac = lambda t, y: np.array([[0.0, 1.0], [0.0, 0.0]])
    y_rk = np.array([1.0, 0.0])
    y_ir = y_rk.copy()
    dt = 1e-3
    for k in range(2000):
        y_rk = rk4_step(f, k * dt, y_rk, dt)
        y_ir = sdirk4_step(f, jac, k * dt, y_ir, dt)
    assert y_rk[0] == pytest.approx(1.0 + 2.0**2 / 2, abs=1e-8)
    assert y_ir[0] == pytest.approx(1.0 + 2.0**2 / 2, abs=1e-8)


def test_chain_shape_and_order():
    chain = np.array([[0.01, 2.0, 3.0], [0.02, 0.0, 0.0]])
    d = adaptive_chain_derivative(np.array([-4.0, 0.5]), chain, np.array([2.0, 10.0]))
    np.testing.assert_allclose(d, [[2.0, 3.0, 8.0], [0.0, 0.0, 5.0]])


def test_locality_of_neighbourhood_terms():
    g = ring_graph()
    rng = np.random.default_rng(1)
    x = W60 + rng.normal(0, 0.1, 4)
    V = 340 + rng.normal(0, 1, 4)
    P = 6000 + rng.normal(0, 100, 4)
    Q = 1000 + rng.normal(0, 10, 4)
    c = np.full(4, 20.0)
    base_f = neighborhood_term_f(0, x, P, g, LEAD, c, MP)
    base_v = neighborhood_term_v(0, V, Q, g, LEAD, c, NQ)
    # inverter 3 (index 2) is not an in-neighbour of inverter 1
    x2, V2, P2, Q2 = x.copy(), V.copy(), P.copy(), Q.copy()
    x2[2] += 5.0
    V2[2] += 50.0
    P2[2] += 1e4
    Q2[2] += 1e4
    assert neighborhood_term_f(0, x2, P2, g, LEAD, c, MP) == base_f
    assert neighborhood_term_v(0, V2, Q2, g, LEAD, c, NQ) == base_v
    x2[1] += 5.0
    assert neighborhood_term_f(0, x2, P2, g, LEAD, c, MP) != base_f


def test_vectorised_terms_match_per_node():
    g = ring_graph()
    rng = np.random.default_rng(2)
    x, V = W60 + rng.normal(0, 0.1, 4), 340 + rng.normal(0, 1, 4)
    P, Q = 6000 + rng.normal(0, 100, 4), 1000 + rng.normal(0, 10, 4)
    cf, cv = np.array([20.0, 15.0, 10.0, 5.0]), np.array([10.0, 9.0, 8.0, 7.0])
    zf = zeta_f_all(x, P, g, LEAD, cf, MP)
    zv = zeta_v_all(V, Q, g, LEAD, cv, NQ)
    for i in range(4):
        assert neighborhood_term_f(i, x, P, g, LEAD, cf, MP) == pytest.approx(zf[i], rel=1e-12)
        assert neighborhood_term_v(i, V, Q, g, LEAD, cv, NQ) == pytest.approx(zv[i], rel=1e-12)


def test_voltage_term_is_linear_in_gain():
    g = ring_graph()
    V = np.array([345.0, 338.0, 333.0, 341.0])
    Q = np.full(4, 900.0)
    z1 = zeta_v_all(V, Q, g, LEAD, np.full(4, 1.0), NQ)
    z7 = zeta_v_all(V, Q, g, LEAD, np.full(4, 7.0), NQ)
    np.testing.assert_allclose(z7, 7 * z1, rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(1e-6, 1e6), st.floats(0.0, 1e3))
def test_compensation_bounded_by_chi(zeta, chi, t):
    lam = compensation(zeta, chi, eta(t, 0.01))
    assert abs(lam) < chi or (abs(lam) == pytest.approx(chi, rel=1e-12) and abs(zeta) > 0)
    assert lam * zeta >= 0


def test_chi_must_be_positive():
    with pytest.raises(ValueError, match="positive"):
        resilient_input(1.0, 0.0, 0.0, 0.01)


def test_attacks_enter_setpoint_rates_additively():
    uf, uv = setpoint_derivative(np.ones(2), 2 * np.ones(2), np.array([0.5, 0.0]), np.array([0.0, 1.0]))
    np.testing.assert_allclose(uf, [1.5, 1.0])
    np.testing.assert_allclose(uv, [2.0, 3.0])


def test_params_validation_and_initial_state():
    p = ControllerParams.uniform(4, gamma=2, chi_f0=0.5)
    s = ControllerState.initial(np.full(4, W60), np.full(4, 340.0), p)
    assert s.chi_f_chain.shape == (4, 2)
    np.testing.assert_allclose(s.chi_f_chain[:, 0], 0.5)
    np.testing.assert_allclose(s.chi_f_chain[:, 1], 0.0)
    for bad in ({"c_f": 0.0}, {"beta_f": -1.0}, {"chi_v0": 0.0}, {"gamma": 0}, {"mode": "other"}):
        with pytest.raises(ValueError):
            ControllerParams.uniform(4, **bad)
    with pytest.raises(ValueError):
        LeaderSignal(W60, 330.0, 350.0)
