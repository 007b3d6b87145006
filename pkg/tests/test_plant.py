import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgdefense import preset
from mgdefense.engine import equilibrium_state, unpack
from mgdefense.plant import (ElectricalNetwork, InverterParams, droop_outputs, line_network,
                             network_flows, operating_point, plant_derivative, voltage_map)

W60 = 2 * math.pi * 60
PAPER_INV = InverterParams([9.4e-5, 9.4e-5, 18.8e-5, 18.8e-5], [1.3e-3, 1.3e-3, 2.6e-3, 2.6e-3])


def test_frequency_droop():
    omega, _ = droop_outputs([W60] * 4, [350.0] * 4, [10000.0] * 4, [0.0] * 4, PAPER_INV)
    assert omega[0] == pytest.approx(W60 - 0.94, abs=1e-12)
    assert omega[2] == pytest.approx(W60 - 1.88, abs=1e-12)


def test_voltage_droop():
    _, v = droop_outputs([W60] * 4, [350.0] * 4, [0.0] * 4, [5000.0] * 4, PAPER_INV)
    assert v[0] == pytest.approx(343.5, abs=1e-12)


def test_two_node_flow():
    net = ElectricalNetwork(1000 * np.array([[0, 1], [1, 0]]), 10 * np.array([[0, 1], [1, 0]]),
                            [0.0, 0.0], [0.0, 0.0])
    P, Q = network_flows([0.01, 0.0], [340.0, 340.0], net)
    np.testing.assert_allclose(P, [10.0, -10.0], atol=1e-12)
    np.testing.assert_allclose(Q, [0.0, 0.0], atol=1e-12)


def test_scheduled_loads():
    net = ElectricalNetwork(np.array([[0, 1.0], [1.0, 0]]), np.array([[0, 1.0], [1.0, 0]]),
                            [1.0, 2.0], [0.0, 0.0], schedule=((5.0, 1, 7.0, 3.0),))
    P0, _ = network_flows([0.0, 0.0], [1.0, 1.0], net, t=4.9)
    P1, Q1 = network_flows([0.0, 0.0], [1.0, 1.0], net, t=5.0)
    np.testing.assert_allclose(P0, [1.0, 2.0])
    np.testing.assert_allclose(P1, [1.0, 7.0])
    np.testing.assert_allclose(Q1, [0.0, 3.0])


def test_equal_droop_weighted_power_at_steady_state():
    cfg = preset("case1_resilient")
    parts = unpack(equilibrium_state(cfg), cfg.n, cfg.controller.gamma)
    op = operating_point(parts["delta"], parts["omega_n"], parts["V_n"], cfg.inverters, cfg.network)
    mpp = cfg.inverters.m_p * op.P
    np.testing.assert_allclose(mpp, mpp[0], rtol=1e-10)
    np.testing.assert_allclose(op.omega, W60, atol=1e-9)
    np.testing.assert_allclose(plant_derivative(op.omega, W60), 0.0, atol=1e-9)


def test_operating_point_is_consistent_with_droop():
    cfg = preset("case1_resilient")
    rng = np.random.default_rng(3)
    delta = rng.normal(0, 1e-3, 4)
    V = 340 + rng.normal(0, 2, 4)
    op = operating_point(delta, np.full(4, W60), V, cfg.inverters, cfg.network)
    _, v_od = droop_outputs(np.full(4, W60), V, op.P, op.Q, cfg.inverters)
    np.testing.assert_allclose(v_od, op.v_od, atol=1e-9)
    P, Q = network_flows(delta, op.v_od, cfg.network)
    np.testing.assert_allclose(Q, op.Q, atol=1e-9)
    np.testing.assert_allclose(voltage_map(cfg.inverters, cfg.network) @ (V - cfg.inverters.n_q * cfg.network.load_q),
                               op.v_od, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.05, 0.05), min_size=4, max_size=4))
def test_network_conserves_active_power(delta):
    net = line_network(4, 1e5, 50.0, [6000.0] * 4, [1000.0] * 4)
    P, _ = network_flows(delta, [340.0] * 4, net)
    assert P.sum() == pytest.approx(net.load_p.sum(), rel=1e-12, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2e4, 2e4), st.floats(-2e4, 2e4), st.floats(-3, 3))
def test_droop_is_affine(p1, p2, s):
    x1, _ = droop_outputs([W60], [350.0], [p1], [0.0], InverterParams([1e-4], [1e-3]))
    x2, _ = droop_outputs([W60], [350.0], [p2], [0.0], InverterParams([1e-4], [1e-3]))
    xs, _ = droop_outputs([W60], [350.0], [p1 + s * (p2 - p1)], [0.0], InverterParams([1e-4], [1e-3]))
    assert xs[0] == pytest.approx(x1[0] + s * (x2[0] - x1[0]), abs=1e-9)


def test_network_validation():
    with pytest.raises(ValueError, match="symmetric"):
        ElectricalNetwork(np.array([[0, 1.0], [2.0, 0]]), np.zeros((2, 2)), [0, 0], [0, 0])
    with pytest.raises(ValueError, match="connected"):
        ElectricalNetwork(np.zeros((2, 2)), np.zeros((2, 2)), [0, 0], [0, 0])
    with pytest.raises(ValueError, match="positive"):
        InverterParams([1e-4, -1e-4], [1e-3, 1e-3])
