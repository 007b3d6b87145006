from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mgdefense import _backend, _pykernel, preset
from mgdefense.engine import SERIES, Simulator, run, with_solver
from mgdefense.scenario import DivergenceLimits

compiled_only = pytest.mark.skipif("compiled" not in _backend.available(),
                                   reason="compiled extension not built")


def test_environment_override(monkeypatch):
    monkeypatch.setenv(_backend.BACKEND_ENV, "python")
    assert _backend.kernel_class() is _pykernel.Kernel
    assert _backend.active() == "python"
    assert Simulator(preset("case1_resilient")).backend == "python"
    monkeypatch.setenv(_backend.BACKEND_ENV, "fortran")
    with pytest.raises(ValueError, match="unknown backend"):
        _backend.kernel_class()


@compiled_only
def test_compiled_is_default(monkeypatch):
    monkeypatch.delenv(_backend.BACKEND_ENV, raising=False)
    assert _backend.active() == "compiled"


@compiled_only
@pytest.mark.parametrize("name", ["case1_resilient", "case2", "case3", "case1_conventional"])
def test_backends_agree_on_rhs_and_jacobian(name):
    cfg = preset(name)
    py, cc = Simulator(cfg, "python"), Simulator(cfg, "compiled")
    rng = np.random.default_rng(11)
    y = py.initial_state() * (1 + 1e-4 * rng.normal(size=py.state_size))
    for t in (0.0, 6.0, 14.0):
        np.testing.assert_allclose(cc.rhs(t, y), py.rhs(t, y), rtol=1e-12, atol=1e-9)
        np.testing.assert_allclose(cc.jacobian(t, y), py.jacobian(t, y), rtol=1e-12, atol=1e-9)


@compiled_only
@pytest.mark.parametrize("name,t_end,dt", [("case1_resilient", 6.0, 1e-3), ("case3", 12.5, 2e-3),
                                           ("case2", 13.5, 2e-3)])
def test_backends_agree_on_short_runs(name, t_end, dt):
    cfg = with_solver(preset(name), t_end=t_end, dt=dt, record_every=5)
    a, b = run(cfg, "python"), run(cfg, "compiled")
    assert a.status == b.status == "completed"
    np.testing.assert_array_equal(a.time, b.time)
    scale = 1 + np.abs(b.state)
    assert np.max(np.abs(a.state - b.state) / scale) < 1e-8
    for name in SERIES:
        assert np.all(np.isfinite(a[name]))


@compiled_only
def test_backends_agree_on_divergence_time():
    cfg = replace(with_solver(preset("case1_conventional"), dt=2e-3, record_every=5),
                  divergence=DivergenceLimits(freq_hz=0.05))
    a, b = run(cfg, "python"), run(cfg, "compiled")
    assert a.diverged and b.diverged
    assert a.diverged_at == b.diverged_at


def test_matches_adaptive_reference_solution():
    cfg = with_solver(preset("case1_resilient"), t_end=8.0)
    tr = run(cfg)
    sim = Simulator(cfg)
    ref = solve_ivp(sim.rhs, (0.0, 8.0), sim.initial_state(), method="LSODA", jac=sim.jacobian,
                    t_eval=tr.time, rtol=1e-10, atol=1e-10)
    assert ref.success
    err = np.abs(ref.y.T - tr.state) / (1 + np.abs(tr.state))
    assert np.max(err) < 1e-6


@compiled_only
def test_benchmark_script_runs(capsys):
    import importlib.util
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_backends.py"
    spec = importlib.util.spec_from_file_location("bench_backends", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    assert mod.main(["--t-end", "0.2", "--full-t-end", "0.5", "--repeat", "1"]) == 0
    assert "speedup" in capsys.readouterr().out
