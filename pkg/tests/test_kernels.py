"""The compiled kernels and the pure-Python fallback must agree bit for bit."""

import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgnnff import _kernels
from pgnnff._kernels import _fallback
from pgnnff.plant_sim import PDGains, PlantParams, trajectory_from_spec

core = pytest.importorskip("pgnnff._kernels._core", reason="compiled extension not built")

P = PlantParams()


def params(p=P):
    return p.k_c, p.theta_c, p.c0, p.c1, p.rho_s, p.v_eps


def test_compiled_backend_selected():
    assert _kernels.BACKEND == "cython"


def test_env_forces_fallback():
    env = dict(os.environ, PGNNFF_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import pgnnff; print(pgnnff.KERNEL_BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@given(st.floats(-1e3, 1e3), st.sampled_from([0.0, 1e-4, P.encoder_resolution, 0.5]))
def test_quantize(theta, res):
    assert core.quantize(theta, res) == _fallback.quantize(theta, res)


@given(st.floats(-4, 4), st.floats(-2, 2) | st.sampled_from([0.0, 1e-4, -5e-4, 1e-3, -1e-3]))
def test_parasitic(theta, omega):
    assert core.parasitic_torque(theta, omega, *params()) == \
        _fallback.parasitic_torque(theta, omega, *params())


@given(arrays(np.float64, st.integers(0, 200), elements=st.floats(-3, 3) | st.just(0.0)),
       st.sampled_from([0.0, 0.1]), st.sampled_from([-1.0, 0.0, 1.0]))
def test_relay(xs, deadband, initial):
    assert np.array_equal(core.relay_scan(xs, deadband, initial),
                          _fallback.relay_scan(xs, deadband, initial))


def test_relay_rejects_non_finite():
    for impl in (core, _fallback):
        with pytest.raises(ValueError):
            impl.relay_scan(np.array([0.0, np.nan]))


@pytest.mark.parametrize("seed", [0, 1])
@pytest.mark.parametrize("plant", [P, P.without_parasitics(), replace(P, substeps=3),
                                   replace(P, encoder_resolution=0.0)])
def test_simulate_bit_identical(seed, plant):
    traj = trajectory_from_spec({"start": -1.4, "generator": {
        "kind": "sweep", "cycles": 1, "low": -1.4, "high": 1.1, "vmax": 0.8, "amax": 1.5}}, seed)
    u_ff = 0.5 * np.sin(np.arange(traj.n) * 3e-3)
    g = PDGains()
    args = (traj.theta_d, u_ff, float(traj.theta_d[0]), 0.0, plant.kernel_tuple(),
            (g.kp, g.kd), plant.substeps, plant.divergence_bound)
    a = core.simulate(*args)
    b = _fallback.simulate(*args)
    for x, y in zip(a[:4], b[:4]):
        assert np.array_equal(x, y)
    assert a[4] == b[4] == -1


def test_simulate_divergence_index_agrees():
    n = 2000
    theta_d = np.linspace(0, 3, n)
    u_ff = np.zeros(n)
    g = PDGains()
    args = (theta_d, u_ff, 0.0, 0.0, P.kernel_tuple(), (g.kp, g.kd), 1, 0.5)
    assert core.simulate(*args)[4] == _fallback.simulate(*args)[4] > 0


def test_benchmark_script_runs(capsys):
    import runpy
    from pathlib import Path
    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    runpy.run_path(str(script), run_name="bench")["main"](["--repeat", "1", "--cycles", "1"])
    out = capsys.readouterr().out
    assert "simulate" in out and "speedup" in out
