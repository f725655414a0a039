import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import TRAPEZOID_PEAK_SPEED, TRAPEZOID_TOTAL_TIME
from pgnnff.physical_model import PhysicalParams, f_M, gravity_term, inertia
from pgnnff.plant_sim import (SIM_HEADER, PDGains, PlantParams, Segment, SimulationError,
                              generate_reference, load_plant_config, parasitic_torque,
                              pd_control, plant_step, quantize_encoder, random_segments,
                              run_closed_loop, segments_from_spec, sweep_segments,
                              trajectory_from_spec)
from pgnnff.signals import SignalError, Trajectory, error_norms

P = PlantParams()


def sweep(cycles=1, seed=0):
    return trajectory_from_spec({"start": -1.4, "generator": {
        "kind": "sweep", "cycles": cycles, "low": -1.4, "high": 1.1, "vmax": 0.8, "amax": 1.5}}, seed)


class TestParams:
    def test_defaults(self):
        assert P.input_limit == 5.0 and P.ts == 1 / 500
        assert P.encoder_resolution == pytest.approx(0.0119 * math.pi / 180, rel=1e-15)

    @pytest.mark.parametrize("kw", [dict(k_c=-1.0), dict(c0=0.1, c1=0.2), dict(rho_s=0.9),
                                    dict(input_limit=0.0), dict(encoder_resolution=-1.0),
                                    dict(ts=0.0), dict(substeps=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            replace(P, **kw)

    def test_gains(self):
        with pytest.raises(ValueError):
            PDGains(kp=0.0)
        with pytest.raises(ValueError):
            PDGains(kd=-1.0)

    def test_dict_round_trip(self):
        assert PlantParams.from_dict(P.to_dict()) == P

    def test_load_shipped_config(self):
        from pgnnff.cli import CONFIG_DIR
        plant, gains = load_plant_config(CONFIG_DIR / "plant.json")
        assert plant == P and gains == PDGains()


class TestParasitic:
    def test_slack_at_rest(self):
        assert parasitic_torque(0.5, 0.0, P) == 0.0

    def test_cable_pushes_back(self):
        p = replace(P, k_c=2.0, theta_c=-1.0)
        assert parasitic_torque(-1.1, 0.0, p) == pytest.approx(0.2, rel=1e-12)

    @pytest.mark.parametrize("th", [-0.5, 0.0, 0.7, 2.0])
    @pytest.mark.parametrize("v", [0.2, -0.5, 3.0])
    def test_friction_saturates(self, th, v):
        # slack cable, |v| >> v_eps: magnitude c0 + c1 cos(theta) within 1 %
        mag = abs(parasitic_torque(th, v, P))
        assert mag == pytest.approx(P.c0 + P.c1 * math.cos(th), rel=0.01)
        assert np.sign(parasitic_torque(th, v, P)) == -np.sign(v)

    def test_stiction_multiplier(self):
        v = 0.5 * P.v_eps
        expected = -P.rho_s * (P.c0 + P.c1) * math.tanh(0.5)
        assert parasitic_torque(0.0, v, P) == pytest.approx(expected, rel=1e-12)

    @given(st.floats(-3, 3))
    def test_cable_zero_above_engage(self, th):
        p = replace(P, c0=0.0, c1=0.0)
        t = parasitic_torque(th, 0.0, p)
        if th >= p.theta_c:
            assert t == 0.0
        else:
            assert t == pytest.approx(p.k_c * (p.theta_c - th), rel=1e-12, abs=1e-15)

    def test_cable_continuous(self):
        p = replace(P, c0=0.0, c1=0.0)
        eps = 1e-9
        assert abs(parasitic_torque(p.theta_c - eps, 0.0, p) - parasitic_torque(p.theta_c + eps, 0.0, p)) < 1e-8

    def test_vectorized(self):
        th = np.linspace(-2, 1, 7)
        v = np.linspace(-1, 1, 7)
        np.testing.assert_array_equal(parasitic_torque(th, v, P),
                                      [parasitic_torque(a, b, P) for a, b in zip(th, v)])


class TestStep:
    def test_equilibrium_hold(self):
        p = P.without_parasitics()
        th = 0.4
        u = float(gravity_term(th, p.true_physical, p.constants))
        assert plant_step((th, 0.0), u, p) == (th, 0.0)

    def test_free_fall_discrete_exact(self):
        p = replace(P, true_physical=PhysicalParams(0.0, 2.0, 0.0, 0.0, 0.0)).without_parasitics()
        u, h = 1.0, p.ts
        a = u / 2.0
        s = (0.0, 0.0)
        for k in range(1, 101):
            s = plant_step(s, u, p)
            assert s[1] == pytest.approx(k * h * a, rel=1e-12)
            assert s[0] == pytest.approx(h * h * a * k * (k + 1) / 2, rel=1e-10)

    def test_energy_drift(self):
        tp = PhysicalParams(10.0, 1.0, 0.0, 0.02, 0.01)
        p = replace(P, true_physical=tp).without_parasitics()
        big_m, mg = inertia(tp), tp.m * p.constants.g

        def energy(th, om):
            return 0.5 * big_m * om * om + mg * (tp.y * math.sin(th) + tp.z * math.cos(th))

        s = (0.3, 1.0)
        e0 = energy(*s)
        es = []
        for _ in range(500):
            s = plant_step(s, 0.0, p)
            es.append(energy(*s))
        assert max(abs(e - e0) for e in es) / abs(e0) < 1e-3

    def test_input_clipped(self):
        p = P.without_parasitics()
        assert plant_step((0.0, 0.0), 100.0, p) == plant_step((0.0, 0.0), p.input_limit, p)

    def test_non_finite(self):
        with pytest.raises(SimulationError):
            plant_step((math.nan, 0.0), 0.0, P)

    def test_substeps(self):
        p = replace(P.without_parasitics(), substeps=4)
        s1 = plant_step((0.1, 0.2), 1.0, p)
        q = replace(p, substeps=1, ts=p.ts / 4)
        s = (0.1, 0.2)
        for _ in range(4):
            s = plant_step(s, 1.0, q)
        assert s1 == pytest.approx(s, rel=1e-14)


class TestController:
    def test_pd_examples(self):
        assert pd_control(0.0, 0.0, PDGains(), 0.002) == 0.0
        assert pd_control(0.1, 0.1, PDGains(kp=10.0, kd=0.0), 0.002) == pytest.approx(1.0)
        # gains object only needs kp and kd; PDGains itself requires kp > 0
        assert pd_control(0.002, 0.0, SimpleNamespace(kp=0.0, kd=1.0), 0.002) == pytest.approx(1.0)

    def test_quantize_examples(self):
        res = P.encoder_resolution
        assert quantize_encoder(0.0, res) == 0.0
        assert quantize_encoder(1.4 * res, res) == pytest.approx(res, rel=1e-15)
        assert quantize_encoder(0.3, 0.0) == 0.3

    @given(st.floats(-10, 10))
    def test_quantize_bound(self, th):
        res = P.encoder_resolution
        assert abs(quantize_encoder(th, res) - th) <= res / 2 * (1 + 1e-9)


class TestClosedLoop:
    def test_oracle_inverse_tracks_to_encoder_resolution(self):
        traj = sweep()
        tp = P.true_physical
        u_ff = f_M(traj, tp, P.constants) - parasitic_torque(traj.theta_d, traj.theta_d_dot, P)
        r = run_closed_loop(traj, PDGains(), P, u_ff)
        assert np.max(np.abs(r.tracking_error)) <= P.encoder_resolution

    def test_feedback_only_reproducible(self):
        traj = sweep()
        a = run_closed_loop(traj, PDGains(), P)
        b = run_closed_loop(traj, PDGains(), P)
        assert error_norms(a.tracking_error).rms > 1e-3
        for f in ("theta", "theta_measured", "u_applied", "u_fb", "u_ff"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_zero_reference_at_rest(self):
        n = 500
        traj = Trajectory(np.zeros(n), np.zeros(n), np.zeros(n), P.ts)
        p = replace(P, true_physical=PhysicalParams(10.0, 1.0, 0.5, 0.0, 0.0))
        r = run_closed_loop(traj, PDGains(), p)
        assert np.all(r.theta == 0) and np.all(r.u_applied == 0)

    def test_saturation_invariant(self):
        traj = sweep()
        r = run_closed_loop(traj, PDGains(), P, np.full(traj.n, 8.0))
        assert np.max(np.abs(r.u_applied)) <= P.input_limit
        np.testing.assert_array_equal(r.u_applied, np.clip(r.u_ff + r.u_fb, -5, 5))

    def test_matches_manual_loop(self):
        traj = sweep()
        gains = PDGains()
        u_ff = 0.3 * np.sin(np.arange(traj.n) * 0.01)
        r = run_closed_loop(traj, gains, P, u_ff)
        s = (traj.theta_d[0], 0.0)
        e_prev = None
        for k in range(200):
            meas = quantize_encoder(s[0], P.encoder_resolution)
            e = traj.theta_d[k] - meas
            u_fb = pd_control(e, e if e_prev is None else e_prev, gains, P.ts)
            assert r.theta_measured[k] == meas and r.u_fb[k] == u_fb
            e_prev = e
            s = plant_step(s, u_ff[k] + u_fb, P)
            assert r.theta[k + 1] == s[0]

    def test_callable_feedforward(self):
        traj = sweep()
        f = lambda t: f_M(t, P.true_physical)
        a = run_closed_loop(traj, PDGains(), P, f)
        b = run_closed_loop(traj, PDGains(), P, f(traj))
        assert np.array_equal(a.theta, b.theta)

    def test_ts_mismatch(self):
        traj = Trajectory(np.zeros(10), np.zeros(10), np.zeros(10), 0.001)
        with pytest.raises(SignalError):
            run_closed_loop(traj, PDGains(), P)

    def test_bad_feedforward(self):
        traj = sweep()
        with pytest.raises(SignalError):
            run_closed_loop(traj, PDGains(), P, np.zeros(3))
        with pytest.raises(SignalError):
            run_closed_loop(traj, PDGains(), P, np.full(traj.n, np.nan))

    def test_divergence_reports_step(self):
        p = replace(P, divergence_bound=0.5)
        traj = generate_reference([Segment(1.0, 1.0, 1.0)], P.ts)
        with pytest.raises(SimulationError, match="step"):
            run_closed_loop(traj, PDGains(), p)

    def test_dataset_and_csv(self, tmp_path):
        r = run_closed_loop(sweep(), PDGains(), P)
        ds = r.to_dataset()
        assert np.array_equal(ds.u_hat, r.u_applied) and np.array_equal(ds.theta, r.theta)
        assert np.array_equal(r.to_dataset("measured").theta, r.theta_measured)
        with pytest.raises(ValueError):
            r.to_dataset("other")
        r.write_csv(tmp_path / "sim.csv")
        assert (tmp_path / "sim.csv").read_text().splitlines()[0] == "k," + ",".join(SIM_HEADER)


class TestReference:
    def test_trapezoid_timing(self):
        tr = generate_reference([Segment(1.0, 1.0, 1.0)], 0.002, 0.0)
        assert (tr.n - 1) * tr.ts == pytest.approx(TRAPEZOID_TOTAL_TIME)
        assert np.max(tr.theta_d_dot) == pytest.approx(TRAPEZOID_PEAK_SPEED, abs=0.002)
        assert tr.theta_d[-1] == pytest.approx(1.0)

    def test_cruise_segment(self):
        tr = generate_reference([Segment(3.0, 1.0, 1.0)], 0.002, 0.0)
        assert (tr.n - 1) * tr.ts == pytest.approx(4.0)

    def test_dwell_only(self):
        tr = generate_reference([Segment(0.2, 1.0, 1.0, 0.5)], 0.002, 0.2)
        assert np.all(tr.theta_d == 0.2) and np.all(tr.theta_d_dot == 0)

    @pytest.mark.parametrize("seg", [Segment(1.0, 0.0, 1.0), Segment(1.0, 1.0, -1.0),
                                     Segment(math.nan, 1.0, 1.0), Segment(1.0, 1.0, 1.0, -0.1),
                                     Segment(1.0, math.inf, 1.0)])
    def test_infeasible(self, seg):
        with pytest.raises(SignalError):
            generate_reference([seg])

    def test_too_short(self):
        with pytest.raises(SignalError):
            generate_reference([], 0.002)

    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 2.0), st.floats(0.1, 5.0))
    def test_limits_property(self, seed, vmax, amax):
        segs = random_segments(np.random.default_rng(seed), 4, -1.0, 1.0, vmax, amax, (0.0, 0.1))
        tr = generate_reference(segs, 0.002, 0.0)
        assert np.max(np.abs(tr.theta_d_dot)) <= vmax * (1 + 1e-12)
        assert np.max(np.abs(tr.theta_d_ddot)) <= amax * (1 + 1e-12)
        # continuity of position and velocity: steps bounded by the limits
        assert np.max(np.abs(np.diff(tr.theta_d))) <= vmax * 0.002 * (1 + 1e-9)
        assert np.max(np.abs(np.diff(tr.theta_d_dot))) <= amax * 0.002 * (1 + 1e-9)

    def test_sweep_covers_range_each_cycle(self):
        segs = sweep_segments(np.random.default_rng(0), 3, -1.0, 1.0, 1.0, 1.0, stops=2)
        targets = [s.target for s in segs]
        assert len(segs) == 18 and targets.count(1.0) == 3 and targets.count(-1.0) == 3

    def test_spec_parsing(self):
        segs, ts, start = segments_from_spec(
            {"ts": 0.001, "start": 0.5, "vmax": 2.0, "amax": 3.0,
             "segments": [{"target": 1.0}, {"target": 0.0, "vmax": 1.0, "dwell": 0.2}]})
        assert (ts, start) == (0.001, 0.5)
        assert segs == [Segment(1.0, 2.0, 3.0, 0.0), Segment(0.0, 1.0, 3.0, 0.2)]

    def test_spec_missing_limit(self):
        with pytest.raises(SignalError):
            segments_from_spec({"segments": [{"target": 1.0}]})

    def test_spec_generator_seeded(self):
        a, b, c = sweep(seed=1), sweep(seed=1), sweep(seed=2)
        assert np.array_equal(a.theta_d, b.theta_d) and not np.array_equal(a.theta_d, c.theta_d)

    def test_spec_unknown_generator(self):
        with pytest.raises(SignalError):
            segments_from_spec({"generator": {"kind": "spiral"}})
