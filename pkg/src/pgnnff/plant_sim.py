"""Synthetic roll axis: rigid body + cable spring + configuration-dependent friction.

The plant is the data source for identification and the testbed for
closed-loop evaluation. Torque sign convention: ``parasitic_torque`` is the
torque the cable and guidance exert on the axis, so the dynamics read::

    M * acc = clip(u) - H(theta) - d * vel + tau_par(theta, vel)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .physical_model import PhysicalConstants, PhysicalParams, gravity_term, inertia
from .signals import DEFAULT_TS, IODataset, SignalError, Trajectory, write_columns_csv

SIM_HEADER = ("theta_d", "theta", "u_ff", "u_fb", "u_applied", "e")


class SimulationError(RuntimeError):
    """The closed loop diverged or produced non-finite state."""


@dataclass(frozen=True)
class PlantParams:
    true_physical: PhysicalParams = PhysicalParams(m=10.0, jxx=1.0, d=0.5, y=0.02, z=0.01)
    k_c: float = 3.0
    theta_c: float = -1.0
    c0: float = 0.4
    c1: float = 0.15
    rho_s: float = 1.5
    v_eps: float = 1e-3
    input_limit: float = 5.0
    encoder_resolution: float = 0.0119 * math.pi / 180.0
    ts: float = DEFAULT_TS
    constants: PhysicalConstants = PhysicalConstants()
    substeps: int = 1
    divergence_bound: float = 10.0

    def __post_init__(self):
        if self.k_c < 0:
            raise ValueError("cable stiffness must be non-negative")
        if not self.c0 >= abs(self.c1):
            raise ValueError("friction requires c0 >= |c1|")
        if self.rho_s < 1:
            raise ValueError("stiction ratio must be >= 1")
        if not self.input_limit > 0:
            raise ValueError("input_limit must be positive")
        if self.encoder_resolution < 0:
            raise ValueError("encoder_resolution must be >= 0 (0 disables quantization)")
        if not self.ts > 0 or self.substeps < 1:
            raise ValueError("ts must be positive and substeps >= 1")
        if not inertia(self.true_physical) > 0:
            raise ValueError("effective inertia must be positive")

    def without_parasitics(self) -> "PlantParams":
        return replace(self, k_c=0.0, c0=0.0, c1=0.0)

    def kernel_tuple(self) -> tuple:
        p, c = self.true_physical, self.constants
        return (p.m, p.jxx, p.d, p.y, p.z, c.g, c.tilt, self.k_c, self.theta_c,
                self.c0, self.c1, self.rho_s, self.v_eps, self.input_limit,
                self.encoder_resolution, self.ts)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlantParams":
        d = dict(d)
        if "true_physical" in d:
            d["true_physical"] = PhysicalParams(**d["true_physical"])
        if "constants" in d:
            d["constants"] = PhysicalConstants(**d["constants"])
        return cls(**d)


@dataclass(frozen=True)
class PDGains:
    kp: float = 150.0
    kd: float = 6.0

    def __post_init__(self):
        if not self.kp > 0 or self.kd < 0:
            raise ValueError("PD gains require kp > 0 and kd >= 0")


@dataclass(frozen=True)
class SimResult:
    theta_d: np.ndarray
    theta: np.ndarray
    theta_measured: np.ndarray
    u_applied: np.ndarray
    u_fb: np.ndarray
    u_ff: np.ndarray
    ts: float

    @property
    def tracking_error(self) -> np.ndarray:
        return self.theta_d - self.theta

    def to_dataset(self, source: str = "realized") -> IODataset:
        """(angle, required input) pairs; ``source`` picks realized or encoder angle."""
        if source == "realized":
            theta = self.theta
        elif source == "measured":
            theta = self.theta_measured
        else:
            raise ValueError(f"unknown dataset source {source!r}")
        return IODataset(theta, self.u_applied, self.ts)

    def write_csv(self, path) -> None:
        write_columns_csv(path, SIM_HEADER, [self.theta_d, self.theta, self.u_ff, self.u_fb,
                                             self.u_applied, self.tracking_error])


@dataclass(frozen=True)
class Segment:
    """Point-to-point move to ``target`` followed by a dwell of ``dwell`` seconds."""

    target: float
    vmax: float
    amax: float
    dwell: float = 0.0


def load_plant_config(path) -> tuple[PlantParams, PDGains]:
    cfg = json.loads(Path(path).read_text())
    gains = PDGains(**cfg.get("gains", {}))
    return PlantParams.from_dict(cfg.get("plant", {})), gains


def parasitic_torque(theta, theta_dot, p: PlantParams):
    """Cable spring below ``theta_c`` plus cosine-modulated Coulomb friction with stiction."""
    f = np.frompyfunc(lambda th, om: _kernels.parasitic_torque(
        float(th), float(om), p.k_c, p.theta_c, p.c0, p.c1, p.rho_s, p.v_eps), 2, 1)
    out = f(theta, theta_dot)
    return float(out) if np.ndim(out) == 0 else out.astype(np.float64)


def plant_step(state, u: float, p: PlantParams):
    """One sample of semi-implicit Euler (``p.substeps`` sub-steps) under held input ``u``."""
    th, om = (float(s) for s in state)
    if not (math.isfinite(th) and math.isfinite(om)):
        raise SimulationError(f"non-finite plant state {state}")
    u = min(max(float(u), -p.input_limit), p.input_limit)
    big_m = inertia(p.true_physical)
    h = p.ts / p.substeps
    for _ in range(p.substeps):
        tau = _kernels.parasitic_torque(th, om, p.k_c, p.theta_c, p.c0, p.c1, p.rho_s, p.v_eps)
        acc = (u - float(gravity_term(th, p.true_physical, p.constants))
               - p.true_physical.d * om + tau) / big_m
        om = om + h * acc
        th = th + h * om
    if not (math.isfinite(th) and math.isfinite(om)):
        raise SimulationError("non-finite plant state after step")
    return th, om


def pd_control(e: float, e_prev: float, gains: PDGains, ts: float) -> float:
    return gains.kp * e + gains.kd * (e - e_prev) / ts


def quantize_encoder(theta, resolution: float):
    if resolution <= 0:
        return theta
    return np.floor(np.asarray(theta) / resolution + 0.5) * resolution


FeedforwardLike = Union[None, np.ndarray, Sequence[float], Callable[[Trajectory], np.ndarray]]


def run_closed_loop(traj: Trajectory, gains: PDGains, p: PlantParams,
                    feedforward: FeedforwardLike = None,
                    initial_state: Optional[tuple] = None) -> SimResult:
    """Simulate the two-degree-of-freedom loop along ``traj``.

    ``feedforward`` is None, a precomputed array, or a callable mapping the
    trajectory to an array (e.g. a trained model's ``__call__``). The plant
    starts at rest on the first reference sample unless ``initial_state`` is
    given.
    """
    if abs(traj.ts - p.ts) > 1e-12 * p.ts:
        raise SignalError(f"trajectory ts={traj.ts} does not match plant ts={p.ts}")
    if callable(feedforward):
        u_ff = np.asarray(feedforward(traj), dtype=np.float64)
    elif feedforward is None:
        u_ff = np.zeros(traj.n)
    else:
        u_ff = np.asarray(feedforward, dtype=np.float64)
    if u_ff.shape != (traj.n,):
        raise SignalError(f"feedforward length {u_ff.shape} != trajectory length {traj.n}")
    if not np.all(np.isfinite(u_ff)):
        raise SignalError("feedforward contains non-finite values")
    th0, om0 = initial_state if initial_state is not None else (float(traj.theta_d[0]), 0.0)
    theta, meas, u_fb, u_app, fail = _kernels.simulate(
        traj.theta_d, u_ff, float(th0), float(om0), p.kernel_tuple(),
        (float(gains.kp), float(gains.kd)), int(p.substeps), float(p.divergence_bound))
    if fail >= 0:
        raise SimulationError(f"closed loop diverged at step {fail} (|theta| > {p.divergence_bound} "
                              f"or non-finite velocity)")
    return SimResult(traj.theta_d.copy(), theta, meas, u_app, u_fb, u_ff, traj.ts)


def _move_profile(distance: float, vmax: float, amax: float):
    """Accel time, cruise time and peak speed of a rest-to-rest trapezoid."""
    d = abs(distance)
    t_acc = vmax / amax
    if amax * t_acc * t_acc >= d:  # triangle: peak speed below vmax
        t_acc = math.sqrt(d / amax)
        return t_acc, 0.0, amax * t_acc
    return t_acc, (d - amax * t_acc * t_acc) / vmax, vmax


def generate_reference(segments: Sequence[Segment], ts: float = DEFAULT_TS,
                       start: float = 0.0) -> Trajectory:
    """Trapezoidal-velocity moves with dwells, sampled analytically at ``ts``."""
    if not ts > 0:
        raise SignalError("ts must be positive")
    pieces = []  # (t_start, duration, p0, v0, a) of constant-acceleration pieces
    t, pos = 0.0, float(start)
    for i, seg in enumerate(segments):
        if not (math.isfinite(seg.target) and seg.vmax > 0 and seg.amax > 0
                and math.isfinite(seg.vmax) and math.isfinite(seg.amax)):
            raise SignalError(f"segment {i}: infeasible limits {seg}")
        if not (seg.dwell >= 0 and math.isfinite(seg.dwell)):
            raise SignalError(f"segment {i}: dwell must be finite and >= 0")
        dist = seg.target - pos
        if dist != 0.0:
            sgn = 1.0 if dist > 0 else -1.0
            t_acc, t_cruise, v_peak = _move_profile(dist, seg.vmax, seg.amax)
            a = sgn * seg.amax
            pieces.append((t, t_acc, pos, 0.0, a))
            p1 = pos + 0.5 * a * t_acc * t_acc
            t += t_acc
            if t_cruise > 0:
                pieces.append((t, t_cruise, p1, sgn * v_peak, 0.0))
                p1 = p1 + sgn * v_peak * t_cruise
                t += t_cruise
            pieces.append((t, t_acc, p1, sgn * v_peak, -a))
            t += t_acc
            pos = seg.target
        if seg.dwell > 0:
            pieces.append((t, seg.dwell, pos, 0.0, 0.0))
            t += seg.dwell
    n = int(math.floor(t / ts + 1e-9)) + 1
    if n < 2:
        raise SignalError("reference is shorter than two samples")
    time = np.arange(n) * ts
    th = np.full(n, pos)
    v = np.zeros(n)
    acc = np.zeros(n)
    starts = np.array([pc[0] for pc in pieces]) if pieces else np.zeros(0)
    idx = np.searchsorted(starts, time, side="right") - 1
    for j, (t0, dur, p0, v0, a) in enumerate(pieces):
        mask = (idx == j) & (time < t0 + dur)
        tau = time[mask] - t0
        th[mask] = p0 + v0 * tau + 0.5 * a * tau * tau
        v[mask] = v0 + a * tau
        acc[mask] = a
    return Trajectory(th, v, acc, ts)


def segments_from_spec(spec: dict, seed: int = 0) -> tuple[list[Segment], float, float]:
    """Parse a trajectory spec dict.

    Keys: ``ts``, ``start``, optional shared ``vmax``/``amax``/``dwell``, an
    explicit ``segments`` list and/or a ``generator`` block
    (``{"kind": "sweep"|"random", ...}``) whose random draws are seeded by
    ``seed`` and the generator's ``seed_offset``. Explicit segments come first.
    """
    ts = float(spec.get("ts", DEFAULT_TS))
    start = float(spec.get("start", 0.0))
    defaults = {k: spec[k] for k in ("vmax", "amax", "dwell") if k in spec}
    segs = []
    for s in spec.get("segments", []):
        merged = {**defaults, **s}
        try:
            segs.append(Segment(float(merged["target"]), float(merged["vmax"]),
                                float(merged["amax"]), float(merged.get("dwell", 0.0))))
        except KeyError as exc:
            raise SignalError(f"segment {s} lacks {exc.args[0]!r}") from None
    gen = spec.get("generator")
    if gen is not None:
        gen = {**defaults, **gen}
        rng = np.random.default_rng([int(seed), int(gen.get("seed_offset", 0))])
        kind = gen.get("kind", "sweep")
        dwell = tuple(gen.get("dwell_range", (0.0, 0.5)))
        if kind == "sweep":
            segs += sweep_segments(rng, int(gen["cycles"]), float(gen["low"]), float(gen["high"]),
                                   float(gen["vmax"]), float(gen["amax"]),
                                   int(gen.get("stops", 2)), dwell)
        elif kind == "random":
            segs += random_segments(rng, int(gen["count"]), float(gen["low"]), float(gen["high"]),
                                    float(gen["vmax"]), float(gen["amax"]), dwell)
        else:
            raise SignalError(f"unknown trajectory generator {kind!r}")
    return segs, ts, start


def trajectory_from_spec(spec: dict, seed: int = 0) -> Trajectory:
    segs, ts, start = segments_from_spec(spec, seed)
    return generate_reference(segs, ts, start)


def random_segments(rng: np.random.Generator, count: int, low: float, high: float,
                    vmax: float, amax: float, dwell_range=(0.0, 0.5)) -> list[Segment]:
    """Random point-to-point targets in [low, high] sharing one set of limits."""
    targets = rng.uniform(low, high, size=count)
    dwells = rng.uniform(*dwell_range, size=count)
    speed = rng.uniform(0.3, 1.0, size=count) * vmax
    return [Segment(float(t), float(s), float(amax), float(w))
            for t, s, w in zip(targets, speed, dwells)]


def sweep_segments(rng: np.random.Generator, cycles: int, low: float, high: float,
                   vmax: float, amax: float, stops: int = 2,
                   dwell_range=(0.0, 0.5)) -> list[Segment]:
    """Repeated up-and-down sweeps over [low, high] with random intermediate stops.

    Every cycle visits the whole range in both directions, so any contiguous
    slice spanning a cycle or more sees every operating regime.
    """
    if cycles < 1 or stops < 0:
        raise ValueError("need cycles >= 1 and stops >= 0")
    segs = []
    for _ in range(cycles):
        inner = np.sort(rng.uniform(low, high, size=stops))
        for t in list(inner) + [high] + list(inner[::-1]) + [low]:
            speed = rng.uniform(0.3, 1.0) * vmax
            segs.append(Segment(float(t), float(speed), float(amax),
                                float(rng.uniform(*dwell_range))))
    return segs
