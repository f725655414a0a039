"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--cycles 2]

Both backends run the same closed-loop simulation and relay scan on the
default sweep reference; results are checked for bit equality first.
"""

import argparse
import timeit

import numpy as np

from pgnnff._kernels import _fallback
from pgnnff.plant_sim import PDGains, PlantParams, trajectory_from_spec

try:
    from pgnnff._kernels import _core
except ImportError:
    _core = None


def workload(cycles: int):
    traj = trajectory_from_spec({"start": -1.4, "generator": {
        "kind": "sweep", "cycles": cycles, "low": -1.4, "high": 1.1, "vmax": 0.8, "amax": 1.5,
        "dwell_range": [0.0, 0.4]}}, 0)
    p, g = PlantParams(), PDGains()
    u_ff = 0.5 * np.sin(np.arange(traj.n) * 3e-3)
    sim_args = (traj.theta_d, u_ff, float(traj.theta_d[0]), 0.0, p.kernel_tuple(),
                (g.kp, g.kd), p.substeps, p.divergence_bound)
    return traj, sim_args


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--cycles", type=int, default=2)
    args = ap.parse_args(argv)

    traj, sim_args = workload(args.cycles)
    v = traj.theta_d_dot
    backends = [("python", _fallback)] + ([("cython", _core)] if _core is not None else [])
    if _core is None:
        print("compiled extension not built; timing the fallback only")
    else:
        a, b = _core.simulate(*sim_args), _fallback.simulate(*sim_args)
        assert all(np.array_equal(x, y) for x, y in zip(a[:4], b[:4])) and a[4] == b[4]
        assert np.array_equal(_core.relay_scan(v), _fallback.relay_scan(v))

    print(f"samples: {traj.n}, best of {args.repeat}")
    print(f"{'kernel':<12}{'backend':<10}{'seconds':>12}{'us/sample':>12}")
    times = {}
    for kernel, call in [("simulate", lambda m: m.simulate(*sim_args)),
                         ("relay_scan", lambda m: m.relay_scan(v))]:
        for name, mod in backends:
            t = best_of(lambda: call(mod), args.repeat)
            times[kernel, name] = t
            print(f"{kernel:<12}{name:<10}{t:>12.5f}{1e6 * t / traj.n:>12.3f}")
    if _core is not None:
        for kernel in ("simulate", "relay_scan"):
            print(f"{kernel} speedup: {times[kernel, 'python'] / times[kernel, 'cython']:.1f}x")


if __name__ == "__main__":
    main()
