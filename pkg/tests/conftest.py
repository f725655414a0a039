import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pgnnff.signals import Trajectory

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_trajectory(n: int = 200, ts: float = 0.002, seed: int = 0) -> Trajectory:
    """Sum of sinusoids with analytic derivatives, spanning both velocity signs."""
    r = np.random.default_rng(seed)
    t = np.arange(n) * ts
    amp = r.uniform(0.2, 0.8, 3)
    w = r.uniform(2.0, 12.0, 3)
    ph = r.uniform(0, 2 * np.pi, 3)
    th = sum(a * np.sin(wi * t + p) for a, wi, p in zip(amp, w, ph))
    v = sum(a * wi * np.cos(wi * t + p) for a, wi, p in zip(amp, w, ph))
    acc = sum(-a * wi * wi * np.sin(wi * t + p) for a, wi, p in zip(amp, w, ph))
    return Trajectory(th, v, acc, ts)


@pytest.fixture
def traj():
    return smooth_trajectory()
