import math

import numpy as np
import pytest

from shieldsynth.benchmarks import benchmark
from shieldsynth.cli import verify
from shieldsynth.dynamics import ConstantDynamics, IntervalBox, SystemSpec, TableDynamics


def small_spec(A, B, dt=0.1, init=0.1, safe=1.0, w=0.01, M=20, k=10, **kw):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    return SystemSpec(
        name=kw.pop("name", "toy"),
        dynamics=ConstantDynamics(A, B),
        dt=dt,
        noise_runtime=IntervalBox.symmetric(w / 2, n),
        noise_verified=IntervalBox.symmetric(w, n),
        init_box=IntervalBox.symmetric(init, n),
        safe_box=IntervalBox.symmetric(safe, n),
        horizon_M=M,
        interval_k=k,
        **kw,
    )


def two_phase_spec(M=200, k=100):
    # scalar system whose drift and input sign change halfway through
    dt = 0.01
    As = [np.array([[0.0 if t < k else 2.0]]) for t in range(M)]
    Bs = [np.array([[-1.0 if t < k else 1.0]]) for t in range(M)]
    return SystemSpec(
        name="two-phase",
        dynamics=TableDynamics(As, Bs),
        dt=dt,
        noise_runtime=IntervalBox.symmetric(5e-5, 1),
        noise_verified=IntervalBox.symmetric(1e-4, 1),
        init_box=IntervalBox.symmetric(1.0, 1),
        safe_box=IntervalBox.symmetric(3.0, 1),
        horizon_M=M,
        interval_k=k,
    )


TWO_PHASE_GAINS = [np.array([[0.0]]), np.array([[-5.0]]), np.array([[-3.0]])]


@pytest.fixture(scope="session")
def pendulum():
    return benchmark("Pendulum")


@pytest.fixture(scope="session")
def verified_pendulum(pendulum):
    report, family, result = verify(pendulum, seed=0)
    assert report.verified
    return pendulum, family, result


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


PI = math.pi


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}")
