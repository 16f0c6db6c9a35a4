import math

import numpy as np
import pytest

from shieldsynth.benchmarks import BASE_NAMES, benchmark, registered_names

DIMS = {
    "Pendulum": (2, 1), "Cartpole": (4, 1), "DroneInWind": (6, 2),
    "Carplatoon": (15, 8), "Oscillator": (18, 2), "Helicopter": (28, 6),
}
TABLE = {
    "Pendulum": (500, 1.5e-2), "Cartpole": (500, 3e-3), "DroneInWind": (1000, 2.5e-3),
    "Carplatoon": (1000, 2e-3), "Oscillator": (1000, 4e-3), "Helicopter": (1000, 2e-3),
}


@pytest.mark.parametrize("name", BASE_NAMES)
def test_base_dimensions_and_defaults(name):
    spec = benchmark(name)
    assert (spec.n, spec.m) == DIMS[name]
    M, w = TABLE[name]
    assert spec.horizon_M == M and spec.interval_k == 100
    assert np.allclose(spec.noise_verified.hi, w) and np.allclose(spec.noise_verified.lo, -w)


@pytest.mark.parametrize("depth", [2, 4, 8])
@pytest.mark.parametrize("name", BASE_NAMES)
def test_stacked_dimensions(name, depth):
    spec = benchmark(f"{depth}-{name}")
    n, m = DIMS[name]
    assert (spec.n, spec.m) == (depth * n, depth * m)


def test_pendulum_boxes():
    spec = benchmark("Pendulum")
    assert np.allclose(spec.init_box.hi, math.pi / 10) and np.allclose(spec.init_box.lo, -math.pi / 10)
    assert np.allclose(spec.safe_box.hi, math.pi / 2) and np.allclose(spec.safe_box.lo, -math.pi / 2)


def test_eight_oscillator_noise():
    assert np.allclose(benchmark("8-Oscillator").noise_verified.hi, 5e-3)


def test_registry_order_and_unknown():
    names = registered_names()
    assert len(names) == 24 and names[:6] == list(BASE_NAMES) and names[-1] == "8-Helicopter"
    assert registered_names(include_scale=True)[-2:] == ["16-Helicopter", "32-Helicopter"]
    for bad in ("Nope", "3-Nope", "0-Pendulum"):
        with pytest.raises(KeyError):
            benchmark(bad)
    assert benchmark("1-Pendulum").n == 2
