"""Built-in benchmark systems and their stacked variants.

Pendulum and Cartpole are the textbook linearisations about the upright
equilibrium.  The remaining plants are compact surrogates with the stated
state/input dimensions: only their structure is documented, so the
matrices here are re-derived rather than copied.  Every entry records
where its numbers come from in ``PROVENANCE``.

Stacked names look like ``"4-Pendulum"``: four perturbed copies of the
base system composed block-diagonally.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .dynamics import (
    ConstantDynamics,
    GeneratorDynamics,
    IntervalBox,
    SystemSpec,
    stack,
)

BASE_NAMES = ("Pendulum", "Cartpole", "DroneInWind", "Carplatoon", "Oscillator", "Helicopter")
STACK_DEPTHS = (2, 4, 8)
SCALE_DEPTHS = (16, 32)

# verified noise half-width per base system
NOISE = {
    "Pendulum": 1.5e-2,
    "Cartpole": 3e-3,
    "DroneInWind": 2.5e-3,
    "Carplatoon": 2e-3,
    "Oscillator": 4e-3,
    "Helicopter": 2e-3,
}
NOISE_OVERRIDE = {"8-Oscillator": 5e-3}
HORIZON = {"Pendulum": 500, "Cartpole": 500}
DEFAULT_HORIZON = 1000
INTERVAL_K = 100
# runtime noise is this fraction of the verified noise
RUNTIME_FRACTION = 0.5

PROVENANCE = {
    "Pendulum": "g=10, l=1, m=1 inverted pendulum linearised at the top; dt=0.05",
    "Cartpole": "cart 1 kg, pole 0.1 kg, half length 0.5 m, g=9.8; dt=0.05",
    "DroneInWind": "2-d triple integrator with jerk input; wind (sin t, cos t) modulates velocity damping",
    "Carplatoon": "8 first-order vehicles with drag 0.1 and 7 gap states",
    "Oscillator": "lightly damped 2-d oscillator driving a 16-stage low-pass chain",
    "Helicopter": "8-state longitudinal/lateral hover surrogate with a 20-stage sensor chain",
}


def _sym(r, n=None) -> IntervalBox:
    return IntervalBox.symmetric(r, n)


def _spec(name, A, B, dt, init_r, safe_r, dynamics=None) -> SystemSpec:
    n = np.asarray(A).shape[0] if dynamics is None else dynamics.n
    w = NOISE[name]
    return SystemSpec(
        name=name,
        dynamics=ConstantDynamics(A, B) if dynamics is None else dynamics,
        dt=dt,
        noise_runtime=_sym(RUNTIME_FRACTION * w, n),
        noise_verified=_sym(w, n),
        init_box=_sym(init_r, n),
        safe_box=_sym(safe_r, n),
        horizon_M=HORIZON.get(name, DEFAULT_HORIZON),
        interval_k=INTERVAL_K,
    )


def pendulum() -> SystemSpec:
    g, l, mass = 10.0, 1.0, 1.0
    A = np.array([[0.0, 1.0], [g / l, 0.0]])
    B = np.array([[0.0], [1.0 / (mass * l * l)]])
    return _spec("Pendulum", A, B, 0.05, math.pi / 10, math.pi / 2)


def cartpole() -> SystemSpec:
    # state (x, x_dot, theta, theta_dot)
    mc, mp, l, g = 1.0, 0.1, 0.5, 9.8
    total = mc + mp
    denom = l * (4.0 / 3.0 - mp / total)
    A = np.zeros((4, 4))
    B = np.zeros((4, 1))
    A[0, 1] = A[2, 3] = 1.0
    A[3, 2] = g / denom
    B[3, 0] = -1.0 / (total * denom)
    A[1, 2] = -mp * l * A[3, 2] / total
    B[1, 0] = 1.0 / total - mp * l * B[3, 0] / total
    return _spec("Cartpole", A, B, 0.05, 0.05, [10.0, 3.0, 0.35, 3.0])


def drone_in_wind() -> SystemSpec:
    dt = 0.05
    dyn = GeneratorDynamics("drone_wind", {"dt": dt, "drag": 0.1, "strength": 0.2})
    # walls at 4 m, speed below 2 m/s, acceleration below 5 m/s^2
    return _spec("DroneInWind", None, None, dt, 0.05, [4.0, 4.0, 2.0, 2.0, 5.0, 5.0], dynamics=dyn)


def carplatoon() -> SystemSpec:
    # states: v_1..v_8 then gaps d_i = x_i - x_{i+1}
    cars = 8
    n = 2 * cars - 1
    A = np.zeros((n, n))
    B = np.zeros((n, cars))
    for i in range(cars):
        A[i, i] = -0.1
        B[i, i] = 1.0
    for j in range(cars - 1):
        A[cars + j, j] = 1.0
        A[cars + j, j + 1] = -1.0
    safe = np.r_[np.full(cars, 1.2), np.full(cars - 1, 8.0)]
    return _spec("Carplatoon", A, B, 0.05, 0.05, safe)


def _chain(A: np.ndarray, start: int, length: int, source: int, rate: float) -> None:
    prev = source
    for i in range(start, start + length):
        A[i, prev] += rate
        A[i, i] -= rate
        prev = i


def oscillator() -> SystemSpec:
    n = 18
    A = np.zeros((n, n))
    A[:2, :2] = [[0.0, 1.0], [-1.0, -0.1]]
    _chain(A, 2, 16, 0, 5.0)
    B = np.zeros((n, 2))
    B[0, 0] = 1.0
    B[1, 1] = 1.0
    return _spec("Oscillator", A, B, 0.05, 0.05, 0.5)


def helicopter() -> SystemSpec:
    # (u, w, q, theta, v, p, phi, r) hover modes; 20 chained sensor states
    n = 28
    A = np.zeros((n, n))
    A[:8, :8] = [
        [-0.02, 0.01, 0.0, -9.8, 0.0, 0.0, 0.0, 0.0],
        [0.01, -0.3, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.05, 0.0, -1.0, 0.0, 0.0, 0.1, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, -0.05, 0.0, 9.8, 0.0],
        [0.0, 0.0, 0.1, 0.0, -0.05, -2.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0, -0.5],
    ]
    _chain(A, 8, 10, 0, 4.0)
    _chain(A, 18, 10, 4, 4.0)
    B = np.zeros((n, 6))
    B[0, 0] = 1.0
    B[1, 1] = 1.0
    B[2, 2] = 2.0
    B[5, 3] = 2.0
    B[7, 4] = 1.0
    B[4, 5] = 1.0
    return _spec("Helicopter", A, B, 0.05, 0.05, 1.0)


_BASE = {
    "Pendulum": pendulum,
    "Cartpole": cartpole,
    "DroneInWind": drone_in_wind,
    "Carplatoon": carplatoon,
    "Oscillator": oscillator,
    "Helicopter": helicopter,
}

_STACKED = re.compile(r"^(\d+)-(\w+)$")


def registered_names(include_scale: bool = False) -> list[str]:
    """Base systems followed by stacked variants, in the fixed report order."""
    names = list(BASE_NAMES)
    for depth in STACK_DEPTHS:
        names += [f"{depth}-{b}" for b in BASE_NAMES]
    if include_scale:
        names += [f"{d}-Helicopter" for d in SCALE_DEPTHS]
    return names


def benchmark(name: str, perturb_seed: int = 0) -> SystemSpec:
    """Look up a base system or build a stacked one from ``"<depth>-<base>"``."""
    if name in _BASE:
        return _BASE[name]()
    match = _STACKED.match(name)
    if match is None or match.group(2) not in _BASE:
        raise KeyError(f"unknown benchmark {name!r}")
    depth, base_name = int(match.group(1)), match.group(2)
    base = _BASE[base_name]()
    if depth < 1:
        raise KeyError(f"stacking depth must be positive in {name!r}")
    if depth == 1:
        return base
    spec = stack([base] * depth, perturb_seed=perturb_seed, name=name)
    if name in NOISE_OVERRIDE:
        w = NOISE_OVERRIDE[name]
        spec = spec.replace(noise_verified=_sym(w, spec.n), noise_runtime=_sym(RUNTIME_FRACTION * w, spec.n))
    return spec
