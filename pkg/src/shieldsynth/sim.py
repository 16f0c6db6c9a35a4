"""Monte-Carlo simulation, noise samplers, black-box controllers and rewards."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import IntervalBox, NoiseDist, SystemSpec
from .reach import evaluate_selector

DEFAULT_BATCH = 10000


# --------------------------------------------------------------------------
# noise
# --------------------------------------------------------------------------


class NoiseSampler:
    """Draws noise vectors that always lie inside ``bounds``.

    Uniform noise is uniform on the box.  Generic bounded noise defaults to
    a Gaussian centred on the box with ``sigma = width / 6`` per dimension,
    truncated to the box by redrawing out-of-range coordinates.
    """

    def __init__(self, dist: NoiseDist | str, bounds: IntervalBox, seed=None):
        self.dist = NoiseDist(dist)
        self.bounds = bounds
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def sample(self, size: int) -> np.ndarray:
        lo, hi = self.bounds.lo, self.bounds.hi
        n = self.bounds.dim
        if self.dist is NoiseDist.UNIFORM:
            out = self.rng.random((size, n))
            out *= hi - lo
            out += lo
            # guard against hi being hit through rounding of lo + width * u
            return np.minimum(out, hi, out=out)
        center = self.bounds.center
        sigma = self.bounds.width / 6.0
        out = center + sigma * self.rng.standard_normal((size, n))
        bad = (out < lo) | (out > hi)
        while np.any(bad):
            redraw = center + sigma * self.rng.standard_normal((size, n))
            out = np.where(bad, redraw, out)
            bad = (out < lo) | (out > hi)
        return out


def sample_box(box: IntervalBox, size: int, rng: np.random.Generator) -> np.ndarray:
    return np.minimum(box.lo + box.width * rng.random((size, box.dim)), box.hi)


def _block_seeds(seed, count: int, batch: int) -> list[tuple[int, np.random.Generator]]:
    blocks = -(-count // batch)
    children = np.random.SeedSequence(seed).spawn(blocks)
    return [(min(batch, count - i * batch), np.random.default_rng(c)) for i, c in enumerate(children)]


# --------------------------------------------------------------------------
# rewards
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RewardSpec:
    safe_lo: np.ndarray
    safe_hi: np.ndarray
    live_dims: tuple = ()
    live_thresholds: tuple = ()
    gamma: float = 1.0

    def __post_init__(self) -> None:
        lo = np.asarray(self.safe_lo, dtype=float)
        hi = np.asarray(self.safe_hi, dtype=float)
        object.__setattr__(self, "safe_lo", lo)
        object.__setattr__(self, "safe_hi", hi)
        n = lo.shape[0]
        if any(not 0 <= d < n for d in self.live_dims):
            raise ValueError("liveness dimension out of range")
        if len(self.live_thresholds) != len(self.live_dims):
            raise ValueError("one threshold per liveness dimension")
        if not np.all(np.isfinite(self.live_thresholds)):
            raise ValueError("thresholds must be finite")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("discount must lie in (0, 1]")

    @classmethod
    def for_spec(cls, spec: SystemSpec, live_dims=(), live_thresholds=(), gamma: float = 1.0) -> "RewardSpec":
        return cls(spec.safe_box.lo, spec.safe_box.hi, tuple(live_dims), tuple(live_thresholds), gamma)


def r_safe(x: np.ndarray, L: np.ndarray, U: np.ndarray) -> np.ndarray | float:
    """Sum of distances outside the safe interval; 0 inside (closed)."""
    x = np.asarray(x, dtype=float)
    r = np.minimum(x - L, 0.0) + np.minimum(U - x, 0.0)
    out = r.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def r_live(x: np.ndarray, rs: RewardSpec) -> np.ndarray | float:
    """Number of liveness dimensions whose magnitude exceeds its threshold."""
    x = np.asarray(x, dtype=float)
    if not rs.live_dims:
        return 0.0 if x.ndim == 1 else np.zeros(x.shape[0])
    vals = np.abs(x[..., list(rs.live_dims)]) > np.asarray(rs.live_thresholds)
    out = vals.sum(axis=-1).astype(float)
    return float(out) if np.ndim(out) == 0 else out


def r_live_continuous(x: np.ndarray, rs: RewardSpec) -> np.ndarray | float:
    """Magnitude form of the liveness term: sum of ``|x_i|`` over the live dims."""
    x = np.asarray(x, dtype=float)
    out = np.abs(x[..., list(rs.live_dims)]).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def discounted_return(trajectory: np.ndarray, rs: RewardSpec, continuous: bool = False) -> float:
    """``sum_t gamma^t (r_safe + r_live)`` with ``t`` counted from 0."""
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    live = r_live_continuous(traj, rs) if continuous else r_live(traj, rs)
    rewards = r_safe(traj, rs.safe_lo, rs.safe_hi) + live
    disc = rs.gamma ** np.arange(traj.shape[0])
    return float(np.dot(disc, np.atleast_1d(rewards)))


# --------------------------------------------------------------------------
# black-box controllers
# --------------------------------------------------------------------------

Controller = Callable[[int, np.ndarray], np.ndarray]


def action_limit(spec: SystemSpec, gains: Sequence[np.ndarray]) -> np.ndarray:
    """Per-input magnitude twice the largest linear action seen on the safe box."""
    r = np.maximum(np.abs(spec.safe_box.lo), np.abs(spec.safe_box.hi))
    peak = np.max([np.abs(np.asarray(K)) @ r for K in gains], axis=0)
    return 2.0 * peak


class RandomController:
    def __init__(self, a_max: np.ndarray, seed=None):
        self.a_max = np.asarray(a_max, dtype=float)
        self.rng = np.random.default_rng(seed)

    def __call__(self, t: int, states: np.ndarray) -> np.ndarray:
        return self.a_max * (2.0 * self.rng.random((states.shape[0], self.a_max.shape[0])) - 1.0)


class ConstantController:
    def __init__(self, a_max: np.ndarray):
        self.a_max = np.asarray(a_max, dtype=float)

    def __call__(self, t: int, states: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.a_max, (states.shape[0], self.a_max.shape[0])).copy()


class OutwardController:
    """Drives every input to ``a_max`` in the direction that increases ``s . B a``."""

    def __init__(self, spec: SystemSpec, a_max: np.ndarray):
        self.spec = spec
        self.a_max = np.asarray(a_max, dtype=float)

    def __call__(self, t: int, states: np.ndarray) -> np.ndarray:
        _, B = self.spec.dynamics.matrices(t)
        direction = np.sign(states @ B)
        direction[direction == 0.0] = 1.0
        return self.a_max * direction


class AdversarialController:
    """Hugs the edge of what a shield would accept, always pushing outward.

    Starts from the verified linear action and adds an outward deviation
    whose one-step effect is 0.5 to 1.5 times the slack between verified
    and runtime noise, so roughly half of the risky actions are admissible.
    """

    def __init__(self, spec: SystemSpec, gains: Sequence[np.ndarray], choices: Sequence[int], seed=None):
        self.spec = spec
        self.linear = LinearController(gains, choices, spec.interval_k)
        self.rng = np.random.default_rng(seed)
        self.slack = np.minimum(spec.noise_verified.hi - spec.noise_runtime.hi,
                                spec.noise_runtime.lo - spec.noise_verified.lo)

    def __call__(self, t: int, states: np.ndarray) -> np.ndarray:
        _, B = self.spec.dynamics.matrices(t)
        direction = np.sign(states @ B)
        direction[direction == 0.0] = 1.0
        gain = self.spec.dt * np.abs(B).sum(axis=1)
        rows = gain > 0
        scale = np.min(self.slack[rows] / gain[rows])
        alpha = self.rng.uniform(0.5, 1.5, size=(states.shape[0], 1))
        return self.linear(t, states) + alpha * scale * direction


class LinearController:
    """Follows a selector of the family (no shield needed)."""

    def __init__(self, gains: Sequence[np.ndarray], choices: Sequence[int], k: int):
        self.gains = [np.asarray(K) for K in gains]
        self.choices = list(choices)
        self.k = k

    def __call__(self, t: int, states: np.ndarray) -> np.ndarray:
        K = self.gains[self.choices[min(t // self.k, len(self.choices) - 1)]]
        return states @ K.T


CONTROLLERS = ("random", "constant", "outward", "adversarial", "family")


def make_controller(kind: str, spec: SystemSpec, gains: Sequence[np.ndarray], choices: Sequence[int],
                    seed=None) -> Controller:
    a_max = action_limit(spec, gains)
    if kind == "random":
        return RandomController(a_max, seed)
    if kind == "constant":
        return ConstantController(a_max)
    if kind == "outward":
        return OutwardController(spec, a_max)
    if kind == "adversarial":
        return AdversarialController(spec, gains, choices, seed)
    if kind == "family":
        return LinearController(gains, choices, spec.interval_k)
    raise ValueError(f"unknown controller {kind!r}; choose from {', '.join(CONTROLLERS)}")


# --------------------------------------------------------------------------
# Monte-Carlo oracles
# --------------------------------------------------------------------------


def _noise_box(spec: SystemSpec, which: str) -> IntervalBox:
    if which == "verified":
        return spec.noise_verified
    if which == "runtime":
        return spec.noise_runtime
    raise ValueError("noise must be 'verified' or 'runtime'")


def simulate_selector(
    spec: SystemSpec,
    gains: Sequence[np.ndarray],
    choices: Sequence[int],
    samples: int,
    seed=0,
    noise: str = "verified",
    horizon: int | None = None,
    batch: int = DEFAULT_BATCH,
    on_step: Callable[[int, np.ndarray], None] | None = None,
) -> None:
    """Simulate ``samples`` trajectories of a selector and report each step.

    ``on_step(t, states)`` receives the states at steps ``1 .. horizon``
    (default ``M``).  Past the last segment the final gain keeps running.
    The initial state is uniform on the initial box.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    horizon = spec.horizon_M if horizon is None else horizon
    nbox = _noise_box(spec, noise)
    k = spec.interval_k
    n = spec.n
    cache: dict = {}

    def step_map(t: int) -> np.ndarray:
        # transposed closed loop I + dt (A + B K) for right-multiplying row states
        seg = min(t // k, len(choices) - 1)
        key = seg if spec.time_invariant else t
        if key not in cache:
            A, B = spec.dynamics.matrices(t)
            K = np.asarray(gains[choices[seg]])
            cache[key] = (np.eye(n) + spec.dt * (A + B @ K)).T
        return cache[key]

    for size, rng in _block_seeds(seed, samples, batch):
        S = sample_box(spec.init_box, size, rng)
        sampler = NoiseSampler(spec.noise_dist, nbox, rng)
        for t in range(horizon):
            noise = sampler.sample(size)
            noise += S @ step_map(t)
            S = noise
            if on_step is not None:
                on_step(t + 1, S)


@dataclass(frozen=True, eq=False)
class EmpiricalSafety:
    fraction: np.ndarray
    sigma3: np.ndarray
    samples: int


def empirical_safety(
    spec: SystemSpec,
    family,
    selector: Sequence[int],
    samples: int,
    seed=0,
    noise: str = "verified",
    batch: int = DEFAULT_BATCH,
) -> EmpiricalSafety:
    """Fraction of trajectories whose state at step ``t`` is safe, ``t = 1..M``."""
    gains = getattr(family, "gains", family)
    safe_counts = np.zeros(spec.horizon_M)
    lo, hi = spec.safe_box.lo, spec.safe_box.hi

    def count(t: int, S: np.ndarray) -> None:
        safe_counts[t - 1] += np.count_nonzero(np.all((S >= lo) & (S <= hi), axis=1))

    simulate_selector(spec, gains, selector, samples, seed, noise, batch=batch, on_step=count)
    frac = safe_counts / samples
    return EmpiricalSafety(frac, 3.0 * np.sqrt(frac * (1.0 - frac) / samples), samples)


def containment_exceptions(
    spec: SystemSpec,
    family,
    selector: Sequence[int],
    samples: int,
    seed=0,
    noise: str = "verified",
    batch: int = DEFAULT_BATCH,
) -> np.ndarray:
    """Per-step count of simulated states outside the over-approximation box."""
    gains = getattr(family, "gains", family)
    bounds = evaluate_selector(spec, gains, list(selector))
    los = np.array([b.box.lo for b in bounds])
    his = np.array([b.box.hi for b in bounds])
    misses = np.zeros(spec.horizon_M, dtype=int)

    def check(t: int, S: np.ndarray) -> None:
        misses[t - 1] += np.count_nonzero(~np.all((S >= los[t - 1]) & (S <= his[t - 1]), axis=1))

    simulate_selector(spec, gains, selector, samples, seed, noise, batch=batch, on_step=check)
    return misses
