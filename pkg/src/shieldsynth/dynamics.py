"""Stochastic linear (time-variant) systems and their transition semantics.

A system evolves by forward Euler with additive bounded noise::

    s[t+1] = s[t] + dt * (A_t @ s[t] + B_t @ a[t]) + w[t]

Everything here is immutable once constructed; matrices handed out by the
dynamics sources are read-only views.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np


def _frozen(x: Any, ndim: int | None = None) -> np.ndarray:
    arr = np.array(x, dtype=float, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class IntervalBox:
    """Closed axis-aligned box ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = _frozen(self.lo, 1)
        hi = _frozen(self.hi, 1)
        if lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds contain NaN")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, radius: float | Sequence[float], dim: int | None = None) -> "IntervalBox":
        r = np.asarray(radius, dtype=float)
        if r.ndim == 0:
            if dim is None:
                raise ValueError("dim is required for a scalar radius")
            r = np.full(dim, float(r))
        return cls(-r, r)

    @classmethod
    def point(cls, v: Sequence[float]) -> "IntervalBox":
        return cls(v, v)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, points: np.ndarray) -> np.ndarray | bool:
        """Membership of one point (``(d,)``) or a batch (``(N, d)``)."""
        p = np.asarray(points, dtype=float)
        inside = (p >= self.lo) & (p <= self.hi)
        return bool(inside.all()) if p.ndim == 1 else inside.all(axis=-1)

    def equals(self, other: "IntervalBox") -> bool:
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def concat(self, other: "IntervalBox") -> "IntervalBox":
        return IntervalBox(np.concatenate([self.lo, other.lo]), np.concatenate([self.hi, other.hi]))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "IntervalBox":
        return cls(d["lo"], d["hi"])

    def __repr__(self) -> str:
        return f"IntervalBox(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


class NoiseDist(str, enum.Enum):
    UNIFORM = "UniformNoise"
    GENERIC = "GenericBounded"


# --------------------------------------------------------------------------
# dynamics sources
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstantDynamics:
    A: np.ndarray
    B: np.ndarray

    time_invariant = True

    def __post_init__(self) -> None:
        A = _frozen(self.A, 2)
        B = _frozen(self.B, 2)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"incompatible shapes A{A.shape} B{B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def length(self) -> float:
        return math.inf

    def matrices(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        return self.A, self.B

    def to_dict(self) -> dict:
        return {"kind": "constant", "A": self.A.tolist(), "B": self.B.tolist()}


@dataclass(frozen=True, eq=False)
class TableDynamics:
    """Explicit per-step list of ``(A_t, B_t)``."""

    As: tuple
    Bs: tuple

    time_invariant = False

    def __post_init__(self) -> None:
        As = tuple(_frozen(a, 2) for a in self.As)
        Bs = tuple(_frozen(b, 2) for b in self.Bs)
        if not As or len(As) != len(Bs):
            raise ValueError("table needs equally many (nonzero) A and B entries")
        n, m = Bs[0].shape
        for a, b in zip(As, Bs):
            if a.shape != (n, n) or b.shape != (n, m):
                raise ValueError("table entries have inconsistent shapes")
        object.__setattr__(self, "As", As)
        object.__setattr__(self, "Bs", Bs)

    @property
    def n(self) -> int:
        return self.As[0].shape[0]

    @property
    def m(self) -> int:
        return self.Bs[0].shape[1]

    @property
    def length(self) -> float:
        return len(self.As)

    def matrices(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= t < len(self.As):
            raise IndexError(f"step {t} outside dynamics table of length {len(self.As)}")
        return self.As[t], self.Bs[t]

    def to_dict(self) -> dict:
        return {
            "kind": "table",
            "As": [a.tolist() for a in self.As],
            "Bs": [b.tolist() for b in self.Bs],
        }


def _drone_wind(t: int, params: Mapping[str, Any]) -> tuple[np.ndarray, np.ndarray]:
    # state (px, py, vx, vy, ax, ay); input is the jerk in x and y.
    # The wind vector (sin tau, cos tau) modulates the velocity rows.
    tau = t * float(params["dt"])
    drag = float(params.get("drag", 0.1))
    gust = float(params.get("strength", 0.2))
    A = np.zeros((6, 6))
    A[0, 2] = A[1, 3] = 1.0
    A[2, 4] = A[3, 5] = 1.0
    A[2, 2] = -drag + gust * math.sin(tau)
    A[3, 3] = -drag + gust * math.cos(tau)
    B = np.zeros((6, 2))
    B[4, 0] = B[5, 1] = 1.0
    return A, B


GENERATORS: dict[str, Callable[[int, Mapping[str, Any]], tuple[np.ndarray, np.ndarray]]] = {
    "drone_wind": _drone_wind,
}


@dataclass(frozen=True, eq=False)
class GeneratorDynamics:
    """Named parametric generator; must be a pure function of the step index."""

    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    time_invariant = False

    def __post_init__(self) -> None:
        if self.name not in GENERATORS:
            raise ValueError(f"unknown dynamics generator {self.name!r}")
        object.__setattr__(self, "params", dict(self.params))
        A, B = GENERATORS[self.name](0, self.params)
        object.__setattr__(self, "_shape", (A.shape[0], B.shape[1]))

    @property
    def n(self) -> int:
        return self._shape[0]

    @property
    def m(self) -> int:
        return self._shape[1]

    @property
    def length(self) -> float:
        return math.inf

    def matrices(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if t < 0:
            raise IndexError(f"negative step {t}")
        A, B = GENERATORS[self.name](t, self.params)
        A.setflags(write=False)
        B.setflags(write=False)
        return A, B

    def to_dict(self) -> dict:
        return {"kind": "generator", "name": self.name, "params": dict(self.params)}


def _block_diag(mats: Sequence[np.ndarray]) -> np.ndarray:
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for mat in mats:
        out[r:r + mat.shape[0], c:c + mat.shape[1]] = mat
        r += mat.shape[0]
        c += mat.shape[1]
    return out


@dataclass(frozen=True, eq=False)
class BlockDiagonalDynamics:
    """Block-diagonal composition of sources; ``B`` is right-scaled per input."""

    blocks: tuple
    input_scale: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        scale = _frozen(self.input_scale, 1)
        if scale.shape[0] != sum(b.m for b in self.blocks):
            raise ValueError("input_scale length must equal the stacked action dimension")
        object.__setattr__(self, "input_scale", scale)

    @property
    def time_invariant(self) -> bool:
        return all(b.time_invariant for b in self.blocks)

    @property
    def n(self) -> int:
        return sum(b.n for b in self.blocks)

    @property
    def m(self) -> int:
        return sum(b.m for b in self.blocks)

    @property
    def length(self) -> float:
        return min(b.length for b in self.blocks)

    def matrices(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        pairs = [b.matrices(t) for b in self.blocks]
        A = _block_diag([p[0] for p in pairs])
        B = _block_diag([p[1] for p in pairs]) * self.input_scale[None, :]
        A.setflags(write=False)
        B.setflags(write=False)
        return A, B

    def to_dict(self) -> dict:
        return {
            "kind": "block_diag",
            "blocks": [b.to_dict() for b in self.blocks],
            "input_scale": self.input_scale.tolist(),
        }


DynamicsSource = ConstantDynamics | TableDynamics | GeneratorDynamics | BlockDiagonalDynamics


def dynamics_from_dict(d: Mapping) -> DynamicsSource:
    kind = d["kind"]
    if kind == "constant":
        return ConstantDynamics(d["A"], d["B"])
    if kind == "table":
        return TableDynamics(tuple(d["As"]), tuple(d["Bs"]))
    if kind == "generator":
        return GeneratorDynamics(d["name"], d.get("params", {}))
    if kind == "block_diag":
        return BlockDiagonalDynamics(tuple(dynamics_from_dict(b) for b in d["blocks"]), d["input_scale"])
    raise ValueError(f"unknown dynamics kind {kind!r}")


# --------------------------------------------------------------------------
# system specification
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SystemSpec:
    name: str
    dynamics: DynamicsSource
    dt: float
    noise_runtime: IntervalBox
    noise_verified: IntervalBox
    init_box: IntervalBox
    safe_box: IntervalBox
    horizon_M: int
    interval_k: int
    noise_dist: NoiseDist = NoiseDist.UNIFORM
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "noise_dist", NoiseDist(self.noise_dist))
        n = self.dynamics.n
        for label in ("noise_runtime", "noise_verified", "init_box", "safe_box"):
            box = getattr(self, label)
            if box.dim != n:
                raise ValueError(f"{label} has dimension {box.dim}, expected {n}")
        if not self.dt >= 0.0:
            raise ValueError("dt must be non-negative")
        if not 1 <= self.interval_k <= self.horizon_M:
            raise ValueError("need 1 <= interval_k <= horizon_M")
        if not (np.all(self.noise_verified.lo < self.noise_runtime.lo)
                and np.all(self.noise_runtime.hi < self.noise_verified.hi)):
            raise ValueError("verified noise must strictly dominate runtime noise in every dimension")
        if np.any(self.init_box.width <= 0.0):
            raise ValueError("initial box must have positive width in every dimension")
        if not (np.all(self.safe_box.lo <= self.init_box.lo) and np.all(self.init_box.hi <= self.safe_box.hi)):
            raise ValueError("initial box must lie inside the safe box")
        if self.dynamics.length < self.horizon_M:
            raise ValueError("dynamics table is shorter than the horizon")

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def m(self) -> int:
        return self.dynamics.m

    @property
    def time_invariant(self) -> bool:
        return bool(self.dynamics.time_invariant)

    @property
    def segments(self) -> int:
        return -(-self.horizon_M // self.interval_k)

    def replace(self, **changes: Any) -> "SystemSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "dynamics": self.dynamics.to_dict(),
            "dt": self.dt,
            "noise_runtime": self.noise_runtime.to_dict(),
            "noise_verified": self.noise_verified.to_dict(),
            "init_box": self.init_box.to_dict(),
            "safe_box": self.safe_box.to_dict(),
            "horizon_M": self.horizon_M,
            "interval_k": self.interval_k,
            "noise_dist": self.noise_dist.value,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SystemSpec":
        spec = cls(
            name=d["name"],
            dynamics=dynamics_from_dict(d["dynamics"]),
            dt=float(d["dt"]),
            noise_runtime=IntervalBox.from_dict(d["noise_runtime"]),
            noise_verified=IntervalBox.from_dict(d["noise_verified"]),
            init_box=IntervalBox.from_dict(d["init_box"]),
            safe_box=IntervalBox.from_dict(d["safe_box"]),
            horizon_M=int(d["horizon_M"]),
            interval_k=int(d["interval_k"]),
            noise_dist=NoiseDist(d.get("noise_dist", NoiseDist.UNIFORM.value)),
            seed=d.get("seed"),
        )
        for key, value in (("n", spec.n), ("m", spec.m)):
            if key in d and int(d[key]) != value:
                raise ValueError(f"declared {key}={d[key]} does not match dynamics ({value})")
        return spec


def save_spec(spec: SystemSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2))


def load_spec(path: str | Path) -> SystemSpec:
    return SystemSpec.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# transition semantics
# --------------------------------------------------------------------------


def step(spec: SystemSpec, t: int, s: np.ndarray, a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One Euler step ``s + dt * (A_t s + B_t a) + w``."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    if s.shape != (spec.n,) or w.shape != (spec.n,) or a.shape != (spec.m,):
        raise ValueError(
            f"shape mismatch: s{s.shape} a{a.shape} w{w.shape} for n={spec.n}, m={spec.m}"
        )
    A, B = spec.dynamics.matrices(t)
    return s + spec.dt * (A @ s + B @ a) + w


def closed_loop_matrix(spec: SystemSpec, t: int, K: np.ndarray) -> np.ndarray:
    """``I + dt * (A_t + B_t K)`` for a gain of shape ``(m, n)``."""
    K = np.asarray(K, dtype=float)
    if K.shape != (spec.m, spec.n):
        raise ValueError(f"gain shape {K.shape} != {(spec.m, spec.n)}")
    A, B = spec.dynamics.matrices(t)
    return np.eye(spec.n) + spec.dt * (A + B @ K)


def stack(
    specs: Sequence[SystemSpec],
    perturb_seed: int | None = 0,
    perturbation: tuple[float, float] = (0.95, 1.05),
    name: str | None = None,
    max_resample: int = 100,
) -> SystemSpec:
    """Block-diagonal composition of several systems.

    Input matrix columns are scaled by factors drawn from ``perturbation``
    and the safe bounds are perturbed elementwise the same way; draws that
    would invert a safe interval or push the initial box outside the safe
    box are re-drawn.
    """
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("stacking needs at least two systems")
    dt = specs[0].dt
    if any(s.dt != dt for s in specs):
        raise ValueError("all stacked systems must share the same dt")

    rng = np.random.default_rng(perturb_seed)
    lo_p, hi_p = perturbation
    m_total = sum(s.m for s in specs)
    pb = rng.uniform(lo_p, hi_p, size=m_total)

    init = _concat_boxes([s.init_box for s in specs])
    base_lo = np.concatenate([s.safe_box.lo for s in specs])
    base_hi = np.concatenate([s.safe_box.hi for s in specs])
    for _ in range(max_resample):
        pl = rng.uniform(lo_p, hi_p, size=base_lo.shape)
        pu = rng.uniform(lo_p, hi_p, size=base_hi.shape)
        safe_lo = pl * base_lo
        safe_hi = pu * base_hi
        if np.all(safe_lo < safe_hi) and np.all(safe_lo <= init.lo) and np.all(init.hi <= safe_hi):
            break
    else:
        raise ValueError("could not draw safe-box perturbations that keep the initial box inside")

    if all(isinstance(s.dynamics, ConstantDynamics) for s in specs):
        A = _block_diag([s.dynamics.A for s in specs])
        B = _block_diag([s.dynamics.B for s in specs]) * pb[None, :]
        dyn: DynamicsSource = ConstantDynamics(A, B)
    else:
        dyn = BlockDiagonalDynamics(tuple(s.dynamics for s in specs), pb)

    if name is None:
        names = {s.name for s in specs}
        name = f"{len(specs)}-{specs[0].name}" if len(names) == 1 else "+".join(s.name for s in specs)
    dist = NoiseDist.UNIFORM if all(s.noise_dist is NoiseDist.UNIFORM for s in specs) else NoiseDist.GENERIC
    return SystemSpec(
        name=name,
        dynamics=dyn,
        dt=dt,
        noise_runtime=_concat_boxes([s.noise_runtime for s in specs]),
        noise_verified=_concat_boxes([s.noise_verified for s in specs]),
        init_box=init,
        safe_box=IntervalBox(safe_lo, safe_hi),
        horizon_M=max(s.horizon_M for s in specs),
        interval_k=specs[0].interval_k,
        noise_dist=dist,
        seed=perturb_seed,
    )


def _concat_boxes(boxes: Sequence[IntervalBox]) -> IntervalBox:
    return IntervalBox(np.concatenate([b.lo for b in boxes]), np.concatenate([b.hi for b in boxes]))
