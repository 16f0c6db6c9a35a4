"""Random LQR controller families on the Euler-discretised dynamics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dynamics import SystemSpec

Q_MAX = 20.0
R_MAX = 10.0


class NonConvergence(RuntimeError):
    """Riccati iteration did not reach the requested residual."""


class NoStabilizingGain(RuntimeError):
    """The retry budget ran out before a stabilising gain was found."""


def dare_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, P: np.ndarray) -> float:
    """Infinity-norm (max row sum) of ``P - riccati_map(P)``."""
    return float(np.max(np.sum(np.abs(P - _riccati_map(A, B, Q, R, P)), axis=1)))


def _riccati_map(A, B, Q, R, P):
    BtP = B.T @ P
    gain = np.linalg.solve(R + BtP @ B, BtP @ A)
    nxt = A.T @ P @ A - (A.T @ P @ B) @ gain + Q
    return 0.5 * (nxt + nxt.T)


def _gain(A, B, R, P):
    BtP = B.T @ P
    return -np.linalg.solve(R + BtP @ B, BtP @ A)


def riccati_gain(
    A_d: np.ndarray,
    B_d: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 10000,
    method: str = "doubling",
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the discrete algebraic Riccati equation and return ``(K, P)``.

    ``method="value"`` runs the plain fixed-point (value) iteration
    ``P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q`` from ``P = Q``.
    ``method="doubling"`` runs the structure-preserving doubling recursion,
    which reaches the same fixed point in a few dozen iterations; a handful
    of value-iteration sweeps then polish the result.  Either way the
    returned ``P`` satisfies ``dare_residual(...) <= tol``.
    """
    A = np.asarray(A_d, dtype=float)
    B = np.asarray(B_d, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if Q.ndim == 1:
        Q = np.diag(Q)
    if R.ndim == 1:
        R = np.diag(R)
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise ValueError("inconsistent Riccati problem dimensions")

    if method == "value":
        P = Q.copy()
        for _ in range(max_iter):
            P = _riccati_map(A, B, Q, R, P)
            if dare_residual(A, B, Q, R, P) <= tol:
                return _gain(A, B, R, P), P
        raise NonConvergence(f"value iteration did not converge in {max_iter} iterations")
    if method != "doubling":
        raise ValueError(f"unknown Riccati method {method!r}")

    eye = np.eye(n)
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    P = Hk
    # divergence shows up as inf/nan and is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            W = eye + Gk @ Hk
            WA = np.linalg.solve(W, Ak)
            WG = np.linalg.solve(W, Gk)
            H_next = Hk + Ak.T @ Hk @ WA
            G_next = Gk + Ak @ WG @ Ak.T
            Ak = Ak @ WA
            Hk = 0.5 * (H_next + H_next.T)
            Gk = 0.5 * (G_next + G_next.T)
            if not np.all(np.isfinite(Hk)):
                break
            step_change = np.max(np.abs(Hk - P))
            P = Hk
            if step_change <= 1e-14 * max(1.0, np.max(np.abs(P))) or np.max(np.abs(Ak)) < 1e-300:
                break
    if not np.all(np.isfinite(P)):
        raise NonConvergence("doubling iteration diverged")
    # polish: a few contraction sweeps remove the doubling round-off
    for _ in range(min(max_iter, 200)):
        if dare_residual(A, B, Q, R, P) <= tol:
            return _gain(A, B, R, P), P
        P = _riccati_map(A, B, Q, R, P)
    if dare_residual(A, B, Q, R, P) <= tol:
        return _gain(A, B, R, P), P
    raise NonConvergence(f"Riccati residual {dare_residual(A, B, Q, R, P):.3g} above tol {tol:g}")


def spectral_radius(T: np.ndarray) -> float:
    """Largest eigenvalue modulus."""
    T = np.asarray(T, dtype=float)
    return float(np.max(np.abs(np.linalg.eigvals(T)))) if T.size else 0.0


@dataclass(frozen=True, eq=False)
class ControllerFamily:
    """Linear state-feedback gains ``a = K s``, one picked per k-step segment."""

    gains: tuple
    interval_k: int
    qr_log: tuple = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        gains = []
        for K in self.gains:
            arr = np.array(K, dtype=float, copy=True)
            arr.setflags(write=False)
            gains.append(arr)
        if not gains:
            raise ValueError("a controller family needs at least one gain")
        shape = gains[0].shape
        if len(shape) != 2 or any(K.shape != shape for K in gains):
            raise ValueError("all gains must be matrices of the same shape")
        object.__setattr__(self, "gains", tuple(gains))
        object.__setattr__(self, "qr_log", tuple(dict(e) for e in self.qr_log))

    def __len__(self) -> int:
        return len(self.gains)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.gains[i]

    @property
    def shape(self) -> tuple[int, int]:
        return self.gains[0].shape

    def to_dict(self) -> dict:
        return {
            "gains": [K.tolist() for K in self.gains],
            "interval_k": self.interval_k,
            "qr_log": [dict(e) for e in self.qr_log],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ControllerFamily":
        return cls(tuple(d["gains"]), int(d["interval_k"]), tuple(d.get("qr_log", ())), d.get("seed"))


def save_family(family: ControllerFamily, path: str | Path) -> None:
    Path(path).write_text(json.dumps(family.to_dict(), indent=2))


def load_family(path: str | Path) -> ControllerFamily:
    return ControllerFamily.from_dict(json.loads(Path(path).read_text()))


def discretize(spec: SystemSpec, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
    A, B = spec.dynamics.matrices(t)
    return np.eye(spec.n) + spec.dt * A, spec.dt * B


def sample_family(
    spec: SystemSpec,
    count: int = 10,
    seed: int | Sequence[int] = 0,
    max_retries: int = 20,
    tol: float = 1e-9,
) -> ControllerFamily:
    """Draw ``count`` LQR gains with random diagonal weights.

    ``Q`` diagonals are uniform on (0, 20] and ``R`` diagonals on (0, 10].
    Each draw uses its own generator seeded by ``(*seed, draw, attempt)``,
    so a single gain can be reproduced from its ``qr_log`` entry.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    A_d, B_d = discretize(spec, 0)
    gains: list[np.ndarray] = []
    log: list[dict] = []
    for draw in range(count):
        for attempt in range(max_retries):
            draw_seed = [int(x) for x in np.atleast_1d(seed)] + [draw, attempt]
            rng = np.random.default_rng(draw_seed)
            q = Q_MAX * (1.0 - rng.random(spec.n))
            r = R_MAX * (1.0 - rng.random(spec.m))
            try:
                K, _ = riccati_gain(A_d, B_d, q, r, tol=tol)
            except (NonConvergence, np.linalg.LinAlgError):
                continue
            if spectral_radius(A_d + B_d @ K) < 1.0:
                gains.append(K)
                log.append({"q": q.tolist(), "r": r.tolist(), "seed": draw_seed})
                break
        else:
            raise NoStabilizingGain(f"no stabilizing gain found after {max_retries} draws")
    seed_out = int(seed) if np.ndim(seed) == 0 else [int(x) for x in seed]
    return ControllerFamily(tuple(gains), spec.interval_k, tuple(log), seed_out)


def gain_from_log(spec: SystemSpec, entry: Mapping, tol: float = 1e-9) -> np.ndarray:
    """Recompute one gain from its ``qr_log`` entry."""
    A_d, B_d = discretize(spec, 0)
    K, _ = riccati_gain(A_d, B_d, np.asarray(entry["q"]), np.asarray(entry["r"]), tol=tol)
    return K
