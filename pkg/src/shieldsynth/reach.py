"""Reachable sets of closed-loop stochastic linear systems and safety bounds.

With ``T_i = I + dt (A_i + B_i K_i)`` the state after ``t`` steps is::

    s_t = T_s s_0 + sum_{i<t} P_i w_i,
    T_s = T_{t-1} ... T_0,   P_i = T_{t-1} ... T_{i+1}

where ``s_0`` is uniform on the initial box and each ``w_i`` is drawn
independently from the noise box.  ``T_w = sum_i P_i`` is what you get if
a single noise vector is replayed at every step; it is tracked because it
gives the centre of the noise term, but its interval image is *not* an
enclosure for independent noise (``T = -1`` makes ``T_w = 0`` at ``t = 2``
while ``s_2 = -w_0 + w_1`` still spreads).  The enclosures below therefore
sum the interval image of every ``P_i`` separately.

Two evaluation paths exist:

* :class:`ReachSetTuple` keeps every ``P_i`` and is exact up to the final
  boxing step.  Memory grows with ``t``; it is meant for analysis and tests.
* :func:`evaluate_segment` is what the selector search uses.  At every
  segment boundary it restarts from the boxed reachable set, which makes
  the per-step boxes depend only on the boundary box and the suffix of
  controllers, and keeps the cost at one or two matrix products per step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import IntervalBox, NoiseDist, SystemSpec, closed_loop_matrix
from .linalg import determinant, slogdet

# |det| at or below this counts as singular
LOG_DET_FLOOR = math.log(1e-300)
# largest p_hat reported for a box that is not inside the safe set
P_HAT_INEXACT_MAX = 1.0 - 2.0 ** -40

__all__ = [
    "Boundary",
    "ReachSetTuple",
    "SafetyBound",
    "box_subset",
    "density_upper_bound",
    "determinant",
    "evaluate_segment",
    "evaluate_selector",
    "initial_boundary",
    "interval_map",
    "minkowski_sum",
    "over_approx",
    "over_approx_shared_noise",
    "overlap_volume_upper",
    "propagate",
    "safety_lower_bound",
    "write_trace_csv",
]


# --------------------------------------------------------------------------
# boxes
# --------------------------------------------------------------------------


def box_subset(a: IntervalBox, b: IntervalBox) -> bool:
    """True iff ``a`` lies inside ``b`` (closed boxes)."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return bool(np.all(b.lo <= a.lo) and np.all(a.hi <= b.hi))


def minkowski_sum(a: IntervalBox, b: IntervalBox) -> IntervalBox:
    return IntervalBox(a.lo + b.lo, a.hi + b.hi)


def _imap(T: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Tp = np.maximum(T, 0.0)
    Tn = np.minimum(T, 0.0)
    return Tp @ lo + Tn @ hi, Tp @ hi + Tn @ lo


def interval_map(T: np.ndarray, box: IntervalBox) -> IntervalBox:
    """Tightest box around ``{T x : x in box}`` via the sign split of ``T``."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[1] != box.dim:
        raise ValueError(f"matrix shape {T.shape} incompatible with box dimension {box.dim}")
    lo, hi = _imap(T, box.lo, box.hi)
    return IntervalBox(lo, hi)


def _log_overlap(lo: np.ndarray, hi: np.ndarray, safe: IntervalBox) -> float:
    """log of ``prod(b1) - prod(b2)``; ``-inf`` when the difference is 0."""
    b1 = hi - lo
    if np.any(b1 <= 0.0):
        return -math.inf
    b2 = np.clip(hi, safe.lo, safe.hi) - np.clip(lo, safe.lo, safe.hi)
    log_b1 = float(np.sum(np.log(b1)))
    if np.any(b2 <= 0.0):
        return log_b1
    log_ratio = float(np.sum(np.log(b2) - np.log(b1)))
    if log_ratio >= 0.0:
        return -math.inf
    return log_b1 + math.log(-math.expm1(log_ratio))


def overlap_volume_upper(box: IntervalBox, safe: IntervalBox) -> float:
    """``prod(b1) - prod(b2)``: volume of the part of ``box`` outside ``safe``.

    ``b1`` are the box widths and ``b2`` the widths after clipping both
    bounds into the safe box.  Computed in log space; may overflow to inf
    for very large boxes in high dimension.
    """
    if box.dim != safe.dim:
        raise ValueError(f"dimension mismatch: {box.dim} vs {safe.dim}")
    lv = _log_overlap(box.lo, box.hi, safe)
    return 0.0 if lv == -math.inf else _exp(lv)


def _exp(x: float) -> float:
    return math.inf if x > 709.0 else math.exp(x)


# --------------------------------------------------------------------------
# symbolic reachable-set tuple
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReachSetTuple:
    """``(T_s, T_w, init_box, noise_box)`` at step ``step_t``.

    ``noise_maps`` lists the map ``P_i`` applied to every noise sample
    injected so far, oldest first; ``T_w`` equals their sum.
    """

    T_s: np.ndarray
    T_w: np.ndarray
    init_box: IntervalBox
    noise_box: IntervalBox
    step_t: int
    noise_maps: tuple = ()

    @classmethod
    def initial(cls, init_box: IntervalBox, noise_box: IntervalBox) -> "ReachSetTuple":
        n = init_box.dim
        if noise_box.dim != n:
            raise ValueError("noise and initial boxes differ in dimension")
        return cls(np.eye(n), np.zeros((n, n)), init_box, noise_box, 0, ())


def propagate(prev: ReachSetTuple, T_t: np.ndarray) -> ReachSetTuple:
    """Advance one step: ``T_s <- T T_s``, ``T_w <- T T_w + I``."""
    T = np.asarray(T_t, dtype=float)
    n = prev.T_s.shape[0]
    if T.shape != (n, n):
        raise ValueError(f"step matrix shape {T.shape} != {(n, n)}")
    eye = np.eye(n)
    maps = tuple(T @ P for P in prev.noise_maps) + (eye,)
    return ReachSetTuple(T @ prev.T_s, T @ prev.T_w + eye, prev.init_box, prev.noise_box,
                         prev.step_t + 1, maps)


def over_approx(rs: ReachSetTuple) -> IntervalBox:
    """Box enclosing every state reachable at ``rs.step_t``."""
    lo, hi = _imap(rs.T_s, rs.init_box.lo, rs.init_box.hi)
    for P in rs.noise_maps:
        nlo, nhi = _imap(P, rs.noise_box.lo, rs.noise_box.hi)
        lo = lo + nlo
        hi = hi + nhi
    return IntervalBox(lo, hi)


def over_approx_shared_noise(rs: ReachSetTuple) -> IntervalBox:
    """``A(T_s x init) + A(T_w x noise)``.

    Encloses the reachable set only when one noise vector is replayed at
    every step.  Kept for comparison; never used for safety decisions.
    """
    return minkowski_sum(interval_map(rs.T_s, rs.init_box), interval_map(rs.T_w, rs.noise_box))


def _log_volume(box: IntervalBox) -> float:
    w = box.width
    return -math.inf if np.any(w <= 0.0) else float(np.sum(np.log(w)))


def _log_density_bound(dist: NoiseDist, log_det_s: float, noise_log_det: float,
                       log_vol_init: float, log_vol_noise: float) -> float:
    """log of the density bound; ``+inf`` if no branch applies."""
    branches = [math.inf]
    if log_det_s > LOG_DET_FLOOR:
        branches.append(-(log_det_s + log_vol_init))
    if dist is NoiseDist.UNIFORM and noise_log_det > LOG_DET_FLOOR:
        branches.append(-(noise_log_det + log_vol_noise))
    return min(branches)


def density_upper_bound(rs: ReachSetTuple, dist: NoiseDist | str) -> float:
    """Upper bound on the density of ``s_t``.

    The initial state enters as ``T_s s_0`` with ``s_0`` uniform, which
    bounds the density by ``1 / (|det T_s| prod(init widths))``.  For
    uniform noise each independent term ``P_i w_i`` gives
    ``1 / (|det P_i| prod(noise widths))`` as well, and adding independent
    terms never raises the peak density, so the minimum over all of them
    holds.  A singular map drops out of the minimum.
    """
    dist = NoiseDist(dist)
    if np.any(rs.init_box.width <= 0.0):
        raise ValueError("initial box has zero width in some dimension")
    sign, log_det_s = slogdet(rs.T_s)
    if sign == 0.0:
        log_det_s = -math.inf
    noise_log_det = -math.inf
    log_vol_noise = -math.inf
    if dist is NoiseDist.UNIFORM and rs.noise_maps:
        if np.any(rs.noise_box.width <= 0.0):
            raise ValueError("uniform noise box has zero width in some dimension")
        log_vol_noise = _log_volume(rs.noise_box)
        for P in rs.noise_maps:
            s, ld = slogdet(P)
            if s != 0.0:
                noise_log_det = max(noise_log_det, ld)
    return _exp(_log_density_bound(dist, log_det_s, noise_log_det,
                                   _log_volume(rs.init_box), log_vol_noise))


@dataclass(frozen=True, eq=False)
class SafetyBound:
    """Lower bound on the probability that the state at ``step`` is safe."""

    step: int
    p_hat: float
    u_f: float
    overlap_upper: float
    exact: bool
    box: IntervalBox | None = None


def _bound_from_box(step: int, lo: np.ndarray, hi: np.ndarray, safe: IntervalBox,
                    log_uf: float, keep_box: bool = True) -> SafetyBound:
    box = IntervalBox(lo, hi) if keep_box else None
    u_f = _exp(log_uf)
    if np.all(safe.lo <= lo) and np.all(hi <= safe.hi):
        return SafetyBound(step, 1.0, u_f, 0.0, True, box)
    log_ov = _log_overlap(lo, hi, safe)
    overlap = 0.0 if log_ov == -math.inf else _exp(log_ov)
    if log_ov == -math.inf:
        p = 1.0
    elif log_uf == math.inf:
        p = 0.0
    else:
        p = min(1.0, max(0.0, 1.0 - _exp(log_uf + log_ov)))
    # a step whose box leaves the safe set never counts as fully safe, so a
    # cumulative bound of exactly M always means every box was contained
    return SafetyBound(step, min(p, P_HAT_INEXACT_MAX), u_f, overlap, False, box)


def safety_lower_bound(rs: ReachSetTuple, safe: IntervalBox, dist: NoiseDist | str) -> SafetyBound:
    box = over_approx(rs)
    u_f = density_upper_bound(rs, dist)
    log_uf = math.inf if u_f == math.inf else (math.log(u_f) if u_f > 0 else -math.inf)
    return _bound_from_box(rs.step_t, box.lo, box.hi, safe, log_uf)


# --------------------------------------------------------------------------
# segment evaluation (search path)
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Boundary:
    """Reachability summary at a segment boundary.

    ``box`` encloses the reachable set at ``step``; ``log_det_s`` is
    ``log|det T_s|`` and ``noise_log_det`` the largest ``log|det P_i|``
    over the noise injected so far (``-inf`` before any).
    """

    step: int
    box: IntervalBox
    log_det_s: float = 0.0
    noise_log_det: float = -math.inf


def initial_boundary(spec: SystemSpec) -> Boundary:
    return Boundary(0, spec.init_box, 0.0, -math.inf)


def _logabsdet(T: np.ndarray) -> float:
    sign, ld = slogdet(T)
    return -math.inf if sign == 0.0 else ld


def evaluate_segment(
    spec: SystemSpec,
    K: np.ndarray,
    start: Boundary,
    length: int,
    keep_boxes: bool = True,
) -> tuple[list[SafetyBound], Boundary]:
    """Run gain ``K`` for ``length`` steps from ``start``.

    Returns one :class:`SafetyBound` per reached step
    (``start.step + 1 .. start.step + length``) and the boundary after the
    last one.  Uses the verified noise box.
    """
    n = spec.n
    if length < 1:
        raise ValueError("segment length must be positive")
    if start.step + length > spec.horizon_M:
        raise ValueError("segment runs past the horizon")
    safe = spec.safe_box
    noise = spec.noise_verified
    log_vol_init = _log_volume(spec.init_box)
    log_vol_noise = _log_volume(noise)
    b_lo, b_hi = start.box.lo, start.box.hi
    log_det_s = start.log_det_s
    noise_ld = start.noise_log_det

    bounds: list[SafetyBound] = []
    phi = np.eye(n)
    nlo = np.zeros(n)
    nhi = np.zeros(n)
    lo = hi = None
    if spec.time_invariant:
        T = closed_loop_matrix(spec, start.step, K)
        ell = _logabsdet(T)
        for j in range(1, length + 1):
            # noise injected j-1 steps ago has been mapped by phi = T^(j-1)
            dlo, dhi = _imap(phi, noise.lo, noise.hi)
            nlo = nlo + dlo
            nhi = nhi + dhi
            phi = T @ phi
            ilo, ihi = _imap(phi, b_lo, b_hi)
            lo, hi = ilo + nlo, ihi + nhi
            log_det_s += ell
            noise_ld = max(0.0, noise_ld + ell)
            log_uf = _log_density_bound(spec.noise_dist, log_det_s, noise_ld, log_vol_init, log_vol_noise)
            bounds.append(_bound_from_box(start.step + j, lo, hi, safe, log_uf, keep_boxes))
    else:
        maps = np.empty((0, n, n))
        for j in range(1, length + 1):
            t = start.step + j - 1
            T = closed_loop_matrix(spec, t, K)
            ell = _logabsdet(T)
            maps = np.concatenate([T[None] @ maps, np.eye(n)[None]], axis=0) if len(maps) else np.eye(n)[None]
            Tp = np.maximum(maps, 0.0)
            Tn = np.minimum(maps, 0.0)
            nlo = (Tp @ noise.lo + Tn @ noise.hi).sum(axis=0)
            nhi = (Tp @ noise.hi + Tn @ noise.lo).sum(axis=0)
            phi = T @ phi
            ilo, ihi = _imap(phi, b_lo, b_hi)
            lo, hi = ilo + nlo, ihi + nhi
            log_det_s += ell
            noise_ld = max(0.0, noise_ld + ell)
            log_uf = _log_density_bound(spec.noise_dist, log_det_s, noise_ld, log_vol_init, log_vol_noise)
            bounds.append(_bound_from_box(t + 1, lo, hi, safe, log_uf, keep_boxes))
    end = Boundary(start.step + length, IntervalBox(lo, hi), log_det_s, noise_ld)
    return bounds, end


def segment_lengths(spec: SystemSpec) -> list[int]:
    k, M = spec.interval_k, spec.horizon_M
    return [min(k, M - i * k) for i in range(spec.segments)]


def evaluate_selector(
    spec: SystemSpec,
    gains: Sequence[np.ndarray],
    choices: Sequence[int],
    keep_boxes: bool = True,
) -> list[SafetyBound]:
    """Per-step bounds for steps ``1..M`` of a complete selector, from scratch."""
    if len(choices) != spec.segments:
        raise ValueError(f"selector has {len(choices)} entries, expected {spec.segments}")
    bounds: list[SafetyBound] = []
    b = initial_boundary(spec)
    for c, length in zip(choices, segment_lengths(spec)):
        seg, b = evaluate_segment(spec, gains[c], b, length, keep_boxes)
        bounds.extend(seg)
    return bounds


def write_trace_csv(bounds: Iterable[SafetyBound], path: str | Path) -> None:
    """One row per step: t, p_hat, u_f, overlap_upper, exact, lo_*, hi_*."""
    bounds = list(bounds)
    n = bounds[0].box.dim if bounds and bounds[0].box is not None else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p_hat", "u_f", "overlap_upper", "exact"]
                   + [f"lo_{i}" for i in range(n)] + [f"hi_{i}" for i in range(n)])
        for b in bounds:
            row = [b.step, repr(float(b.p_hat)), repr(float(b.u_f)), repr(float(b.overlap_upper)), int(b.exact)]
            if b.box is not None:
                row += [repr(float(v)) for v in b.box.lo] + [repr(float(v)) for v in b.box.hi]
            w.writerow(row)
