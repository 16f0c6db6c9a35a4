"""Depth-first selector synthesis with three pruning rules.

A selector picks one gain of the family for every ``k``-step segment.  The
search walks the selector tree depth first with indices ascending, keeps
the best cumulative bound ``L_opt`` seen on a complete selector, and
returns as soon as one selector is exact at every step.

Pruning:

1. *bound*: drop a prefix whose lost probability ``m - L`` already
   exceeds what the incumbent lost, ``M - L_opt``.
2. *dominance*: boundary boxes are stored per boundary step across all
   prefixes; a prefix whose box strictly contains a stored box that was
   reached with at least the same bound is dropped.
3. *invariant*: for time-invariant dynamics, when the current boundary box
   sits inside an earlier boundary box of the same prefix and everything
   so far was exact, the controllers between the two boundaries are
   replayed once from the earlier box.  If every box on the way is safe
   and the replay lands back inside, repeating that period is safe
   forever, which closes the search.

Whatever selector is returned, its per-step bounds are recomputed from
scratch before the result is built.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import SystemSpec
from .lqr import ControllerFamily
from .reach import (
    Boundary,
    SafetyBound,
    box_subset,
    evaluate_segment,
    evaluate_selector,
    initial_boundary,
    segment_lengths,
)

ALL_STRATEGIES = (1, 2, 3)


def selector_count(family_size: int, M: int, k: int) -> int:
    if family_size < 1 or M < 1 or k < 1:
        raise ValueError("family size, horizon and interval must be positive")
    return family_size ** math.ceil(M / k)


@dataclass
class SearchStats:
    nodes_expanded: int = 0
    selectors_evaluated: int = 0
    prunes: dict = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    invariant_checks: int = 0
    budget_exhausted: bool = False
    timed_out: bool = False

    def to_dict(self) -> dict:
        return {
            "nodes_expanded": self.nodes_expanded,
            "selectors_evaluated": self.selectors_evaluated,
            "prunes": {str(k): v for k, v in self.prunes.items()},
            "invariant_checks": self.invariant_checks,
            "budget_exhausted": self.budget_exhausted,
            "timed_out": self.timed_out,
        }


@dataclass(frozen=True, eq=False)
class SearchResult:
    phi_opt: tuple
    L_opt: float
    verified: bool
    per_step: tuple
    stats: SearchStats
    certified_by_invariant: bool = False

    def to_dict(self, trace: bool = True) -> dict:
        d = {
            "selector": list(self.phi_opt),
            "L_opt": self.L_opt,
            "verified": self.verified,
            "certified_by_invariant": self.certified_by_invariant,
            "stats": self.stats.to_dict(),
        }
        if trace:
            d["per_step"] = [
                {"t": b.step, "p_hat": b.p_hat, "u_f": b.u_f, "overlap_upper": b.overlap_upper, "exact": b.exact}
                for b in self.per_step
            ]
        return d

    def to_json(self, trace: bool = True) -> str:
        return json.dumps(self.to_dict(trace), indent=2)


class _Done(Exception):
    pass


@dataclass
class _Entry:
    box: object
    L: float
    prefix: tuple


def recheck(spec: SystemSpec, family: ControllerFamily | Sequence[np.ndarray], choices: Sequence[int]) -> tuple[bool, float, list[SafetyBound]]:
    """Recompute a selector's bounds without any search state."""
    gains = family.gains if isinstance(family, ControllerFamily) else tuple(family)
    if any(not 0 <= c < len(gains) for c in choices):
        raise ValueError("selector index outside the family")
    bounds = evaluate_selector(spec, gains, list(choices))
    return all(b.exact for b in bounds), float(sum(b.p_hat for b in bounds)), bounds


def check_invariant(
    spec: SystemSpec,
    gains: Sequence[np.ndarray],
    choices: Sequence[int],
    boundaries: Sequence[Boundary],
) -> tuple | None:
    """Look for a period of ``choices`` that maps a boundary box into itself.

    ``boundaries[i]`` is the box at step ``i * k`` reached by ``choices``
    (``boundaries[0]`` is the initial box), all of them exact so far.
    Returns the full-length selector built from the prefix and the
    repeated period, or ``None``.
    """
    if not spec.time_invariant:
        return None
    k = spec.interval_k
    cur = boundaries[-1]
    depth = len(boundaries) - 1
    if cur.step >= spec.horizon_M or depth < 1:
        return None
    for start in range(depth - 1, -1, -1):
        anchor = boundaries[start]
        if not box_subset(cur.box, anchor.box):
            continue
        period = list(choices[start:depth])
        b = Boundary(anchor.step, anchor.box)
        closed = True
        for c in period:
            bounds, b = evaluate_segment(spec, gains[c], b, k, keep_boxes=False)
            if not all(x.exact for x in bounds):
                closed = False
                break
        if not closed or not box_subset(b.box, anchor.box):
            continue
        full = list(choices[:depth])
        while len(full) < spec.segments:
            full.append(period[(len(full) - start) % len(period)])
        return tuple(full)
    return None


def synthesize(
    spec: SystemSpec,
    family: ControllerFamily | Sequence[np.ndarray],
    budget: int | None = 100,
    strategies: Sequence[int] = ALL_STRATEGIES,
    timeout_secs: float | None = None,
) -> SearchResult:
    """Search the selector tree for the largest cumulative bound.

    ``budget`` caps the number of complete selectors evaluated (``None``
    for no cap); ``timeout_secs`` caps wall-clock time.  Both end the
    search early with the best selector found so far.
    """
    gains = family.gains if isinstance(family, ControllerFamily) else tuple(np.asarray(K, float) for K in family)
    if not gains:
        raise ValueError("empty controller family")
    if gains[0].shape != (spec.m, spec.n):
        raise ValueError(f"gain shape {gains[0].shape} does not match system ({spec.m}, {spec.n})")
    strategies = set(strategies)
    if not strategies <= set(ALL_STRATEGIES):
        raise ValueError(f"unknown pruning strategies {sorted(strategies - set(ALL_STRATEGIES))}")

    M = spec.horizon_M
    lengths = segment_lengths(spec)
    depth_max = len(lengths)
    deadline = None if timeout_secs is None else time.monotonic() + timeout_secs
    stats = SearchStats()
    all_rsets: dict[int, list[_Entry]] = {}
    best: dict = {"L": -math.inf, "phi": None, "invariant": False}

    def finish(phi: tuple, invariant: bool) -> None:
        best.update(L=float(M), phi=phi, invariant=invariant)
        raise _Done

    def dominated(box, L: float, m: int, prefix: tuple) -> bool:
        entries = all_rsets.setdefault(m, [])
        for e in entries:
            if e.L >= L and box_subset(e.box, box) and not e.box.equals(box):
                return True
        keep = []
        equal = False
        for e in entries:
            if e.box.equals(box):
                equal = True
            if L >= e.L and box_subset(box, e.box) and not e.box.equals(box):
                continue
            keep.append(e)
        if not equal:
            keep.append(_Entry(box, L, prefix))
        all_rsets[m] = keep
        return False

    def visit(depth: int, prefix: tuple, bounds_so_far: list[Boundary], L: float, exact: bool) -> None:
        start = bounds_so_far[-1]
        for c in range(len(gains)):
            if deadline is not None and time.monotonic() > deadline:
                stats.timed_out = True
                raise _Done
            seg, nb = evaluate_segment(spec, gains[c], start, lengths[depth], keep_boxes=False)
            stats.nodes_expanded += 1
            L2 = L + sum(b.p_hat for b in seg)
            exact2 = exact and all(b.exact for b in seg)
            phi = prefix + (c,)
            m = nb.step
            if depth == depth_max - 1:
                stats.selectors_evaluated += 1
                if L2 > best["L"]:
                    best.update(L=L2, phi=phi, invariant=False)
                if exact2:
                    finish(phi, False)
                if budget is not None and stats.selectors_evaluated >= budget:
                    stats.budget_exhausted = True
                    raise _Done
                continue
            if 1 in strategies and best["phi"] is not None and m - L2 > M - best["L"]:
                stats.prunes[1] += 1
                continue
            if 3 in strategies and exact2 and spec.time_invariant:
                stats.invariant_checks += 1
                phi_inv = check_invariant(spec, gains, phi, bounds_so_far + [nb])
                if phi_inv is not None:
                    ok, _, _ = recheck(spec, gains, phi_inv)
                    if ok:
                        stats.prunes[3] += 1
                        finish(phi_inv, True)
            if 2 in strategies and dominated(nb.box, L2, m, phi):
                stats.prunes[2] += 1
                continue
            visit(depth + 1, phi, bounds_so_far + [nb], L2, exact2)

    try:
        visit(0, (), [initial_boundary(spec)], 0.0, True)
    except _Done:
        pass

    if best["phi"] is None:
        # nothing complete was reached (timeout on the first path)
        return SearchResult((), 0.0, False, (), stats)
    verified, total, per_step = recheck(spec, gains, best["phi"])
    return SearchResult(tuple(int(c) for c in best["phi"]), total, verified, tuple(per_step), stats,
                        best["invariant"] and verified)
