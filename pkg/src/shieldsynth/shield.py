"""Runtime shield around a black-box controller.

The shield runs alongside a verified selector.  At each step it compares
the one-step region of the proposed action, inflated by the runtime noise
``w_hat``, with the region of the verified linear action inflated by the
verified noise ``w_hat'``:

a. proposed region inside the verified region: accept;
b. proposed region inside the initial box: accept and restart the
   verified schedule from its first segment;
c. otherwise: substitute the verified action.

Every accepted or substituted state stays inside the reachable set the
verification covered, so the safety certificate carries over.

Case (b) restarts the schedule, which is only valid when the dynamics do
not depend on time; for time-varying systems it is never taken.  A
region that fits only in the union of the two boxes is rejected.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import IntervalBox, SystemSpec
from .lqr import ControllerFamily
from .search import recheck
from .sim import Controller, NoiseSampler, _block_seeds, sample_box


class HorizonExceeded(IndexError):
    """The shield was asked about a step at or beyond the verified horizon."""


class NotVerified(ValueError):
    """The selector does not carry a complete certificate."""


class Case(str, enum.Enum):
    SAFE_REGION = "ContainedInSafeRegion"
    INIT = "ContainedInInit"
    INTERVENED = "Intervened"


@dataclass(frozen=True, eq=False)
class ShieldDecision:
    step: int
    proposed: np.ndarray
    chosen: np.ndarray
    intervened: bool
    case: Case


@dataclass(frozen=True, eq=False)
class ShieldConfig:
    family: ControllerFamily
    selector: tuple
    spec: SystemSpec
    decision_log: bool = False

    def __post_init__(self) -> None:
        spec = self.spec
        object.__setattr__(self, "selector", tuple(int(c) for c in self.selector))
        wr, wv = spec.noise_runtime, spec.noise_verified
        if not (np.all(wv.lo < wr.lo) and np.all(wr.hi < wv.hi)):
            raise ValueError("verified noise must strictly contain the runtime noise")
        if self.family.shape != (spec.m, spec.n):
            raise ValueError("family gains do not match the system")
        ok, _, _ = recheck(spec, self.family, self.selector)
        if not ok:
            raise NotVerified("selector is not verified for this system")

    @property
    def init_case_enabled(self) -> bool:
        return self.spec.time_invariant

    def gain(self, phase: int) -> np.ndarray:
        return self.family[self.selector[phase // self.spec.interval_k]]


def region_subset(center_a, noise_a: IntervalBox, center_b, noise_b: IntervalBox) -> bool:
    """``center_a + noise_a`` inside ``center_b + noise_b`` (closed boxes)."""
    a = np.asarray(center_a, dtype=float)
    b = np.asarray(center_b, dtype=float)
    return bool(np.all(a + noise_a.lo >= b + noise_b.lo) and np.all(a + noise_a.hi <= b + noise_b.hi))


def _decide(cfg: ShieldConfig, t: int, S: np.ndarray, A_nn: np.ndarray, time_step: int | None = None):
    """Vectorised core: chosen actions, case codes 0/1/2 and noise-free next states."""
    spec = cfg.spec
    A, B = spec.dynamics.matrices(t if time_step is None else time_step)
    K = cfg.gain(t)
    a_safe = S @ K.T
    drift = S + spec.dt * (S @ A.T)
    s_nn = drift + spec.dt * (A_nn @ B.T)
    s_safe = drift + spec.dt * (a_safe @ B.T)
    wr, wv = spec.noise_runtime, spec.noise_verified
    in_safe = np.all((s_nn + wr.lo >= s_safe + wv.lo) & (s_nn + wr.hi <= s_safe + wv.hi), axis=1)
    cases = np.where(in_safe, 0, 2)
    if cfg.init_case_enabled:
        init = spec.init_box
        in_init = np.all((s_nn + wr.lo >= init.lo) & (s_nn + wr.hi <= init.hi), axis=1)
        cases = np.where(~in_safe & in_init, 1, cases)
    intervene = (cases == 2)[:, None]
    return np.where(intervene, a_safe, A_nn), cases, np.where(intervene, s_safe, s_nn)


_CASES = (Case.SAFE_REGION, Case.INIT, Case.INTERVENED)


def shield_action(cfg: ShieldConfig, t: int, s_t, a_nn) -> tuple[np.ndarray, ShieldDecision]:
    """Decide one step.  ``t`` is the position in the verified schedule."""
    if not 0 <= t < cfg.spec.horizon_M:
        raise HorizonExceeded(f"step {t} outside the verified horizon {cfg.spec.horizon_M}")
    s = np.asarray(s_t, dtype=float).reshape(1, -1)
    a = np.asarray(a_nn, dtype=float).reshape(1, -1)
    if not np.all(np.isfinite(s)):
        raise ValueError("state must be finite")
    chosen, cases, _ = _decide(cfg, t, s, a)
    case = _CASES[int(cases[0])]
    return chosen[0], ShieldDecision(t, a[0].copy(), chosen[0].copy(), case is Case.INTERVENED, case)


@dataclass
class ShieldRun:
    episodes: int
    violating_episodes: int = 0
    violating_states: int = 0
    interventions: int = 0
    case_counts: dict = field(default_factory=lambda: {c.value: 0 for c in Case})
    log: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "episodes": self.episodes,
            "violating_episodes": self.violating_episodes,
            "violating_states": self.violating_states,
            "interventions": self.interventions,
            "cases": dict(self.case_counts),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)

    def write_log_csv(self, path: str | Path) -> None:
        if not self.log:
            raise ValueError("no decisions were logged")
        n = len(self.log[0]["state"])
        m = len(self.log[0]["a_nn"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "t"] + [f"s_{i}" for i in range(n)] + [f"a_nn_{i}" for i in range(m)]
                       + [f"chosen_{i}" for i in range(m)] + ["intervened", "case"])
            for row in self.log:
                w.writerow([row["episode"], row["t"], *map(repr, row["state"]), *map(repr, row["a_nn"]),
                            *map(repr, row["chosen"]), int(row["case"] == Case.INTERVENED.value), row["case"]])


def run_shielded(
    cfg: ShieldConfig,
    controller: Controller,
    episodes: int,
    seed=0,
    shielded: bool = True,
    log_episodes: int = 0,
    batch: int = 10000,
) -> ShieldRun:
    """Simulate ``episodes`` runs of ``M`` steps with runtime noise.

    With ``shielded=False`` the controller's actions are applied directly,
    which gives the unprotected baseline.  Decisions of the first
    ``log_episodes`` episodes are recorded.
    """
    if episodes < 1:
        raise ValueError("episodes must be positive")
    spec = cfg.spec
    M, k = spec.horizon_M, spec.interval_k
    lo, hi = spec.safe_box.lo, spec.safe_box.hi
    run = ShieldRun(episodes)
    offset = 0
    for size, rng in _block_seeds(seed, episodes, batch):
        S = sample_box(spec.init_box, size, rng)
        sampler = NoiseSampler(spec.noise_dist, spec.noise_runtime, rng)
        phase = np.zeros(size, dtype=int)
        bad = np.zeros(size, dtype=bool)
        for t in range(M):
            proposed = np.asarray(controller(t, S), dtype=float)
            if shielded:
                chosen = np.empty_like(proposed)
                cases = np.empty(size, dtype=int)
                nxt = np.empty_like(S)
                for seg in np.unique(phase // k):
                    idx = np.nonzero(phase // k == seg)[0]
                    # any phase inside the segment selects the same gain
                    c, cs, nx = _decide(cfg, int(seg * k), S[idx], proposed[idx], time_step=t)
                    chosen[idx] = c
                    cases[idx] = cs
                    nxt[idx] = nx
                for code, case in enumerate(_CASES):
                    run.case_counts[case.value] += int(np.count_nonzero(cases == code))
                run.interventions += int(np.count_nonzero(cases == 2))
                phase = np.where(cases == 1, 0, phase + 1)
            else:
                chosen = proposed
                cases = np.full(size, -1)
                A, B = spec.dynamics.matrices(t)
                nxt = S + spec.dt * (S @ A.T + chosen @ B.T)
            if offset < log_episodes:
                for e in range(min(size, log_episodes - offset)):
                    run.log.append({
                        "episode": offset + e, "t": t, "state": S[e].tolist(), "a_nn": proposed[e].tolist(),
                        "chosen": chosen[e].tolist(),
                        "case": _CASES[cases[e]].value if cases[e] >= 0 else "Unshielded",
                    })
            S = nxt + sampler.sample(size)
            out = ~np.all((S >= lo) & (S <= hi), axis=1)
            run.violating_states += int(np.count_nonzero(out))
            bad |= out
        run.violating_episodes += int(np.count_nonzero(bad))
        offset += size
    return run
