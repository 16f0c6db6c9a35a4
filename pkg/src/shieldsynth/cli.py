"""Command-line entry point: verify, simulate, bench, stack, recheck.

Exit codes: 0 verified / ok, 2 not verified, 1 error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .benchmarks import benchmark, registered_names
from .dynamics import SystemSpec, load_spec, save_spec
from .lqr import ControllerFamily, NoStabilizingGain, sample_family
from .search import recheck, synthesize
from .shield import ShieldConfig, run_shielded
from .sim import CONTROLLERS, RewardSpec, discounted_return, make_controller

log = logging.getLogger("shieldsynth")

EXIT_OK, EXIT_ERROR, EXIT_UNVERIFIED = 0, 1, 2
SEED_ENV = "SHIELDSYNTH_SEED"
REPORT_FIELDS = (
    "benchmark", "n", "m", "M", "k", "w_verified", "verified", "L_opt",
    "regenerations", "time_per_family", "total_time", "seed",
)
TIMING_FIELDS = ("time_per_family", "total_time")


@dataclass
class VerificationReport:
    benchmark: str
    n: int
    m: int
    M: int
    k: int
    w_verified: float
    verified: bool
    L_opt: float
    regenerations: int
    time_per_family: float
    total_time: float
    seed: int
    selector: tuple = ()
    timed_out: bool = False

    def row(self) -> dict:
        return {f: getattr(self, f) for f in REPORT_FIELDS}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selector"] = list(self.selector)
        return d


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def resolve_spec(ref: str) -> SystemSpec:
    """A JSON file path or a registered benchmark name."""
    if os.path.exists(ref):
        return load_spec(ref)
    try:
        return benchmark(ref)
    except KeyError:
        raise SystemExit(f"error: {ref!r} is neither a spec file nor a known benchmark") from None


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def verify(
    spec: SystemSpec,
    seed: int = 0,
    family_size: int = 10,
    budget: int | None = 100,
    regen_limit: int = 5,
    timeout_secs: float | None = 3600.0,
) -> tuple[VerificationReport, ControllerFamily | None, object]:
    """Sample a family, search it, regenerate until verified or out of tries."""
    if family_size < 1:
        raise ValueError("family size must be at least 1")
    start = time.perf_counter()
    best_family, best_result = None, None
    per_family = []
    regenerations = 0
    timed_out = False
    for r in range(regen_limit + 1):
        remaining = None if timeout_secs is None else timeout_secs - (time.perf_counter() - start)
        if remaining is not None and remaining <= 0:
            timed_out = True
            break
        t0 = time.perf_counter()
        family = sample_family(spec, family_size, seed=[seed, r])
        result = synthesize(spec, family, budget=budget, timeout_secs=remaining)
        per_family.append(time.perf_counter() - t0)
        regenerations = r
        log.info("%s family %d: L=%.3f verified=%s", spec.name, r, result.L_opt, result.verified)
        if best_result is None or result.L_opt > best_result.L_opt:
            best_family, best_result = family, result
        if result.verified:
            break
        if result.stats.timed_out:
            timed_out = True
            break
    total = time.perf_counter() - start
    report = VerificationReport(
        benchmark=spec.name, n=spec.n, m=spec.m, M=spec.horizon_M, k=spec.interval_k,
        w_verified=float(np.max(spec.noise_verified.hi)),
        verified=bool(best_result is not None and best_result.verified),
        L_opt=float(best_result.L_opt) if best_result is not None else 0.0,
        regenerations=regenerations,
        time_per_family=float(np.mean(per_family)) if per_family else 0.0,
        total_time=total, seed=seed,
        selector=tuple(best_result.phi_opt) if best_result is not None else (),
        timed_out=timed_out,
    )
    return report, best_family, best_result


def artifact_dict(spec: SystemSpec, family: ControllerFamily, result) -> dict:
    return {
        "spec": spec.to_dict(),
        "family": family.to_dict(),
        "selector": list(result.phi_opt),
        "L_opt": result.L_opt,
        "verified": result.verified,
    }


def load_artifact(path: str | Path) -> tuple[SystemSpec, ControllerFamily, tuple]:
    d = json.loads(Path(path).read_text())
    return SystemSpec.from_dict(d["spec"]), ControllerFamily.from_dict(d["family"]), tuple(d["selector"])


def _emit(data: list[dict], fields, fmt: str, path: Path | None) -> None:
    if fmt == "json":
        text = json.dumps(data if len(data) != 1 else data[0], indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(data)
        text = buf.getvalue()
    if path is None:
        sys.stdout.write(text)
    else:
        _atomic_write(path, text)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_verify(args) -> int:
    spec = resolve_spec(args.spec)
    seed = resolve_seed(args.seed)
    report, family, result = verify(spec, seed, args.family_size, args.budget, args.regen_limit, args.timeout_secs)
    out = Path(args.out) if args.out else None
    if out is not None and report.verified:
        _atomic_write(out / f"{spec.name}-artifact.json", json.dumps(artifact_dict(spec, family, result), indent=2))
    _emit([report.to_dict()], REPORT_FIELDS, args.format,
          None if out is None else out / f"{spec.name}-report.{args.format}")
    return EXIT_OK if report.verified else EXIT_UNVERIFIED


def cmd_simulate(args) -> int:
    if args.episodes < 1:
        raise ValueError("episodes must be positive")
    seed = resolve_seed(args.seed)
    if args.artifact:
        spec, family, selector = load_artifact(args.artifact)
    else:
        spec = resolve_spec(args.spec)
        report, family, result = verify(spec, seed, args.family_size, args.budget, args.regen_limit, args.timeout_secs)
        if not report.verified:
            print(f"error: {spec.name} did not verify; cannot build a shield", file=sys.stderr)
            return EXIT_UNVERIFIED
        selector = result.phi_opt
    cfg = ShieldConfig(family, selector, spec)
    ctrl = make_controller(args.controller, spec, family.gains, selector, seed=[seed, 1])
    run = run_shielded(cfg, ctrl, args.episodes, seed=[seed, 2], shielded=not args.unshielded,
                       log_episodes=args.log_episodes)
    summary = {"benchmark": spec.name, "controller": args.controller, "shielded": not args.unshielded,
               **run.summary()}
    if args.log_episodes and run.log:
        rs = RewardSpec.for_spec(spec)
        traj = np.array([r["state"] for r in run.log if r["episode"] == 0])
        summary["return_episode0"] = discounted_return(traj, rs)
    out = Path(args.out) if args.out else None
    if out is not None and args.log_episodes:
        run.write_log_csv(out / f"{spec.name}-{args.controller}-log.csv")
    _emit([summary], list(summary), args.format, None if out is None else out / f"{spec.name}-simulate.{args.format}")
    return EXIT_OK


def cmd_bench(args) -> int:
    seed = resolve_seed(args.seed)
    names = args.names or registered_names(include_scale=args.include_scale)
    rows = []
    all_ok = True
    for name in names:
        spec = resolve_spec(name)
        report, _, _ = verify(spec, seed, args.family_size, args.budget, args.regen_limit, args.timeout_secs)
        rows.append(report.row())
        all_ok &= report.verified
        log.info("%s verified=%s total=%.2fs", name, report.verified, report.total_time)
    out = Path(args.out) if args.out else None
    _emit(rows, REPORT_FIELDS, args.format, None if out is None else out / f"bench.{args.format}")
    return EXIT_OK if all_ok else EXIT_UNVERIFIED


def cmd_stack(args) -> int:
    if args.depth < 1:
        raise ValueError("depth must be at least 1")
    seed = resolve_seed(args.seed)
    name = args.base if args.depth == 1 else f"{args.depth}-{args.base}"
    try:
        spec = benchmark(name, perturb_seed=seed)
    except KeyError as exc:
        raise SystemExit(f"error: {exc.args[0]}") from None
    if args.out:
        path = Path(args.out)
        if path.suffix != ".json":
            path = path / f"{spec.name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_spec(spec, path)
    else:
        sys.stdout.write(json.dumps(spec.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_recheck(args) -> int:
    spec, family, selector = load_artifact(args.artifact)
    ok, total, _ = recheck(spec, family, selector)
    summary = {"benchmark": spec.name, "verified": ok, "L": total, "M": spec.horizon_M}
    _emit([summary], list(summary), args.format, None)
    return EXIT_OK if ok else EXIT_UNVERIFIED


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"master seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--family-size", type=int, default=10)
    p.add_argument("--budget", type=int, default=100, help="complete selectors examined per family")
    p.add_argument("--regen-limit", type=int, default=5, help="family regenerations after the first")
    p.add_argument("--timeout-secs", type=float, default=3600.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shieldsynth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="synthesise and certify a selector")
    p.add_argument("--spec", required=True, help="spec JSON path or benchmark name")
    _search_flags(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="run shielded episodes")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--artifact", help="artifact JSON written by verify")
    src.add_argument("--spec", help="spec JSON path or benchmark name (verifies first)")
    _search_flags(p)
    p.add_argument("--controller", choices=CONTROLLERS, default="random")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--unshielded", action="store_true", help="apply the controller without the shield")
    p.add_argument("--log-episodes", type=int, default=0, help="record decisions of the first N episodes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="verify the benchmark suite and write a results table")
    p.add_argument("names", nargs="*", help="benchmarks to run (default: base and stacked up to 8)")
    p.add_argument("--include-scale", action="store_true", help="also run 16- and 32-Helicopter")
    _search_flags(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stack", help="write a stacked system spec")
    p.add_argument("--base", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output file or directory")
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("recheck", help="recompute the certificate of a saved artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_recheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_ERROR
        raise
    except (ValueError, OSError, KeyError, NoStabilizingGain) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
