"""Command-line entry point: ``simulate --config scenario.yaml --out results``."""
from __future__ import annotations

import argparse
import logging
import sys
import time

from .config import POLICY_NAMES, ConfigError, ScenarioConfig, load_config
from .harness import RunSpec, run_experiment
from .outputs import OutputError, write_outputs

log = logging.getLogger("crnsim")


def _capacities(text: str) -> list[float]:
    try:
        caps = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad capacity list {text!r}") from exc
    if not caps or any(c < 0 for c in caps):
        raise argparse.ArgumentTypeError("capacities must be a non-empty list of values >= 0")
    return caps


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simulate", description="Cognitive radar network update-scheduling simulator.")
    ap.add_argument("--config", help="scenario YAML file (defaults apply when omitted)")
    ap.add_argument("--policy", action="append", choices=POLICY_NAMES, help="policy to run; repeat for several (default: all)")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--reps", type=int, help="number of replications")
    ap.add_argument("--steps", type=int, help="steps per replication")
    ap.add_argument("--capacity", type=float, help="mean number of node updates per step")
    ap.add_argument("--out", default="results", help="output directory (default: %(default)s)")
    ap.add_argument("--workers", type=int, help="worker processes for replications")
    ap.add_argument("--sweep-capacity", type=_capacities, metavar="C1,C2,...", help="run every policy at each capacity")
    ap.add_argument("--emit-plots", action="store_true", help="also render SVG charts")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    if args.reps is not None:
        changes["replications"] = args.reps
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.capacity is not None:
        changes["capacity"] = args.capacity
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.policy:
        changes["policies"] = tuple(dict.fromkeys(args.policy))
    return cfg.with_overrides(**changes) if changes else cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return 2
    caps = args.sweep_capacity or [cfg.capacity]
    specs = [RunSpec(p, c) for c in caps for p in cfg.policies]
    start = time.perf_counter()

    def progress(done: int, total: int) -> None:
        log.info("replication %d/%d (%.1f s)", done, total, time.perf_counter() - start)

    exp = run_experiment(cfg, specs, progress=progress)
    try:
        summaries = write_outputs(exp, args.out, emit_plots=args.emit_plots)
    except OutputError as exc:
        print(f"simulate: {exc}", file=sys.stderr)
        return 1
    for group, summary in summaries.items():
        for p in cfg.policies:
            s = summary[p]
            print(
                f"{group:<8} {p:<17} capacity {s['mean_capacity']:.3f}  median error {_m(s['median_error_m'])} m  "
                f"P(err<=100m) {_m(s['p_err_le_100m'], 3)}  PAoI {_m(s['paoi'], 2)}  mean age {_m(s['mean_age'], 2)}"
            )
    print(f"wrote {args.out} in {time.perf_counter() - start:.1f} s")
    return 0


def _m(x, nd: int = 1) -> str:
    return "n/a" if x is None else f"{x:.{nd}f}"


if __name__ == "__main__":
    sys.exit(main())
