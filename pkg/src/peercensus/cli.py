"""Command line entry point: simulate, analyze, bootstrap, report."""

from __future__ import annotations

import argparse
import io
import json
import os
import random
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .analysis import SPLIT_READINGS, BoundParams, theorem_bound
from .blockchain import load_chain
from .simnet.bootstrap import BootstrapError, bootstrap_from_chain
from .simnet.config import ConfigError, ScenarioConfig, load_yaml
from .simnet.metrics import Metrics, read_csv
from .simnet.scenario import run_scenario
from .simnet.scripted import synthetic_chain

EXIT_OK, EXIT_IO, EXIT_CONFIG = 0, 1, 2


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_CONFIG):
        super().__init__(msg)
        self.code = code


def write_atomic(path: Path, data: str) -> None:
    """Write to a temporary sibling, then rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fp:
            fp.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _scenario(args) -> ScenarioConfig:
    if not args.config:
        raise CliError("--config is required")
    data = load_yaml(args.config)
    data.pop("bounds", None)
    data.pop("bootstrap", None)
    cfg = ScenarioConfig.from_dict(data.get("scenario", data))
    return cfg.with_overrides(seed=args.seed, duration=args.duration)


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    m = run_scenario(cfg)
    if args.out is None:
        sys.stdout.write(m.summary_json())
        return EXIT_OK
    out = Path(args.out)
    write_atomic(out / "metrics.csv", m.csv_text())
    write_atomic(out / "summary.json", m.summary_json())
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not args.config:
        raise CliError("--config is required")
    data = load_yaml(args.config)
    raw = data.get("bounds", data)
    if not isinstance(raw, dict):
        raise CliError("bounds section must be a mapping")
    raw = dict(raw)
    if args.split_reading:
        raw["split_reading"] = args.split_reading
    try:
        params = BoundParams.from_dict(raw)
    except (TypeError, ValueError, KeyError) as e:
        raise CliError(f"invalid bounds: {e}") from None
    report = theorem_bound(params)
    table = report.table()
    if args.out is None:
        sys.stdout.write(table)
        return EXIT_OK
    out = Path(args.out)
    write_atomic(out / "bound_report.json", _dumps(report.to_dict()))
    write_atomic(out / "bound_report.txt", table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    if not args.config:
        raise CliError("--config is required")
    data = load_yaml(args.config)
    spec = data.get("bootstrap", data)
    try:
        l_m, k, j = int(spec["l_m"]), int(spec["k"]), int(spec["j"])
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(f"bootstrap needs integer l_m, k and j: {e}") from None
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    if "chain" in spec:
        path = Path(args.config).parent / spec["chain"]
        try:
            with open(path) as fp:
                chain = load_chain(fp, int(spec.get("min_difficulty", 1)))
        except OSError as e:
            raise CliError(f"cannot read chain fixture {path}: {e.strerror}", EXIT_IO) from None
    else:
        chain, _ = synthetic_chain(int(spec.get("synthetic_length", l_m)), random.Random(seed),
                                   int(spec.get("min_difficulty", 1)))
    offline = {chain.block_at(h).peer for h in spec.get("offline_heights", []) or []}
    try:
        plan = bootstrap_from_chain(chain, l_m, k, j, online=lambda p: p not in offline)
    except BootstrapError as e:
        raise CliError(str(e)) from None
    rec = plan.to_record()
    rec["voter_count"] = len(plan.voters)
    rec["online_count"] = len(plan.online)
    text = _dumps(rec)
    if args.out is None:
        sys.stdout.write(text)
    else:
        write_atomic(Path(args.out) / "initial_state.json", text)
    return EXIT_OK


def merge_metrics(runs: Sequence[Metrics]) -> tuple[dict, str]:
    """Summary record plus a mean trace (CSV) over runs sampled on the same ticks."""
    summaries = [m.summary() for m in runs]
    violations = sum(1 for s in summaries if s["ever_insecure"])
    summary = {
        "runs": len(runs),
        "runs_with_violation": violations,
        "insecure_samples": sum(s["insecure_samples"] for s in summaries),
        "per_run": [{"seed": s.get("seed"), "ever_insecure": s["ever_insecure"],
                     "insecure_samples": s["insecure_samples"], "max_phi_I": s["max_phi_I"]} for s in summaries],
    }
    buf = io.StringIO()
    buf.write("tick,mean_phi_R,mean_phi_I,mean_phi_B,secure_fraction,runs\n")
    if runs:
        n = min(len(m.ticks) for m in runs)
        for i in range(n):
            ms = [m for m in runs if m.ticks[i] == runs[0].ticks[i]]

            def mean(xs):
                xs = [x for x in xs if x != float("inf")]
                return repr(round(sum(xs) / len(xs), 12)) if xs else "inf"

            buf.write(",".join([
                str(runs[0].ticks[i]),
                mean([m.phi_R[i] for m in ms]),
                mean([m.phi_I[i] for m in ms]),
                mean([m.phi_B[i] for m in ms]),
                repr(round(sum(m.secure[i] for m in ms) / len(ms), 12)),
                str(len(ms)),
            ]) + "\n")
    return summary, buf.getvalue()


def _read_run(path: Path) -> Metrics:
    csv_path = path / "metrics.csv" if path.is_dir() else path
    try:
        with open(csv_path, newline="") as fp:
            m = read_csv(fp)
    except OSError as e:
        raise CliError(f"cannot read {csv_path}: {e.strerror}", EXIT_IO) from None
    except (KeyError, ValueError) as e:
        raise CliError(f"{csv_path} is not a metrics file: {e}") from None
    summ = csv_path.parent / "summary.json"
    if summ.exists():
        try:
            m.info = {"seed": json.loads(summ.read_text()).get("seed")}
        except ValueError:
            pass
    return m


def cmd_report(args) -> int:
    if args.runs:
        runs = [_read_run(Path(p)) for p in args.runs]
    elif args.config:
        cfg = _scenario(args)
        base = cfg.seed
        seeds = [base + i for i in range(args.seeds)]
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            runs = list(pool.map(lambda s: run_scenario(cfg.with_overrides(seed=s)), seeds))
    else:
        raise CliError("report needs run directories or --config with --seeds")
    summary, trace = merge_metrics(runs)
    text = _dumps(summary)
    if args.out is None:
        sys.stdout.write(text)
        return EXIT_OK
    out = Path(args.out)
    write_atomic(out / "report.json", text)
    write_atomic(out / "mean_trace.csv", trace)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="peercensus", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--duration", type=int, help="override the configured duration (ticks)")
        sp.add_argument("--out", help="output directory; omitted means stdout")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads for batch runs")

    common(sub.add_parser("simulate", help="run one scenario and write metrics.csv and summary.json"))
    a = sub.add_parser("analyze", help="evaluate the failure bound and write bound_report.json")
    common(a)
    a.add_argument("--split-reading", choices=SPLIT_READINGS, help="how the margin split maps to the deviation bounds")
    common(sub.add_parser("bootstrap", help="derive the initial voter and online sets from a chain"))
    r = sub.add_parser("report", help="merge several runs into report.json and mean_trace.csv")
    common(r)
    r.add_argument("--seeds", type=int, default=10, help="batch mode: number of consecutive seeds")
    r.add_argument("runs", nargs="*", help="run directories or metrics.csv files")
    return p


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "bootstrap": cmd_bootstrap, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as e:
        print(f"peercensus {args.command}: {e}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"peercensus {args.command}: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"peercensus {args.command}: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
