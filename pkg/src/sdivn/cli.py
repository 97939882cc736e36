"""Command-line entry point: ``run``, ``compare`` and ``plotdata``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime invariant
violation. Artifacts are written only after a run completes, so a failing
invocation leaves no partial output behind.
"""

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .engine import S, fmt_time
from .metrics import (IncomparableRuns, UndefinedAverage, aggregate, afcp, afcp_pct, fmt_fraction,
                      read_packets_csv, summary_csv)
from .netmodel import Failure, TopologyError, bundled_scenario, load_topology
from .scenario import (InvariantViolation, compare, run, write_artifacts, write_comparison)
from .traffic import ConfigError

log = logging.getLogger("sdivn")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2


class UsageError(Exception):
    pass


def parse_failure(text: str) -> Failure:
    """``LINKID@SECONDS`` -> Failure."""
    target, sep, at = text.rpartition("@")
    if not sep or not target:
        raise UsageError(f"--fail expects LINKID@SECONDS, got {text!r}")
    try:
        seconds = Fraction(at)
    except ValueError:
        raise UsageError(f"--fail time {at!r} is not a number") from None
    if seconds < 0:
        raise UsageError("--fail time must be non-negative")
    return Failure(target, round(seconds * S))


def resolve_topology(ref: str) -> Path:
    p = Path(ref)
    if p.exists():
        return p
    name = ref if ref.endswith(".json") else ref + ".json"
    bundled = bundled_scenario(Path(name).name)
    if bundled.exists():
        return bundled
    raise UsageError(f"topology file not found: {ref}")


def _duration(args):
    if args.duration is None:
        return None
    if args.duration <= 0:
        raise UsageError("--duration must be positive")
    return round(Fraction(str(args.duration)) * S)


def _failures(args):
    if args.no_fail:
        return []
    if args.fail:
        return [parse_failure(f) for f in args.fail]
    return None


def _load(args):
    topo = load_topology(resolve_topology(args.topology))
    return topo, dict(mode=args.mode, duration=_duration(args), failures=_failures(args), seed=args.seed)


def _print_rows(rows, out):
    cols = ["flow_id", "leg", "K", "ATT_ns", "ATTN_p_ns", "AFCP_p_ns", "AFCP_pct", "generated", "lost",
            "retransmissions", "duplicates", "freq_integrity", "truncated"]
    cols = [c for c in cols if any(c in r for r in rows)]
    table = [[c for c in cols]]
    for r in rows:
        table.append([fmt_fraction(r[c]) if isinstance(r.get(c), Fraction) else str(r.get(c, "")) for c in cols])
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    for row in table:
        print("  ".join(v.rjust(w) for v, w in zip(row, widths)), file=out)


def cmd_run(args) -> int:
    topo, kw = _load(args)
    result = run(topo, **kw)
    out = Path(args.out)
    write_artifacts(result, out)
    print(f"{result.mode} run of {topo.name or args.topology}: config_hash={result.config_hash} "
          f"({result.wall_time:.2f}s wall)")
    _print_rows(result.summary_rows(), sys.stdout)
    if result.storm is not None:
        outage = result.storm.outage
        dup = result.storm.first_duplicate_at
        print(f"storm: first duplicate at {'-' if dup is None else fmt_time(dup)}, "
              f"outage at {'-' if outage is None else fmt_time(outage)}")
    print(f"artifacts written to {out}")
    return EXIT_OK


def _leg_from_dir(d: Path):
    meta_path, packets_path = d / "run.json", d / "packets.csv"
    if not meta_path.exists() or not packets_path.exists():
        raise UsageError(f"{d} is not a completed run directory (run.json and packets.csv required)")
    return json.loads(meta_path.read_text()), read_packets_csv(packets_path.read_text())


def cmd_compare(args) -> int:
    if args.normal or args.failure:
        if not (args.normal and args.failure):
            raise UsageError("--normal and --failure must be given together")
        return _compare_dirs(Path(args.normal), Path(args.failure), args.out)
    if not args.topology:
        raise UsageError("compare needs --topology, or --normal and --failure run directories")
    topo, kw = _load(args)
    cmp = compare(topo, **kw)
    if args.out:
        write_comparison(cmp, Path(args.out))
    print(f"paired comparison: pair_key={cmp.failure.pair_key}")
    _print_rows(cmp.rows, sys.stdout)
    return EXIT_OK


def _compare_dirs(normal_dir: Path, failure_dir: Path, out) -> int:
    n_meta, n_recs = _leg_from_dir(normal_dir)
    f_meta, f_recs = _leg_from_dir(failure_dir)
    rows = []
    for flow in f_meta["flows"]:
        fid = flow["id"]
        n = aggregate(n_recs, fid)
        x = aggregate(f_recs, fid)
        cost = afcp(x.att, n.att, f_meta["pair_key"], n_meta["pair_key"])
        rows.append({"flow_id": fid, "leg": "paired", "K": x.k, "TT_d_ns": x.tt_d, "ATT_ns": x.att,
                     "ATTN_p_ns": n.att, "ATTF_p_ns": x.att, "AFCP_p_ns": cost,
                     "AFCP_pct": afcp_pct(cost, n.att), "config_hash": f_meta["pair_key"]})
    text = summary_csv(rows, f"pair_key={f_meta['pair_key']}")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "summary.csv").write_text(text)
    _print_rows(rows, sys.stdout)
    return EXIT_OK


def cmd_plotdata(args) -> int:
    run_dir = Path(args.run)
    meta, records = _leg_from_dir(run_dir)
    out = Path(args.out) if args.out else run_dir / "plot"
    series = {}
    for flow in meta["flows"]:
        fid = flow["id"]
        times = sorted(r.t_recv for r in records if r.flow_id == fid and not r.duplicate)
        cum = ["# t_s delivered"] + [f"{fmt_time(t)} {i}" for i, t in enumerate(times, 1)]
        gaps = ["# t_s gap_ms"] + [f"{fmt_time(b)} {fmt_fraction(Fraction(b - a, 10**6))}"
                                   for a, b in zip(times, times[1:])]
        series[f"{fid}_cumulative.dat"] = "\n".join(cum) + "\n"
        series[f"{fid}_interarrival.dat"] = "\n".join(gaps) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    for name, text in series.items():
        (out / name).write_text(text)
    print(f"wrote {len(series)} series to {out}")
    return EXIT_OK


def _common(p: argparse.ArgumentParser, topology_required=True):
    p.add_argument("--topology", required=topology_required,
                   help="topology document path, or the name of a bundled scenario")
    p.add_argument("--duration", type=float, help="run length in seconds (overrides the document)")
    p.add_argument("--fail", action="append", metavar="LINKID@SECONDS",
                   help="failure to inject; repeatable; replaces the document's schedule")
    p.add_argument("--no-fail", action="store_true", help="ignore the document's failure schedule")
    p.add_argument("--mode", choices=["sdivn", "livn"], help="override the document mode")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdivn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation and write its artifacts")
    _common(p)
    p.add_argument("--out", default="runs/latest", help="artifact directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="paired normal/failure comparison")
    _common(p, topology_required=False)
    p.add_argument("--normal", help="completed normal-leg run directory")
    p.add_argument("--failure", help="completed failure-leg run directory")
    p.add_argument("--out", help="directory for both legs and the paired summary")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plotdata", help="columnar time series from a run directory")
    p.add_argument("--run", required=True, help="completed run directory")
    p.add_argument("--out", help="output directory (default RUN/plot)")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (UsageError, TopologyError, ConfigError, IncomparableRuns, UndefinedAverage,
            FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
