"""Command line entry point.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (MissingCellError, ResultTable, ScenarioError, StepTrace, load_scenario,
                      run_matrix, summarize)
from .netgraph import NetworkError, generate_city, generate_grid
from .report import emit_report, text_table

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("macosim")


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out or scenario.output)
    out.mkdir(parents=True, exist_ok=True)
    trace_factory = None
    if args.trace:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)

        def trace_factory(alg, ex, count, seed):
            stem = f"{alg}_{ex}_{count}_{seed}"
            return StepTrace(tdir / f"{stem}_states.csv", tdir / f"{stem}_signals.csv")

    def progress(row):
        log.info("%s/%s n=%d seed=%d travel=%s", row.algorithm, row.executor, row.vehicle_count,
                 row.seed, row.mean_travel_s)

    table = run_matrix(scenario, workers=args.workers, trace_factory=trace_factory, progress=progress)
    table.to_csv(out / "results.csv")
    emit_report(table, out)
    if table.failures:
        (out / "failures.log").write_text("\n".join(table.failures) + "\n")
    sys.stdout.write(text_table(table))
    if not table.rows:
        log.error("every cell failed; see %s", out / "failures.log")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    table = ResultTable.from_csv(args.results)
    pct = summarize(table, args.baseline, args.target, args.count)
    print(f"{args.target} vs {args.baseline} at {args.count} vehicles: {pct:.2f}% reduction")
    return EXIT_OK


def cmd_gen_network(args: argparse.Namespace) -> int:
    if args.kind == "grid":
        net = generate_grid(args.rows, args.cols, args.edge_length, args.lanes,
                            args.signalized_interior, args.seed or 0)
    elif args.seed is None:
        net = generate_city()
    else:
        net = generate_city(seed=args.seed)
    text = net.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def cmd_import_results(args: argparse.Namespace) -> int:
    table = ResultTable.from_csv(args.csv)
    emit_report(table, args.out)
    sys.stdout.write(text_table(table))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macosim", description="Traffic routing and signal control simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario matrix")
    r.add_argument("--scenario", required=True)
    r.add_argument("--workers", type=int, default=None, help="parallel workers; 0 = one per hardware thread")
    r.add_argument("--out", default=None, help="output directory (default: the scenario's)")
    r.add_argument("--trace", action="store_true", help="write per-step state and signal traces")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("summarize", help="percent reduction between two series")
    s.add_argument("--results", required=True)
    s.add_argument("--baseline", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--count", type=int, required=True)
    s.set_defaults(func=cmd_summarize)

    g = sub.add_parser("gen-network", help="write a generated network as JSON")
    g.add_argument("--kind", choices=("grid", "delhi52"), default="grid")
    g.add_argument("--rows", type=int, default=5)
    g.add_argument("--cols", type=int, default=5)
    g.add_argument("--edge-length", type=float, default=200.0)
    g.add_argument("--lanes", type=int, default=3)
    g.add_argument("--signalized-interior", action="store_true")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen_network)

    i = sub.add_parser("import-results", help="render a report from a results CSV")
    i.add_argument("--csv", required=True)
    i.add_argument("--out", default=".")
    i.set_defaults(func=cmd_import_results)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if getattr(args, "workers", None) is not None and args.workers < 0:
            raise ScenarioError("--workers: must be >= 0")
        return args.func(args)
    except (ScenarioError, NetworkError, MissingCellError, FileNotFoundError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, MissingCellError) else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
