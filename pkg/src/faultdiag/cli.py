"""Operator command line: run scenarios, sweep fault counts, exchange reports.

Exit codes: 0 success, 1 usage or parse failure, 2 invariant/verdict failure,
3 livelock (event budget exceeded).
"""

from __future__ import annotations

import argparse
import os
import sys

from .analysis import check_diagnosis, fault_sweep, sweep_csv
from .engine import LivelockError, NetworkFaultReport, default_gateway, inter_network_exchange, run_periodic
from .scenario import ScenarioError, cycle_setups, parse_scenario_file
from .topology import TopologyError, parse_topology_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERDICT = 2
EXIT_LIVELOCK = 3

SEED_ENV = "FAULTDIAG_SEED"


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ScenarioError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _print_report(report, out):
    leaders = " -> ".join(report.leaders_in_order) or "-"
    faulty = " ".join(report.faulty_found) or "-"
    print(
        f"Cycle {report.cycle_index} faulty={len(report.faulty_found)} "
        f"leaders={len(report.leaders_in_order)} messages={report.message_stats.total}",
        file=out,
    )
    print(f"  leaders: {leaders}", file=out)
    print(f"  faulty: {faulty}", file=out)
    print(f"  messages: {report.message_stats.render()}", file=out)


def cmd_run(args, out=sys.stdout) -> int:
    scenario = parse_scenario_file(args.scenario, default_seed=_default_seed())
    print(
        f"Scenario {scenario.network_id} "
        f"(n={scenario.topology.n}, seed={scenario.seed}, cycles={scenario.cycles})",
        file=out,
    )
    try:
        result = run_periodic(scenario)
    except LivelockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LIVELOCK
    all_verdicts_true = True
    for report in result.reports:
        _print_report(report, out)
        if args.verdict:
            verdict = check_diagnosis(result.trace, scenario, report.cycle_index)
            for line in verdict.render().splitlines():
                print(f"  {line}", file=out)
            all_verdicts_true &= verdict.all_true
    if args.trace:
        with open(args.trace, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(result.trace.export())
        print(f"trace written to {args.trace}", file=out)
    if args.verdict and not all_verdicts_true:
        return EXIT_VERDICT
    return EXIT_OK


def cmd_sweep(args, out=sys.stdout) -> int:
    topology = parse_topology_file(args.topology)
    try:
        counts = [int(x) for x in args.faults.split(",") if x.strip() != ""]
    except ValueError:
        raise ScenarioError(f"bad --faults list {args.faults!r}") from None
    for k in counts:
        if k > topology.n - 1:
            raise ScenarioError(
                f"fault count {k} exceeds the diagnosable maximum of n-1 = {topology.n - 1}"
            )
        if k < 0:
            raise ScenarioError("fault counts must be non-negative")
    seed = args.seed if args.seed is not None else _default_seed()
    rows = fault_sweep(topology, counts, args.trials, seed)
    csv_text = sweep_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv_text)
        print(f"sweep written to {args.out}", file=out)
    else:
        out.write(csv_text)
    return EXIT_OK


def cmd_exchange(args, out=sys.stdout) -> int:
    if len(args.scenarios) < 2:
        print("error: exchange needs at least two scenarios", file=sys.stderr)
        return EXIT_USAGE
    default_seed = _default_seed()
    reports = []
    for path in args.scenarios:
        scenario = parse_scenario_file(path, default_seed=default_seed)
        try:
            result = run_periodic(scenario)
        except LivelockError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_LIVELOCK
        final = result.reports[-1]
        setup = cycle_setups(scenario)[-1]
        gateway = scenario.gateway or default_gateway(setup.topology, final.faulty_found)
        reports.append(NetworkFaultReport(scenario.network_id, gateway, final.faulty_found))
    for view in inter_network_exchange(reports):
        print(f"network {view.network_id} gateway={view.gateway}", file=out)
        for origin, faulty in view.received:
            listing = " ".join(faulty) or "-"
            print(f"  from {origin}: {listing}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultdiag",
        description="Deterministic simulator for leader-driven distributed fault diagnosis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario's diagnosis cycles")
    p_run.add_argument("scenario", help="scenario file path")
    p_run.add_argument("--trace", help="write the trace export to this path")
    p_run.add_argument("--verdict", action="store_true", help="append verdict lines per cycle")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="messages-vs-faults sweep over a topology")
    p_sweep.add_argument("topology", help="topology file path")
    p_sweep.add_argument("--faults", required=True, help="comma-separated fault counts")
    p_sweep.add_argument("--trials", type=int, default=30)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", help="CSV output path (default: stdout)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_ex = sub.add_parser("exchange", help="run networks and exchange their faulty lists")
    p_ex.add_argument("scenarios", nargs="+", help="two or more scenario files")
    p_ex.set_defaults(func=cmd_exchange)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, TopologyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
