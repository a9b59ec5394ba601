"""Command line interface.

twin broker --listen HOST:PORT        run the message broker
twin dt --config F --broker ADDR      run a digital twin against a broker
twin pt --config F --broker ADDR --scenario F --out TRACE
                                      run a physical twin, write the trace
twin run --scenario F --out TRACE     run a whole experiment (both twins)
twin check TRACE --scenario F         re-evaluate assertions on a trace
twin report TRACE                     text summary plus figures

Exit codes: 0 all assertions passed, 1 an assertion failed or was not
evaluable, 2 operational error (bad file, unreachable broker, ...).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from typing import List, Optional, Tuple

from .harness import TOPOLOGIES, run_experiment
from .rover import acc_params_from
from .runtime import DtRuntime, PtRuntime, load_twin_config
from .scenario import AssertionResult, evaluate_assertions, load_scenario
from .simcore import SimError
from .trace import events_path_for, read_trace, write_trace
from .twinlink.broker import DEFAULT_HOST, DEFAULT_PORT, Broker
from .twinlink.transport import TcpLinkClient

log = logging.getLogger(__name__)


def _parse_addr(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise SimError(f"address must be HOST:PORT, got {text!r}")
    return host, int(port)


def _print_results(results: List[AssertionResult]) -> bool:
    for result in results:
        print(result.line())
    passed = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} assertions passed")
    return passed


def _cmd_broker(args: argparse.Namespace) -> int:
    host, port = _parse_addr(args.listen)
    broker = Broker(host, port)
    broker.start()
    print(f"listening on {broker.host}:{broker.bound_port}", flush=True)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        broker.stop()
    return 0


def _cmd_dt(args: argparse.Namespace) -> int:
    config = load_twin_config(args.config)
    host, port = _parse_addr(args.broker)
    client = TcpLinkClient(host, port)
    runtime = DtRuntime(
        config,
        client,
        dt=config.dt if config.dt is not None else 0.1,
        clock=time.monotonic,
        params=acc_params_from(config.params),
    )
    idle = args.idle_exit if args.idle_exit > 0 else None
    log.info("digital twin up, broker %s:%s", host, port)
    runtime.run(idle_exit=idle)
    client.close()
    return 0


def _cmd_pt(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    config = load_twin_config(args.config)
    host, port = _parse_addr(args.broker)
    client = TcpLinkClient(host, port)
    runtime = PtRuntime(
        config,
        scenario,
        client,
        clock=time.monotonic,
        period=args.period,
    )
    runtime.run()
    rows = runtime.finalize()
    client.close()
    write_trace(args.out, rows)
    runtime.event_log.write_jsonl(events_path_for(args.out))
    print(f"trace written to {args.out} ({len(rows)} rows)")
    return 0 if _print_results(evaluate_assertions(rows, scenario)) else 1


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    result = run_experiment(
        scenario, out_path=args.out, topology=args.topology, period=args.period
    )
    print(f"trace written to {result.trace_path} ({len(result.rows)} rows)")
    return 0 if _print_results(result.results) else 1


def _cmd_check(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    rows = read_trace(args.trace)
    return 0 if _print_results(evaluate_assertions(rows, scenario)) else 1


def _cmd_report(args: argparse.Namespace) -> int:
    from .report import render_report

    print(render_report(args.trace, figures=not args.no_figures))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twin", description="twin-pair co-simulation runtime"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_broker = sub.add_parser("broker", help="run the message broker")
    p_broker.add_argument("--listen", default=f"{DEFAULT_HOST}:{DEFAULT_PORT}")
    p_broker.set_defaults(func=_cmd_broker)

    p_dt = sub.add_parser("dt", help="run a digital twin")
    p_dt.add_argument("--config", required=True)
    p_dt.add_argument("--broker", default=f"{DEFAULT_HOST}:{DEFAULT_PORT}")
    p_dt.add_argument(
        "--idle-exit",
        type=float,
        default=0.0,
        help="exit after this many idle seconds (0 = run until killed)",
    )
    p_dt.set_defaults(func=_cmd_dt)

    p_pt = sub.add_parser("pt", help="run a physical twin")
    p_pt.add_argument("--config", required=True)
    p_pt.add_argument("--broker", default=f"{DEFAULT_HOST}:{DEFAULT_PORT}")
    p_pt.add_argument("--scenario", required=True)
    p_pt.add_argument("--out", required=True, help="trace csv path")
    p_pt.add_argument("--period", type=float, default=None, help="step period seconds")
    p_pt.set_defaults(func=_cmd_pt)

    p_run = sub.add_parser("run", help="run a scenario end to end")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--out", required=True, help="trace csv path")
    p_run.add_argument("--topology", choices=TOPOLOGIES, default="in-process")
    p_run.add_argument("--period", type=float, default=None, help="step period seconds")
    p_run.set_defaults(func=_cmd_run)

    p_check = sub.add_parser("check", help="evaluate assertions on a trace")
    p_check.add_argument("trace")
    p_check.add_argument("--scenario", required=True)
    p_check.set_defaults(func=_cmd_check)

    p_report = sub.add_parser("report", help="summarize a trace")
    p_report.add_argument("trace")
    p_report.add_argument("--no-figures", action="store_true")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (SimError, OSError, ValueError, ConnectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
