"""Command-line front end.

Subcommands:
    equilibrium <scenario>                 solved operating point
    check <scenario>                       stability report
    simulate <scenario> [--trace-out P] [--classify]
    sweep <sweepspec> [--out P] [--workers N]

--tol / --horizon / --step override the scenario's simulation settings.
Exit codes: 0 success, 1 validation error, 2 internal error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import RcpError, NonContractive
from .harness import (analyze_scenario, load_scenario, load_sweep_spec,
                      run_check, run_sweep, trace_csv)
from .sim import simulate


def _build_parser():
    p = argparse.ArgumentParser(prog="rcpfluid",
                                description="RCP fluid-model analysis toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=None,
                        help="override convergence tolerance")
    common.add_argument("--horizon", type=float, default=None,
                        help="override simulation horizon (s)")
    common.add_argument("--step", type=float, default=None,
                        help="override integration step (s)")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("equilibrium", parents=[common],
                       help="print the equilibrium operating point")
    q.add_argument("scenario")

    c = sub.add_parser("check", parents=[common],
                       help="print the stability report")
    c.add_argument("scenario")

    s = sub.add_parser("simulate", parents=[common],
                       help="integrate the scenario")
    s.add_argument("scenario")
    s.add_argument("--trace-out", default=None, metavar="PATH",
                   help="write the trace CSV here")
    s.add_argument("--classify", action="store_true",
                   help="print the run classification details")

    w = sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    w.add_argument("sweepspec")
    w.add_argument("--out", default=None, metavar="PATH",
                   help="write the sweep CSV here (default: stdout)")
    w.add_argument("--workers", type=int, default=1)
    return p


def _apply_overrides(scenario, args):
    sim = scenario.sim
    if args.tol is not None:
        sim = replace(sim, convergence_tol=args.tol)
    if args.horizon is not None:
        sim = replace(sim, horizon=args.horizon)
    if args.step is not None:
        sim = replace(sim, step_h=args.step)
    return replace(scenario, sim=sim)


def _cmd_equilibrium(args):
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    analysis = analyze_scenario(scenario)
    if analysis is None:
        print(f"scenario: {scenario.label}")
        print("multi-link scenario: no single-bottleneck equilibrium; "
              "equilibria are observed from simulation instead.")
        return 0
    sys_, eq, _, _ = analysis
    print(f"scenario: {scenario.label}")
    print(f"routes N          : {eq.n_routes}")
    print(f"mean RTT T_bar    : {eq.t_bar:.6g} s")
    print(f"gain kappa        : {sys_.kappa:.6g} /s")
    print(f"equilibrium y_bar : {eq.y_bar:.10g} pkt/s")
    print(f"equilibrium R_bar : {eq.R_bar:.10g} pkt/s")
    print(f"residual f(y_bar) : {eq.residual:.3e}")
    return 0


def _cmd_check(args):
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    run_check(scenario)
    return 0


def _cmd_simulate(args):
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    trace = simulate(scenario.network, scenario.sim)
    c = trace.classification
    print(f"scenario: {scenario.label}")
    print(f"step {trace.step_h:.6g} s, horizon {trace.horizon:.6g} s, "
          f"{len(trace.times)} samples")
    print(f"classification: {c.kind}")
    if args.classify:
        if c.kind == "converged":
            print(f"  settling time : {c.settling_time:.6g} s")
        elif c.kind == "oscillating":
            print(f"  amplitude     : {c.amplitude:.6g} pkt/s")
            if c.period_estimate is not None:
                print(f"  period        : {c.period_estimate:.6g} s")
        elif c.kind == "blowup":
            print(f"  failed at t   : {c.t_fail:.6g} s")
        if trace.equilibrium is not None:
            y = trace.aggregates[-1, :].max()
            print(f"  final y       : {y:.6g} (y_bar {trace.equilibrium.y_bar:.6g})")
    if args.trace_out:
        with open(args.trace_out, "w") as fh:
            fh.write(trace_csv(trace))
        print(f"trace written to {args.trace_out}")
    return 0


def _cmd_sweep(args):
    spec = load_sweep_spec(args.sweepspec)
    if args.tol is not None or args.horizon is not None or args.step is not None:
        spec = replace(spec, base=_apply_overrides(spec.base, args))
    result = run_sweep(spec, workers=args.workers)
    csv = result.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
        print(f"sweep CSV written to {args.out} ({len(result.points)} points)")
    else:
        sys.stdout.write(csv)
    return 0


_COMMANDS = {
    "equilibrium": _cmd_equilibrium,
    "check": _cmd_check,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NonContractive as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 2
    except RcpError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
