"""Command line entry point: run one optimisation, run a sweep, or validate a config.

Exit codes: 0 success, 2 infeasible, 1 any other error.
"""

import argparse
import json
import sys

from .ao import BaselineKind, run_ao
from .bench import ConfigError, load_scenario, load_sweep_spec, run_sweep, workers_from_env, write_report
from .surface import layout_to_csv

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="fstar-noma", description="Fluid STAR surface NOMA optimiser")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="one alternating-optimisation run")
    r.add_argument("--scenario", required=True)
    r.add_argument("--scheme", default="F_STAR", choices=[k.value for k in BaselineKind])
    r.add_argument("--seed", type=int, default=None, help="overrides the seed in the scenario file")
    r.add_argument("--max-outer", type=int, default=50)
    r.add_argument("--trace", default=None, help="write JSON-lines trace to this file")
    r.add_argument("--layout-out", default=None, help="write the final layout CSV to this file")
    s = sub.add_parser("sweep", help="seeded parameter sweep with CSV/Markdown report")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", default=None, help="output directory (defaults to the spec's out field)")
    s.add_argument("--scenario", default=None, help="base scenario (defaults to the shipped one)")
    s.add_argument("--workers", type=int, default=None, help="defaults to $FSTAR_WORKERS or 1")
    v = sub.add_parser("validate", help="check that a scenario file loads")
    v.add_argument("--scenario", required=True)
    return p


def _run(args):
    scen = load_scenario(args.scenario)
    if args.seed is not None:
        scen = scen.with_updates(seed=args.seed)
    if args.trace:
        with open(args.trace, "w") as fh:
            st = run_ao(scen, args.scheme, max_outer=args.max_outer, trace=fh)
    else:
        st = run_ao(scen, args.scheme, max_outer=args.max_outer)
    out = dict(scheme=args.scheme, seed=scen.seed, rate=st.objective, iterations=st.iterations,
               converged=st.converged, failed_stage=st.failed_stage or None, history=st.history)
    print(json.dumps(out))
    if args.layout_out and not st.failed_stage:
        with open(args.layout_out, "w") as fh:
            fh.write(layout_to_csv(st.layout))
    return EXIT_INFEASIBLE if st.failed_stage else EXIT_OK


def _sweep(args):
    from .bench import default_scenario
    spec = load_sweep_spec(args.spec)
    base = load_scenario(args.scenario) if args.scenario else default_scenario()
    workers = args.workers if args.workers is not None else workers_from_env()
    rows = run_sweep(spec, base, workers=workers)
    out = args.out or spec.out
    write_report(rows, out, spec.param)
    print(f"{len(rows)} runs written to {out}")
    return EXIT_INFEASIBLE if any(r["status"] == "infeasible" for r in rows) else EXIT_OK


def _validate(args):
    scen = load_scenario(args.scenario)
    print(f"ok: M={scen.M} K={scen.K} Q={scen.Q} L={scen.L}")
    return EXIT_OK


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:              # argparse exits with 2, which is reserved for infeasible runs
        return EXIT_OK if e.code in (0, None) else EXIT_ERROR
    try:
        return {"run": _run, "sweep": _sweep, "validate": _validate}[args.cmd](args)
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
