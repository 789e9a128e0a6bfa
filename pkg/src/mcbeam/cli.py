"""Command-line front end.

Subcommands::

    mcbeam gen    write a random instance file
    mcbeam qos    power minimisation (sweep, or one instance file)
    mcbeam mmf    max-min fairness (sweep, or one instance file)
    mcbeam bench  inner-solver comparison on the first convexified problem

Sweeps take an optional JSON spec file (``--spec``); any flag given on the
command line overrides the corresponding spec field.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mcbeam.ccp import CcpFailure, ccp_qos
from mcbeam.experiment import ExperimentSpec, run_experiment
from mcbeam.mmf import BisectionConfig, MmfFailure, solve_mmf
from mcbeam.model import check_feasibility, generate_instance, load_instance, save_instance
from mcbeam.units import db_to_linear, dbm_to_watts, linear_to_db, watts_to_dbm

log = logging.getLogger("mcbeam")

# CLI flag -> ExperimentSpec field
_SPEC_FLAGS = {
    "N": "N", "K": "K", "M": "M", "sinr_db": "sinr_target_db", "power_dbm": "power_cap_dbm",
    "total_power_dbm": "total_power_dbm", "noise_power": "noise_power",
    "sinr_weight": "sinr_weight", "seeds": "seeds", "repetitions": "repetitions",
    "seed_base": "seed_base", "solver": "solver", "parallelism": "parallelism",
    "jobs": "jobs", "rho": "rho", "eps_abs": "eps_abs", "eps_rel": "eps_rel",
    "max_inner": "max_inner_iterations", "rel_tol": "rel_decrease_tol",
    "max_outer": "max_outer_iterations", "retries": "retry_budget", "tol_t": "tol_t",
    "max_probes": "max_probes", "out": "output_dir",
}


def _add_sweep_flags(p: argparse.ArgumentParser):
    p.add_argument("--spec", help="JSON experiment spec file")
    p.add_argument("--instance", help="solve this instance file instead of a sweep")
    g = p.add_argument_group("grid")
    g.add_argument("--N", type=int, nargs="+", help="antenna counts")
    g.add_argument("--K", type=int, nargs="+", help="user counts")
    g.add_argument("--M", type=int, nargs="+", help="group counts")
    g.add_argument("--sinr-db", type=float, nargs="+", help="SINR targets in dB")
    g.add_argument("--power-dbm", type=float, nargs="+", help="per-antenna caps in dBm")
    g.add_argument("--total-power-dbm", type=float, nargs="+",
                   help="total power in dBm, split evenly over antennas")
    g.add_argument("--noise-power", type=float, help="noise power in watts")
    g.add_argument("--sinr-weight", type=float, help="max-min weight of every user")
    g.add_argument("--seeds", type=int, nargs="+", help="explicit seeds")
    g.add_argument("--repetitions", type=int, help="number of seeds (default 10)")
    g.add_argument("--seed-base", type=int, help="first seed when --seeds is absent")
    s = p.add_argument_group("solver")
    s.add_argument("--solver", choices=["ccp-admm", "ccp-consensus"])
    s.add_argument("--parallelism", choices=["sequential", "deterministic-parallel"])
    s.add_argument("--jobs", type=int, help="concurrent runs")
    s.add_argument("--rho", type=float, help="ADMM penalty (default per engine)")
    s.add_argument("--eps-abs", type=float)
    s.add_argument("--eps-rel", type=float)
    s.add_argument("--max-inner", type=int, help="inner iteration cap")
    s.add_argument("--rel-tol", type=float, help="outer relative-decrease tolerance")
    s.add_argument("--max-outer", type=int, help="outer iteration cap")
    s.add_argument("--retries", type=int, help="start-point retry budget")
    s.add_argument("--tol-t", type=float, help="bisection relative tolerance")
    s.add_argument("--max-probes", type=int, help="bisection probe cap")
    p.add_argument("--out", help="output directory (default: out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcbeam",
                                     description="Multicast beamforming solver and experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a random instance file")
    gen.add_argument("--N", type=int, required=True)
    gen.add_argument("--K", type=int, required=True)
    gen.add_argument("--M", type=int, required=True)
    gen.add_argument("--sinr-db", type=float, default=10.0)
    gen.add_argument("--power-dbm", type=float, default=40.0)
    gen.add_argument("--noise-power", type=float, default=1.0)
    gen.add_argument("--sinr-weight", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--seed-only", action="store_true",
                     help="store the seed instead of explicit channel entries")
    gen.add_argument("-o", "--output", required=True)

    for name, helptext in (("qos", "minimise power under SINR targets"),
                           ("mmf", "maximise the minimum weighted SINR"),
                           ("bench", "compare inner solvers on one convexified problem")):
        _add_sweep_flags(sub.add_parser(name, help=helptext))
    return parser


def spec_from_args(args, mode: str) -> ExperimentSpec:
    doc = {}
    if args.spec:
        with open(args.spec) as fh:
            doc = json.load(fh)
    for flag, name in _SPEC_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            doc[name] = val
    if "mode" in doc and doc["mode"] != mode:
        log.warning("spec mode %r overridden by subcommand %r", doc["mode"], mode)
    doc["mode"] = mode
    return ExperimentSpec.from_dict(doc)


def _cmd_gen(args) -> int:
    inst = generate_instance(args.N, args.K, args.M,
                             sinr_target=float(db_to_linear(args.sinr_db)),
                             noise_power=args.noise_power,
                             power_cap_per_antenna=float(dbm_to_watts(args.power_dbm)),
                             rng_seed=args.seed, sinr_weight=args.sinr_weight)
    save_instance(inst, args.output, explicit=not args.seed_only)
    print(f"wrote {args.output}")
    return 0


def _solve_instance_file(args, spec: ExperimentSpec) -> int:
    inst = load_instance(args.instance)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ccp_config = spec.ccp_config(inst.seed or 0)
    if spec.mode == "qos":
        try:
            W, rep = ccp_qos(inst, ccp_config)
        except CcpFailure as exc:
            print(f"failed: {exc}", file=sys.stderr)
            return 2
        doc = rep.to_dict()
        (out / "trajectory.csv").write_text(rep.inner_csv())
        feas = check_feasibility(W, inst)
        print(f"power {watts_to_dbm(np.sum(np.abs(W) ** 2)):.3f} dBm, "
              f"{rep.outer_iterations} outer iterations, feasible={feas.feasible}")
    else:
        try:
            W, t_star, rep = solve_mmf(inst, BisectionConfig(spec.tol_t, spec.max_probes,
                                                            ccp=ccp_config))
        except MmfFailure as exc:
            print(f"failed: {exc}", file=sys.stderr)
            return 2
        doc = rep.to_dict()
        print(f"min weighted SINR {linear_to_db(t_star):.3f} dB after {len(rep.probes)} probes")
    doc["beamformer"] = {"re": W.real.tolist(), "im": W.imag.tolist()}
    with open(out / "report.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen":
        return _cmd_gen(args)
    mode = {"bench": "subproblem-bench"}.get(args.command, args.command)
    try:
        spec = spec_from_args(args, mode)
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return 2
    if args.instance:
        if mode == "subproblem-bench":
            print("bench runs on generated instances only", file=sys.stderr)
            return 2
        return _solve_instance_file(args, spec)

    def progress(i, n, doc):
        log.info("[%d/%d] %s success=%s", i, n, doc["id"], doc["summary"].get("success"))

    status = run_experiment(spec, progress)
    print(f"wrote {spec.output_dir}/aggregate.csv")
    return status


if __name__ == "__main__":
    sys.exit(main())
