"""Command-line entry points: ``solve``, ``decompose``, ``oracle`` and ``relax``.

Case and UC arguments accept a file path or the name of a bundled case
(``case6ww``, ``case24_ieee_rts``, ``case118``).  When ``--uc`` is omitted the
bundled UC data matching the case is used.

Exit codes: 0 optimal or gap met, 2 time or node limit, 3 infeasible,
1 on any error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from importlib.resources import files
from pathlib import Path

from .bnb import BnbSettings, UnboundedRelaxation, solve_bnb
from .generators import random_tiny_miqcqp
from .io import FormatError, SolveReport, parse_matpower, parse_uc_json
from .model import OracleError, brute_force_solve
from .relax import RelaxationError, build_decomposed_sdp, build_full_sdp
from .sdp import ResourceLimitError, solve
from .sparsity import build_cs_graph, decompose, report
from .ucopf import (CaseError, apply_variation, build_ucopf_instance, make_inputs,
                    period_block_stats)

log = logging.getLogger("miqcqp")

BUNDLED_UC = {"case6ww": "uc6.json", "case24_ieee_rts": "uc24.json", "case118": "uc118.json"}
VARIATIONS = ("none", "b", "noise2", "noise4", "noise6")
EXIT_OK, EXIT_ERROR, EXIT_LIMIT, EXIT_INFEASIBLE = 0, 1, 2, 3


class CliError(RuntimeError):
    """Bad input reported to the user without a traceback."""


def _read(arg: str, suffix: str) -> tuple[str, str]:
    path = Path(arg)
    if path.is_file():
        return path.read_text(), path.stem
    name = path.name[:-len(suffix)] if path.name.endswith(suffix) else path.name
    res = files("miqcqp.data").joinpath(name + suffix)
    if res.is_file():
        return res.read_text(), name
    raise CliError(f"no such file or bundled data: {arg}")


def load_case(case_arg: str, uc_arg: str | None):
    text, name = _read(case_arg, ".m")
    case = parse_matpower(text, name)
    if uc_arg is None:
        if name not in BUNDLED_UC:
            raise CliError(f"--uc is required for {name}")
        uc_arg = BUNDLED_UC[name]
    uc_text, _ = _read(uc_arg, ".json")
    return case, parse_uc_json(uc_text, case)


def _build_model(args):
    case, uc = load_case(args.case, args.uc)
    inputs = make_inputs(case, uc, args.periods)
    if args.variation == "b":
        inputs = apply_variation(inputs, "initial_zero")
    elif args.variation.startswith("noise"):
        level = int(args.variation[5:]) / 100.0
        inputs = apply_variation(inputs, "noise", level=level, seed=args.seed)
    if args.gamma != 1.0:
        inputs = apply_variation(inputs, "gamma", gamma=args.gamma)
    return case, build_ucopf_instance(case, uc, args.periods, inputs=inputs)


def _label(case, args) -> str:
    parts = [case.name, f"T{args.periods}"]
    if args.variation != "none":
        parts.append(args.variation)
    if args.gamma != 1.0:
        parts.append(f"gamma{args.gamma:g}")
    return "-".join(parts)


def cmd_solve(args) -> int:
    case, model = _build_model(args)
    settings = BnbSettings(tol=args.tol, timelimit=args.timelimit, run_local=args.run_local,
                           sparsity=args.sparsity == "on")
    rep = solve_bnb(model.instance, settings=settings)
    echo = {"tol": args.tol, "timelimit": args.timelimit, "run_local": args.run_local,
            "sparsity": args.sparsity, "periods": args.periods, "seed": args.seed,
            "variation": args.variation, "gamma": args.gamma,
            "variation_detail": model.inputs.variation}
    out = SolveReport.from_bnb(_label(case, args), echo, rep)
    if args.report:
        Path(args.report).write_text(out.to_json())
    print(f"status {rep.status}  misdp_gap {rep.misdp_gap:.4g}  miqcqp_gap {rep.miqcqp_gap:.4g}  "
          f"lb {rep.lb:.6g}  ub_misdp {rep.ub_misdp:.6g}  ub_miqcqp {rep.ub_miqcqp:.6g}  "
          f"iter {rep.iterations}  time {rep.time_s:.1f}s")
    if rep.status in ("optimal", "gap_met"):
        return EXIT_OK
    if rep.status == "infeasible":
        return EXIT_INFEASIBLE
    if rep.status in ("timelimit", "node_limit") and math.isfinite(rep.misdp_gap):
        return EXIT_LIMIT
    return EXIT_ERROR


def cmd_decompose(args) -> int:
    case, uc = load_case(args.case, args.uc)
    inst = build_ucopf_instance(case, uc, 1).instance
    print(report(decompose(build_cs_graph(inst), args.heuristic)))
    st = period_block_stats(case, uc)
    print(f"per-period moment blocks: {st.n_blocks}")
    print(f"per-period max block size: {st.max_block}")
    print("moment block size histogram:")
    for size, count in st.histogram.items():
        print(f"  {size:4d}: {count}")
    print(f"second-order-cone blocks: {st.n_soc}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    for seed in range(args.seed, args.seed + args.count):
        inst = random_tiny_miqcqp(seed)
        point, value = brute_force_solve(inst)
        line = f"seed {seed}  n_cont {inst.n_cont}  n_int {inst.n_int}  oracle {value:.8g}"
        if args.compare:
            rep = solve_bnb(inst, settings=BnbSettings(tol=args.tol, mip_terminate=False))
            line += f"  bnb_ub {rep.ub_miqcqp:.8g}  bnb_lb {rep.lb:.8g}"
        print(line)
    return EXIT_OK


def cmd_relax(args) -> int:
    _, model = _build_model(args)
    inst = model.instance
    if args.sparsity == "on":
        prob = build_decomposed_sdp(inst, decompose(build_cs_graph(inst)))
    else:
        prob = build_full_sdp(inst)
    sizes = prob.block_sizes
    print(f"blocks {len(sizes)}  max block {max(sizes, default=0)}  rows {prob.n_rows}")
    sol = solve(prob)
    print(f"status {sol.status}  bound {sol.objective:.10g}  iterations {sol.iterations}")
    if sol.status == "primal_infeasible":
        return EXIT_INFEASIBLE
    return EXIT_OK if sol.ok else EXIT_ERROR


def _case_args(p, uc=True):
    p.add_argument("--case", required=True, help="MATPOWER file or bundled case name")
    if uc:
        p.add_argument("--uc", help="UC JSON file or bundled name")


def _model_args(p):
    _case_args(p)
    p.add_argument("--periods", type=int, default=4)
    p.add_argument("--sparsity", choices=("on", "off"), default="on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variation", choices=VARIATIONS, default="none")
    p.add_argument("--gamma", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="miqcqp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="branch-and-bound on a UC-OPF instance")
    _model_args(p)
    p.add_argument("--tol", type=float, default=0.02)
    p.add_argument("--timelimit", type=float, default=3600.0)
    p.add_argument("--run-local", type=float, default=1.5)
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("decompose", help="per-period decomposition statistics")
    _case_args(p)
    p.add_argument("--heuristic", choices=("min_degree", "min_fill"), default="min_degree")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("oracle", help="brute-force random tiny MIQCQPs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--compare", action="store_true", help="also run branch-and-bound")
    p.add_argument("--tol", type=float, default=0.02)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("relax", help="solve the root relaxation only")
    _model_args(p)
    p.set_defaults(func=cmd_relax)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ResourceLimitError as exc:
        print(f"error: resource limit: {exc}", file=sys.stderr)
    except (CliError, FormatError, CaseError, OracleError, RelaxationError, UnboundedRelaxation,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
