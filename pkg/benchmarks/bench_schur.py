"""Compare the Schur-complement kernels on relaxations of the bundled cases.

Each kernel evaluates ``<A_p, W A_q W>`` for every row pair of every PSD
block group.  The compiled kernel is timed only when the extension is built.

Usage::

    python benchmarks/bench_schur.py [--repeat 5] [--periods 2]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from miqcqp.cli import load_case
from miqcqp.relax import build_decomposed_sdp
from miqcqp.sdp import HAVE_EXTENSION
from miqcqp.sdp.kernels import GroupPlan
from miqcqp.sdp.standard import compile_problem
from miqcqp.sparsity import build_cs_graph, decompose
from miqcqp.ucopf import build_ucopf_instance


def _random_psd(rng, k, n):
    G = rng.standard_normal((k, n, n))
    return G @ G.transpose(0, 2, 1) / n + np.eye(n)


def bench_case(name: str, periods: int, repeat: int, rng) -> list[tuple]:
    case, uc = load_case(name, None)
    inst = build_ucopf_instance(case, uc, periods).instance
    sf = compile_problem(build_decomposed_sdp(inst, decompose(build_cs_graph(inst))))
    methods = (["cython"] if HAVE_EXTENSION else []) + ["expansion", "dense"]
    Ws = [_random_psd(rng, g.k, g.n) for g in sf.groups]
    rows, ref = [], None
    for method in methods:
        plans = [GroupPlan(sf.A, g, "numpy", method=method) for g in sf.groups]
        vals = np.concatenate([p.values(W) for p, W in zip(plans, Ws)])
        if ref is None:
            ref = vals
        err = float(np.abs(vals - ref).max() / (1.0 + np.abs(ref).max()))
        best = np.inf
        for _ in range(repeat):
            t = time.perf_counter()
            for p, W in zip(plans, Ws):
                p.values(W)
            best = min(best, time.perf_counter() - t)
        rows.append((name, periods, sf.m, method, best * 1e3, err))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--periods", type=int, default=2)
    ap.add_argument("--cases", nargs="+", default=["case6ww", "case24_ieee_rts", "case118"])
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'case':<16} {'T':>2} {'rows':>7} {'kernel':<10} {'ms':>10} {'rel diff':>10}")
    for name in args.cases:
        for row in bench_case(name, args.periods, args.repeat, rng):
            print("{:<16} {:>2} {:>7} {:<10} {:>10.3f} {:>10.1e}".format(*row))


if __name__ == "__main__":
    main()
