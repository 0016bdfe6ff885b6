"""Relaxations of an MIQCQP: Schur-lifted SDP (full or clique-decomposed) and McCormick LP.

Lifting rules shared by both SDP modes:

* A continuous variable is *lifted* (gets a row/column in a moment block)
  when it appears in an off-diagonal term anywhere, in a diagonal term of a
  constraint that is not second-order-cone representable, or with a negative
  diagonal coefficient in the objective.
* Other variables stay scalar.  A positive objective diagonal ``q x^2`` is
  replaced by an epigraph entry of the 2x2 block ``[[t, sqrt(q) x], [.., 1]]``.
* A row ``sum_j a_j x_j^2 <= c`` with ``a > 0``, no linear part, ``c > 0`` and
  no lifted variable becomes an arrow block ``[[sqrt(c), sqrt(a) x'],
  [sqrt(a) x, sqrt(c) I]]``.
* Moment blocks are ``[[1, x'], [x, W]]`` with box rows, the square secant
  and McCormick rows on every term pair.  With ``homogeneous="auto"``, when
  lifted variables never appear linearly and all their boxes are symmetric
  (the power-flow case), blocks drop the constant row and become pure ``W``
  blocks; the box then enters as ``W_jj <= ub^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import MiqcqpInstance
from .sdp import ResourceLimitError, SdpBuilder, SdpProblem
from .sparsity import CliqueDecomposition, build_cs_graph, decompose, term_components


MOMENT_ENTRY_LIMIT = 5_000_000  # upper-triangle entries over all moment blocks


class RelaxationError(ValueError):
    pass


@dataclass(frozen=True)
class LiftingPlan:
    lifted: tuple[int, ...]
    soc_rows: tuple[int, ...]
    epigraph: tuple[tuple[int, float], ...]
    homogeneous: bool
    term_pairs: frozenset


def lifting_plan(instance: MiqcqpInstance) -> LiftingPlan:
    lifted: set[int] = set()
    pairs = set()
    for form in instance.forms():
        for (j, k) in form.quad:
            pairs.add((j, k))
            if j != k:
                lifted.update((j, k))
    obj = instance.objective
    for (j, k), v in obj.quad.items():
        if j == k and v < 0:
            lifted.add(j)
    candidates = []
    for i, con in enumerate(instance.quad_constraints):
        f = con.form
        if not f.quad:
            continue
        soc_like = (con.sense == "<=" and not f.lin_x and not f.lin_y and not f.mixed
                    and all(j == k and v > 0 for (j, k), v in f.quad.items())
                    and con.rhs - f.constant > 0)
        if soc_like:
            candidates.append(i)
        else:
            lifted.update(j for jk in f.quad for j in jk)
    changed = True
    soc = list(candidates)
    while changed:
        changed = False
        for i in list(soc):
            vars_i = {j for (j, _) in instance.quad_constraints[i].form.quad}
            if vars_i & lifted:
                lifted |= vars_i
                soc.remove(i)
                changed = True
    epi = tuple(sorted((j, v) for (j, k), v in obj.quad.items() if j == k and v > 0
                       and j not in lifted))
    lin_lifted = False
    for form in instance.forms():
        if any(j in lifted for j in form.lin_x):
            lin_lifted = True
    for con in instance.lin_constraints:
        if any(j in lifted for j in con.lin_x):
            lin_lifted = True
    symmetric = all(np.isfinite(instance.cont_ub[j]) and instance.cont_lb[j] == -instance.cont_ub[j]
                    for j in lifted)
    homogeneous = bool(lifted) and not lin_lifted and symmetric
    return LiftingPlan(tuple(sorted(lifted)), tuple(soc), epi, homogeneous, frozenset(pairs))


def _check_fixings(instance: MiqcqpInstance, fixings: Mapping[int, float] | None) -> dict:
    fixings = dict(fixings or {})
    for k, v in fixings.items():
        if not 0 <= k < instance.n_int:
            raise RelaxationError(f"fixing refers to unknown binary {k}")
        if v not in (0, 1):
            raise RelaxationError(f"binary {k} fixed to {v}, expected 0 or 1")
    return fixings


def _build(instance: MiqcqpInstance, cliques, tree_edges, fixings, mode: str,
           term_sparsity: bool = False, homogeneous="auto") -> SdpProblem:
    fixings = _check_fixings(instance, fixings)
    bad = np.nonzero(~np.isfinite(instance.int_lb) | ~np.isfinite(instance.int_ub))[0]
    if bad.size:
        raise RelaxationError(f"binary variable {int(bad[0])} has no bounds")
    plan = lifting_plan(instance)
    L = set(plan.lifted)
    if homogeneous not in (False, "auto"):
        raise RelaxationError("homogeneous must be False or 'auto'")
    hom = plan.homogeneous and homogeneous == "auto"
    lb, ub = instance.cont_lb, instance.cont_ub
    B = SdpBuilder()

    # moment blocks
    entries = sum((n + 1) * (n + 2) // 2 for n in (sum(v in L for v in cl) for cl in cliques))
    if entries > MOMENT_ENTRY_LIMIT:
        raise ResourceLimitError(f"moment blocks need {entries} entries, "
                                 f"limit is {MOMENT_ENTRY_LIMIT}")
    blocks = []  # (block index, members tuple)
    for cl in cliques:
        members = tuple(v for v in cl if v in L)
        if not members:
            continue
        parts = term_components(members, plan.term_pairs) if term_sparsity else [members]
        for part in parts:
            off = 0 if hom else 1
            mm = {} if hom else {(0, 0): ("1",)}
            for a, j in enumerate(part):
                if not hom:
                    mm[(0, a + off)] = ("x", j)
                for bpos in range(a, len(part)):
                    mm[(a + off, bpos + off)] = ("w", j, part[bpos])
            bi = B.add_block(len(part) + off, label=f"clique {len(blocks)}", moment_map=mm)
            blocks.append((bi, part))
            if not hom:
                B.add_row([], [(bi, 0, 0, 1.0)], "==", 1.0, label=("one", bi))
    pos = [{j: a for a, j in enumerate(part)} for _, part in blocks]
    off = 0 if hom else 1

    x_owner, w_owner = {}, {}
    for (bi, part), p in zip(blocks, pos):
        for a, j in enumerate(part):
            x_owner.setdefault(j, (bi, 0, a + off))
            for k in part[a:]:
                r, c = sorted((a + off, p[k] + off))
                w_owner.setdefault((j, k) if j <= k else (k, j), (bi, r, c))

    def owner_x(j):
        try:
            return x_owner[j]
        except KeyError:
            raise RelaxationError(f"moment x{j} is not covered by any clique") from None

    def owner_w(j, k):
        try:
            return w_owner[(j, k) if j <= k else (k, j)]
        except KeyError:
            raise RelaxationError(f"moment w({j},{k}) is not covered by any clique") from None

    # scalars: non-lifted continuous variables and binaries
    x_scalar = {}
    for j in range(instance.n_cont):
        if j not in L:
            x_scalar[j] = B.add_scalar(lb[j], ub[j], label=("x", j))
    y_scalar = []
    for k in range(instance.n_int):
        lo, hi = instance.int_lb[k], instance.int_ub[k]
        if k in fixings:
            v = float(fixings[k])
            if v < lo or v > hi:
                raise RelaxationError(f"fixing y{k}={v} conflicts with bounds [{lo}, {hi}]")
            lo = hi = v
        y_scalar.append(B.add_scalar(lo, hi, label=("y", k)))

    def lin_terms(lin_x, lin_y):
        s_terms, b_terms = [], []
        for j, v in lin_x.items():
            if j in x_scalar:
                s_terms.append((x_scalar[j], v))
            else:
                if hom:
                    raise RelaxationError("linear term on a lifted variable in homogeneous mode")
                bi, r, c = owner_x(j)
                b_terms.append((bi, r, c, v))
        for k, v in lin_y.items():
            s_terms.append((y_scalar[k], v))
        return s_terms, b_terms

    def quad_terms(quad, skip_epi=False):
        out = []
        for (j, k), v in quad.items():
            if skip_epi and j == k and j not in L:
                continue
            bi, r, c = owner_w(j, k)
            out.append((bi, r, c, v if j == k else 2.0 * v))
        return out

    # objective
    obj = instance.objective
    s_terms, b_terms = lin_terms(obj.lin_x, obj.lin_y)
    B.add_objective(s_terms, b_terms + quad_terms(obj.quad, skip_epi=True), obj.constant)
    for j, q in plan.epigraph:
        bi = B.add_block(2, label=f"epigraph x{j}", moment_map={(0, 0): ("t", j), (0, 1): ("sx", j),
                                                                 (1, 1): ("1",)})
        B.add_row([], [(bi, 1, 1, 1.0)], "==", 1.0, label=("one", bi))
        B.add_row([(x_scalar[j], -np.sqrt(q))], [(bi, 0, 1, 1.0)], "==", 0.0, label=("epi", j))
        B.add_objective(block_terms=[(bi, 0, 0, 1.0)])

    # quadratic constraints
    soc = set(plan.soc_rows)
    for i, con in enumerate(instance.quad_constraints):
        f = con.form
        rhs = con.rhs - f.constant
        if i in soc:
            terms = sorted((j, v) for (j, _), v in f.quad.items())
            size = len(terms) + 1
            rc = np.sqrt(rhs)
            mm = {(0, 0): ("c",)}
            bi = B.add_block(size, label=f"soc row {i}", moment_map=mm)
            for a in range(size):
                B.add_row([], [(bi, a, a, 1.0)], "==", rc, label=("soc", i))
                for bpos in range(a + 1, size):
                    if a > 0:
                        B.add_row([], [(bi, a, bpos, 1.0)], "==", 0.0, label=("soc", i))
            for a, (j, v) in enumerate(terms, start=1):
                mm[(0, a)] = ("sx", j)
                B.add_row([(x_scalar[j], -np.sqrt(v))], [(bi, 0, a, 1.0)], "==", 0.0,
                          label=("soc", i))
            continue
        s_terms, b_terms = lin_terms(f.lin_x, f.lin_y)
        B.add_row(s_terms, b_terms + quad_terms(f.quad), con.sense, rhs, label=("quad", i))
    for i, con in enumerate(instance.lin_constraints):
        s_terms, b_terms = lin_terms(con.lin_x, con.lin_y)
        B.add_row(s_terms, b_terms, con.sense, con.rhs, label=("lin", i))

    # bound strengthening on lifted moments
    for j in sorted(L):
        l, u = lb[j], ub[j]
        if hom:
            bi, r, c = owner_w(j, j)
            B.add_row([], [(bi, r, c, 1.0)], "<=", max(l * l, u * u), label=("box", j))
            continue
        bx = owner_x(j)
        if np.isfinite(l):
            B.add_row([], [(*bx, 1.0)], ">=", l, label=("box", j))
        if np.isfinite(u):
            B.add_row([], [(*bx, 1.0)], "<=", u, label=("box", j))
        if np.isfinite(l) and np.isfinite(u):
            bw = owner_w(j, j)
            B.add_row([], [(*bw, 1.0), (*bx, -(l + u))], "<=", -l * u, label=("secant", j))
    if not hom:
        for (j, k) in sorted(plan.term_pairs):
            if j == k or not all(np.isfinite([lb[j], ub[j], lb[k], ub[k]])):
                continue
            bw, bj, bk = owner_w(j, k), owner_x(j), owner_x(k)
            for (cj, ck, const, sense) in _mccormick_rows(lb[j], ub[j], lb[k], ub[k]):
                B.add_row([], [(*bw, 1.0), (*bj, -cj), (*bk, -ck)], sense, const,
                          label=("mccormick", j, k))

    # links along clique-tree separators
    n_links = 0
    clique_blocks = {}
    bi_iter = iter(range(len(blocks)))
    for ci, cl in enumerate(cliques):
        members = tuple(v for v in cl if v in L)
        if members:
            idx = []
            parts = term_components(members, plan.term_pairs) if term_sparsity else [members]
            for _ in parts:
                idx.append(next(bi_iter))
            clique_blocks[ci] = idx
    for a, b, sep in tree_edges:
        if a not in clique_blocks or b not in clique_blocks:
            continue
        sep_l = [v for v in sep if v in L]
        for ja, j in enumerate(sep_l):
            if not hom:
                pa = _locate(blocks, pos, clique_blocks[a], j, None, off)
                pb = _locate(blocks, pos, clique_blocks[b], j, None, off)
                if pa and pb:
                    B.add_row([], [(*pa, 1.0), (*pb, -1.0)], "==", 0.0, label=("link", a, b))
                    n_links += 1
            for k in sep_l[ja:]:
                pa = _locate(blocks, pos, clique_blocks[a], j, k, off)
                pb = _locate(blocks, pos, clique_blocks[b], j, k, off)
                if pa and pb:
                    B.add_row([], [(*pa, 1.0), (*pb, -1.0)], "==", 0.0, label=("link", a, b))
                    n_links += 1

    return B.build(mode=mode, homogeneous=hom, lifted=plan.lifted,
                   clique_members=[part for _, part in blocks],
                   clique_block=[bi for bi, _ in blocks],
                   tree_edges=list(tree_edges), x_scalar=x_scalar, y_scalar=y_scalar,
                   n_links=n_links, offset=off, soc_rows=plan.soc_rows,
                   block_of_clique=clique_blocks)


def _locate(blocks, pos, candidates, j, k, off):
    for idx in candidates:
        bi, part = blocks[idx]
        p = pos[idx]
        if j in p and (k is None or k in p):
            if k is None:
                return bi, 0, p[j] + off
            r, c = sorted((p[j] + off, p[k] + off))
            return bi, r, c
    return None


def _mccormick_rows(lj, uj, lk, uk):
    """Rows ``w - cj x_j - ck x_k (sense) const`` of the envelope of ``w = x_j x_k``."""
    return [
        (lk, lj, -lj * lk, ">="),
        (uk, uj, -uj * uk, ">="),
        (uk, lj, -lj * uk, "<="),
        (lk, uj, -uj * lk, "<="),
    ]


def build_full_sdp(instance: MiqcqpInstance, binary_fixings=None,
                   homogeneous=False) -> SdpProblem:
    """Single moment block over every lifted variable."""
    plan = lifting_plan(instance)
    cliques = [plan.lifted] if plan.lifted else []
    return _build(instance, cliques, (), binary_fixings, "full", homogeneous=homogeneous)


def build_decomposed_sdp(instance: MiqcqpInstance, decomp: CliqueDecomposition | None = None,
                         binary_fixings=None, term_sparsity: bool = False,
                         homogeneous=False) -> SdpProblem:
    """One moment block per maximal clique, linked along the clique tree."""
    if decomp is None:
        decomp = decompose(build_cs_graph(instance))
    if decomp.graph.n_vertices != instance.n_cont:
        raise RelaxationError("decomposition does not match the instance")
    return _build(instance, decomp.cliques, decomp.tree_edges, binary_fixings, "decomposed",
                  term_sparsity=term_sparsity, homogeneous=homogeneous)


def fix_binaries(problem: SdpProblem, assignment) -> SdpProblem:
    """Collapse every binary's bound interval to the assigned value."""
    ys = problem.meta["y_scalar"]
    values = np.asarray(assignment, dtype=float).reshape(-1)
    if values.size != len(ys):
        raise RelaxationError(f"assignment has {values.size} values for {len(ys)} binaries")
    lb, ub = problem.scalar_lb.copy(), problem.scalar_ub.copy()
    for k, (idx, v) in enumerate(zip(ys, values)):
        if v not in (0.0, 1.0):
            raise RelaxationError(f"binary {k} assigned {v}, expected 0 or 1")
        if lb[idx] == ub[idx] and lb[idx] != v:
            raise RelaxationError(f"binary {k} already fixed to {lb[idx]:g}")
        lb[idx] = ub[idx] = v
    return problem.with_scalar_bounds(lb, ub)


def moment_value(problem: SdpProblem, blocks: list[np.ndarray], key) -> float:
    """Value of a semantic moment such as ``("x", j)`` read from its first owning block."""
    for bi, mm in enumerate(problem.block_maps):
        for (r, c), k in mm.items():
            if k == key:
                return float(blocks[bi][r, c])
    raise KeyError(key)


@dataclass
class McCormickProblem:
    c: np.ndarray
    c0: float
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    bounds: list[tuple[float | None, float | None]]
    pairs: list[tuple[int, int]]
    n_cont: int
    n_int: int
    envelope_rows: dict = field(default_factory=dict)


@dataclass
class LpResult:
    status: str
    objective: float
    x: np.ndarray
    y: np.ndarray
    w: dict


def build_mccormick(instance: MiqcqpInstance, binary_fixings=None) -> McCormickProblem:
    """LP relaxation replacing each product ``x_j x_k`` with a variable under its envelope."""
    fixings = _check_fixings(instance, binary_fixings)
    n, m = instance.n_cont, instance.n_int
    pairs = sorted({jk for form in instance.forms() for jk in form.quad})
    lb, ub = instance.cont_lb, instance.cont_ub
    for j, k in pairs:
        if not np.all(np.isfinite([lb[j], ub[j], lb[k], ub[k]])):
            raise RelaxationError(f"product x{j}*x{k} has an unbounded factor")
    widx = {p: n + m + i for i, p in enumerate(pairs)}
    nv = n + m + len(pairs)
    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []

    def row_of(form):
        r = np.zeros(nv)
        for j, v in form.lin_x.items():
            r[j] += v
        for k, v in form.lin_y.items():
            r[n + k] += v
        for (j, k), v in form.quad.items():
            r[widx[(j, k)]] += v if j == k else 2.0 * v
        return r

    def add(row, sense, rhs):
        if sense == "<=":
            ub_rows.append(row); ub_rhs.append(rhs)
        elif sense == ">=":
            ub_rows.append(-row); ub_rhs.append(-rhs)
        else:
            eq_rows.append(row); eq_rhs.append(rhs)

    env = {}
    for (j, k) in pairs:
        env[(j, k)] = []
        for cj, ck, const, sense in _mccormick_rows(lb[j], ub[j], lb[k], ub[k]):
            r = np.zeros(nv)
            r[widx[(j, k)]] += 1.0
            r[j] -= cj
            r[k] -= ck
            env[(j, k)].append(len(ub_rows))
            add(r, sense, const)
    for con in instance.quad_constraints:
        add(row_of(con.form), con.sense, con.rhs - con.form.constant)
    for con in instance.lin_constraints:
        r = np.zeros(nv)
        for j, v in con.lin_x.items():
            r[j] += v
        for k, v in con.lin_y.items():
            r[n + k] += v
        add(r, con.sense, con.rhs)
    bounds = [(None if not np.isfinite(lb[j]) else lb[j], None if not np.isfinite(ub[j]) else ub[j])
              for j in range(n)]
    for k in range(m):
        if k in fixings:
            bounds.append((float(fixings[k]),) * 2)
        else:
            bounds.append((float(instance.int_lb[k]), float(instance.int_ub[k])))
    bounds += [(None, None)] * len(pairs)
    mk = lambda rows: sp.csr_matrix(np.array(rows).reshape(len(rows), nv))
    return McCormickProblem(row_of(instance.objective), instance.objective.constant,
                            mk(ub_rows), np.array(ub_rhs), mk(eq_rows), np.array(eq_rhs),
                            bounds, pairs, n, m, env)


def solve_mccormick(problem: McCormickProblem) -> LpResult:
    res = linprog(problem.c, A_ub=problem.A_ub if problem.A_ub.shape[0] else None,
                  b_ub=problem.b_ub if problem.A_ub.shape[0] else None,
                  A_eq=problem.A_eq if problem.A_eq.shape[0] else None,
                  b_eq=problem.b_eq if problem.A_eq.shape[0] else None,
                  bounds=problem.bounds, method="highs")
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "error")
    if status != "optimal":
        return LpResult(status, np.nan if status != "infeasible" else np.inf,
                        np.full(problem.n_cont, np.nan), np.full(problem.n_int, np.nan), {})
    n, m = problem.n_cont, problem.n_int
    w = {p: float(res.x[n + m + i]) for i, p in enumerate(problem.pairs)}
    return LpResult(status, float(res.fun) + problem.c0, res.x[:n], res.x[n:n + m], w)
