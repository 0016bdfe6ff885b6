"""Local search for feasible MIQCQP points.

With binaries fixed, the continuous subproblem is attacked by an augmented
Lagrangian whose inner minimizer is L-BFGS-B on the box.  A Gauss-Newton
least-norm correction then pushes the best point onto the constraint set.  A
single pass of one-flip binary moves follows unless an improving feasible
point was already found.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.stats import qmc

from .model import FEAS_TOL, Assignment, ConstraintSystem, MiqcqpInstance


@dataclass
class LocalSolveRequest:
    instance: MiqcqpInstance
    fixed_binaries: Mapping[int, int]
    hint_binaries: np.ndarray
    start_x: np.ndarray
    time_budget: float = 30.0
    incumbent: float = np.inf
    max_outer: int = 8
    mip_terminate: bool = True
    restarts: int = 6


@dataclass
class LocalSolveResult:
    status: str
    point: Assignment
    objective: float
    constraint_violation: float
    trace: list[float] = field(default_factory=list)
    calls: int = 0


class SubproblemModel:
    """The continuous subproblem for a fixed binary vector ``y``.

    Linear rows touching a single continuous variable are folded into its
    bounds; rows without continuous variables are checked once and dropped.
    """

    def __init__(self, system: ConstraintSystem, y: np.ndarray):
        inst = system.instance
        self.system = system
        self.y = np.asarray(y, dtype=float)
        lb, ub = inst.cont_lb.copy(), inst.cont_ub.copy()
        rows = system.rows
        n_rows = rows.n_rows
        const = rows.const + rows.Ly @ self.y - system.rhs
        Lx = rows.Lx.tocsr()
        has_quad = np.zeros(n_rows, dtype=bool)
        has_quad[rows.t_row] = True
        has_quad[rows.m_row] = True
        nnz = np.diff(Lx.indptr)
        keep = []
        self.fixed_violation = 0.0
        for i in range(n_rows):
            if has_quad[i] or nnz[i] > 1:
                keep.append(i)
                continue
            sense = system.senses[i]
            if nnz[i] == 0:
                g = const[i]
                v = max(g, 0.0) if sense == "<=" else max(-g, 0.0) if sense == ">=" else abs(g)
                self.fixed_violation = max(self.fixed_violation, v)
                continue
            j = Lx.indices[Lx.indptr[i]]
            a = Lx.data[Lx.indptr[i]]
            bound = -const[i] / a
            upper = (sense == "<=") == (a > 0)
            if sense == "==":
                lb[j] = max(lb[j], bound)
                ub[j] = min(ub[j], bound)
            elif upper:
                ub[j] = min(ub[j], bound)
            else:
                lb[j] = max(lb[j], bound)
        self.bound_conflict = float(np.max(np.maximum(lb - ub, 0.0), initial=0.0))
        clash = lb > ub
        lb[clash] = ub[clash] = 0.5 * (lb[clash] + ub[clash])
        self.lb, self.ub = lb, ub
        self.rows = np.array(keep, dtype=np.int64)
        self.is_eq = system.is_eq[self.rows]
        self.sign = np.where(system.is_ge[self.rows], -1.0, 1.0)

    def objective(self, x):
        return self.system.objective_value(x, self.y)

    def objective_grad(self, x):
        return np.asarray(self.system.objective.jacobian_x(x, self.y).todense()).ravel()

    def constraints(self, x):
        """Signed residuals ``c`` (``c == 0`` for equalities, ``c <= 0`` otherwise)."""
        g = self.system.rows.values(x, self.y)[self.rows] - self.system.rhs[self.rows]
        return self.sign * g

    def jacobian(self, x):
        J = self.system.rows.jacobian_x(x, self.y)[self.rows]
        return sp.diags(self.sign) @ J

    def violation(self, x):
        c = self.constraints(x)
        v = np.where(self.is_eq, np.abs(c), np.maximum(c, 0.0))
        box = np.maximum(np.maximum(self.lb - x, x - self.ub), 0.0)
        return max(float(v.max(initial=0.0)), float(box.max(initial=0.0)),
                   self.fixed_violation, self.bound_conflict)


class AugmentedLagrangian:
    """Merit ``f + sum_eq (lam h + rho/2 h^2) + sum_ineq (max(0, lam + rho c)^2 - lam^2)/(2 rho)``."""

    def __init__(self, model: SubproblemModel, lam: np.ndarray, rho: float, scale: float = 1.0):
        self.model, self.lam, self.rho, self.scale = model, lam, rho, scale

    def value_grad(self, x):
        m = self.model
        f = m.objective(x) / self.scale
        gf = m.objective_grad(x) / self.scale
        c = m.constraints(x)
        J = m.jacobian(x)
        lam, rho = self.lam, self.rho
        eq = m.is_eq
        t = np.where(eq, lam + rho * c, np.maximum(lam + rho * c, 0.0))
        val = f + np.sum(np.where(eq, lam * c + 0.5 * rho * c * c,
                                  (t * t - lam * lam) / (2.0 * rho)))
        grad = gf + J.T @ t
        return float(val), np.asarray(grad).ravel()

    def multipliers(self, x):
        c = self.model.constraints(x)
        t = self.lam + self.rho * c
        return np.where(self.model.is_eq, t, np.maximum(t, 0.0))


def feasibility_polish(model: SubproblemModel, x: np.ndarray, iters: int = 20) -> np.ndarray:
    """Gauss-Newton least-norm steps on violated or active rows, clipped to the box."""
    x = np.clip(x, model.lb, model.ub)
    best, best_v = x.copy(), model.violation(x)
    for _ in range(iters):
        c = model.constraints(x)
        act = model.is_eq | (c > -1e-9)
        if not act.any():
            break
        J = model.jacobian(x).tocsr()[act].toarray()
        r = -c[act]
        free = (x > model.lb + 1e-12) | (x < model.ub - 1e-12)
        if not free.any():
            break
        Jf = J[:, free]
        step = np.zeros_like(x)
        step[free] = np.linalg.lstsq(Jf, r, rcond=None)[0]
        x = np.clip(x + step, model.lb, model.ub)
        v = model.violation(x)
        if v < best_v:
            best, best_v = x.copy(), v
        if v <= 1e-3 * FEAS_TOL:
            break
    return best


def solve_continuous(model: SubproblemModel, x0: np.ndarray, max_outer: int = 8,
                     deadline: float = np.inf, trace: list | None = None):
    """Augmented-Lagrangian solve; returns ``(x, objective, violation)`` of the best point."""
    lb = np.where(np.isfinite(model.lb), model.lb, None)
    ub = np.where(np.isfinite(model.ub), model.ub, None)
    bounds = list(zip(lb, ub))
    x = np.clip(np.asarray(x0, dtype=float), model.lb, model.ub)
    n_c = model.rows.size
    lam = np.zeros(n_c)
    rho = 10.0
    scale = max(1.0, abs(model.objective(x)))
    best = None
    prev_v = model.violation(x)

    def consider(z):
        nonlocal best
        v = model.violation(z)
        f = model.objective(z)
        key = (v > FEAS_TOL, f if v <= FEAS_TOL else v)
        if best is None or key < best[0]:
            best = (key, z.copy(), f, v)

    consider(x)
    for _ in range(max_outer):
        if time.monotonic() > deadline:
            break
        al = AugmentedLagrangian(model, lam, rho, scale)
        res = minimize(al.value_grad, x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 500, "ftol": 1e-13, "gtol": 1e-9})
        x = res.x
        consider(x)
        v = model.violation(x)
        if v > FEAS_TOL:
            consider(feasibility_polish(model, x))
        if trace is not None:
            trace.append(best[2] if best[3] <= FEAS_TOL else np.inf)
        lam = al.multipliers(x)
        if v <= 1e-9 and best[3] <= FEAS_TOL:
            break
        if v > 0.25 * prev_v:
            rho *= 10.0
        prev_v = v
    z = best[1]
    if best[3] > FEAS_TOL * 1e-3:
        consider(feasibility_polish(model, z))
    return best[1], best[2], best[3]


def _repair_binaries(system: ConstraintSystem, y: np.ndarray, fixed: Mapping[int, int]) -> np.ndarray:
    """Greedy flips that reduce the violation of rows free of quadratic terms.

    Rows without continuous variables count by their violation; rows with a
    single continuous variable count by the emptiness of the interval they
    cut from that variable's box.
    """
    inst = system.instance
    rows = system.rows
    Lx = rows.Lx.tocsr()
    nnz = np.diff(Lx.indptr)
    linear = np.ones(rows.n_rows, dtype=bool)
    linear[rows.t_row] = False
    linear[rows.m_row] = False
    only_y = linear & (nnz == 0)
    single = linear & (nnz == 1)
    if not only_y.any() and not single.any():
        return y
    Ly = rows.Ly.tocsr()
    const = rows.const - system.rhs
    idx = np.nonzero(only_y)[0]
    Ly0, c0 = Ly[idx], const[idx]
    le, ge = system.is_le[idx], system.is_ge[idx]
    sidx = np.nonzero(single)[0]
    Ly1, c1 = Ly[sidx], const[sidx]
    col = Lx.indices[Lx.indptr[sidx]]
    a = Lx.data[Lx.indptr[sidx]]
    eq1 = system.is_eq[sidx]
    upper = eq1 | ((system.is_le[sidx]) == (a > 0))
    lower = eq1 | ~upper

    def viol(z):
        g = Ly0 @ z + c0
        v = float(np.sum(np.where(le, np.maximum(g, 0), np.where(ge, np.maximum(-g, 0), np.abs(g)))))
        if sidx.size:
            bound = -(Ly1 @ z + c1) / a
            lo, hi = inst.cont_lb.copy(), inst.cont_ub.copy()
            np.maximum.at(lo, col[lower], bound[lower])
            np.minimum.at(hi, col[upper], bound[upper])
            v += float(np.sum(np.maximum(lo - hi, 0.0)))
        return v

    y = y.copy()
    cur = viol(y)
    free = [k for k in range(y.size) if k not in fixed]
    while cur > 1e-9:
        best_k, best_v = None, cur
        for k in free:
            y[k] = 1.0 - y[k]
            v = viol(y)
            y[k] = 1.0 - y[k]
            if v < best_v - 1e-12:
                best_k, best_v = k, v
        if best_k is None:
            break
        y[best_k] = 1.0 - y[best_k]
        cur = best_v
    return y


def local_solve(request: LocalSolveRequest) -> LocalSolveResult:
    """Find a feasible, low-cost point near the request's start; see module docstring."""
    inst = request.instance
    system = inst.system
    t_end = time.monotonic() + request.time_budget
    fixed = {int(k): int(v) for k, v in request.fixed_binaries.items()}
    y = np.clip(np.round(np.asarray(request.hint_binaries, dtype=float)), inst.int_lb, inst.int_ub) \
        if inst.n_int else np.zeros(0)
    for k, v in fixed.items():
        y[k] = v
    y = _repair_binaries(system, y, fixed)
    x0 = np.clip(np.nan_to_num(np.asarray(request.start_x, dtype=float)), inst.cont_lb, inst.cont_ub)
    trace: list[float] = []
    calls = 1
    model = SubproblemModel(system, y)
    x, f, v, n = _continuous_step(model, x0, request, t_end, trace)
    calls += n - 1
    best = (v > FEAS_TOL, f if v <= FEAS_TOL else v, x, y.copy(), f, v)

    stop = not best[0] and best[4] < request.incumbent and request.mip_terminate
    if not stop:
        for k in range(inst.n_int):
            if k in fixed or time.monotonic() > t_end:
                continue
            y2 = best[3].copy()
            y2[k] = 1.0 - y2[k]
            model = SubproblemModel(system, y2)
            if model.fixed_violation > FEAS_TOL or model.bound_conflict > FEAS_TOL:
                continue
            x2, f2, v2, n = _continuous_step(model, best[2], request, t_end)
            calls += n
            cand = (v2 > FEAS_TOL, f2 if v2 <= FEAS_TOL else v2, x2, y2, f2, v2)
            if cand[:2] < best[:2]:
                best = cand
                trace.append(f2 if v2 <= FEAS_TOL else np.inf)
                if not cand[0] and f2 < request.incumbent and request.mip_terminate:
                    break
    x, y = best[2], best[3]
    point = Assignment(x, y)
    viol = system.max_violation(x, y)
    status = "feasible" if viol <= FEAS_TOL else "infeasible_within_budget"
    return LocalSolveResult(status, point, system.objective_value(x, y), viol, trace, calls)


def _continuous_step(model: SubproblemModel, x0: np.ndarray, request: LocalSolveRequest,
                     t_end: float, trace: list | None = None):
    """Augmented-Lagrangian solve from ``x0`` and from screened restart points.

    Returns ``(x, objective, violation, n_solves)`` of the best point.
    """
    x, f, v = solve_continuous(model, x0, request.max_outer, t_end, trace)
    n = 1
    for z in _restart_points(model.system, model.y, x0, request.restarts):
        if time.monotonic() > t_end:
            break
        n += 1
        x2, f2, v2 = solve_continuous(model, z, request.max_outer, t_end)
        if (v2 > FEAS_TOL, f2 if v2 <= FEAS_TOL else v2) < (v > FEAS_TOL, f if v <= FEAS_TOL else v):
            x, f, v = x2, f2, v2
            if trace is not None:
                trace.append(f if v <= FEAS_TOL else np.inf)
    return x, f, v, n


def _restart_points(system: ConstraintSystem, y: np.ndarray, x0: np.ndarray, count: int,
                    screen: int = 512) -> np.ndarray:
    """Best ``count`` of ``screen`` scrambled-Sobol points in the box.

    Points are ranked feasible-first, then by objective, then by violation.
    Unbounded coordinates are sampled in a unit interval around ``x0``.
    """
    inst = system.instance
    n = inst.n_cont
    if count <= 0 or n == 0:
        return np.zeros((0, n))
    lo = np.where(np.isfinite(inst.cont_lb), inst.cont_lb, x0 - 1.0)
    hi = np.where(np.isfinite(inst.cont_ub), inst.cont_ub, x0 + 1.0)
    pts = lo + qmc.Sobol(n, scramble=True, seed=0).random(max(screen, count)) * (hi - lo)
    viol = system.violations_batch(pts, y)
    v = viol.max(axis=1) if viol.shape[1] else np.zeros(len(pts))
    f = system.objective.values_batch(pts, y)[:, 0]
    ok = v <= FEAS_TOL
    order = np.lexsort((np.where(ok, f, v), ~ok))
    return pts[order[:count]]


def _leading_vector(B: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (B + B.T))
    v = V[:, -1] * np.sqrt(max(w[-1], 0.0))
    nz = np.nonzero(np.abs(v) > 1e-12)[0]
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def extract_start_from_sdp(solution, problem, n_cont: int | None = None) -> np.ndarray:
    """Continuous starting point read off a solved relaxation.

    Scalars are read directly.  In blocks with a constant row, ``x_j`` is the
    owner block's first-row entry.  Pure ``W`` blocks contribute their leading
    eigenvector scaled by the square root of its eigenvalue (sign fixed so the
    first nonzero entry is positive), stitched along the clique tree by sign
    alignment on separators and averaged where cliques overlap.
    """
    meta = problem.meta
    n = n_cont if n_cont is not None else (
        max(list(meta["x_scalar"]) + list(meta["lifted"]), default=-1) + 1)
    x = np.zeros(n)
    for j, idx in meta["x_scalar"].items():
        x[j] = solution.scalar_values[idx]
    members, blocks = meta["clique_members"], meta["clique_block"]
    if not meta["homogeneous"]:
        seen = set()
        for part, bi in zip(members, blocks):
            B = solution.block_values[bi]
            for a, j in enumerate(part):
                if j not in seen:
                    x[j] = B[0, a + 1]
                    seen.add(j)
        return x
    vecs = [_leading_vector(solution.block_values[bi]) for bi in blocks]
    adj = {i: [] for i in range(len(members))}
    loc = {}  # clique index in the decomposition -> block-list index
    for ci, idxs in meta.get("block_of_clique", {}).items():
        for ix in idxs:
            loc.setdefault(ci, ix)
    for a, b, _ in meta.get("tree_edges", []):
        if a in loc and b in loc:
            adj[loc[a]].append(loc[b])
            adj[loc[b]].append(loc[a])
    done = [False] * len(members)
    for root in range(len(members)):
        if done[root]:
            continue
        done[root] = True
        stack = [root]
        while stack:
            u = stack.pop()
            pu = {j: vecs[u][a] for a, j in enumerate(members[u])}
            for w in adj[u]:
                if done[w]:
                    continue
                shared = [(pu[j], vecs[w][a]) for a, j in enumerate(members[w]) if j in pu]
                if shared and sum(p * q for p, q in shared) < 0:
                    vecs[w] = -vecs[w]
                done[w] = True
                stack.append(w)
    acc, cnt = np.zeros(n), np.zeros(n)
    for part, v in zip(members, vecs):
        for a, j in enumerate(part):
            acc[j] += v[a]
            cnt[j] += 1
    lifted = cnt > 0
    x[lifted] = acc[lifted] / cnt[lifted]
    return x
