"""Best-bound branch-and-bound over the binaries with SDP node bounds.

Two incumbents are tracked.  ``ub_misdp`` bounds the mixed-integer SDP
relaxation and comes from integral node relaxations or from relaxations
re-solved with all binaries fixed.  ``ub_miqcqp`` is the best point found by
the local solver for the original problem.  The global lower bound folds the
open nodes with ``ub_misdp``.
"""
from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .localsearch import LocalSolveRequest, extract_start_from_sdp, local_solve
from .model import Assignment, MiqcqpInstance
from .relax import build_decomposed_sdp, build_full_sdp, fix_binaries
from .sdp import SdpProblem, SolverSettings, solve
from .sparsity import CliqueDecomposition, build_cs_graph, decompose


class UnboundedRelaxation(RuntimeError):
    """The root relaxation is unbounded below."""


@dataclass(frozen=True)
class Node:
    id: int
    fixings: dict
    lb: float
    depth: int

    def child(self, id_: int, k: int, value: int, lb: float) -> "Node":
        if k in self.fixings:
            raise ValueError(f"binary {k} is already fixed at node {self.id}")
        fix = dict(self.fixings)
        fix[k] = value
        return Node(id_, fix, lb, self.depth + 1)


@dataclass
class BnbSettings:
    """Search parameters.

    ``tol`` is the relative gap at which the search stops.  ``run_local``
    controls how often the local solver is scheduled.  With ``sparsity`` off
    the node relaxation uses a single moment block.
    """

    tol: float = 0.02
    timelimit: float = 3600.0
    run_local: float = 1.5
    local_time_budget: float = 30.0
    local_restarts: int = 6
    mip_terminate: bool = True
    integrality_tol: float = 1e-6
    node_limit: int = 100_000
    sparsity: bool = True
    homogeneous: bool | str = False
    history_interval: float = 1.0
    solver: SolverSettings = field(default_factory=SolverSettings)
    backend: str | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.run_local > 1:
            raise ValueError("run_local must exceed 1")
        if self.timelimit <= 0 or self.node_limit < 1:
            raise ValueError("timelimit and node_limit must be positive")


@dataclass
class BnbState:
    queue: list = field(default_factory=list)
    ub_misdp: float = math.inf
    ub_miqcqp: float = math.inf
    best_misdp: Assignment | None = None
    best_miqcqp: Assignment | None = None
    lb_global: float = -math.inf
    iter: int = 0
    n_local: int = 0
    node_counter: int = 1
    ub_jumps: int = 0
    history: list = field(default_factory=list)

    def push(self, node: Node) -> None:
        # best bound first, deeper first on ties, then creation order
        heapq.heappush(self.queue, (node.lb, -node.depth, node.id, node))

    def pop(self) -> Node:
        return heapq.heappop(self.queue)[-1]

    def prune(self) -> int:
        keep = [e for e in self.queue if e[0] < self.ub_misdp]
        removed = len(self.queue) - len(keep)
        if removed:
            heapq.heapify(keep)
            self.queue = keep
        return removed


@dataclass
class BnbReport:
    status: str
    best_misdp: Assignment | None
    ub_misdp: float
    best_miqcqp: Assignment | None
    ub_miqcqp: float
    lb: float
    misdp_gap: float
    miqcqp_gap: float
    history: list
    iterations: int
    nodes: int
    n_local: int
    ub_jumps: int
    local_time: float
    time_s: float
    root_bound: float
    n_blocks: int
    max_block: int

    @property
    def ls_share(self) -> float:
        return min(1.0, self.local_time / self.time_s) if self.time_s > 0 else 0.0


def gap(ub: float, lb: float) -> float:
    """Relative gap ``(ub - lb) / (|lb| + 1e-9)``; infinite while either bound is."""
    if ub == math.inf or lb == -math.inf:
        return math.inf
    return (ub - lb) / (abs(lb) + 1e-9)


def should_call_local(iter: int, n_local: int, run_local: float) -> bool:
    """Scheduled local-solver rule: ``iter >= run_local**(n_local + 3)`` or ``iter == 1``."""
    return iter == 1 or iter >= run_local ** (n_local + 3)


def select_branch_variable(y_relaxed, integrality_tol: float = 1e-6) -> int | None:
    """Most fractional binary, lowest index on ties; ``None`` when all are integral."""
    y = np.asarray(y_relaxed, dtype=float).reshape(-1)
    if y.size == 0:
        return None
    frac = np.minimum(y, 1.0 - y)
    if frac.max() <= integrality_tol:
        return None
    return int(np.argmax(frac))


def _node_problem(base: SdpProblem, fixings: dict) -> SdpProblem:
    if not fixings:
        return base
    lb, ub = base.scalar_lb.copy(), base.scalar_ub.copy()
    ys = base.meta["y_scalar"]
    for k, v in fixings.items():
        lb[ys[k]] = ub[ys[k]] = float(v)
    return base.with_scalar_bounds(lb, ub)


def _binaries(problem: SdpProblem, solution) -> np.ndarray:
    idx = problem.meta["y_scalar"]
    return np.asarray(solution.scalar_values, dtype=float)[idx] if len(idx) else np.zeros(0)


def solve_bnb(instance: MiqcqpInstance, decomp: CliqueDecomposition | None = None,
              settings: BnbSettings | None = None) -> BnbReport:
    """Run the branch-and-bound search; see the module docstring."""
    settings = settings or BnbSettings()
    t0 = time.monotonic()
    deadline = t0 + settings.timelimit
    if instance.n_int and (np.any(instance.int_lb < 0) or np.any(instance.int_ub > 1)):
        raise ValueError("branch-and-bound requires binary integer variables")
    if settings.sparsity:
        if decomp is None:
            decomp = decompose(build_cs_graph(instance))
        base = build_decomposed_sdp(instance, decomp, homogeneous=settings.homogeneous)
    else:
        base = build_full_sdp(instance, homogeneous=settings.homogeneous)
    n_int = instance.n_int
    st = BnbState()
    ids = itertools.count(2)
    st.push(Node(1, {}, -math.inf, 0))
    unresolved: list[float] = []  # bounds of leaves whose relaxation did not solve
    local_time = 0.0
    last = None  # (problem, solution, fixings) of the last solved node
    root_bound = math.nan
    root_status = None
    last_sample = [-math.inf]

    def elapsed():
        return time.monotonic() - t0

    def sample(force=False):
        now = elapsed()
        if force or now - last_sample[0] >= settings.history_interval:
            st.history.append((now, st.lb_global, st.ub_misdp, st.ub_miqcqp))
            last_sample[0] = now

    def set_misdp(value, point):
        if value < st.ub_misdp:
            st.ub_misdp, st.best_misdp = value, point
            st.ub_jumps += 1
            st.prune()
            return True
        return False

    def run_local(x0, hint, fixed):
        nonlocal local_time
        budget = max(0.0, min(settings.local_time_budget, deadline - time.monotonic()))
        t = time.monotonic()
        res = local_solve(LocalSolveRequest(instance, fixed, hint, x0, budget,
                                            incumbent=st.ub_miqcqp,
                                            mip_terminate=settings.mip_terminate,
                                            restarts=settings.local_restarts))
        local_time += time.monotonic() - t
        if res.status == "feasible" and res.objective < st.ub_miqcqp:
            st.ub_miqcqp, st.best_miqcqp = res.objective, res.point
            st.ub_jumps += 1
            return res
        return None

    def sync_misdp():
        # a feasible point of the original problem lifts to a rank-one point
        # of the mixed-integer relaxation with the same objective
        if st.ub_miqcqp < st.ub_misdp:
            set_misdp(st.ub_miqcqp, st.best_miqcqp)

    def fold():
        lbs = [e[0] for e in st.queue] + unresolved
        new = min(min(lbs, default=math.inf), st.ub_misdp)
        st.lb_global = max(st.lb_global, new) if new != math.inf else st.lb_global
        if not lbs and st.ub_misdp < math.inf:
            st.lb_global = st.ub_misdp

    status = None
    while st.queue:
        if time.monotonic() >= deadline:
            status = "timelimit"
            break
        if st.iter >= settings.node_limit:
            status = "node_limit"
            break
        if gap(st.ub_misdp, st.lb_global) <= settings.tol:
            break
        st.iter += 1
        node = st.pop()
        prob = _node_problem(base, node.fixings)
        sol = solve(prob, settings.solver, settings.backend)
        if st.iter == 1:
            root_status = sol.status
            if sol.status == "dual_infeasible":
                raise UnboundedRelaxation("root relaxation is unbounded")
            root_bound = sol.objective if sol.ok else math.nan
        if sol.ok:
            obj = max(min(sol.objective, sol.dual_objective), node.lb)
            last = (prob, sol, node.fixings)
            if obj < st.ub_misdp:
                yk = _binaries(prob, sol)
                k = select_branch_variable(yk, settings.integrality_tol)
                if k is None:
                    x = extract_start_from_sdp(sol, prob, instance.n_cont)
                    ybin = np.clip(np.round(yk), 0, 1)
                    if set_misdp(sol.objective, Assignment(x, ybin)):
                        # nothing fixed: the binaries are soft hints here
                        if run_local(x, ybin, {}) is not None:
                            sync_misdp()
                else:
                    for v in (0, 1):
                        st.push(node.child(next(ids), k, v, obj))
                    st.node_counter += 2
        elif sol.status != "primal_infeasible":
            free = [k for k in range(n_int) if k not in node.fixings]
            if free:
                for v in (0, 1):
                    st.push(node.child(next(ids), free[0], v, node.lb))
                st.node_counter += 2
            else:
                unresolved.append(node.lb)

        if should_call_local(st.iter, st.n_local, settings.run_local):
            if last is not None:
                lprob, lsol, lfix = last
                x0 = extract_start_from_sdp(lsol, lprob, instance.n_cont)
                hint = np.clip(np.round(_binaries(lprob, lsol)), 0, 1)
            else:
                lfix = node.fixings
                x0 = 0.5 * (np.clip(instance.cont_lb, -1e3, 1e3) + np.clip(instance.cont_ub, -1e3, 1e3))
                hint = np.zeros(n_int)
            st.n_local += 1
            res = run_local(x0, hint, dict(lfix))
            if res is not None:
                y_loc = np.asarray(res.point.y, dtype=float)
                fixed_sol = solve(fix_binaries(base, y_loc), settings.solver, settings.backend) \
                    if n_int else solve(base, settings.solver, settings.backend)
                if fixed_sol.ok and fixed_sol.objective < st.ub_misdp:
                    x = extract_start_from_sdp(fixed_sol, base, instance.n_cont)
                    set_misdp(fixed_sol.objective, Assignment(x, y_loc))
                sync_misdp()
        prev = (st.lb_global, st.ub_misdp, st.ub_miqcqp)
        fold()
        sample(force=(st.lb_global, st.ub_misdp, st.ub_miqcqp) != prev)

    fold()
    if status is None:
        if st.ub_misdp == math.inf and not unresolved:
            status = "infeasible"
        elif unresolved or root_status not in (None, "optimal", "near_optimal", "primal_infeasible"):
            status = "gap_met" if gap(st.ub_misdp, st.lb_global) <= settings.tol else "incomplete"
        else:
            status = "optimal"
    sample(force=True)
    sizes = list(base.block_sizes)
    return BnbReport(status=status, best_misdp=st.best_misdp, ub_misdp=st.ub_misdp,
                     best_miqcqp=st.best_miqcqp, ub_miqcqp=st.ub_miqcqp, lb=st.lb_global,
                     misdp_gap=gap(st.ub_misdp, st.lb_global),
                     miqcqp_gap=gap(st.ub_miqcqp, st.lb_global), history=st.history,
                     iterations=st.iter, nodes=st.node_counter, n_local=st.n_local,
                     ub_jumps=st.ub_jumps, local_time=local_time, time_s=elapsed(),
                     root_bound=root_bound, n_blocks=len(sizes), max_block=max(sizes, default=0))
