"""In-memory MIQCQP instances, evaluation, feasibility and a brute-force oracle.

An instance has the shape::

    min   x'Qx + d'x + r'y
    s.t.  x'A_i x + a_i'x + b_i'y  (<=, ==, >=)  c_i      (quadratic rows)
          f_i'x + g_i'y            (<=, ==, >=)  h_i      (linear rows)
          lb <= x <= ub,  y integer within bounds

Quadratic coefficients live on the continuous variables only; products of a
continuous and an integer variable are representable (``mixed``) so that
``validate`` can reject them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

SENSES = ("<=", "==", ">=")
FEAS_TOL = 1e-6


class DimensionError(ValueError):
    """A point does not match the dimensions of an instance."""


class OracleError(ValueError):
    """The brute-force oracle cannot (or may not) run on an instance."""


class OracleInfeasible(OracleError):
    """No grid point satisfied every constraint; this is not a proof."""


@dataclass(frozen=True)
class QuadraticForm:
    """``x'Sx + lin_x'x + lin_y'y + constant`` with ``S`` symmetric.

    ``quad`` holds the upper triangle of ``S``: key ``(j, k)`` with ``j <= k``
    maps to ``S[j, k] == S[k, j]``, so an off-diagonal entry contributes
    ``2 * S[j, k] * x_j * x_k``.  Use :meth:`from_matrix` or
    :meth:`from_monomials` to avoid thinking about the factor of two.
    """

    quad: Mapping[tuple[int, int], float] = field(default_factory=dict)
    lin_x: Mapping[int, float] = field(default_factory=dict)
    lin_y: Mapping[int, float] = field(default_factory=dict)
    constant: float = 0.0
    mixed: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        for j, k in self.quad:
            if j > k:
                raise ValueError(f"quad key ({j}, {k}) is below the diagonal; store the upper triangle")
        object.__setattr__(self, "quad", {k: float(v) for k, v in self.quad.items() if v != 0.0})
        object.__setattr__(self, "lin_x", {k: float(v) for k, v in self.lin_x.items() if v != 0.0})
        object.__setattr__(self, "lin_y", {k: float(v) for k, v in self.lin_y.items() if v != 0.0})
        object.__setattr__(self, "mixed", {k: float(v) for k, v in self.mixed.items() if v != 0.0})
        object.__setattr__(self, "constant", float(self.constant))

    @classmethod
    def from_matrix(cls, Q, lin_x=None, lin_y=None, constant=0.0) -> "QuadraticForm":
        """Build from a dense (possibly unsymmetric) matrix; ``x'Qx`` is preserved."""
        Q = np.asarray(Q, dtype=float)
        S = 0.5 * (Q + Q.T)
        rows, cols = np.nonzero(np.triu(S))
        quad = {(int(j), int(k)): float(S[j, k]) for j, k in zip(rows, cols)}
        lx = {} if lin_x is None else {int(j): float(v) for j, v in enumerate(np.asarray(lin_x, float)) if v}
        ly = {} if lin_y is None else {int(j): float(v) for j, v in enumerate(np.asarray(lin_y, float)) if v}
        return cls(quad, lx, ly, constant)

    @classmethod
    def from_monomials(cls, terms: Mapping[tuple[int, int], float], lin_x=None, lin_y=None,
                       constant=0.0) -> "QuadraticForm":
        """Build from monomial coefficients: ``{(j, k): c}`` means ``c * x_j * x_k``."""
        quad: dict[tuple[int, int], float] = {}
        for (j, k), c in terms.items():
            key = (min(j, k), max(j, k))
            quad[key] = quad.get(key, 0.0) + (c if j == k else 0.5 * c)
        return cls(quad, dict(lin_x or {}), dict(lin_y or {}), constant)

    def max_cont_index(self) -> int:
        idx = [k for _, k in self.quad] + list(self.lin_x) + [j for j, _ in self.mixed]
        return max(idx, default=-1)

    def max_int_index(self) -> int:
        return max(list(self.lin_y) + [k for _, k in self.mixed], default=-1)

    def is_homogeneous_quadratic(self) -> bool:
        return not self.lin_x and not self.lin_y and not self.mixed and self.constant == 0.0


@dataclass(frozen=True)
class QuadConstraint:
    form: QuadraticForm
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"unknown sense {self.sense!r}")
        object.__setattr__(self, "rhs", float(self.rhs))


@dataclass(frozen=True)
class LinConstraint:
    lin_x: Mapping[int, float]
    lin_y: Mapping[int, float]
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"unknown sense {self.sense!r}")
        object.__setattr__(self, "lin_x", {k: float(v) for k, v in self.lin_x.items() if v != 0.0})
        object.__setattr__(self, "lin_y", {k: float(v) for k, v in self.lin_y.items() if v != 0.0})
        object.__setattr__(self, "rhs", float(self.rhs))


@dataclass(frozen=True)
class Assignment:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(-1))


@dataclass(frozen=True)
class MiqcqpInstance:
    n_cont: int
    n_int: int
    cont_lb: np.ndarray
    cont_ub: np.ndarray
    int_lb: np.ndarray
    int_ub: np.ndarray
    objective: QuadraticForm
    quad_constraints: tuple[QuadConstraint, ...] = ()
    lin_constraints: tuple[LinConstraint, ...] = ()
    cont_names: tuple[str, ...] | None = None
    int_names: tuple[str, ...] | None = None

    def __post_init__(self):
        for name, n in (("cont_lb", self.n_cont), ("cont_ub", self.n_cont),
                        ("int_lb", self.n_int), ("int_ub", self.n_int)):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != n:
                raise ValueError(f"{name} has length {arr.size}, expected {n}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "quad_constraints", tuple(self.quad_constraints))
        object.__setattr__(self, "lin_constraints", tuple(self.lin_constraints))

    @classmethod
    def build(cls, n_cont, n_int, objective, quad_constraints=(), lin_constraints=(),
              cont_bounds=None, int_bounds=None, cont_names=None, int_names=None):
        """Convenience constructor taking ``[(lb, ub), ...]`` bound lists.

        Integer bounds default to ``[0, 1]``; continuous bounds to ``(-inf, inf)``.
        """
        cb = np.array(cont_bounds if cont_bounds is not None else [(-np.inf, np.inf)] * n_cont,
                      dtype=float).reshape(n_cont, 2)
        ib = np.array(int_bounds if int_bounds is not None else [(0, 1)] * n_int,
                      dtype=float).reshape(n_int, 2)
        return cls(n_cont, n_int, cb[:, 0], cb[:, 1], ib[:, 0], ib[:, 1], objective,
                   tuple(quad_constraints), tuple(lin_constraints),
                   tuple(cont_names) if cont_names else None,
                   tuple(int_names) if int_names else None)

    def with_int_bounds(self, int_lb, int_ub) -> "MiqcqpInstance":
        return MiqcqpInstance(self.n_cont, self.n_int, self.cont_lb, self.cont_ub,
                              np.asarray(int_lb, float), np.asarray(int_ub, float), self.objective,
                              self.quad_constraints, self.lin_constraints,
                              self.cont_names, self.int_names)

    def forms(self) -> Iterable[QuadraticForm]:
        yield self.objective
        for c in self.quad_constraints:
            yield c.form

    @cached_property
    def system(self) -> "ConstraintSystem":
        return ConstraintSystem(self)


@dataclass(frozen=True)
class Violation:
    where: str
    index: int | None
    message: str

    def __str__(self):
        loc = self.where if self.index is None else f"{self.where}[{self.index}]"
        return f"{loc}: {self.message}"


def validate(instance: MiqcqpInstance) -> list[Violation]:
    """Return every structural problem with ``instance``; empty means well-formed."""
    out: list[Violation] = []
    for j in range(instance.n_cont):
        lo, hi = instance.cont_lb[j], instance.cont_ub[j]
        if np.isnan(lo) or np.isnan(hi) or lo > hi:
            out.append(Violation("cont_bounds", j, f"empty interval [{lo}, {hi}]"))
    for k in range(instance.n_int):
        lo, hi = instance.int_lb[k], instance.int_ub[k]
        if np.isnan(lo) or np.isnan(hi) or lo > hi:
            out.append(Violation("int_bounds", k, f"empty interval [{lo}, {hi}]"))
        elif lo < 0 or hi > 1 or lo != round(lo) or hi != round(hi):
            out.append(Violation("int_bounds", k,
                                 f"integer variables must be binary, got [{lo}, {hi}]"))

    def check_form(form: QuadraticForm, where: str, idx: int | None):
        if form.max_cont_index() >= instance.n_cont:
            out.append(Violation(where, idx, f"continuous index {form.max_cont_index()} "
                                             f">= n_cont={instance.n_cont}"))
        if form.max_int_index() >= instance.n_int:
            out.append(Violation(where, idx, f"integer index {form.max_int_index()} "
                                             f">= n_int={instance.n_int}"))
        if form.mixed:
            pairs = ", ".join(f"x{j}*y{k}" for j, k in sorted(form.mixed))
            out.append(Violation(where, idx, "continuous-integer product violates the "
                                             f"decoupling assumption ({pairs})"))

    check_form(instance.objective, "objective", None)
    for i, con in enumerate(instance.quad_constraints):
        check_form(con.form, "quad_constraints", i)
    for i, con in enumerate(instance.lin_constraints):
        if max(con.lin_x, default=-1) >= instance.n_cont:
            out.append(Violation("lin_constraints", i, "continuous index out of range"))
        if max(con.lin_y, default=-1) >= instance.n_int:
            out.append(Violation("lin_constraints", i, "integer index out of range"))
    return out


def _check_point(instance: MiqcqpInstance, point: Assignment):
    if point.x.size != instance.n_cont or point.y.size != instance.n_int:
        raise DimensionError(f"point has (x={point.x.size}, y={point.y.size}); instance needs "
                             f"(x={instance.n_cont}, y={instance.n_int})")


def evaluate(form: QuadraticForm, point: Assignment) -> float:
    x, y = point.x, point.y
    if form.max_cont_index() >= x.size or form.max_int_index() >= y.size:
        raise DimensionError("point is too short for this form")
    total = form.constant
    for (j, k), v in form.quad.items():
        total += v * x[j] * x[k] * (1.0 if j == k else 2.0)
    for j, v in form.lin_x.items():
        total += v * x[j]
    for k, v in form.lin_y.items():
        total += v * y[k]
    for (j, k), v in form.mixed.items():
        total += v * x[j] * y[k]
    return float(total)


class FormStack:
    """A list of quadratic forms compiled for vectorized evaluation."""

    def __init__(self, forms: Sequence[QuadraticForm], n_cont: int, n_int: int):
        self.n_rows = len(forms)
        self.n_cont = n_cont
        self.n_int = n_int
        rows, js, ks, cs = [], [], [], []
        lx_r, lx_c, lx_v, ly_r, ly_c, ly_v = [], [], [], [], [], []
        mr, mj, mk, mc = [], [], [], []
        const = np.zeros(self.n_rows)
        for i, f in enumerate(forms):
            for (j, k), v in f.quad.items():
                rows.append(i)
                js.append(j)
                ks.append(k)
                cs.append(v if j == k else 2.0 * v)
            for j, v in f.lin_x.items():
                lx_r.append(i)
                lx_c.append(j)
                lx_v.append(v)
            for k, v in f.lin_y.items():
                ly_r.append(i)
                ly_c.append(k)
                ly_v.append(v)
            for (j, k), v in f.mixed.items():
                mr.append(i)
                mj.append(j)
                mk.append(k)
                mc.append(v)
            const[i] = f.constant
        self.t_row = np.array(rows, dtype=np.int64)
        self.t_j = np.array(js, dtype=np.int64)
        self.t_k = np.array(ks, dtype=np.int64)
        self.t_c = np.array(cs, dtype=float)
        self.m_row = np.array(mr, dtype=np.int64)
        self.m_j = np.array(mj, dtype=np.int64)
        self.m_k = np.array(mk, dtype=np.int64)
        self.m_c = np.array(mc, dtype=float)
        self.Lx = sp.csr_matrix((lx_v, (lx_r, lx_c)), shape=(self.n_rows, n_cont))
        self.Ly = sp.csr_matrix((ly_v, (ly_r, ly_c)), shape=(self.n_rows, n_int))
        self.const = const
        nt = self.t_row.size
        self._agg = sp.csr_matrix((np.ones(nt), (np.arange(nt), self.t_row)),
                                  shape=(nt, self.n_rows))

    def values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = self.const + self.Lx @ x + self.Ly @ y
        if self.t_row.size:
            out += np.bincount(self.t_row, self.t_c * x[self.t_j] * x[self.t_k],
                               minlength=self.n_rows)
        if self.m_row.size:
            out += np.bincount(self.m_row, self.m_c * x[self.m_j] * y[self.m_k],
                               minlength=self.n_rows)
        return out

    def values_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Rows of ``X`` are points; returns an ``(n_points, n_rows)`` array."""
        out = np.broadcast_to(self.const + self.Ly @ y, (X.shape[0], self.n_rows)).copy()
        out += (self.Lx @ X.T).T
        if self.t_row.size:
            out += (X[:, self.t_j] * X[:, self.t_k] * self.t_c) @ self._agg
        if self.m_row.size:
            for r, j, k, c in zip(self.m_row, self.m_j, self.m_k, self.m_c):
                out[:, r] += c * X[:, j] * y[k]
        return out

    def jacobian_x(self, x: np.ndarray, y: np.ndarray) -> sp.csr_matrix:
        """Sparse ``d values / d x``."""
        r = np.concatenate([self.t_row, self.t_row, self.m_row])
        c = np.concatenate([self.t_j, self.t_k, self.m_j])
        v = np.concatenate([self.t_c * x[self.t_k], self.t_c * x[self.t_j], self.m_c * y[self.m_k]])
        J = sp.csr_matrix((v, (r, c)), shape=(self.n_rows, self.n_cont))
        return J + self.Lx


class ConstraintSystem:
    """Objective and all constraints of an instance in vectorized form."""

    def __init__(self, instance: MiqcqpInstance):
        self.instance = instance
        n, m = instance.n_cont, instance.n_int
        self.objective = FormStack([instance.objective], n, m)
        qc = instance.quad_constraints
        lin_forms = [QuadraticForm({}, c.lin_x, c.lin_y) for c in instance.lin_constraints]
        self.rows = FormStack([c.form for c in qc] + lin_forms, n, m)
        self.senses = np.array([c.sense for c in qc] + [c.sense for c in instance.lin_constraints])
        self.rhs = np.array([c.rhs for c in qc] + [c.rhs for c in instance.lin_constraints],
                            dtype=float)
        self.n_quad = len(qc)
        self.is_le = self.senses == "<="
        self.is_ge = self.senses == ">="
        self.is_eq = self.senses == "=="

    def objective_value(self, x, y) -> float:
        return float(self.objective.values(x, y)[0])

    def violations(self, x, y) -> np.ndarray:
        """Nonnegative violation of every constraint row."""
        g = self.rows.values(x, y) - self.rhs
        return np.where(self.is_le, np.maximum(g, 0.0),
                        np.where(self.is_ge, np.maximum(-g, 0.0), np.abs(g)))

    def violations_batch(self, X, y) -> np.ndarray:
        g = self.rows.values_batch(X, y) - self.rhs
        return np.where(self.is_le, np.maximum(g, 0.0),
                        np.where(self.is_ge, np.maximum(-g, 0.0), np.abs(g)))

    def max_violation(self, x, y) -> float:
        inst = self.instance
        v = self.violations(x, y)
        worst = float(v.max()) if v.size else 0.0
        if inst.n_cont:
            worst = max(worst, float(np.max(np.maximum(inst.cont_lb - x, 0.0))),
                        float(np.max(np.maximum(x - inst.cont_ub, 0.0))))
        if inst.n_int:
            worst = max(worst, float(np.max(np.maximum(inst.int_lb - y, 0.0))),
                        float(np.max(np.maximum(y - inst.int_ub, 0.0))),
                        float(np.max(np.abs(y - np.round(y)))))
        return worst


def is_feasible(instance: MiqcqpInstance, point: Assignment, tol: float = FEAS_TOL) -> bool:
    """Every constraint, bound and integrality requirement holds within ``tol`` (absolute)."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    _check_point(instance, point)
    return instance.system.max_violation(point.x, point.y) <= tol


def objective_value(instance: MiqcqpInstance, point: Assignment) -> float:
    _check_point(instance, point)
    return instance.system.objective_value(point.x, point.y)


def _integer_assignments(instance: MiqcqpInstance):
    ranges = [range(int(np.ceil(lo)), int(np.floor(hi)) + 1)
              for lo, hi in zip(instance.int_lb, instance.int_ub)]
    for combo in itertools.product(*ranges):
        yield np.array(combo, dtype=float)


def brute_force_solve(instance: MiqcqpInstance, grid_density: int = 17,
                      refine_steps: int = 40, n_starts: int = 4) -> tuple[Assignment, float]:
    """Enumerate integers, grid-search the continuous box, then polish.

    For each integer assignment the continuous box is sampled at
    ``grid_density`` points per axis.  The ``n_starts`` best feasible grid
    points (tolerance ``1e-6``) are improved by a compass search over the
    coordinate and pairwise-diagonal directions whose step starts at the grid
    spacing and is halved ``refine_steps`` times.  Refinement moves never
    increase the constraint violation of the starting grid point, so the
    polish cannot trade feasibility slack for objective.  The returned point is
    the best over all integer assignments.

    Raises :class:`OracleError` when the instance is too large or unbounded and
    :class:`OracleInfeasible` when no grid point is feasible.
    """
    if instance.n_int > 12 or instance.n_cont > 4:
        raise OracleError(f"oracle limited to n_int <= 12 and n_cont <= 4 "
                          f"(got {instance.n_int}, {instance.n_cont})")
    lb, ub = instance.cont_lb, instance.cont_ub
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))
            and np.all(np.isfinite(instance.int_lb)) and np.all(np.isfinite(instance.int_ub))):
        raise OracleError("oracle requires every variable to be bounded")
    if grid_density < 1:
        raise OracleError("grid_density must be positive")
    system = instance.system
    n = instance.n_cont
    if n:
        axes = [np.linspace(lb[j], ub[j], grid_density) if grid_density > 1
                else np.array([0.5 * (lb[j] + ub[j])]) for j in range(n)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        spacing = (ub - lb) / max(grid_density - 1, 1)
    else:
        grid = np.zeros((1, 0))
        spacing = np.zeros(0)
    dirs = _compass_directions(n)

    best_val, best_x, best_y = np.inf, None, None
    for y in _integer_assignments(instance):
        viol = system.violations_batch(grid, y)
        vmax = viol.max(axis=1) if viol.shape[1] else np.zeros(grid.shape[0])
        ok = vmax <= FEAS_TOL
        if not ok.any():
            continue
        vals = system.objective.values_batch(grid, y)[:, 0]
        vals = np.where(ok, vals, np.inf)
        order = np.argsort(vals, kind="stable")[:max(1, n_starts)]
        for i in order:
            if not ok[i]:
                break
            x, val = grid[i].copy(), float(vals[i])
            if n and refine_steps > 0:
                x, val = _compass_search(system, x, y, val, max(vmax[i], 0.0), spacing,
                                         dirs, lb, ub, refine_steps)
            if val < best_val:
                best_val, best_x, best_y = val, x, y
    if best_x is None:
        raise OracleInfeasible("no feasible grid point (infeasible within grid, not a proof)")
    return Assignment(best_x, best_y), best_val


def _compass_directions(n):
    eye = np.eye(n)
    dirs = [s * eye[j] for j in range(n) for s in (1.0, -1.0)]
    for j in range(n):
        for k in range(j + 1, n):
            for sj in (1.0, -1.0):
                for sk in (1.0, -1.0):
                    dirs.append(sj * eye[j] + sk * eye[k])
    return np.array(dirs).reshape(-1, n)


def _compass_search(system, x, y, val, tol, spacing, dirs, lb, ub, halvings):
    step = spacing.copy()
    for _ in range(halvings + 1):
        for _sweep in range(100):
            cand = np.clip(x + dirs * step, lb, ub)
            viol = system.violations_batch(cand, y)
            ok = viol.max(axis=1) <= tol if viol.shape[1] else np.ones(len(cand), bool)
            vals = np.where(ok, system.objective.values_batch(cand, y)[:, 0], np.inf)
            i = int(np.argmin(vals))
            if not vals[i] < val:
                break
            x, val = cand[i], float(vals[i])
        step = step * 0.5
    return x, val
