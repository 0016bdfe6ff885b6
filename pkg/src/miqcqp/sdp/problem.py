"""Block-diagonal SDP problem description and solver result types."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Hashable

import numpy as np
import scipy.sparse as sp

SENSES = ("<=", "==", ">=")


@dataclass(frozen=True)
class SdpProblem:
    """``min obj`` subject to linear rows over PSD block entries and bounded scalars.

    A block term ``(row, block, r, c, val)`` with ``r <= c`` contributes
    ``val * X_block[r, c]`` (the symmetric entry, counted once).  Scalar
    variables have interval bounds, possibly infinite or collapsed.

    ``block_maps[b]`` maps a block position ``(r, c)`` with ``r <= c`` to the
    semantic moment stored there, e.g. ``("1",)``, ``("x", j)`` or
    ``("w", j, k)``; it is documentation for extraction and debugging and is
    not read by the solver.
    """

    block_sizes: tuple[int, ...]
    scalar_lb: np.ndarray
    scalar_ub: np.ndarray
    row_sense: tuple[str, ...]
    row_rhs: np.ndarray
    scalar_coef: sp.csr_matrix
    bt_row: np.ndarray
    bt_block: np.ndarray
    bt_r: np.ndarray
    bt_c: np.ndarray
    bt_val: np.ndarray
    obj_scalar: np.ndarray
    ob_block: np.ndarray
    ob_r: np.ndarray
    ob_c: np.ndarray
    ob_val: np.ndarray
    obj_const: float = 0.0
    block_labels: tuple[str, ...] = ()
    block_maps: tuple[dict, ...] = ()
    scalar_labels: tuple[Hashable, ...] = ()
    row_labels: tuple[Hashable, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.row_sense)

    @property
    def n_scalars(self) -> int:
        return self.scalar_lb.size

    @property
    def n_blocks(self) -> int:
        return len(self.block_sizes)

    def scalar_index(self, label) -> int:
        return self.scalar_labels.index(label)

    def with_scalar_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "SdpProblem":
        return replace(self, scalar_lb=np.asarray(lb, float), scalar_ub=np.asarray(ub, float))

    def scaled_objective(self, factor: float) -> "SdpProblem":
        return replace(self, obj_scalar=self.obj_scalar * factor, ob_val=self.ob_val * factor,
                       obj_const=self.obj_const * factor)

    def permute_blocks(self, perm) -> "SdpProblem":
        """Block ``perm[i]`` of ``self`` becomes block ``i`` of the result."""
        perm = list(perm)
        inv = np.empty(len(perm), dtype=np.int64)
        inv[perm] = np.arange(len(perm))
        return replace(self, block_sizes=tuple(self.block_sizes[p] for p in perm),
                       bt_block=inv[self.bt_block], ob_block=inv[self.ob_block],
                       block_labels=tuple(self.block_labels[p] for p in perm)
                       if self.block_labels else (),
                       block_maps=tuple(self.block_maps[p] for p in perm)
                       if self.block_maps else ())

    def validate(self) -> list[str]:
        out = []
        if any(n <= 0 for n in self.block_sizes):
            out.append("empty block")
        if self.scalar_coef.shape != (self.n_rows, self.n_scalars):
            out.append("scalar coefficient matrix has the wrong shape")
        if np.any(self.scalar_lb > self.scalar_ub):
            out.append("scalar with empty bound interval")
        for arr, name in ((self.bt_r, "bt_r"), (self.ob_r, "ob_r")):
            if arr.size and np.any(arr > (self.bt_c if name == "bt_r" else self.ob_c)):
                out.append(f"{name}: block terms must satisfy r <= c")
        sizes = np.array(self.block_sizes, dtype=np.int64)
        if self.bt_block.size and np.any(self.bt_c >= sizes[self.bt_block]):
            out.append("block term outside its block")
        if self.ob_block.size and np.any(self.ob_c >= sizes[self.ob_block]):
            out.append("objective block term outside its block")
        if any(s not in SENSES for s in self.row_sense):
            out.append("unknown row sense")
        return out

    def dump(self) -> str:
        """Sparse text form: block sizes, scalar bounds, then one line per term."""
        lines = ["# sdp-problem v1",
                 "blocks " + " ".join(map(str, self.block_sizes)),
                 f"scalars {self.n_scalars}"]
        for i in range(self.n_scalars):
            lines.append(f"bound {i} {self.scalar_lb[i]!r} {self.scalar_ub[i]!r}")
        lines.append(f"rows {self.n_rows}")
        for i, (s, r) in enumerate(zip(self.row_sense, self.row_rhs)):
            lines.append(f"row {i} {s} {r!r}")
        coo = self.scalar_coef.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            lines.append(f"s {i} {j} {v!r}")
        for i, b, r, c, v in zip(self.bt_row, self.bt_block, self.bt_r, self.bt_c, self.bt_val):
            lines.append(f"b {i} {b} {r} {c} {v!r}")
        for j in np.nonzero(self.obj_scalar)[0]:
            lines.append(f"os {j} {self.obj_scalar[j]!r}")
        for b, r, c, v in zip(self.ob_block, self.ob_r, self.ob_c, self.ob_val):
            lines.append(f"ob {b} {r} {c} {v!r}")
        lines.append(f"oc {self.obj_const!r}")
        return "\n".join(lines) + "\n"


class SdpBuilder:
    """Incremental assembly of an :class:`SdpProblem`."""

    def __init__(self):
        self.block_sizes: list[int] = []
        self.block_labels: list[str] = []
        self.block_maps: list[dict] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.scalar_labels: list = []
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self.row_labels: list = []
        self._s_r, self._s_c, self._s_v = [], [], []
        self._b = [[], [], [], [], []]
        self.obj_s: dict[int, float] = {}
        self._ob = [[], [], [], []]
        self.obj_const = 0.0

    def add_block(self, size: int, label: str = "", moment_map: dict | None = None) -> int:
        self.block_sizes.append(int(size))
        self.block_labels.append(label)
        self.block_maps.append(moment_map or {})
        return len(self.block_sizes) - 1

    def add_scalar(self, lb=-np.inf, ub=np.inf, label=None) -> int:
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.scalar_labels.append(label)
        return len(self.lb) - 1

    def add_row(self, scalar_terms, block_terms, sense: str, rhs: float, label=None) -> int:
        """``scalar_terms``: iterable of (var, coef); ``block_terms``: (block, r, c, coef)."""
        i = len(self.senses)
        for j, v in scalar_terms:
            if v != 0.0:
                self._s_r.append(i)
                self._s_c.append(j)
                self._s_v.append(float(v))
        for b, r, c, v in block_terms:
            if v != 0.0:
                if r > c:
                    r, c = c, r
                for lst, val in zip(self._b, (i, b, r, c, float(v))):
                    lst.append(val)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_labels.append(label)
        return i

    def add_objective(self, scalar_terms=(), block_terms=(), constant: float = 0.0):
        for j, v in scalar_terms:
            self.obj_s[j] = self.obj_s.get(j, 0.0) + float(v)
        for b, r, c, v in block_terms:
            if r > c:
                r, c = c, r
            for lst, val in zip(self._ob, (b, r, c, float(v))):
                lst.append(val)
        self.obj_const += float(constant)

    def build(self, **meta) -> SdpProblem:
        n_s = len(self.lb)
        obj = np.zeros(n_s)
        for j, v in self.obj_s.items():
            obj[j] += v
        S = sp.csr_matrix((self._s_v, (self._s_r, self._s_c)), shape=(len(self.senses), n_s))
        S.sum_duplicates()
        ints = lambda a: np.array(a, dtype=np.int64)
        return SdpProblem(
            block_sizes=tuple(self.block_sizes),
            scalar_lb=np.array(self.lb, dtype=float), scalar_ub=np.array(self.ub, dtype=float),
            row_sense=tuple(self.senses), row_rhs=np.array(self.rhs, dtype=float),
            scalar_coef=S,
            bt_row=ints(self._b[0]), bt_block=ints(self._b[1]), bt_r=ints(self._b[2]),
            bt_c=ints(self._b[3]), bt_val=np.array(self._b[4], dtype=float),
            obj_scalar=obj,
            ob_block=ints(self._ob[0]), ob_r=ints(self._ob[1]), ob_c=ints(self._ob[2]),
            ob_val=np.array(self._ob[3], dtype=float), obj_const=self.obj_const,
            block_labels=tuple(self.block_labels), block_maps=tuple(self.block_maps),
            scalar_labels=tuple(self.scalar_labels), row_labels=tuple(self.row_labels),
            meta=dict(meta))


@dataclass(frozen=True)
class SolverSettings:
    rel_gap_tol: float = 1e-7
    feas_tol: float = 1e-7
    max_iterations: int = 200
    step_fraction: float = 0.98
    refine_steps: int = 10
    stall_iterations: int = 5
    trace: bool = False

    def __post_init__(self):
        if self.rel_gap_tol <= 0 or self.feas_tol <= 0 or self.max_iterations <= 0:
            raise ValueError("solver tolerances and iteration limit must be positive")
        if not 0.0 < self.step_fraction < 1.0:
            raise ValueError("step_fraction must lie in (0, 1)")


STATUSES = ("optimal", "near_optimal", "primal_infeasible", "dual_infeasible", "iteration_limit",
            "numerical_failure")


@dataclass
class ConicSolution:
    status: str
    objective: float
    block_values: list[np.ndarray]
    scalar_values: np.ndarray
    duals: np.ndarray
    gap: float
    iterations: int
    dual_objective: float = np.nan
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    std_x: np.ndarray | None = None
    std_y: np.ndarray | None = None
    trace: list[str] = field(default_factory=list)
    history: list[tuple[float, float, float, float]] = field(default_factory=list)  # pobj, dobj, pres, dres

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near_optimal")
