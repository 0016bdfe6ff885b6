"""Compile an :class:`SdpProblem` into the standard form ``min c'x, Ax = b, x in K``.

``K`` is a nonnegative orthant followed by PSD blocks.  The flat primal
vector stores the orthant first, then every PSD block as a full row-major
``n x n`` matrix.  Blocks of equal size are stored contiguously so cone
operations can be batched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .problem import SdpProblem


@dataclass
class BlockGroup:
    n: int
    blocks: np.ndarray  # problem block indices, in slot order
    offset: int  # flat offset of the first slot

    @property
    def k(self) -> int:
        return self.blocks.size

    @property
    def length(self) -> int:
        return self.k * self.n * self.n

    def view(self, flat: np.ndarray) -> np.ndarray:
        return flat[self.offset:self.offset + self.length].reshape(self.k, self.n, self.n)


@dataclass
class StandardForm:
    A: sp.csr_matrix  # row-equilibrated
    b: np.ndarray
    c: np.ndarray  # objective-scaled
    c_scale: float
    obj_const: float
    row_scale: np.ndarray
    n_lp: int
    groups: list[BlockGroup]
    block_loc: list[tuple[int, int]]  # problem block -> (group, slot)
    scalar_map: sp.csr_matrix  # problem scalar values = scalar_map @ x_lp + scalar_const
    scalar_const: np.ndarray
    row_map: np.ndarray  # problem row -> standard row (-1 when dropped)
    infeasible_rows: list[int]

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def N(self) -> int:
        return self.c.size

    @property
    def nu(self) -> int:
        return self.n_lp + sum(g.n * g.k for g in self.groups)

    def unit(self) -> np.ndarray:
        """Identity element of the cone."""
        e = np.zeros(self.N)
        e[:self.n_lp] = 1.0
        for g in self.groups:
            g.view(e)[:] = np.eye(g.n)
        return e

    def blocks_of(self, flat: np.ndarray) -> list[np.ndarray]:
        out = []
        for gi, slot in self.block_loc:
            X = self.groups[gi].view(flat)[slot]
            out.append(0.5 * (X + X.T))
        return out

    def scalars_of(self, flat: np.ndarray) -> np.ndarray:
        return self.scalar_map @ flat[:self.n_lp] + self.scalar_const


def compile_problem(problem: SdpProblem, equilibrate: bool = True) -> StandardForm:
    sizes = np.array(problem.block_sizes, dtype=np.int64)
    n_s = problem.n_scalars

    # scalar substitution
    lp_count = 0
    sm_r, sm_c, sm_v = [], [], []
    s_const = np.zeros(n_s)
    extra_rows = []  # (lp_a, lp_b, rhs) for a + b = rhs
    for j in range(n_s):
        lo, hi = problem.scalar_lb[j], problem.scalar_ub[j]
        if lo == hi:
            s_const[j] = lo
        elif np.isfinite(lo):
            s_const[j] = lo
            sm_r.append(j); sm_c.append(lp_count); sm_v.append(1.0)
            if np.isfinite(hi):
                extra_rows.append((lp_count, lp_count + 1, hi - lo))
                lp_count += 2
            else:
                lp_count += 1
        elif np.isfinite(hi):
            s_const[j] = hi
            sm_r.append(j); sm_c.append(lp_count); sm_v.append(-1.0)
            lp_count += 1
        else:
            sm_r += [j, j]; sm_c += [lp_count, lp_count + 1]; sm_v += [1.0, -1.0]
            lp_count += 2
    n_sub = lp_count
    T = sp.csr_matrix((sm_v, (sm_r, sm_c)), shape=(n_s, n_sub))

    S = problem.scalar_coef.tocsr()
    lp_rows = (S @ T).tocsr()
    rhs = problem.row_rhs - S @ s_const
    n_rows = problem.n_rows
    has_block = np.zeros(n_rows, dtype=bool)
    has_block[problem.bt_row] = True
    has_lp = np.diff(lp_rows.indptr) > 0
    lp_rows.eliminate_zeros()
    has_lp = np.diff(lp_rows.indptr) > 0

    row_map = -np.ones(n_rows, dtype=np.int64)
    infeasible = []
    keep = []
    for i in range(n_rows):
        if has_block[i] or has_lp[i]:
            keep.append(i)
            continue
        tol = 1e-9 * (1.0 + abs(problem.row_rhs[i]))
        sense, r = problem.row_sense[i], rhs[i]
        if (sense == "<=" and r < -tol) or (sense == ">=" and r > tol) or \
                (sense == "==" and abs(r) > tol):
            infeasible.append(i)
    keep = np.array(keep, dtype=np.int64)
    row_map[keep] = np.arange(keep.size)
    m_orig = keep.size

    ineq = [i for i in keep if problem.row_sense[i] != "=="]
    n_slack = len(ineq)
    n_lp = n_sub + n_slack
    m = m_orig + len(extra_rows)

    # group blocks by size, keeping problem order within a group
    groups: list[BlockGroup] = []
    block_loc: list[tuple[int, int]] = [(0, 0)] * len(sizes)
    offset = n_lp
    for n in sorted(set(sizes.tolist())):
        members = np.nonzero(sizes == n)[0]
        g = BlockGroup(int(n), members, offset)
        for slot, b in enumerate(members):
            block_loc[b] = (len(groups), slot)
        groups.append(g)
        offset += g.length
    N = offset
    block_off = np.zeros(len(sizes), dtype=np.int64)
    for b, (gi, slot) in enumerate(block_loc):
        block_off[b] = groups[gi].offset + slot * sizes[b] * sizes[b]

    rows, cols, vals = [], [], []
    # scalar part of kept rows
    sub = lp_rows[keep].tocoo()
    rows.append(sub.row); cols.append(sub.col); vals.append(sub.data)
    # slacks
    ineq_std = row_map[np.array(ineq, dtype=np.int64)] if ineq else np.zeros(0, np.int64)
    sign = np.array([1.0 if problem.row_sense[i] == "<=" else -1.0 for i in ineq])
    rows.append(ineq_std); cols.append(n_sub + np.arange(n_slack)); vals.append(sign)
    # bound rows a + b = hi - lo
    b_vec = np.zeros(m)
    b_vec[:m_orig] = rhs[keep]
    for t, (a, bb, r) in enumerate(extra_rows):
        rows.append(np.array([m_orig + t, m_orig + t])); cols.append(np.array([a, bb]))
        vals.append(np.array([1.0, 1.0]))
        b_vec[m_orig + t] = r
    # block terms, full symmetric
    br, bc, bb_, bv = _sym_terms(problem.bt_row, problem.bt_block, problem.bt_r,
                                 problem.bt_c, problem.bt_val, sizes, block_off)
    rows.append(row_map[br]); cols.append(bc); vals.append(bv)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(m, N))
    A.sum_duplicates()
    A.eliminate_zeros()

    c = np.zeros(N)
    c[:n_sub] = T.T @ problem.obj_scalar
    obj_const = problem.obj_const + float(problem.obj_scalar @ s_const)
    _, oc, _, ov = _sym_terms(np.zeros_like(problem.ob_block), problem.ob_block, problem.ob_r,
                              problem.ob_c, problem.ob_val, sizes, block_off)
    np.add.at(c, oc, ov)

    if equilibrate and m:
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
        row_scale = np.where(norms > 0, 1.0 / np.maximum(norms, 1e-300), 1.0)
    else:
        row_scale = np.ones(m)
    A = sp.diags(row_scale) @ A
    A = A.tocsr()
    b_vec = b_vec * row_scale
    c_scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    c = c / c_scale

    scalar_map = sp.csr_matrix((T.data, T.indices, T.indptr), shape=(n_s, n_lp))
    return StandardForm(A, b_vec, c, c_scale, obj_const, row_scale, n_lp, groups, block_loc,
                        scalar_map, s_const, row_map, infeasible)


def _sym_terms(row, block, r, c, val, sizes, block_off):
    """Expand ``val * X[r, c]`` (r <= c) into full-symmetric flat coefficients."""
    n = sizes[block] if block.size else np.zeros(0, np.int64)
    diag = r == c
    off = ~diag
    rows = np.concatenate([row[diag], row[off], row[off]])
    blocks = np.concatenate([block[diag], block[off], block[off]])
    cols = np.concatenate([block_off[block[diag]] + r[diag] * n[diag] + c[diag],
                           block_off[block[off]] + r[off] * n[off] + c[off],
                           block_off[block[off]] + c[off] * n[off] + r[off]])
    vals = np.concatenate([val[diag], 0.5 * val[off], 0.5 * val[off]])
    return rows, cols, blocks, vals
