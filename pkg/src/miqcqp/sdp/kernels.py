"""Schur-complement assembly ``M = A W A'`` for the interior-point solver.

The compiled kernel (``_schur``) is used when it was built; otherwise the
numpy implementation in ``_schur_py`` is selected at import.  Set the
environment variable ``MIQCQP_KERNEL=numpy`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

from . import _schur_py
from .standard import StandardForm

try:
    from ._schur import schur_sparse as _compiled_schur_sparse
    HAVE_EXTENSION = True
except ImportError:  # pragma: no cover - depends on the build
    _compiled_schur_sparse = None
    HAVE_EXTENSION = False

BACKEND = "cython" if HAVE_EXTENSION and os.environ.get("MIQCQP_KERNEL") != "numpy" else "numpy"

DENSE_LIMIT = 4000  # largest Schur matrix factored densely
EXPANSION_LIMIT = 20_000_000  # product terms the numpy sparse kernel may precompute
CHUNK_FLOATS = 4_000_000  # working-set cap for the dense kernel


class ResourceLimitError(MemoryError):
    """The Schur system would not fit the memory budget."""


class GroupPlan:
    """Row/triplet structure of one size group and the chosen evaluation method."""

    def __init__(self, A: sp.csr_matrix, group, backend: str, method: str | None = None):
        n, k = group.n, group.k
        nn = n * n
        m = A.shape[0]
        sub = A[:, group.offset:group.offset + group.length].tocoo()
        slot = sub.col // nn
        ti = (sub.col % nn) // n
        tj = sub.col % n
        order = np.lexsort((tj, ti, sub.row, slot))
        slot, row = slot[order].astype(np.int64), sub.row[order].astype(np.int64)
        self.ti = np.ascontiguousarray(ti[order], dtype=np.int64)
        self.tj = np.ascontiguousarray(tj[order], dtype=np.int64)
        self.tv = np.ascontiguousarray(sub.data[order], dtype=float)
        key = slot * m + row
        uniq, first = np.unique(key, return_index=True)
        self.row_ids = uniq % m if m else uniq
        row_slot = uniq // m if m else uniq
        self.blk_ptr = np.searchsorted(row_slot, np.arange(k + 1)).astype(np.int64)
        self.trip_ptr = np.append(first, self.tv.size).astype(np.int64)
        P, Q, S = _schur_py.row_pairs(self.blk_ptr)
        self.I, self.J = self.row_ids[P], self.row_ids[Q]
        self.n_pairs = P.size
        self.n, self.k = n, k

        cnt = np.diff(self.trip_ptr)
        sparse_cost = float(np.sum(cnt[P] * cnt[Q]))
        R = np.diff(self.blk_ptr).astype(float)
        dense_cost = float(np.sum(2.0 * R * n ** 3 + 0.5 * R * R * n * n))
        self.sparse_cost, self.dense_cost = sparse_cost, dense_cost
        if method is None:
            if sparse_cost <= dense_cost and backend == "cython":
                method = "cython"
            elif sparse_cost <= dense_cost and sparse_cost <= EXPANSION_LIMIT:
                method = "expansion"
            else:
                method = "dense"
        if method not in ("cython", "expansion", "dense"):
            raise ValueError(f"unknown Schur kernel {method!r}")
        if method == "cython" and not HAVE_EXTENSION:
            raise RuntimeError("compiled kernel requested but not available")
        self.method = method
        if method == "expansion":
            self._exp = _schur_py.PairExpansion(self.blk_ptr, self.trip_ptr, self.ti, self.tj,
                                                self.tv, n)
        elif method == "dense":
            self._plan_dense(P, Q, S)

    def _plan_dense(self, P, Q, S):
        n, nn = self.n, self.n * self.n
        R = np.diff(self.blk_ptr)
        local = np.arange(self.row_ids.size) - np.repeat(self.blk_ptr[:-1], R)
        pair_pos = np.arange(self.n_pairs)
        self._chunks = []
        s0 = 0
        while s0 < self.k:
            rmax = max(int(R[s0]), 1)
            s1 = s0 + 1
            while s1 < self.k and (s1 - s0 + 1) * max(rmax, int(R[s1])) * nn <= CHUNK_FLOATS:
                rmax = max(rmax, int(R[s1]))
                s1 += 1
            if float(rmax) * rmax * 8 > 4e9:
                raise ResourceLimitError(f"a PSD block touches {rmax} rows; the dense "
                                         "Schur kernel would exceed the memory budget")
            row_of_trip = np.repeat(np.arange(self.row_ids.size), np.diff(self.trip_ptr))
            trips = np.arange(self.trip_ptr[self.blk_ptr[s0]], self.trip_ptr[self.blk_ptr[s1]])
            tr = row_of_trip[trips]
            slot_local = np.searchsorted(self.blk_ptr, tr, side="right") - 1 - s0
            flat = ((slot_local * rmax + local[tr]) * nn + self.ti[trips] * n + self.tj[trips])
            sel = (S >= s0) & (S < s1)
            self._chunks.append(dict(s0=s0, s1=s1, rmax=rmax, flat=flat, tv=self.tv[trips],
                                     ps=S[sel] - s0, pp=local[P[sel]], pq=local[Q[sel]],
                                     pos=pair_pos[sel]))
            s0 = s1

    def values(self, W: np.ndarray) -> np.ndarray:
        """``<A_p, W_s A_q W_s>`` for every stored pair; ``W`` has shape (k, n, n)."""
        if self.n_pairs == 0:
            return np.zeros(0)
        if self.method == "cython":
            out = np.empty(self.n_pairs)
            _compiled_schur_sparse(self.blk_ptr, self.trip_ptr, self.ti, self.tj, self.tv,
                                   np.ascontiguousarray(W), out)
            return out
        if self.method == "expansion":
            return self._exp(W)
        return self._dense_values(W)

    def _dense_values(self, W):
        n = self.n
        out = np.empty(self.n_pairs)
        for ch in self._chunks:
            kc, rmax = ch["s1"] - ch["s0"], ch["rmax"]
            Ad = np.zeros(kc * rmax * n * n)
            Ad[ch["flat"]] = ch["tv"]
            Ad = Ad.reshape(kc, rmax, n, n)
            Wc = W[ch["s0"]:ch["s1"]][:, None]
            T = Wc @ Ad @ Wc
            Mloc = np.einsum("kpab,kqab->kpq", Ad, T, optimize=True)
            out[ch["pos"]] = Mloc[ch["ps"], ch["pp"], ch["pq"]]
        return out


class SchurPlan:
    """Precomputed structure for assembling and factoring ``A W A'``."""

    def __init__(self, sf: StandardForm, backend: str | None = None,
                 memory_limit_bytes: float = 3e9):
        self.backend = backend or BACKEND
        if self.backend == "cython" and not HAVE_EXTENSION:
            raise RuntimeError("compiled kernel requested but not available")
        self.m = sf.m
        if self.m <= DENSE_LIMIT and 8.0 * self.m * self.m > memory_limit_bytes:
            raise ResourceLimitError("dense Schur matrix exceeds the memory budget")
        self.A_lp = sf.A[:, :sf.n_lp].tocsr()
        self.groups = [GroupPlan(sf.A, g, self.backend) for g in sf.groups]
        npairs = sum(g.n_pairs for g in self.groups)
        if 8.0 * 3 * npairs > memory_limit_bytes:
            raise ResourceLimitError("Schur pattern exceeds the memory budget")
        self.I = np.concatenate([g.I for g in self.groups]) if self.groups else np.zeros(0, int)
        self.J = np.concatenate([g.J for g in self.groups]) if self.groups else np.zeros(0, int)
        self.dense = self.m <= DENSE_LIMIT

    def assemble(self, w2: np.ndarray, Ws: list[np.ndarray]):
        """Return ``M`` (dense ndarray or sparse csc) for LP scaling ``w2`` and block ``Ws``."""
        m = self.m
        vals = np.concatenate([g.values(W) for g, W in zip(self.groups, Ws)]) \
            if self.groups else np.zeros(0)
        U = sp.coo_matrix((vals, (self.I, self.J)), shape=(m, m))
        lp = (self.A_lp.multiply(w2[None, :]) @ self.A_lp.T).tocoo() if self.A_lp.shape[1] \
            else sp.coo_matrix((m, m))
        if self.dense:
            M = U.toarray()
            d = np.diag(M).copy()
            M += M.T
            M[np.diag_indices(m)] -= d
            np.add.at(M, (lp.row, lp.col), lp.data)
            return M
        Uc = U.tocsc()
        return (Uc + Uc.T - sp.diags(Uc.diagonal()) + lp.tocsc()).tocsc()
