"""Pure numpy versions of the Schur-complement kernels.

``schur_sparse`` has the same signature and output as the compiled kernel.
``PairExpansion`` precomputes the index arithmetic once so repeated
evaluations reduce to a gather, a product and a ``bincount``.
"""
from __future__ import annotations

import numpy as np


def row_pairs(blk_ptr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-list indices ``(p, q)`` with ``p <= q`` per block and the block of each pair."""
    counts = np.diff(blk_ptr)
    P, Q, S = [], [], []
    for R in np.unique(counts):
        if R == 0:
            continue
        blocks = np.nonzero(counts == R)[0]
        iu, ju = np.triu_indices(int(R))
        starts = blk_ptr[blocks][:, None]
        P.append((starts + iu).ravel())
        Q.append((starts + ju).ravel())
        S.append(np.repeat(blocks, iu.size))
    if not P:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    P, Q, S = np.concatenate(P), np.concatenate(Q), np.concatenate(S)
    order = np.lexsort((Q, P))
    return P[order], Q[order], S[order]


class PairExpansion:
    """Flattened product terms ``tv[a] tv[b] W[s, ti[a], ti[b]] W[s, tj[b], tj[a]]``."""

    def __init__(self, blk_ptr, trip_ptr, ti, tj, tv, n):
        P, Q, S = row_pairs(blk_ptr)
        self.n_pairs = P.size
        cnt = np.diff(trip_ptr)
        per_pair = cnt[P] * cnt[Q]
        total = int(per_pair.sum())
        self.size = total
        pair = np.repeat(np.arange(P.size), per_pair)
        start = np.repeat(np.cumsum(per_pair) - per_pair, per_pair)
        t = np.arange(total) - start
        cq = cnt[Q][pair]
        a = trip_ptr[P][pair] + t // np.maximum(cq, 1)
        b = trip_ptr[Q][pair] + t % np.maximum(cq, 1)
        s = S[pair]
        nn = n * n
        self.pair = pair
        self.idx1 = s * nn + ti[a] * n + ti[b]
        self.idx2 = s * nn + tj[b] * n + tj[a]
        self.coef = tv[a] * tv[b]

    def __call__(self, W: np.ndarray) -> np.ndarray:
        w = W.reshape(-1)
        return np.bincount(self.pair, self.coef * w[self.idx1] * w[self.idx2],
                           minlength=self.n_pairs)


def schur_sparse(blk_ptr, trip_ptr, ti, tj, tv, W, out):
    vals = PairExpansion(blk_ptr, trip_ptr, ti, tj, tv, W.shape[1])(W)
    out[:vals.size] = vals
    return vals.size
