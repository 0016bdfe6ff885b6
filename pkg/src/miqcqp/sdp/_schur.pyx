# cython: language_level=3
"""Compiled Schur-complement kernel for sparse constraint rows on small PSD blocks."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def schur_sparse(const cnp.int64_t[::1] blk_ptr, const cnp.int64_t[::1] trip_ptr,
                 const cnp.int64_t[::1] ti, const cnp.int64_t[::1] tj,
                 const double[::1] tv, const double[:, :, ::1] W, double[::1] out):
    """For every block and every row pair p <= q touching it, write <A_p, W A_q W>.

    Rows of block ``s`` are ``blk_ptr[s]:blk_ptr[s+1]``; row ``p`` owns the
    full-symmetric triplets ``trip_ptr[p]:trip_ptr[p+1]``.  Results are
    stored block by block, pairs in row-major upper-triangular order.
    """
    cdef Py_ssize_t s, p, q, a, b, pos = 0
    cdef Py_ssize_t nblk = blk_ptr.shape[0] - 1
    cdef double acc, va
    cdef cnp.int64_t ia, ja
    with nogil:
        for s in range(nblk):
            for p in range(blk_ptr[s], blk_ptr[s + 1]):
                for q in range(p, blk_ptr[s + 1]):
                    acc = 0.0
                    for a in range(trip_ptr[p], trip_ptr[p + 1]):
                        va = tv[a]
                        ia = ti[a]
                        ja = tj[a]
                        for b in range(trip_ptr[q], trip_ptr[q + 1]):
                            acc = acc + va * tv[b] * W[s, ia, ti[b]] * W[s, tj[b], ja]
                    out[pos] = acc
                    pos += 1
    return pos
