# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Lindblad right-hand side.

Operators arrive as CSR triples (indptr, indices, data) with int32 indices.
The density matrix must be Hermitian; that lets the commutator and each
sandwich term be built from a single sparse-dense product. Complex numbers
are handled as interleaved (re, im) doubles so the inner loops vectorize.
"""
import numpy as np
cimport numpy as cnp

DEF BLOCK = 32


cdef inline void _csr_dense(const int[::1] indptr, const int[::1] indices,
                            const double[::1] data, const double[:, ::1] x,
                            double[:, ::1] y, bint accumulate) noexcept nogil:
    # y (+)= A x with A in CSR form; rows of x and y are interleaved complex
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t m2 = y.shape[1]
    cdef Py_ssize_t i, j, p, k
    cdef double ar, ai, xr, xi
    for i in range(n):
        if not accumulate:
            for j in range(m2):
                y[i, j] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            k = indices[p]
            ar = data[2 * p]
            ai = data[2 * p + 1]
            for j in range(0, m2, 2):
                xr = x[k, j]
                xi = x[k, j + 1]
                y[i, j] += ar * xr - ai * xi
                y[i, j + 1] += ar * xi + ai * xr


cdef inline void _conj_transpose(const double[:, ::1] a, double[:, ::1] b) noexcept nogil:
    # b = a^dagger, blocked for cache locality
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t ib, jb, i, j, iend, jend
    for ib in range(0, n, BLOCK):
        iend = min(ib + BLOCK, n)
        for jb in range(0, n, BLOCK):
            jend = min(jb + BLOCK, n)
            for i in range(ib, iend):
                for j in range(jb, jend):
                    b[j, 2 * i] = a[i, 2 * j]
                    b[j, 2 * i + 1] = -a[i, 2 * j + 1]


def lindblad_rhs(heff, jumps, rho, out, work, work_t):
    """out = -i(Heff rho - rho Heff^dag) + sum_k L_k rho L_k^dag."""
    cdef Py_ssize_t n = rho.shape[0]
    cdef double[:, ::1] r = rho.view(np.float64)
    cdef double[:, ::1] o = out.view(np.float64)
    cdef double[:, ::1] w = work.view(np.float64)
    cdef double[:, ::1] wt = work_t.view(np.float64)
    cdef const int[::1] ip
    cdef const int[::1] ix
    cdef const double[::1] dat
    cdef Py_ssize_t i, j

    ip, ix, d = heff
    dat = d.view(np.float64)
    with nogil:
        _csr_dense(ip, ix, dat, r, w, False)
        _conj_transpose(w, wt)
        # -i M + (-i M)^dag = -i M + i M^dag
        for i in range(n):
            for j in range(n):
                o[i, 2 * j] = w[i, 2 * j + 1] - wt[i, 2 * j + 1]
                o[i, 2 * j + 1] = -w[i, 2 * j] + wt[i, 2 * j]
    for ip, ix, d in jumps:
        dat = d.view(np.float64)
        with nogil:
            _csr_dense(ip, ix, dat, r, w, False)
            _conj_transpose(w, wt)
            _csr_dense(ip, ix, dat, wt, o, True)
    return out
