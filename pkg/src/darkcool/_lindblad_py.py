"""Pure numpy/scipy implementation of the Lindblad right-hand side.

Same calling convention as the compiled kernel, operators given as CSR
triples.
"""
import numpy as np
import scipy.sparse as sp


def _csr(triple, n):
    indptr, indices, data = triple
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def lindblad_rhs(heff, jumps, rho, out, work=None, work_t=None):
    n = rho.shape[0]
    m = _csr(heff, n) @ rho
    k = -1j * m
    out[...] = k + k.conj().T
    for triple in jumps:
        op = _csr(triple, n)
        y = op @ rho
        out += op @ y.conj().T
    return out
