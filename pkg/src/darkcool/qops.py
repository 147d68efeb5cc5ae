"""Operators on labeled tensor-product Hilbert spaces and Lindblad generators.

Density matrices are plain complex numpy arrays. Operators are wrapped in
:class:`QOperator`, which remembers the space they act on.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import (
    InvalidArgument,
    MultipleSteadyStates,
    NonHermitianError,
    SolverFailure,
)

HERMITIAN_ATOL = 1e-12
ASSEMBLED_MAX_DIM = 128
NULLSPACE_MAX_DIM = 64
CONSTRAINED_MAX_DIM = 1500
DEGENERACY_TOL = 1e-9
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered tensor product of labeled factors."""

    factors: tuple

    def __post_init__(self):
        facs = tuple((str(lab), int(dim)) for lab, dim in self.factors)
        if not facs:
            raise InvalidArgument("a Hilbert space needs at least one factor")
        labels = [lab for lab, _ in facs]
        if len(set(labels)) != len(labels):
            raise InvalidArgument(f"duplicate factor labels in {labels}")
        for lab, dim in facs:
            if dim < 1:
                raise InvalidArgument(f"factor {lab!r} has non-positive dimension {dim}")
        object.__setattr__(self, "factors", facs)

    @classmethod
    def of(cls, *pairs):
        return cls(tuple(pairs))

    @property
    def labels(self):
        return tuple(lab for lab, _ in self.factors)

    @property
    def dims(self):
        return tuple(dim for _, dim in self.factors)

    @property
    def total_dim(self):
        return int(np.prod(self.dims))

    def index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidArgument(f"unknown factor label {label!r}; have {self.labels}") from None

    def dim(self, label):
        return self.dims[self.index(label)]

    def __str__(self):
        return " x ".join(f"{lab}({dim})" for lab, dim in self.factors)


class QOperator:
    """A matrix acting on a :class:`HilbertSpace`.

    Sparse storage is CSC. If ``hermitian`` is set the matrix is checked
    against its adjoint and rejected when they differ by more than 1e-12.
    """

    __slots__ = ("space", "matrix", "hermitian")

    def __init__(self, space: HilbertSpace, matrix, hermitian: bool = False):
        n = space.total_dim
        if sp.issparse(matrix):
            mat = sp.csc_matrix(matrix, dtype=np.complex128)
        else:
            mat = np.array(matrix, dtype=np.complex128)
            if mat.ndim != 2:
                raise InvalidArgument("operator matrix must be two-dimensional")
        if mat.shape != (n, n):
            raise InvalidArgument(f"matrix shape {mat.shape} does not match space dimension {n}")
        if hermitian:
            dev = _max_abs(mat - mat.conj().T)
            if dev >= HERMITIAN_ATOL:
                raise NonHermitianError(f"operator is not Hermitian: max|H - H^dag| = {dev:.3e}")
        self.space = space
        self.matrix = mat
        self.hermitian = bool(hermitian)

    @property
    def storage(self):
        return "sparse" if sp.issparse(self.matrix) else "dense"

    def to_sparse(self):
        return self.matrix if self.storage == "sparse" else sp.csc_matrix(self.matrix)

    def to_dense(self):
        return self.matrix.toarray() if self.storage == "sparse" else self.matrix

    def sparse(self):
        return QOperator(self.space, self.to_sparse(), self.hermitian)

    def dag(self):
        return QOperator(self.space, self.matrix.conj().T, self.hermitian)

    def is_hermitian(self, atol=HERMITIAN_ATOL):
        return _max_abs(self.matrix - self.matrix.conj().T) < atol

    def expect(self, rho):
        """Tr(O rho), real part only for Hermitian operators."""
        val = _trace_product(self.matrix, rho)
        return val.real if self.hermitian else val

    def _check(self, other):
        if other.space != self.space:
            raise InvalidArgument(f"space mismatch: {self.space} vs {other.space}")

    def __add__(self, other):
        if isinstance(other, QOperator):
            self._check(other)
            return QOperator(self.space, self.matrix + other.matrix,
                             self.hermitian and other.hermitian)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, QOperator):
            self._check(other)
            return QOperator(self.space, self.matrix - other.matrix,
                             self.hermitian and other.hermitian)
        return NotImplemented

    def __neg__(self):
        return QOperator(self.space, -self.matrix, self.hermitian)

    def __mul__(self, c):
        if np.isscalar(c):
            herm = self.hermitian and np.imag(c) == 0
            return QOperator(self.space, self.matrix * c, herm)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, QOperator):
            self._check(other)
            return QOperator(self.space, self.matrix @ other.matrix)
        return NotImplemented

    def __repr__(self):
        return f"QOperator({self.space}, {self.storage}, hermitian={self.hermitian})"


def _max_abs(m):
    if sp.issparse(m):
        m = sp.csr_matrix(m)
        return float(np.max(np.abs(m.data))) if m.nnz else 0.0
    return float(np.max(np.abs(m))) if m.size else 0.0


def _trace_product(a, rho):
    # Tr(a rho) without forming the product
    if sp.issparse(a):
        a = sp.coo_matrix(a)
        return complex(np.sum(a.data * rho[a.col, a.row]))
    return complex(np.sum(a * rho.T))


def identity(space: HilbertSpace) -> QOperator:
    return QOperator(space, sp.identity(space.total_dim, dtype=np.complex128, format="csc"),
                     hermitian=True)


def boson_ops(cutoff: int):
    """Truncated annihilation, creation and number operators.

    ``cutoff`` is the number of Fock states kept (|0> ... |cutoff-1>).
    """
    cutoff = int(cutoff)
    if cutoff < 2:
        raise InvalidArgument(f"boson cutoff must be >= 2, got {cutoff}")
    space = HilbertSpace.of(("mode", cutoff))
    a = sp.diags(np.sqrt(np.arange(1, cutoff, dtype=float)), 1, format="csc",
                 dtype=np.complex128)
    ad = a.conj().T.tocsc()
    num = (ad @ a).tocsc()
    return QOperator(space, a), QOperator(space, ad), QOperator(space, num, hermitian=True)


def spin_ops(labels=("e", "g")):
    """Pauli operators and transition projectors for a two-state system.

    The first label is the +1 eigenstate of sigma_z. Keys are ``x``, ``y``,
    ``z`` and ``<m><n>`` for |m><n| (for example ``eg`` or ``+-``).
    """
    labels = tuple(str(s) for s in labels)
    if len(labels) != 2 or labels[0] == labels[1]:
        raise InvalidArgument(f"spin_ops needs two distinct labels, got {labels}")
    space = HilbertSpace.of(("spin", 2))
    mats = {
        "x": np.array([[0, 1], [1, 0]], dtype=complex),
        "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "z": np.array([[1, 0], [0, -1]], dtype=complex),
    }
    ops = {k: QOperator(space, sp.csc_matrix(v), hermitian=True) for k, v in mats.items()}
    for i, m in enumerate(labels):
        for j, n in enumerate(labels):
            mat = np.zeros((2, 2), dtype=complex)
            mat[i, j] = 1.0
            ops[m + n] = QOperator(space, sp.csc_matrix(mat), hermitian=(i == j))
    ops["labels"] = labels
    return ops


def level_projector(dim: int, m: int, n: int):
    """|m><n| on a dim-level system as a sparse matrix."""
    return sp.csc_matrix(([1.0 + 0j], ([m], [n])), shape=(dim, dim))


def embed(op, factor_label: str, space: HilbertSpace) -> QOperator:
    """Lift an operator on one factor to the full space."""
    idx = space.index(factor_label)
    mat = op.matrix if isinstance(op, QOperator) else op
    mat = sp.csc_matrix(mat, dtype=np.complex128)
    if mat.shape != (space.dims[idx],) * 2:
        raise InvalidArgument(
            f"operator of shape {mat.shape} cannot act on factor {factor_label!r} "
            f"of dimension {space.dims[idx]}")
    pieces = [sp.identity(d, dtype=np.complex128, format="csc") for d in space.dims]
    pieces[idx] = mat
    full = reduce(lambda x, y: sp.kron(x, y, format="csc"), pieces)
    herm = isinstance(op, QOperator) and op.hermitian
    return QOperator(space, full, hermitian=herm)


def tensor_state(*factors):
    """Kronecker product of density matrices or kets."""
    return reduce(np.kron, factors)


def basis(dim: int, k: int):
    v = np.zeros(dim, dtype=complex)
    v[k] = 1.0
    return v


def ket2dm(psi):
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def thermal_populations(dim: int, n_th: float, warn: bool = True):
    """Geometric distribution truncated to ``dim`` Fock states, renormalized."""
    n = np.arange(dim)
    if n_th == 0:
        p = (n == 0).astype(float)
        return p
    p = (n_th / (1.0 + n_th)) ** n / (1.0 + n_th)
    lost = 1.0 - p.sum()
    if warn and lost > 1e-4:
        warnings.warn(f"thermal state truncated at {dim} Fock states drops weight {lost:.2e}",
                      stacklevel=2)
    return p / p.sum()


def thermal_dm(dim: int, n_th: float, warn: bool = True):
    return np.diag(thermal_populations(dim, n_th, warn=warn)).astype(complex)


def fock_dm(dim: int, n: int):
    return ket2dm(basis(dim, n))


def _to_csr_triple(mat):
    m = sp.csr_matrix(mat, dtype=np.complex128)
    m.sum_duplicates()
    return (np.ascontiguousarray(m.indptr, dtype=np.int32),
            np.ascontiguousarray(m.indices, dtype=np.int32),
            np.ascontiguousarray(m.data, dtype=np.complex128))


class Liouvillian:
    """Lindblad generator L(rho) = -i[H, rho] + sum_k D[L_k] rho.

    The default representation is matrix-free: the right-hand side is
    computed from sparse operator products. ``assembled`` additionally
    builds the superoperator and is limited to total_dim <= 128.
    """

    def __init__(self, hamiltonian: QOperator, jumps=(), representation: str = "matrix-free",
                 backend: str | None = None):
        if not hamiltonian.is_hermitian():
            raise NonHermitianError("Liouvillian Hamiltonian must be Hermitian")
        space = hamiltonian.space
        ops = []
        for item in jumps:
            op = item[1] if isinstance(item, tuple) else item
            if op.space != space:
                raise InvalidArgument(f"jump operator acts on {op.space}, expected {space}")
            ops.append(op)
        if representation not in ("matrix-free", "assembled"):
            raise InvalidArgument(f"unknown representation {representation!r}")
        if representation == "assembled" and space.total_dim > ASSEMBLED_MAX_DIM:
            raise InvalidArgument(
                f"assembled representation limited to total_dim <= {ASSEMBLED_MAX_DIM}, "
                f"got {space.total_dim}")
        self.space = space
        self.hamiltonian = hamiltonian
        self.jumps = tuple(ops)
        self.representation = representation
        n = space.total_dim
        h = hamiltonian.to_sparse()
        loss = sp.csc_matrix((n, n), dtype=np.complex128)
        for op in ops:
            m = op.to_sparse()
            loss = loss + m.conj().T @ m
        self._heff = (h - 0.5j * loss).tocsr()
        self._jump_mats = [op.to_sparse().tocsr() for op in ops]
        self._heff_t = _to_csr_triple(self._heff)
        self._jump_t = [_to_csr_triple(m) for m in self._jump_mats]
        self.backend_name, self._kernel = kernels.get_backend(backend)
        self._super = None
        if representation == "assembled":
            self._super = self.superoperator()

    @property
    def dim(self):
        return self.space.total_dim

    def rhs(self, rho, out=None):
        """L(rho) for Hermitian rho, no argument checks (integrator hot path)."""
        n = self.dim
        if out is None:
            out = np.empty((n, n), dtype=np.complex128)
        rho = np.ascontiguousarray(rho, dtype=np.complex128)
        if self._super is not None:
            out[...] = (self._super @ rho.ravel()).reshape(n, n)
            return out
        work = np.empty((n, n), dtype=np.complex128)
        work_t = np.empty((n, n), dtype=np.complex128)
        self._kernel.lindblad_rhs(self._heff_t, self._jump_t, rho, out, work, work_t)
        return out

    def apply_general(self, x):
        """L(x) for an arbitrary (not necessarily Hermitian) matrix."""
        heff = self._heff
        x = np.asarray(x, dtype=np.complex128)
        out = -1j * (heff @ x) + 1j * (heff @ x.conj().T).conj().T
        for m in self._jump_mats:
            out = out + m @ (m @ x.conj().T).conj().T
        return out

    def superoperator(self):
        """Sparse superoperator acting on row-major vec(rho)."""
        n = self.dim
        eye = sp.identity(n, dtype=np.complex128, format="csr")
        s = -1j * sp.kron(self._heff, eye) + 1j * sp.kron(eye, self._heff.conj())
        for m in self._jump_mats:
            s = s + sp.kron(m, m.conj())
        return s.tocsc()

    def norm_estimate(self):
        """Rough spectral radius of the generator (rad/us)."""
        h = self.hamiltonian.to_sparse()
        hn = spla.norm(h, 1) if h.nnz else 0.0
        jn = sum(spla.norm(m, 1) ** 2 for m in self._jump_mats)
        return 2.0 * hn + jn


def apply_liouvillian(L: Liouvillian, rho):
    """Density-matrix derivative L(rho), validating the input state."""
    rho = np.asarray(rho, dtype=np.complex128)
    n = L.dim
    if rho.shape != (n, n):
        raise InvalidArgument(f"density matrix shape {rho.shape} does not match space dim {n}")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise InvalidArgument("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > 1e-8:
        raise InvalidArgument(f"density matrix trace {tr} differs from 1")
    return L.rhs(rho)


def _finalize_state(L, rho):
    n = L.dim
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if not np.isfinite(tr) or abs(tr) < 1e-300:
        raise SolverFailure("steady-state solve produced a state with zero trace")
    rho = rho / tr
    res = np.linalg.norm(L.apply_general(rho)) / np.linalg.norm(rho)
    return rho.reshape(n, n), float(res)


def _small_eigenvalues(S, k=4):
    """Eigenvalues of S closest to zero, sorted by magnitude, with eigenvectors."""
    m = S.shape[0]
    if m <= 1024:
        vals, vecs = sla.eig(S.toarray())
    else:
        # shift slightly off zero: S itself is singular
        vals, vecs = spla.eigs(S, k=min(k, m - 2), sigma=-1e-6, which="LM")
    order = np.argsort(np.abs(vals))
    return vals[order], vecs[:, order]


def _null_dimension(S):
    m = S.shape[0]
    if m > 250_000:
        return None
    vals, _ = _small_eigenvalues(S, k=6)
    return int(np.sum(np.abs(vals) < DEGENERACY_TOL))


def steady_state(L: Liouvillian, method: str | None = None, return_info: bool = False):
    """Unique stationary state of L.

    ``null-space`` finds the eigenvector of the zero eigenvalue (dense for
    small problems, shift-invert Arnoldi otherwise); ``constrained-linear-solve``
    replaces one equation with the trace condition and solves directly.
    """
    n = L.dim
    if method is None:
        method = "null-space" if n <= NULLSPACE_MAX_DIM else "constrained-linear-solve"
    S = L.superoperator()
    info = {"method": method}
    if method == "null-space":
        if n > NULLSPACE_MAX_DIM:
            raise InvalidArgument(f"null-space method limited to total_dim <= {NULLSPACE_MAX_DIM}")
        vals, vecs = _small_eigenvalues(S)
        dim0 = int(np.sum(np.abs(vals) < DEGENERACY_TOL))
        if dim0 > 1:
            raise MultipleSteadyStates(dim0)
        rho = vecs[:, 0].reshape(n, n)
        info["gap"] = float(abs(vals[1])) if len(vals) > 1 else float("inf")
    elif method == "constrained-linear-solve":
        if n > CONSTRAINED_MAX_DIM:
            raise InvalidArgument(f"constrained solve limited to total_dim <= {CONSTRAINED_MAX_DIM}")
        A = S.tolil()
        trace_row = np.zeros(n * n, dtype=np.complex128)
        trace_row[np.arange(n) * (n + 1)] = 1.0
        A[0, :] = trace_row
        A = A.tocsc()
        b = np.zeros(n * n, dtype=np.complex128)
        b[0] = 1.0
        try:
            lu = spla.splu(A)
        except RuntimeError:
            raise MultipleSteadyStates(_null_dimension(S) or 2) from None
        piv = np.abs(lu.U.diagonal())
        tiny = int(np.sum(piv < 1e-13 * piv.max()))
        if tiny:
            dim0 = _null_dimension(S)
            raise MultipleSteadyStates(dim0 if dim0 and dim0 > 1 else tiny + 1)
        x = lu.solve(b)
        r = b - A @ x
        x = x + lu.solve(r)
        rho = x.reshape(n, n)
        info["min_pivot_ratio"] = float(piv.min() / piv.max())
    else:
        raise InvalidArgument(f"unknown steady-state method {method!r}")
    rho, res = _finalize_state(L, rho)
    info["residual"] = res
    if res >= RESIDUAL_TOL:
        raise SolverFailure(f"steady-state residual {res:.3e} exceeds {RESIDUAL_TOL}", residual=res)
    evals = np.linalg.eigvalsh(rho)
    info["min_eigenvalue"] = float(evals[0])
    if evals[0] < -1e-9:
        raise SolverFailure(f"steady state has negative eigenvalue {evals[0]:.3e}", residual=res)
    return (rho, info) if return_info else rho
