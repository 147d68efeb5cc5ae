"""Time evolution, steady states and observables for Lindblad models."""
from __future__ import annotations

import csv
import math
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
from scipy.integrate import BDF, RK45

from .errors import (IntegrationFailure, InvalidArgument, InvalidData, StiffnessFailure)
from .models import LindbladModel, PhysParams, build_three_level
from .qops import QOperator, boson_ops, embed, ket2dm, steady_state, thermal_dm

BUILTINS = ("mean_phonon", "rho_rr", "spin_z", "excitation_number", "ground_state_pop",
            "phonon_vacuum")
POPULATIONS = {"rho_rr", "ground_state_pop", "phonon_vacuum"}
DEFAULT_TOL = (1e-8, 1e-10)
MAX_STEPS = 2_000_000
IMPLICIT_MAX_DIM = 400
PROPAGATOR_MAX_UNKNOWNS = 6000


def _factor_op(model, label, mat):
    return embed(sp.csc_matrix(mat, dtype=complex), label, model.space)


def _builtin(model: LindbladModel, name: str) -> QOperator:
    space = model.space
    if name in ("mean_phonon", "phonon_vacuum"):
        if not model.mode_factors:
            raise InvalidArgument(f"model {model.kind} has no phonon mode for {name!r}")
        lab = model.mode_factors[0]
        d = space.dim(lab)
        if name == "mean_phonon":
            return embed(boson_ops(d)[2], lab, space)
        vac = np.zeros((d, d))
        vac[0, 0] = 1.0
        return _factor_op(model, lab, vac)
    if name == "rho_rr":
        if "r" not in model.levels:
            raise InvalidArgument(f"model {model.kind} has no excited level r")
        m = np.zeros((3, 3))
        m[2, 2] = 1.0
        return _factor_op(model, model.spin_factors[0], m)
    if name == "spin_z":
        z = np.zeros((space.dim(model.spin_factors[0]),) * 2)
        z[0, 0], z[1, 1] = 1.0, -1.0
        out = None
        for lab in model.spin_factors:
            op = _factor_op(model, lab, z)
            out = op if out is None else out + op
        return out
    dark = model.dark_state
    d_ion = space.dim(model.spin_factors[0])
    dark_p = np.outer(dark, dark.conj())
    if name == "excitation_number":
        # phonons plus ions outside the dark state
        bright = np.eye(d_ion) - dark_p
        out = None
        for lab in model.spin_factors:
            op = _factor_op(model, lab, bright)
            out = op if out is None else out + op
        for lab in model.mode_factors:
            out = out + embed(boson_ops(space.dim(lab))[2], lab, space)
        return QOperator(space, out.matrix, hermitian=True)
    if name == "ground_state_pop":
        pieces = []
        for lab, d in zip(space.labels, space.dims):
            if lab in model.spin_factors:
                pieces.append(sp.csc_matrix(dark_p))
            else:
                v = sp.csc_matrix(([1.0], ([0], [0])), shape=(d, d))
                pieces.append(v)
        mat = pieces[0]
        for piece in pieces[1:]:
            mat = sp.kron(mat, piece, format="csc")
        return QOperator(space, mat.astype(complex), hermitian=True)
    raise InvalidArgument(f"unknown builtin observable {name!r}")


class ObservableSet:
    """Labelled observables: QOperators or names of builtins."""

    def __init__(self, items=("mean_phonon",)):
        self.items = []
        for it in items:
            if isinstance(it, str):
                if it not in BUILTINS:
                    raise InvalidArgument(f"unknown builtin observable {it!r}")
                self.items.append((it, it))
            else:
                label, op = it
                if isinstance(op, QOperator) and not op.is_hermitian():
                    raise InvalidArgument(f"observable {label!r} is not Hermitian")
                self.items.append((label, op))

    @property
    def labels(self):
        return [lab for lab, _ in self.items]

    def resolve(self, model: LindbladModel):
        out = []
        for label, op in self.items:
            if isinstance(op, str):
                op = _builtin(model, op)
            if op.space != model.space:
                raise InvalidArgument(f"observable {label!r} acts on a different space")
            out.append((label, op))
        return out


def _expect_all(ops, rho):
    return {lab: float(np.real(op.expect(rho))) for lab, op in ops}


@dataclass
class Trajectory:
    times: np.ndarray
    records: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidData("trajectory times must be strictly increasing")
        self.records = {k: np.asarray(v, dtype=float) for k, v in self.records.items()}
        for k, v in self.records.items():
            if v.shape != self.times.shape:
                raise InvalidData(f"record {k!r} has {v.size} values for {self.times.size} times")

    def __getitem__(self, label):
        return self.records[label]

    def to_csv(self, path):
        tmp = f"{path}.tmp"
        labels = list(self.records)
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_us"] + labels)
            for i, t in enumerate(self.times):
                w.writerow([f"{t:.17g}"] + [f"{self.records[k][i]:.17g}" for k in labels])
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        if not head or head[0] != "t_us":
            raise InvalidData(f"{path}: first column must be t_us")
        data = np.array([[float(x) for x in r] for r in body]).reshape(len(body), len(head))
        return cls(data[:, 0], {k: data[:, i + 1] for i, k in enumerate(head[1:])})


def initial_state(model: LindbladModel, n0: float = 0.0, internal="dark"):
    """Product state: every ion in ``internal`` ('dark', 'bright' or a ket), every mode thermal."""
    pieces = []
    for lab, d in zip(model.space.labels, model.space.dims):
        if lab in model.spin_factors:
            if isinstance(internal, str):
                if internal == "dark":
                    ket = model.dark_state
                elif internal == "bright":
                    ket = np.zeros(d, dtype=complex)
                    if model.levels[:2] == ("+", "-"):
                        ket[0] = 1.0
                    else:
                        dk = model.dark_state[:2]
                        ket[:2] = [np.conj(dk[1]), -np.conj(dk[0])]
                else:
                    raise InvalidArgument(f"unknown internal state {internal!r}")
            else:
                ket = np.asarray(internal, dtype=complex)
            pieces.append(ket2dm(ket))
        else:
            pieces.append(thermal_dm(d, n0))
    rho = pieces[0]
    for piece in pieces[1:]:
        rho = np.kron(rho, piece)
    return rho


def _min_eig(rho):
    if rho.shape[0] > 2000:
        return float("nan")
    return float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])


class SectorSpace:
    """Block-diagonal support of rho for a conserved diagonal charge q.

    Stores only the blocks rho[I_s, I_s] where I_s collects the basis states
    with charge value s. ``superoperator`` assembles the generator restricted
    to these blocks and raises if any term couples a block to an off-diagonal
    one, i.e. if the charge is not actually conserved by the dynamics.
    """

    def __init__(self, charge, dim):
        q = np.round(np.asarray(charge, dtype=float), 9)
        if q.shape != (dim,):
            raise InvalidArgument("sector charge must be one value per basis state")
        self.dim = dim
        self.values, inv = np.unique(q, return_inverse=True)
        self.sector_of = inv
        self.blocks = [np.flatnonzero(inv == k) for k in range(len(self.values))]
        sizes = [b.size ** 2 for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.size = int(self.offsets[-1])

    def pack(self, rho):
        off = 0.0
        out = np.empty(self.size, dtype=complex)
        for k, b in enumerate(self.blocks):
            blk = rho[np.ix_(b, b)]
            out[self.offsets[k]:self.offsets[k + 1]] = blk.ravel()
        mask = self.sector_of[:, None] != self.sector_of[None, :]
        if np.any(mask):
            off = float(np.max(np.abs(rho[mask])))
        if off > 1e-12:
            raise InvalidArgument(f"initial state has coherences between sectors ({off:.2e})")
        return out

    def unpack(self, y):
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        for k, b in enumerate(self.blocks):
            rho[np.ix_(b, b)] = y[self.offsets[k]:self.offsets[k + 1]].reshape(b.size, b.size)
        return rho

    def _target(self, mat, b):
        rows = np.unique(mat[:, b].tocoo().row)
        if rows.size == 0:
            return None
        secs = np.unique(self.sector_of[rows])
        if secs.size != 1:
            raise InvalidArgument("dynamics couple different charge sectors")
        return int(secs[0])

    def superoperator(self, L):
        n = self.dim
        eye = sp.identity(n, dtype=complex, format="csc")
        heff = sp.csc_matrix(L._heff)
        terms = [(-1j * heff, eye), (eye, 1j * heff.conj())]
        terms += [(sp.csc_matrix(m), sp.csc_matrix(m).conj()) for m in L._jump_mats]
        rows, cols, vals = [], [], []
        for A, C in terms:
            for k, b in enumerate(self.blocks):
                ta, tc = self._target(A, b), self._target(C, b)
                if ta is None or tc is None:
                    continue
                if ta != tc:
                    raise InvalidArgument("dynamics create coherences between charge sectors")
                bt = self.blocks[ta]
                blk = sp.kron(A[bt][:, b], C[bt][:, b], format="coo")
                rows.append(blk.row + self.offsets[ta])
                cols.append(blk.col + self.offsets[k])
                vals.append(blk.data)
        S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.size, self.size))
        S.sum_duplicates()
        return S


def evolve(model: LindbladModel, rho0, t_grid, obs: ObservableSet | None = None,
           tol=DEFAULT_TOL, method: str = "rk45", max_steps: int = MAX_STEPS,
           max_step: float = np.inf, backend=None, sector=None) -> Trajectory:
    """Integrate the master equation and record observables on ``t_grid``.

    ``rk45`` is the explicit embedded 5(4) scheme on the real view of rho.
    ``implicit`` is a variable-order BDF scheme with the sparse superoperator
    as Jacobian, for stiff problems of moderate dimension. ``auto`` picks
    ``implicit`` when the generator norm times the run length is large.
    ``propagator`` exponentiates the dense superoperator once over the grid
    spacing (uniform grids only); it suits long, weakly damped runs where
    step-size control is limited by fast undamped oscillations.

    ``sector`` (a builtin name or diagonal QOperator) names a charge that
    the dynamics conserve block by block; only those blocks of rho are
    integrated.
    """
    rtol, atol = tol
    obs = obs or ObservableSet()
    ops = obs.resolve(model)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or t_grid[0] != 0 or np.any(np.diff(t_grid) <= 0):
        raise InvalidArgument("t_grid must be strictly increasing and start at 0")
    n = model.dim
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (n, n):
        raise InvalidArgument(f"rho0 shape {rho0.shape} does not match model dimension {n}")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10 or abs(np.trace(rho0).real - 1) > 1e-8:
        raise InvalidArgument("rho0 must be a Hermitian unit-trace matrix")
    L = model.liouvillian(backend=backend)
    if method == "auto":
        stiff = L.norm_estimate() * t_grid[-1]
        method = "implicit" if (stiff > 2e5 and (n <= IMPLICIT_MAX_DIM or sector is not None)) \
            else "rk45"
    if method == "propagator":
        return _evolve_propagator(model, L, rho0, t_grid, ops)
    if method not in ("rk45", "implicit"):
        raise InvalidArgument(f"unknown integration method {method!r}")

    if sector is not None:
        q = _builtin(model, sector) if isinstance(sector, str) else sector
        qm = q.to_sparse()
        if qm.nnz and abs(qm - sp.diags(qm.diagonal())).max() > 0:
            raise InvalidArgument("sector charge must be diagonal in the model basis")
        space = SectorSpace(qm.diagonal().real, n)
        S = space.superoperator(L)
        y0 = space.pack(rho0)
        fun = lambda t, y: S @ y
        jac = S
        unpack = space.unpack
    elif method == "rk45":
        buf = np.empty((n, n), dtype=complex)

        def fun(t, y):
            rho = y.view(np.complex128).reshape(n, n)
            L.rhs(rho, out=buf)
            return buf.ravel().view(np.float64).copy()

        y0 = np.ascontiguousarray(rho0).ravel().view(np.float64).copy()
        jac = None
        unpack = lambda y: np.ascontiguousarray(y).view(np.complex128).reshape(n, n)
    else:
        S = L.superoperator()
        fun = lambda t, y: S @ y
        jac = S
        y0 = rho0.ravel().copy()
        unpack = lambda y: y.reshape(n, n)

    if method == "rk45":
        solver = RK45(fun, 0.0, y0, t_grid[-1], rtol=rtol, atol=atol, max_step=max_step)
    else:
        solver = BDF(fun, 0.0, y0, t_grid[-1], rtol=rtol, atol=atol, jac=jac, max_step=max_step)

    rec = {lab: np.empty(t_grid.size) for lab, _ in ops}
    vals = _expect_all(ops, rho0)
    for lab in rec:
        rec[lab][0] = vals[lab]
    k = 1
    steps = 0
    max_drift = abs(np.trace(rho0).real - 1)
    start = time.perf_counter()
    rho = rho0
    while k < t_grid.size:
        if solver.status != "running":
            break
        msg = solver.step()
        steps += 1
        if solver.status == "failed":
            raise StiffnessFailure(
                f"{method} step size underflow at t={solver.t:.6g} us ({msg}); reduce the "
                f"separation of decay and trap frequencies or use method='implicit'")
        if steps > max_steps:
            raise StiffnessFailure(
                f"{method} exceeded {max_steps} steps at t={solver.t:.6g} us of {t_grid[-1]:.6g}; "
                f"the problem is stiff, try method='implicit' or a steady-state solve")
        if t_grid[k] <= solver.t:
            dense = solver.dense_output()
            while k < t_grid.size and t_grid[k] <= solver.t:
                y = solver.y if t_grid[k] == solver.t else dense(t_grid[k])
                rho = unpack(y)
                drift = abs(np.trace(rho).real - 1.0)
                max_drift = max(max_drift, drift)
                if drift > 100 * atol:
                    raise IntegrationFailure(
                        f"trace drifted by {drift:.3e} at t={t_grid[k]:.6g} us", residual=drift)
                vals = _expect_all(ops, rho)
                for lab in rec:
                    rec[lab][k] = vals[lab]
                k += 1
    if max_drift > 10 * atol:
        warnings.warn(f"trace drift {max_drift:.3e} exceeds 10 atol", stacklevel=2)
    meta = {
        "method": method, "steps": steps, "nfev": int(solver.nfev),
        "njev": int(getattr(solver, "njev", 0)), "nlu": int(getattr(solver, "nlu", 0)),
        "max_trace_drift": float(max_drift), "min_eigenvalue": _min_eig(rho),
        "backend": L.backend_name if sector is None and method == "rk45" else "superoperator",
        "wall_s": time.perf_counter() - start, "rtol": rtol, "atol": atol,
        "unknowns": int(np.size(y0)),
    }
    for lab, _ in ops:
        if lab in POPULATIONS and (rec[lab].min() < -1e-9 or rec[lab].max() > 1 + 1e-9):
            warnings.warn(f"population {lab!r} left [0, 1]", stacklevel=2)
    traj = Trajectory(t_grid, rec, meta)
    traj.final_state = rho
    return traj


def _evolve_propagator(model, L, rho0, t_grid, ops):
    n = model.dim
    dt = np.diff(t_grid)
    if dt.size and np.max(np.abs(dt - dt[0])) > 1e-9 * t_grid[-1]:
        raise InvalidArgument("propagator method needs a uniform t_grid")
    if n * n > PROPAGATOR_MAX_UNKNOWNS:
        raise InvalidArgument(f"propagator method limited to {PROPAGATOR_MAX_UNKNOWNS} unknowns")
    start = time.perf_counter()
    y = rho0.ravel().copy()
    rec = {lab: np.empty(t_grid.size) for lab, _ in ops}
    P = sla.expm(L.superoperator().toarray() * dt[0]) if dt.size else None
    max_drift = 0.0
    for k in range(t_grid.size):
        if k:
            y = P @ y
        rho = y.reshape(n, n)
        drift = abs(np.trace(rho).real - 1.0)
        max_drift = max(max_drift, drift)
        for lab, v in _expect_all(ops, rho).items():
            rec[lab][k] = v
    meta = {
        "method": "propagator", "steps": int(t_grid.size - 1), "nfev": 0, "njev": 0, "nlu": 0,
        "max_trace_drift": float(max_drift), "min_eigenvalue": _min_eig(rho),
        "backend": "superoperator", "wall_s": time.perf_counter() - start,
        "rtol": 0.0, "atol": 0.0, "unknowns": int(n * n),
    }
    traj = Trajectory(t_grid, rec, meta)
    traj.final_state = rho
    return traj


def steady(model: LindbladModel, obs: ObservableSet | None = None, method=None):
    """Steady state of ``model`` and the requested expectation values."""
    rho, info = steady_state(model.liouvillian(), method=method, return_info=True)
    vals = _expect_all(obs.resolve(model), rho) if obs is not None else {}
    return rho, vals, info


def fit_cooling_rate(traj: Trajectory, window=(0.0, 50.0), label: str = "mean_phonon") -> float:
    """-ln[n(t1)/n(t0)]/(t1 - t0), with n linearly interpolated on the grid."""
    t0, t1 = (float(w) for w in window)
    t = traj.times
    if not (t[0] <= t0 < t1 <= t[-1]):
        raise InvalidArgument(f"window {window} outside trajectory span [{t[0]}, {t[-1]}]")
    if label not in traj.records:
        raise InvalidArgument(f"trajectory has no record {label!r}")
    y = traj.records[label]
    n0, n1 = np.interp(t0, t, y), np.interp(t1, t, y)
    if n0 <= 0 or n1 <= 0:
        raise InvalidData(f"non-positive phonon number on window: {n0:.3g}, {n1:.3g}")
    return -math.log(n1 / n0) / (t1 - t0)


def scattering_rate_profile(p: PhysParams, ratio_grid):
    """gamma * rho_rr of the phonon-free Lambda system versus Delta_g / Delta_e."""
    if p.gamma_g == 0 and p.gamma_e == 0:
        raise InvalidArgument("no spontaneous decay: the internal steady state is not unique")
    if p.Delta_e == 0:
        raise InvalidArgument("Delta_e must be nonzero for a ratio sweep")
    obs = ObservableSet(["rho_rr"])
    out = []
    for r in ratio_grid:
        q = p.replace(Delta_g=float(r) * p.Delta_e, N=1)
        model = build_three_level(q, internal_only=True)
        _, vals, _ = steady(model, obs)
        out.append((float(r), p.gamma * vals["rho_rr"]))
    return out
