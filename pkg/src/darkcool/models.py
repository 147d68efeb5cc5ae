"""Physical parameters, derived dressed-state couplings and model builders.

All frequencies and rates are angular, in rad/us. Two-level spin factors use
the bare basis order (e, g) with sigma_z = |e><e| - |g><g|, or the dressed
basis order (+, -) with + the bright state. Three-level ions use (e, g, r).
A Fock factor labelled ``mode`` (``mode<k>`` for crystals) keeps Fock states
0 ... cutoff.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace
from functools import reduce

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, MissingProfiles, UnsupportedConfiguration
from .qops import HilbertSpace, Liouvillian, QOperator, boson_ops, embed

TWO_PI = 2.0 * math.pi

E, G, R = 0, 1, 2
PLUS, MINUS = 0, 1


@dataclass(frozen=True)
class PhysParams:
    """Laser, trap and decay parameters of one cooling configuration.

    ``cutoff`` is the highest Fock number kept, so Fock factors have
    dimension ``cutoff + 1``. ``eta_gz`` and ``eta_ez`` split the two-photon
    Lamb-Dicke parameter between the two Raman beams; only their difference
    ``eta_ez - eta_gz = eta_z`` enters the effective models.
    """

    Omega_g: float
    Omega_e: float
    Delta_g: float
    Delta_e: float
    gamma_g: float
    gamma_e: float
    omega_m: float
    eta_z: float = 0.0
    g_O: float = 0.0
    gamma_m: float = 0.0
    n_th: float = 0.0
    N: int = 1
    cutoff: int = 30
    k_ratio_g: float = 0.0
    k_ratio_e: float = 0.0
    eta_gz: float | None = None
    eta_ez: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if not np.isfinite(v):
                raise InvalidArgument(f"parameter {f.name} must be finite, got {v}")
        for name in ("Omega_g", "Omega_e", "gamma_g", "gamma_e", "omega_m", "eta_z",
                     "g_O", "gamma_m", "n_th", "k_ratio_g", "k_ratio_e"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"parameter {name} must be >= 0, got {getattr(self, name)}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidArgument(f"ion number N must be a positive integer, got {self.N}")
        if int(self.cutoff) != self.cutoff or self.cutoff < 1:
            raise InvalidArgument(f"cutoff must be a positive integer, got {self.cutoff}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "cutoff", int(self.cutoff))
        if self.eta_gz is not None and self.eta_ez is not None:
            if abs((self.eta_ez - self.eta_gz) - self.eta_z) > 1e-12 * max(1.0, self.eta_z):
                raise InvalidArgument(
                    f"eta_ez - eta_gz = {self.eta_ez - self.eta_gz} must equal eta_z = {self.eta_z}")

    @property
    def gamma(self):
        return self.gamma_g + self.gamma_e

    @property
    def delta(self):
        """Two-photon detuning Delta_e - Delta_g."""
        return self.Delta_e - self.Delta_g

    @property
    def Delta_R(self):
        return 0.5 * (self.Delta_g + self.Delta_e)

    @property
    def fock_dim(self):
        return self.cutoff + 1

    @property
    def eta_split(self):
        """(eta_gz, eta_ez); default is the antisymmetric split -eta_z/2, +eta_z/2."""
        if self.eta_gz is not None and self.eta_ez is not None:
            return self.eta_gz, self.eta_ez
        if self.eta_gz is not None:
            return self.eta_gz, self.eta_gz + self.eta_z
        if self.eta_ez is not None:
            return self.eta_ez - self.eta_z, self.eta_ez
        return -0.5 * self.eta_z, 0.5 * self.eta_z

    def flags(self):
        """Validity warnings (far detuning, Lamb-Dicke regime) as strings."""
        out = []
        scale = 10.0 * max(self.Omega_g, self.Omega_e, self.gamma)
        for name in ("Delta_g", "Delta_e"):
            if abs(getattr(self, name)) <= scale:
                out.append(f"{name} is not far detuned: |{name}| <= 10 max(Omega, gamma)")
        if self.eta_z * math.sqrt(self.n_th + 1.0) >= 1.0:
            out.append("Lamb-Dicke condition violated: eta_z sqrt(n_th + 1) >= 1")
        return out

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def resonant_rabi(Delta_R: float, gamma: float, omega_m: float) -> float:
    """Equal Rabi frequency that puts omega_s exactly on omega_m at delta = 0."""
    return math.sqrt(omega_m * (gamma ** 2 + 4.0 * Delta_R ** 2) / (2.0 * Delta_R))


@dataclass(frozen=True)
class DerivedCouplings:
    omega_LS: float
    Omega_R: complex
    omega_s: float
    alpha: float
    gamma_b: float
    g_R: float
    Q_s: float
    gamma_1sc: float
    n_BA: float

    def as_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["Omega_R"] = [self.Omega_R.real, self.Omega_R.imag]
        return d


def derive_couplings(p: PhysParams) -> DerivedCouplings:
    g = p.gamma
    if p.Delta_g == 0 and p.Delta_e == 0 and g == 0:
        raise InvalidArgument("detunings and decay rates all vanish; couplings undefined")
    dg = 4 * p.Delta_g ** 2 + g ** 2
    de = 4 * p.Delta_e ** 2 + g ** 2
    if dg == 0 or de == 0:
        raise InvalidArgument("a detuning and the total decay rate are both zero")
    wls = p.Delta_e * p.Omega_e ** 2 / de - p.Delta_g * p.Omega_g ** 2 / dg
    Om_R = (p.Omega_g * p.Omega_e * (p.Delta_g + p.Delta_e)
            / (4 * (p.Delta_g - 0.5j * g) * (p.Delta_e + 0.5j * g)))
    DR = p.Delta_R
    D = g ** 2 + 4 * DR ** 2
    wz = wls + p.delta
    omega_s = math.hypot(wz, abs(Om_R))
    alpha = math.atan2(abs(Om_R), wz)
    gamma_b = g * (p.Omega_g ** 2 + p.Omega_e ** 2) / D
    g_R = p.eta_z * abs(Om_R) / 2
    Q_s = omega_s / gamma_b if gamma_b > 0 else math.inf
    gamma_1sc = 0.5 * (p.Omega_g ** 2 * p.gamma_e + p.Omega_e ** 2 * p.gamma_g) / D
    n_BA = (g / (4 * DR)) ** 2 if DR != 0 else math.inf
    return DerivedCouplings(wls, complex(Om_R), omega_s, alpha, gamma_b, g_R, Q_s,
                            gamma_1sc, n_BA)


def bare_alphas(p: PhysParams):
    """Effective jump amplitudes alpha_kl = sqrt(gamma_k) Omega_l / (2 Delta_l - i gamma)."""
    g = p.gamma
    a = {}
    for k, gk in (("g", p.gamma_g), ("e", p.gamma_e)):
        for l, Om, Dl in (("g", p.Omega_g, p.Delta_g), ("e", p.Omega_e, p.Delta_e)):
            a[k + l] = math.sqrt(gk) * Om / (2 * Dl - 1j * g)
    return a


def dressed_alphas(p: PhysParams):
    """Dressed amplitudes i sqrt(gamma_k) Omega_l / (gamma + 2 i Delta_R)."""
    g = p.gamma
    DR = p.Delta_R
    return {k + l: 1j * math.sqrt(gk) * Om / (g + 2j * DR)
            for k, gk in (("g", p.gamma_g), ("e", p.gamma_e))
            for l, Om in (("g", p.Omega_g), ("e", p.Omega_e))}


class LindbladModel:
    """Hamiltonian plus labelled jump operators on a composite space.

    ``spin_factors`` and ``mode_factors`` name the ion and phonon factors;
    ``dark_state`` is the single-ion internal dark ket in the ion basis.
    """

    def __init__(self, space, hamiltonian, jumps, basis_doc, kind, params,
                 spin_factors=(), mode_factors=(), levels=(), dark_state=None):
        if hamiltonian.space != space:
            raise InvalidArgument("Hamiltonian does not act on the model space")
        if not hamiltonian.is_hermitian():
            raise InvalidArgument("model Hamiltonian is not Hermitian")
        for label, op in jumps:
            if op.space != space:
                raise InvalidArgument(f"jump {label!r} does not act on the model space")
        self.space = space
        self.hamiltonian = hamiltonian
        self.jumps = tuple(jumps)
        self.basis_doc = basis_doc
        self.kind = kind
        self.params = params
        self.spin_factors = tuple(spin_factors)
        self.mode_factors = tuple(mode_factors)
        self.levels = tuple(levels)
        self.dark_state = None if dark_state is None else np.asarray(dark_state, dtype=complex)
        self._lv = {}

    @property
    def dim(self):
        return self.space.total_dim

    def jump(self, label):
        for lab, op in self.jumps:
            if lab == label:
                return op
        raise KeyError(label)

    def liouvillian(self, representation="matrix-free", backend=None) -> Liouvillian:
        key = (representation, backend)
        if key not in self._lv:
            self._lv[key] = Liouvillian(self.hamiltonian, self.jumps, representation, backend)
        return self._lv[key]

    def __repr__(self):
        return f"LindbladModel({self.kind}, {self.space}, {len(self.jumps)} jumps)"


def _sp(mat):
    return sp.csc_matrix(np.asarray(mat, dtype=complex))


def _op(space, label, mat):
    return embed(_sp(mat) if not sp.issparse(mat) else mat, label, space)


def _herm(space, mat):
    """Wrap a sparse matrix as a Hermitian operator, cleaning round-off asymmetry."""
    mat = sp.csc_matrix(mat)
    mat = 0.5 * (mat + mat.conj().T)
    return QOperator(space, mat.tocsc(), hermitian=True)


def _mode_matrices(dim):
    a, ad, num = boson_ops(dim)
    return a.matrix, ad.matrix, num.matrix


def _thermal_jumps(p, space, label, suffix=""):
    out = []
    if p.gamma_m <= 0:
        return out
    a, ad, _ = _mode_matrices(space.dim(label))
    down = math.sqrt(p.gamma_m * (p.n_th + 1.0))
    out.append((f"bath_down{suffix}", _op(space, label, down * a)))
    if p.n_th > 0:
        up = math.sqrt(p.gamma_m * p.n_th)
        out.append((f"bath_up{suffix}", _op(space, label, up * ad)))
    return out


def _proj(dim, m, n):
    mat = np.zeros((dim, dim), dtype=complex)
    mat[m, n] = 1.0
    return mat


PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _dark_ket_bare(p):
    Os = math.hypot(p.Omega_g, p.Omega_e)
    if Os == 0:
        raise InvalidArgument("dark state undefined for Omega_g = Omega_e = 0")
    # (Omega_e |g> - Omega_g |e>) / Omega_s in the (e, g) order
    return np.array([-p.Omega_g, p.Omega_e], dtype=complex) / Os


def build_three_level(p: PhysParams, internal_only: bool = False) -> LindbladModel:
    """Lambda system (e, g, r) coupled to one motional mode, Lamb-Dicke expanded.

    With ``internal_only`` the phonon factor is dropped entirely, which is the
    optical Bloch limit used for scattering profiles.
    """
    if p.N != 1:
        raise UnsupportedConfiguration(f"the three-level model describes one ion, got N={p.N}")
    if internal_only:
        space = HilbertSpace.of(("ion", 3))
    else:
        space = HilbertSpace.of(("ion", 3), ("mode", p.fock_dim))

    def P(m, n):
        return embed(_sp(_proj(3, m, n)), "ion", space).matrix

    h = (p.Delta_g * P(G, G) + p.Delta_e * P(E, E)
         + 0.5 * p.Omega_g * (P(R, G) + P(G, R))
         + 0.5 * p.Omega_e * (P(R, E) + P(E, R)))
    modes = ()
    if not internal_only:
        a, ad, num = _mode_matrices(p.fock_dim)
        X = embed(_sp((a + ad).toarray()), "mode", space).matrix
        n_op = embed(num, "mode", space).matrix
        eta_gz, eta_ez = p.eta_split
        h = h + p.g_O * (P(E, E) - P(G, G)) @ X
        for Om, eta, l in ((p.Omega_g, eta_gz, G), (p.Omega_e, eta_ez, E)):
            if Om * eta != 0:
                t = 1j * P(R, l) @ X
                h = h + 0.5 * Om * eta * (t + t.conj().T)
        h = h + p.omega_m * n_op
        modes = ("mode",)
    H = _herm(space, h)
    jumps = []
    if p.gamma_g > 0:
        jumps.append(("decay_g", QOperator(space, math.sqrt(p.gamma_g) * P(G, R))))
    if p.gamma_e > 0:
        jumps.append(("decay_e", QOperator(space, math.sqrt(p.gamma_e) * P(E, R))))
    if not internal_only:
        jumps += _thermal_jumps(p, space, "mode")
    dark = np.zeros(3, dtype=complex)
    dark[:2] = _dark_ket_bare(p) if (p.Omega_g or p.Omega_e) else [0, 1]
    doc = "ion levels (e, g, r)" + ("" if internal_only else f" x Fock 0..{p.cutoff}")
    return LindbladModel(space, H, jumps, doc, "three_level", p, ("ion",), modes,
                         ("e", "g", "r"), dark)


def _bare_spin_hamiltonian(p, dc):
    """2x2 spin Hamiltonian and Lamb-Dicke force in the (e, g) basis."""
    s_ge = _proj(2, G, E)  # |g><e|
    Om_R = dc.Omega_R
    hs = 0.5 * (dc.omega_LS + p.delta) * PAULI["z"] + 0.5 * (Om_R * s_ge + np.conj(Om_R) * s_ge.T)
    # first order of e^{i eta X}: i eta/2 (Omega_R s_ge - h.c.) = g_R sigma_y for real Omega_R
    force_R = 0.5j * p.eta_z * (Om_R * s_ge - np.conj(Om_R) * s_ge.T)
    force = force_R + p.g_O * PAULI["z"]
    return hs, force


def _bare_jumps(p):
    a = bare_alphas(p)
    Lg = a["gg"] * _proj(2, G, G) + a["ge"] * _proj(2, G, E)
    Le = a["eg"] * _proj(2, E, G) + a["ee"] * _proj(2, E, E)
    return Lg, Le


def dressed_rotation(p: PhysParams):
    """Orthogonal matrix whose columns are |+> and |-> in the (e, g) basis."""
    Os = math.hypot(p.Omega_g, p.Omega_e)
    if Os == 0:
        raise InvalidArgument("dressed basis undefined for Omega_g = Omega_e = 0")
    return np.array([[p.Omega_e, -p.Omega_g], [p.Omega_g, p.Omega_e]], dtype=complex) / Os


def dressed_spin_matrices(p: PhysParams):
    """Spin operators of the effective model rotated into the (+, -) basis.

    Returns a dict with ``hs`` (spin Hamiltonian), ``force`` (coefficient of
    b + b^dag), ``L1``, ``L2`` and the rotated Paulis ``x``, ``y``, ``z``.
    """
    if p.Delta_g != p.Delta_e:
        raise UnsupportedConfiguration(
            "the dressed basis is only defined at two-photon resonance (Delta_g = Delta_e)")
    dc = derive_couplings(p)
    V = dressed_rotation(p)
    rot = lambda m: V.conj().T @ m @ V
    hs, force = _bare_spin_hamiltonian(p, dc)
    Lg, Le = _bare_jumps(p)
    out = {"hs": rot(hs), "force": rot(force), "L1": rot(Lg), "L2": rot(Le)}
    for k, m in PAULI.items():
        out[k] = rot(m)
    return out


def build_effective_two_level(p: PhysParams, basis: str = "bare",
                              with_phonons: bool = True) -> LindbladModel:
    """Adiabatically eliminated spin (g, e) coupled to one mode.

    ``bare`` works in the (e, g) basis for any detunings; ``dressed`` is the
    exact rotation of the bare model into the (+, -) basis and requires
    Delta_g = Delta_e.
    """
    if p.N != 1:
        raise UnsupportedConfiguration(f"single-ion builder called with N={p.N}")
    if basis not in ("bare", "dressed"):
        raise InvalidArgument(f"unknown basis {basis!r}")
    if with_phonons:
        space = HilbertSpace.of(("spin", 2), ("mode", p.fock_dim))
    else:
        space = HilbertSpace.of(("spin", 2))
    if basis == "bare":
        dc = derive_couplings(p)
        hs, force = _bare_spin_hamiltonian(p, dc)
        Lg, Le = _bare_jumps(p)
        dark = _dark_ket_bare(p) if (p.Omega_g or p.Omega_e) else np.array([0, 1], complex)
        levels = ("e", "g")
    else:
        m = dressed_spin_matrices(p)
        hs, force, Lg, Le = m["hs"], m["force"], m["L1"], m["L2"]
        dark = np.array([0, 1], dtype=complex)
        levels = ("+", "-")
    h = embed(_sp(hs), "spin", space).matrix
    modes = ()
    if with_phonons:
        a, ad, num = _mode_matrices(p.fock_dim)
        X = embed(_sp((a + ad).toarray()), "mode", space).matrix
        h = h + embed(_sp(force), "spin", space).matrix @ X
        h = h + p.omega_m * embed(num, "mode", space).matrix
        modes = ("mode",)
    H = _herm(space, h)
    names = ("decay_g", "decay_e") if basis == "bare" else ("L1", "L2")
    jumps = [(nm, _op(space, "spin", L)) for nm, L in zip(names, (Lg, Le))
             if np.max(np.abs(L)) > 0]
    if with_phonons:
        jumps += _thermal_jumps(p, space, "mode")
    doc = f"spin ({', '.join(levels)})" + (f" x Fock 0..{p.cutoff}" if with_phonons else "")
    return LindbladModel(space, H, jumps, doc, f"effective_{basis}", p, ("spin",), modes,
                         levels, dark)


def _ion_labels(N):
    return tuple(f"ion{j}" for j in range(N))


def build_multi_ion(p: PhysParams, modes=None, approx: str = "tavis-cummings",
                    retained=(0,), frame: str = "lab") -> LindbladModel:
    """N dressed two-level ions coupled to crystal modes.

    ``full-dressed`` keeps every coupling term for the ``retained`` modes
    (indices into the mode spectrum, 0 = COM). ``tavis-cummings`` keeps only
    the resonant exchange with the COM mode. With ``frame='rotating'`` the
    Tavis-Cummings model is written in the interaction picture of
    omega_m (b^dag b + S_z) and the dressed jumps are split into their secular
    parts, which removes the fast phonon rotation from the integration.
    """
    from .modes import ModeSpectrum, synth_modes

    N = p.N
    if modes is None:
        modes = synth_modes("com_only", N, p.omega_m)
    if not isinstance(modes, ModeSpectrum):
        raise InvalidArgument("modes must be a ModeSpectrum")
    if modes.N != N:
        raise InvalidArgument(f"mode spectrum describes {modes.N} ions but N={N}")
    if approx not in ("full-dressed", "tavis-cummings"):
        raise InvalidArgument(f"unknown approximation {approx!r}")
    if frame not in ("lab", "rotating"):
        raise InvalidArgument(f"unknown frame {frame!r}")
    m = dressed_spin_matrices(p)
    dc = derive_couplings(p)
    ions = _ion_labels(N)
    dim = p.fock_dim

    if approx == "tavis-cummings":
        if abs(dc.omega_s - p.omega_m) > 1e-6 * p.omega_m:
            raise UnsupportedConfiguration(
                f"Tavis-Cummings model needs omega_s = omega_m; got omega_s={dc.omega_s:.9g}, "
                f"omega_m={p.omega_m:.9g}")
        if p.g_O != 0:
            raise UnsupportedConfiguration("Tavis-Cummings model requires g_O = 0")
        space = HilbertSpace.of(*[(lab, 2) for lab in ions], ("mode", dim))
        a, ad, num = _mode_matrices(dim)
        A = embed(a, "mode", space).matrix
        Ad = embed(ad, "mode", space).matrix
        sp_pm = _sp(_proj(2, PLUS, MINUS))
        sp_mp = _sp(_proj(2, MINUS, PLUS))
        gN = dc.g_R / math.sqrt(N)
        h = sp.csc_matrix((space.total_dim,) * 2, dtype=complex)
        for lab in ions:
            up = embed(sp_pm, lab, space).matrix
            # S_+ carries a factor -i so that the exchange is the RWA part of g_R sigma_y X
            h = h + gN * (-1j * up @ A + 1j * up.conj().T @ Ad)
        if frame == "lab":
            h = h + p.omega_m * embed(num, "mode", space).matrix
            for lab in ions:
                h = h + 0.5 * p.omega_m * embed(_sp(PAULI["z"]), lab, space).matrix
        H = _herm(space, h)
        jumps = []
        if frame == "lab":
            for j, lab in enumerate(ions):
                jumps.append((f"L1_{j}", _op(space, lab, m["L1"])))
                jumps.append((f"L2_{j}", _op(space, lab, m["L2"])))
        else:
            al = dressed_alphas(p)
            keep = math.sqrt(abs(al["gg"]) ** 2 + abs(al["ee"]) ** 2)
            flip = math.sqrt(abs(al["ge"]) ** 2 + abs(al["eg"]) ** 2)
            for j, lab in enumerate(ions):
                if keep > 0:
                    jumps.append((f"dephase_{j}", _op(space, lab, keep * _proj(2, PLUS, PLUS))))
                jumps.append((f"decay_{j}", _op(space, lab, flip * _proj(2, MINUS, PLUS))))
        jumps += _thermal_jumps(p, space, "mode")
        doc = (f"{N} dressed ions (+, -) x COM Fock 0..{p.cutoff}, Tavis-Cummings, "
               f"{frame} frame")
        return LindbladModel(space, H, jumps, doc, f"tavis_cummings_{frame}", p, ions,
                             ("mode",), ("+", "-"), np.array([0, 1], dtype=complex))

    if frame != "lab":
        raise UnsupportedConfiguration("the full dressed model is only available in the lab frame")
    retained = tuple(int(k) for k in retained)
    if not retained or len(set(retained)) != len(retained):
        raise InvalidArgument(f"invalid retained mode list {retained}")
    if modes.profiles is None:
        raise MissingProfiles("full-dressed model needs mode profiles K")
    for k in retained:
        if not 0 <= k < len(modes.frequencies):
            raise InvalidArgument(f"retained mode index {k} out of range")
    mlabels = tuple(f"mode{k}" for k in retained)
    space = HilbertSpace.of(*[(lab, 2) for lab in ions], *[(lab, dim) for lab in mlabels])
    a, ad, num = _mode_matrices(dim)
    w = modes.frequencies
    K = modes.profiles
    h = sp.csc_matrix((space.total_dim,) * 2, dtype=complex)
    for lab in ions:
        h = h + embed(_sp(m["hs"]), lab, space).matrix
    for k, ml in zip(retained, mlabels):
        X = embed(_sp((a + ad).toarray()), ml, space).matrix
        h = h + w[k] * embed(num, ml, space).matrix
        scale = math.sqrt(w[0] / w[k])
        for j, lab in enumerate(ions):
            c = K[k, j] * scale
            if c != 0:
                h = h + c * embed(_sp(m["force"]), lab, space).matrix @ X
    H = _herm(space, h)
    jumps = []
    for j, lab in enumerate(ions):
        jumps.append((f"L1_{j}", _op(space, lab, m["L1"])))
        jumps.append((f"L2_{j}", _op(space, lab, m["L2"])))
    for k, ml in zip(retained, mlabels):
        jumps += _thermal_jumps(p, space, ml, suffix=f"_{k}")
    doc = f"{N} dressed ions (+, -) x modes {retained} Fock 0..{p.cutoff}"
    return LindbladModel(space, H, jumps, doc, "full_dressed", p, ions, mlabels,
                         ("+", "-"), np.array([0, 1], dtype=complex))


def quadrature(nodes: int):
    """Gauss-Legendre nodes mu_i and weights w_i * W(mu_i) for the dipole pattern."""
    if int(nodes) != nodes or nodes < 4 or nodes % 2:
        raise InvalidArgument(f"quad_nodes must be an even integer >= 4, got {nodes}")
    mu, w = np.polynomial.legendre.leggauss(int(nodes))
    return mu, w * 0.375 * (1.0 + mu ** 2)


def _expm_ix(dim, theta):
    """exp(-i theta (b + b^dag)) on the truncated Fock space."""
    a, ad, _ = _mode_matrices(dim)
    lam, vec = np.linalg.eigh((a + ad).toarray())
    return (vec * np.exp(-1j * theta * lam)) @ vec.conj().T


def build_recoil_model(p: PhysParams, level_scheme: str = "three-level",
                       quad_nodes: int = 16) -> LindbladModel:
    """Single-ion model with the recoil of spontaneously emitted photons.

    Emission directions are discretized with Gauss-Legendre quadrature; each
    node contributes one jump per decay channel. The three-level variant
    attaches exp(-i mu |k_l| Z) exactly; the effective variant expands the
    motional phases of the eliminated jumps to first order.
    """
    if level_scheme not in ("three-level", "effective"):
        raise InvalidArgument(f"unknown level scheme {level_scheme!r}")
    if p.k_ratio_g <= 0 or p.k_ratio_e <= 0:
        raise InvalidArgument("recoil model needs k_ratio_g > 0 and k_ratio_e > 0")
    mu, wt = quadrature(quad_nodes)
    dim = p.fock_dim
    kz = {"g": p.k_ratio_g * p.eta_z, "e": p.k_ratio_e * p.eta_z}
    rates = {"g": p.gamma_g, "e": p.gamma_e}

    if level_scheme == "three-level":
        base = build_three_level(p)
        space = base.space
        jumps = [(lab, op) for lab, op in base.jumps if not lab.startswith("decay")]
        for l, lev in (("g", G), ("e", E)):
            if rates[l] == 0:
                continue
            s = embed(_sp(_proj(3, lev, R)), "ion", space).matrix
            for i, (m_i, w_i) in enumerate(zip(mu, wt)):
                kick = embed(_sp(_expm_ix(dim, m_i * kz[l])), "mode", space).matrix
                jumps.append((f"decay_{l}_{i}", QOperator(space, math.sqrt(rates[l] * w_i) * s @ kick)))
        return LindbladModel(space, base.hamiltonian, jumps, base.basis_doc + ", emission recoil",
                             "three_level_recoil", p, base.spin_factors, base.mode_factors,
                             base.levels, base.dark_state)

    base = build_effective_two_level(p, "bare")
    space = base.space
    jumps = [(lab, op) for lab, op in base.jumps if not lab.startswith("decay")]
    a, ad, _ = _mode_matrices(dim)
    X = embed(_sp((a + ad).toarray()), "mode", space).matrix
    ident = sp.identity(space.total_dim, dtype=complex, format="csc")
    al = bare_alphas(p)
    eta_abs = dict(zip(("g", "e"), p.eta_split))
    for l in ("g", "e"):
        if rates[l] == 0:
            continue
        for i, (m_i, w_i) in enumerate(zip(mu, wt)):
            terms = []
            # final level l; source level src; eta_{src l l}(mu) = eta_src - mu |k_l| Z_zpf
            for src in ("g", "e"):
                eta = eta_abs[src] - m_i * kz[l]
                proj = embed(_sp(_proj(2, G if l == "g" else E, G if src == "g" else E)),
                             "spin", space).matrix
                terms.append(al[l + src] * proj @ (ident + 1j * eta * X))
            op = math.sqrt(w_i) * reduce(lambda x, y: x + y, terms)
            jumps.append((f"decay_{l}_{i}", QOperator(space, op)))
    return LindbladModel(space, base.hamiltonian, jumps, base.basis_doc + ", emission recoil",
                         "effective_recoil", p, base.spin_factors, base.mode_factors,
                         base.levels, base.dark_state)
