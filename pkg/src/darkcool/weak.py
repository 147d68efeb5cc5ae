"""Weak-coupling theory: Bloch equations, spin force spectrum and phonon rates.

The spin is described by its Bloch vector (<sigma_x>, <sigma_y>, <sigma_z>) in
the bare (e, g) basis at two-photon resonance. The motional mode sees the
force F = g_R sigma_y + g_O sigma_z, whose fluctuation spectrum S(omega) sets
the phonon absorption and emission rates.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, SolverFailure, UnsupportedConfiguration
from .models import PhysParams, derive_couplings

LEVI = np.zeros((3, 3, 3))
for _a, _b, _c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI[_a, _b, _c] = 1.0
    LEVI[_b, _a, _c] = -1.0


def _require_resonant(p):
    if p.Delta_g != p.Delta_e:
        raise UnsupportedConfiguration("weak-coupling formulas assume Delta_g = Delta_e")


@dataclass(frozen=True)
class OBSystem:
    A: np.ndarray
    Gamma: np.ndarray
    sigma_ss: np.ndarray
    F_coupling: np.ndarray


def ob_system(p: PhysParams) -> OBSystem:
    """Bloch equations d sigma/dt = A sigma + Gamma of the eliminated spin."""
    _require_resonant(p)
    dc = derive_couplings(p)
    g, DR = p.gamma, p.Delta_R
    D = g ** 2 + 4 * DR ** 2
    Og, Oe = p.Omega_g, p.Omega_e
    OR = dc.Omega_R.real
    A = np.array([
        [-dc.gamma_b / 2, -dc.omega_LS, 0.0],
        [dc.omega_LS, -dc.gamma_b / 2, -OR],
        [Oe * Og * (p.gamma_e - p.gamma_g) / D, OR, -(p.gamma_e * Og ** 2 + p.gamma_g * Oe ** 2) / D],
    ])
    Gamma = -np.array([Oe * Og * g / D, 0.0, (p.gamma_g * Oe ** 2 - p.gamma_e * Og ** 2) / D])
    try:
        s = -np.linalg.solve(A, Gamma)
    except np.linalg.LinAlgError:
        raise SolverFailure("Bloch kernel matrix is singular") from None
    if np.linalg.cond(A) > 1e14:
        raise SolverFailure("Bloch kernel matrix is numerically singular")
    return OBSystem(A, Gamma, s, np.array([0.0, dc.g_R, p.g_O]))


def spectrum_regression(sys: OBSystem, omega):
    """S(omega) = 2 Re[c (-i omega - A)^{-1} (<sigma F> - <sigma><F>)] by quantum regression."""
    s = sys.sigma_ss
    c = sys.F_coupling
    corr = np.eye(3) + 1j * np.einsum("abk,k->ab", LEVI, s)  # <sigma_a sigma_b>
    v = corr @ c - s * (c @ s)
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.empty(w.shape)
    eye = np.eye(3)
    for i, wi in enumerate(w):
        out[i] = 2.0 * np.real(c @ np.linalg.solve(-1j * wi * eye - sys.A, v))
    return out if np.ndim(omega) else float(out[0])


def spectrum_lorentzian(p: PhysParams, omega):
    """Closed-form Lorentzian spin spectrum peaked at omega_s with width gamma_b."""
    _require_resonant(p)
    dc = derive_couplings(p)
    Og2, Oe2 = p.Omega_g ** 2, p.Omega_e ** 2
    Os2 = Og2 + Oe2
    num = dc.gamma_b * (4 * p.g_O ** 2 * Og2 * Oe2 + dc.g_R ** 2 * Os2 ** 2)
    w = np.asarray(omega, dtype=float)
    return num / (Os2 ** 2 * ((w - dc.omega_s) ** 2 + (dc.gamma_b / 2) ** 2))


@dataclass(frozen=True)
class PhononRates:
    S_plus: float
    S_minus: float
    A_minus: float
    A_plus: float
    Gamma_c: float
    n_f: float
    cooling: bool
    gamma_s: float
    n_s: float

    def as_dict(self):
        return dict(self.__dict__)


def phonon_rates(p: PhysParams, spectrum_source: str = "lorentzian") -> PhononRates:
    """Down and up rates of the mode; n_f is nan when there is no net cooling."""
    if spectrum_source == "lorentzian":
        S = lambda w: float(spectrum_lorentzian(p, w))
    elif spectrum_source == "regression":
        sys = ob_system(p)
        S = lambda w: spectrum_regression(sys, w)
    else:
        raise InvalidArgument(f"unknown spectrum source {spectrum_source!r}")
    sp_, sm = S(p.omega_m), S(-p.omega_m)
    a_minus = sp_ + p.gamma_m * (p.n_th + 1)
    a_plus = sm + p.gamma_m * p.n_th
    gc = a_minus - a_plus
    cooling = gc > 0
    n_f = a_plus / gc if cooling else math.nan
    gs = sp_ - sm
    n_s = sm / gs if gs > 0 else math.nan
    return PhononRates(sp_, sm, a_minus, a_plus, gc, n_f, cooling, gs, n_s)


@dataclass(frozen=True)
class OptimalRates:
    gamma_s_opt: float        # general Rabi frequencies
    gamma_s_opt_equal: float  # equal-Rabi expression
    n_s_min: float
    n_f_min: float


def optimal_rates(p: PhysParams) -> OptimalRates:
    """Spin-induced cooling rate and final occupation at omega_s = omega_m."""
    _require_resonant(p)
    dc = derive_couplings(p)
    if abs(dc.omega_s - p.omega_m) > 0.01 * p.omega_m:
        warnings.warn(f"optimal rates assume omega_s = omega_m; omega_s/omega_m = "
                      f"{dc.omega_s / p.omega_m:.4f}", stacklevel=2)
    g, DR = p.gamma, p.Delta_R
    Og2, Oe2 = p.Omega_g ** 2, p.Omega_e ** 2
    Os2 = Og2 + Oe2
    general = (64 * DR ** 2 * (g ** 2 + 4 * DR ** 2)
               * (4 * p.g_O ** 2 * Og2 * Oe2 + dc.g_R ** 2 * Os2 ** 2)
               / (g * (g ** 2 + 16 * DR ** 2) * Os2 ** 3))
    equal = 64 * DR ** 2 * (p.g_O ** 2 + dc.g_R ** 2) / ((16 * DR ** 2 + g ** 2) * dc.gamma_b)
    n_s = (g / (4 * DR)) ** 2
    n_f = (general * n_s + p.gamma_m * p.n_th) / (general + p.gamma_m)
    return OptimalRates(general, equal, n_s, n_f)


def rate_equation_trajectory(rates: PhononRates, n0: float, t_grid):
    """Exact solution of dn/dt = -Gamma_c n + A_plus."""
    t = np.asarray(t_grid, dtype=float)
    gc = rates.Gamma_c
    if gc == 0:
        return n0 + rates.A_plus * t
    # n0 e^{-G t} + A_plus (1 - e^{-G t}) / G, stable for either sign of G
    return n0 * np.exp(-gc * t) - rates.A_plus * np.expm1(-gc * t) / gc
