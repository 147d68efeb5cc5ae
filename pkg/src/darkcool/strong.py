"""Strong-coupling collective rate theory for N ions sharing one resonant mode.

Populations are lumped by total excitation number n_ex = n + N_+ and assumed
evenly spread over the degenerate Tavis-Cummings eigenstates of each n_ex.
Each n_ex > 0 decays to n_ex - 1; the dressed ground state is pumped into
n_ex = 1 and 2 at second order in eta_z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np
from scipy.linalg import expm

from .errors import (InvalidArgument, RangeOverflow, SolverFailure, UndefinedRate,
                     UnsupportedConfiguration)
from .models import PhysParams, derive_couplings, resonant_rabi
from .modes import ModeSpectrum, synth_modes

COUNT_BITS = 128


def state_count(N: int, n_ex: int, bits: int = COUNT_BITS) -> int:
    """Number of Tavis-Cummings eigenstates with n_ex excitations."""
    _check_counts(N, n_ex)
    total = sum(comb(N, m) for m in range(min(n_ex, N) + 1))
    if total.bit_length() > bits:
        raise RangeOverflow(f"state count for N={N}, n_ex={n_ex} exceeds {bits} bits")
    return total


def _check_counts(N, n_ex):
    if int(N) != N or N < 1:
        raise InvalidArgument(f"N must be a positive integer, got {N}")
    if int(n_ex) != n_ex or n_ex < 0:
        raise InvalidArgument(f"n_ex must be a non-negative integer, got {n_ex}")


def mean_bright_exact(N: int, n_ex: int) -> Fraction:
    _check_counts(N, n_ex)
    top = min(n_ex, N)
    num = sum(m * comb(N, m) for m in range(top + 1))
    den = sum(comb(N, m) for m in range(top + 1))
    return Fraction(num, den)


def mean_bright(N: int, n_ex: int) -> float:
    """State-averaged number of bright ions at excitation number n_ex."""
    return float(mean_bright_exact(N, n_ex))


def _require_two_photon(p):
    if p.Delta_g != p.Delta_e:
        raise UnsupportedConfiguration("strong-coupling theory assumes Delta_g = Delta_e")


def decay_ladder(p: PhysParams, N: int, n_max: int) -> np.ndarray:
    """gamma_{N,sc}^{(n)} for n = 1 ... n_max."""
    _require_two_photon(p)
    g1 = derive_couplings(p).gamma_1sc
    return np.array([2.0 * mean_bright(N, n) * g1 for n in range(1, n_max + 1)])


def _com_check(p, modes):
    if modes is None:
        return synth_modes("com_only", 1, p.omega_m)
    if not isinstance(modes, ModeSpectrum):
        raise InvalidArgument("modes must be a ModeSpectrum")
    w0 = modes.frequencies[0]
    if abs(w0 - p.omega_m) > 1e-6 * p.omega_m:
        raise InvalidArgument(
            f"mode 0 must be the COM mode at omega_m: got {w0:.9g}, omega_m = {p.omega_m:.9g}")
    return modes


def _mode_sums(p, modes):
    w = modes.frequencies
    wm = p.omega_m
    ratio = 4 * w ** 2 / (wm + w) ** 2
    return ratio, w


def pump_rates(p: PhysParams, modes: ModeSpectrum | None = None):
    """Pump rates (gamma_1p, gamma_2p) out of the dressed ground state.

    The squared prefactor uses 4 (4 Delta_R^2 + gamma^2) in place of
    16 Delta_R^2 so that the general expression reproduces the equal-Rabi
    form (eta_z^2 / 8) gamma_1sc exactly.
    """
    _require_two_photon(p)
    modes = _com_check(p, modes)
    ratio, _ = _mode_sums(p, modes)
    Og2, Oe2 = p.Omega_g ** 2, p.Omega_e ** 2
    Os2 = Og2 + Oe2
    DR, g = p.Delta_R, p.gamma
    pref = (p.Omega_g * p.Omega_e * p.eta_z) ** 2 / (4 * (4 * DR ** 2 + g ** 2) * Os2 ** 2)
    same = Og2 * p.gamma_g + Oe2 * p.gamma_e
    cross = Og2 * p.gamma_e + Oe2 * p.gamma_g
    g1p = pref * (np.sum(ratio[1:]) * same + cross)
    g2p = pref * same
    if p.Omega_g == p.Omega_e:
        g1sc = derive_couplings(p).gamma_1sc
        e1 = p.eta_z ** 2 / 8 * g1sc * np.sum(ratio)
        e2 = p.eta_z ** 2 / 8 * g1sc
        for a, b in ((g1p, e1), (g2p, e2)):
            if abs(a - b) > 1e-10 * max(abs(b), 1e-300):
                raise SolverFailure(f"pump rate forms disagree: {a!r} vs {b!r}")
    return float(g1p), float(g2p)


@dataclass(frozen=True, eq=False)
class RateLadder:
    N: int
    n_max: int
    gamma_sc: np.ndarray  # index k holds gamma^{(k+1)}
    gamma_1p: float
    gamma_2p: float
    M: np.ndarray

    def steady_state(self):
        """Normalized null vector of M."""
        w, v = np.linalg.eig(self.M)
        k = int(np.argmin(np.abs(w)))
        x = np.real(v[:, k])
        return x / x.sum()

    def closed_form_populations(self):
        """Populations of n_ex = 0, 1, 2 from the rational expressions; zero above."""
        g1, g2 = self.gamma_sc[0], self.gamma_sc[1]
        p1, p2 = self.gamma_1p, self.gamma_2p
        den = (g1 + p1 + p2) * g2 + p2 * g1
        out = np.zeros(self.n_max + 1)
        out[:3] = [g1 * g2 / den, (p1 + p2) * g2 / den, p2 * g1 / den]
        return out


def default_n_max(N: int, n_th: float) -> int:
    return int(max(10, math.ceil(4 * n_th + N)))


def build_ladder(p: PhysParams, N: int, n_max: int, modes: ModeSpectrum | None = None) -> RateLadder:
    if int(n_max) != n_max or n_max < 2:
        raise InvalidArgument(f"n_max must be an integer >= 2, got {n_max}")
    n_max = int(n_max)
    gsc = decay_ladder(p, N, n_max)
    g1p, g2p = pump_rates(p, modes)
    M = np.zeros((n_max + 1, n_max + 1))
    M[0, 0] = -g1p - g2p
    M[1, 0] = g1p
    M[2, 0] = g2p
    for n in range(1, n_max + 1):
        M[n - 1, n] = gsc[n - 1]
        M[n, n] = -gsc[n - 1]
    return RateLadder(N, n_max, gsc, g1p, g2p, M)


def ladder_trajectory(ladder: RateLadder, p0, t_grid) -> np.ndarray:
    """Rows are p_ex(t) for each t, from the matrix exponential of M."""
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (ladder.n_max + 1,):
        raise InvalidArgument(f"p0 must have length {ladder.n_max + 1}")
    if np.any(p0 < 0) or abs(p0.sum() - 1) > 1e-10:
        raise InvalidArgument("p0 must be a probability vector")
    t = np.asarray(t_grid, dtype=float)
    out = np.empty((t.size, p0.size))
    for i, ti in enumerate(t):
        out[i] = expm(ladder.M * ti) @ p0
    if np.any(np.abs(out.sum(axis=1) - 1) > 1e-9) or out.min() < -1e-12:
        raise SolverFailure("ladder propagation lost probability")
    return out


@dataclass(frozen=True, eq=False)
class ObservableVectors:
    n_ex_vec: np.ndarray
    n_vec: np.ndarray
    p_gs_vec: np.ndarray


def _ground_corrections(p, modes):
    """Second-order excitation and phonon content of the dressed ground state."""
    _, w = _mode_sums(p, modes)
    Og2, Oe2 = p.Omega_g ** 2, p.Omega_e ** 2
    base = p.eta_z ** 2 * Oe2 * Og2 / (Oe2 + Og2) ** 2
    terms = base * p.omega_m ** 2 / (p.omega_m + w) ** 2
    return terms, base


def observable_vectors(p: PhysParams, N: int, n_max: int,
                       modes: ModeSpectrum | None = None) -> ObservableVectors:
    modes = _com_check(p, modes)
    terms, base = _ground_corrections(p, modes)
    j = np.arange(n_max + 1, dtype=float)
    n_ex = j.copy()
    n_ex[0] = terms.sum()
    n = np.array([k - mean_bright(N, k) for k in range(n_max + 1)])
    n[0] = base / 4
    p_gs = np.zeros(n_max + 1)
    p_gs[0] = 1.0 - terms.sum()
    return ObservableVectors(n_ex, n, p_gs)


def closed_form_steady(p: PhysParams, N: int, modes: ModeSpectrum | None = None):
    """(p_gs, n_ex, n) in the steady state from the rational closed forms."""
    modes = _com_check(p, modes)
    gsc = decay_ladder(p, N, 2)
    g1, g2 = gsc
    p1, p2 = pump_rates(p, modes)
    den = g1 * g2 + p1 * g2 + p2 * g2 + p2 * g1
    terms, base = _ground_corrections(p, modes)
    p_gs = g1 * g2 / den - terms.sum()
    n_ex = (p1 * g2 + p2 * g2 + 2 * p2 * g1) / den + terms[1:].sum() + base / 2
    n = ((p1 * g2 + p2 * g2) / (N + 1) + p2 * g1 * (2 * N + 4) / (N * N + N + 2)) / den + base / 4
    return float(p_gs), float(n_ex), float(n)


def effective_decay_rate(ladder: RateLadder, p_ex) -> float:
    """sum_n gamma^{(n)} P(n) / nbar_ex."""
    p_ex = np.asarray(p_ex, dtype=float)
    n = np.arange(p_ex.size)
    nbar = float(n @ p_ex)
    if nbar <= 0:
        raise UndefinedRate("effective decay rate undefined for zero mean excitation")
    if p_ex.size > ladder.n_max + 1:
        raise InvalidArgument("distribution longer than the ladder")
    return float(ladder.gamma_sc[: p_ex.size - 1] @ p_ex[1:] / nbar)


def thermal_weights(n_th: float, n_max: int, kind: str = "verbatim") -> np.ndarray:
    """Normalized excitation-number weights used for the effective strong rate.

    ``verbatim`` is exp(-2 n coth(2 n_th + 1)); ``thermal`` is the Bose-Einstein
    distribution (n_th / (n_th + 1))^n.
    """
    n = np.arange(n_max + 1, dtype=float)
    if kind == "verbatim":
        w = np.exp(-2 * n / math.tanh(2 * n_th + 1))
    elif kind == "thermal":
        w = (n_th / (n_th + 1)) ** n if n_th > 0 else (n == 0).astype(float)
    else:
        raise InvalidArgument(f"unknown weight kind {kind!r}")
    return w / w.sum()


def table1_params(p: PhysParams) -> PhysParams:
    """Equal Rabi frequencies on exact resonance omega_s = omega_m, g_O = 0, gamma_m = 0."""
    Om = resonant_rabi(p.Delta_R, p.gamma, p.omega_m)
    return p.replace(Omega_g=Om, Omega_e=Om, Delta_g=p.Delta_R, Delta_e=p.Delta_R,
                     gamma_m=0.0)


def table1_row(p: PhysParams, N: int, modes: ModeSpectrum | None = None) -> dict:
    modes = _com_check(p, modes)
    q = table1_params(p)
    DR, g, wm, eta = q.Delta_R, q.gamma, q.omega_m, q.eta_z
    w = modes.frequencies
    pref = DR * wm / g
    ssum = np.sum((8 * N * (N + 1) * w ** 2 + 8 * N ** 2 * wm ** 2) / (wm + w) ** 2)
    from .weak import optimal_rates
    return {
        "weak_rate_table1": pref * (eta ** 2 / 4 + 4 * p.g_O ** 2 / wm ** 2),
        "weak_rate_eq18": optimal_rates(q.replace(g_O=p.g_O)).gamma_s_opt_equal,
        "weak_limit": g ** 2 / (16 * DR ** 2),
        "strong_rate_few": pref * g ** 2 / (4 * DR ** 2) * 2 * N / (N + 1),
        "strong_rate_many_times_nex": pref * g ** 2 / (4 * DR ** 2) * N,
        "strong_limit": eta ** 2 * (ssum + 3 * N ** 2 + 3 * N + 2) / (32 * N ** 2),
        "Omega": q.Omega_g,
    }


@dataclass(frozen=True)
class Summary:
    n_f_combined: float
    gamma_s_combined: float
    gamma_weak: float
    gamma_strong: float
    n_f_sc: float
    table1: dict


def summary_formulas(p: PhysParams, N: int, modes: ModeSpectrum | None = None,
                     n_th: float | None = None, weight: str = "verbatim",
                     weak_form: str = "table1", n_max: int | None = None) -> Summary:
    """Combined weak + strong estimates of the final phonon number and cooling rate.

    ``p`` should already sit on resonance; the cooling-parameter table is evaluated
    on exact resonance with equal Rabi frequencies regardless.
    """
    _require_two_photon(p)
    modes = _com_check(p, modes)
    n_th = p.n_th if n_th is None else n_th
    DR, g = p.Delta_R, p.gamma
    _, _, n_sc = closed_form_steady(p, N, modes)
    n_f = g ** 2 / (16 * DR ** 2) + n_sc
    if n_max is None:
        n_max = max(default_n_max(N, n_th), int(math.ceil(40 * (n_th + 1))))
    ladder = build_ladder(p, N, n_max, modes)
    strong = effective_decay_rate(ladder, thermal_weights(n_th, n_max, weight))
    row = table1_row(p, N, modes)
    if weak_form == "table1":
        weak = p.eta_z ** 2 * DR * p.omega_m / (4 * g)
    elif weak_form == "eq18":
        weak = p.eta_z ** 2 * DR * p.omega_m / g
    else:
        raise InvalidArgument(f"unknown weak-rate form {weak_form!r}")
    return Summary(n_f, min(weak, strong), weak, strong, n_sc, row)
