import math

import numpy as np
import pytest

from darkcool.engine import ObservableSet, evolve, initial_state, steady
from darkcool.errors import InvalidArgument, UnsupportedConfiguration
from darkcool.models import (LindbladModel, PhysParams, bare_alphas, build_effective_two_level,
                             build_multi_ion, build_recoil_model, build_three_level,
                             derive_couplings, dressed_alphas, dressed_spin_matrices,
                             quadrature, resonant_rabi)
from darkcool.modes import synth_modes
from darkcool.qops import boson_ops, embed, ket2dm, spin_ops, steady_state, thermal_dm

from conftest import FROZEN, TP, fig4_params, fig6_params

OBS = ObservableSet(["mean_phonon", "phonon_vacuum"])


def asym(delta=0.05):
    return fig4_params(Omega_g=TP * 30, Omega_e=TP * 45, Delta_g=TP * 500,
                       Delta_e=TP * (500 + delta))


# ---------------------------------------------------------------- parameters


def test_params_validation():
    with pytest.raises(InvalidArgument):
        fig4_params(gamma_g=-1.0)
    with pytest.raises(InvalidArgument):
        fig4_params(N=0)
    with pytest.raises(InvalidArgument):
        fig4_params(cutoff=2.5)
    with pytest.raises(InvalidArgument):
        fig4_params(Omega_g=math.nan)
    with pytest.raises(InvalidArgument):
        fig4_params(eta_z=0.1, eta_gz=0.0, eta_ez=0.2)
    # negative detunings are allowed
    assert fig4_params(Delta_g=-TP * 503.1, Delta_e=-TP * 503.1).Delta_R < 0


def test_validity_flags():
    assert fig4_params().flags() == []
    near = fig4_params(Delta_g=TP * 100, Delta_e=TP * 100)
    assert any("far detuned" in f for f in near.flags())
    hot = fig4_params(eta_z=0.5, n_th=4.6)
    assert any("Lamb-Dicke" in f for f in hot.flags())


def test_eta_split_default_and_override():
    p = fig4_params(eta_z=0.1)
    assert p.eta_split == (-0.05, 0.05)
    assert fig4_params(eta_z=0.1, eta_gz=0.02).eta_split == pytest.approx((0.02, 0.12))


# ---------------------------------------------------------------- derived couplings


def test_fig4_splitting_and_bright_width():
    dc = derive_couplings(fig4_params())
    assert dc.omega_s / TP == pytest.approx(1.5896, abs=5e-5)
    assert abs(dc.omega_s / TP - 1.59) < 1e-3
    assert dc.gamma_b / TP * 1e3 == pytest.approx(56.9, abs=0.05)


def test_fig6_coupling_ratio():
    p = fig4_params(Omega_g=TP * 35, Omega_e=TP * 35, Delta_g=TP * 385, Delta_e=TP * 385,
                    eta_z=0.13)
    dc = derive_couplings(p)
    assert dc.g_R / dc.gamma_b == pytest.approx(1.39, abs=0.005)


def test_fig6_resonant_rabi_close_to_35():
    assert resonant_rabi(TP * 385, TP * 18, TP * 1.59) / TP == pytest.approx(35.0, abs=0.05)


def test_equal_rabi_mixing_angle():
    dc = derive_couplings(fig4_params(Omega_g=TP * 17, Omega_e=TP * 17))
    assert dc.omega_LS == 0
    assert dc.alpha == math.pi / 2


def test_resonance_identities():
    p = fig4_params(Omega_g=TP * 31, Omega_e=TP * 44, eta_z=0.01)
    dc = derive_couplings(p)
    g, D = p.gamma, p.Delta_R
    Og, Oe = p.Omega_g, p.Omega_e
    assert dc.Omega_R.real == pytest.approx(2 * Og * Oe * D / (4 * D ** 2 + g ** 2), rel=1e-13)
    assert abs(dc.Omega_R.imag) < 1e-15 * abs(dc.Omega_R)
    assert dc.Q_s == pytest.approx(dc.omega_s / dc.gamma_b, rel=1e-14)
    assert dc.n_BA == pytest.approx((g / (4 * D)) ** 2, rel=1e-14)
    assert math.tan(dc.alpha) == pytest.approx(dc.Omega_R.real / dc.omega_LS, rel=1e-12)
    assert dc.g_R == pytest.approx(0.01 * abs(dc.Omega_R) / 2, rel=1e-14)
    # equal Rabi: omega_s = Delta_R Omega_s^2 / (gamma^2 + 4 Delta_R^2) and Q_s = Delta_R / gamma
    q = fig4_params()
    dq = derive_couplings(q)
    assert dq.omega_s == pytest.approx(
        q.Delta_R * 2 * q.Omega_g ** 2 / (q.gamma ** 2 + 4 * q.Delta_R ** 2), rel=1e-13)
    assert dq.Q_s == pytest.approx(q.Delta_R / q.gamma, rel=1e-13)


def test_couplings_undefined():
    with pytest.raises(InvalidArgument):
        derive_couplings(fig4_params(Delta_g=0.0, Delta_e=0.0, gamma_g=0.0, gamma_e=0.0))


@pytest.mark.parametrize("name,p", [("fig4", fig4_params()), ("fig6", fig6_params()),
                                    ("asym", asym())])
def test_couplings_match_eliminated_lambda(name, p):
    ref = FROZEN[f"spin_{name}"]
    dc = derive_couplings(p)
    assert abs(dc.Omega_R) == pytest.approx(ref["abs_Omega_R"], rel=1e-10)
    assert dc.omega_LS + p.delta == pytest.approx(ref["omega_z"], abs=1e-10)
    assert dc.omega_s == pytest.approx(ref["omega_s"], rel=1e-10)
    if p.delta == 0:
        assert dc.gamma_b == pytest.approx(ref["gamma_b"], rel=1e-12)
        # gamma_1sc is half the bright-to-dark transfer rate
        assert 2 * dc.gamma_1sc == pytest.approx(ref["rate_bright_to_dark"], rel=1e-12)


def test_fig6_single_ion_collective_rate():
    assert derive_couplings(fig6_params()).gamma_1sc / TP * 1e3 == pytest.approx(18.6, abs=0.05)


# ---------------------------------------------------------------- three-level model


def test_three_level_decoupled_sectors():
    p = fig4_params(eta_z=0.0, g_O=0.0, cutoff=5)
    m = build_three_level(p)
    rho0 = initial_state(m, n0=1.5, internal="bright")
    tr = evolve(m, rho0, np.linspace(0, 3, 7), OBS)
    n = tr["mean_phonon"]
    assert np.max(np.abs(n - n[0])) < 1e-9


def test_three_level_dark_resonance():
    # eta -> 0 decouples the mode entirely, leaving the internal Lambda system
    _, vals, _ = steady(build_three_level(fig4_params(), internal_only=True),
                        ObservableSet(["rho_rr"]))
    assert vals["rho_rr"] < 1e-12
    _, off, _ = steady(build_three_level(asym(0.1), internal_only=True),
                       ObservableSet(["rho_rr"]))
    assert off["rho_rr"] > 1e3 * vals["rho_rr"]


def test_three_level_requires_one_ion():
    with pytest.raises(UnsupportedConfiguration):
        build_three_level(fig4_params(N=2))


def test_three_level_strong_matches_oracle():
    ref = FROZEN["three_level_fig6_c12"]
    _, vals, _ = steady(build_three_level(fig6_params(cutoff=12)), OBS)
    assert vals["mean_phonon"] == pytest.approx(ref["mean_phonon"], rel=1e-7)
    assert vals["phonon_vacuum"] == pytest.approx(ref["phonon_vacuum"], rel=1e-9)


def test_three_level_odf_rethermalization_matches_oracle():
    ref = FROZEN["three_level_fig4d_c12"]
    p = fig4_params(eta_z=0.001, gamma_m=TP * 0.75e-6, n_th=4.6, g_O=TP * 3.6e-3, cutoff=12)
    _, vals, _ = steady(build_three_level(p), OBS)
    assert vals["mean_phonon"] == pytest.approx(ref["mean_phonon"], rel=1e-6)


def test_three_level_short_dynamics_match_oracle():
    ref = FROZEN["three_level_dyn_fig6_c7"]
    m = build_three_level(fig6_params(cutoff=7))
    tr = evolve(m, initial_state(m, n0=1.0), [0.0] + ref["t"], ObservableSet(["mean_phonon"]))
    assert np.allclose(tr["mean_phonon"][1:], ref["mean_phonon"], rtol=1e-6)


# ---------------------------------------------------------------- effective models


def test_dressed_spin_is_dark_without_phonons():
    m = build_effective_two_level(fig6_params(), "dressed", with_phonons=False)
    assert np.allclose(steady_state(m.liouvillian()), np.diag([0, 1]), atol=1e-10)


def test_dressed_amplitudes_sum_to_bright_width():
    for p in (fig4_params(), fig6_params(), fig4_params(Omega_g=TP * 20)):
        total = sum(abs(v) ** 2 for v in dressed_alphas(p).values())
        assert total == pytest.approx(derive_couplings(p).gamma_b, rel=1e-13)


def test_dressed_jumps_have_printed_form():
    p = fig4_params(Omega_g=TP * 28)
    m = dressed_spin_matrices(p)
    a = dressed_alphas(p)
    L1 = np.array([[a["gg"], 0], [a["ge"], 0]])
    L2 = np.array([[a["ee"], 0], [-a["eg"], 0]])
    assert np.allclose(m["L1"], L1, atol=1e-14)
    assert np.allclose(m["L2"], L2, atol=1e-14)
    # bare amplitudes are the same complex numbers
    b = bare_alphas(p)
    assert all(abs(a[k] - b[k]) < 1e-14 for k in a)


def test_dressed_jumps_annihilate_dark_state():
    m = dressed_spin_matrices(fig4_params(Omega_g=TP * 23))
    minus = np.array([0, 1])
    assert np.max(np.abs(m["L1"] @ minus)) < 1e-15
    assert np.max(np.abs(m["L2"] @ minus)) < 1e-15


def test_dressed_gap_equals_splitting():
    for p in (fig4_params(), fig4_params(Omega_g=TP * 25), fig6_params()):
        hs = dressed_spin_matrices(p)["hs"]
        gap = (hs[0, 0] - hs[1, 1]).real
        assert gap == pytest.approx(derive_couplings(p).omega_s, rel=1e-10)


def test_dressed_requires_two_photon_resonance():
    with pytest.raises(UnsupportedConfiguration):
        build_effective_two_level(asym(), "dressed")
    with pytest.raises(UnsupportedConfiguration):
        build_effective_two_level(fig4_params(N=2), "bare")


def test_bare_and_dressed_are_equivalent():
    p = fig6_params(cutoff=6)
    out = []
    for basis in ("bare", "dressed"):
        m = build_effective_two_level(p, basis)
        tr = evolve(m, initial_state(m, n0=1.0), [0, 2, 5], ObservableSet(["mean_phonon"]))
        out.append(tr["mean_phonon"])
    assert np.allclose(out[0], out[1], rtol=1e-7)


@pytest.mark.parametrize("basis", ["bare", "dressed"])
def test_effective_strong_matches_oracle(basis):
    ref = FROZEN["effective_fig6_c12"]
    _, vals, _ = steady(build_effective_two_level(fig6_params(cutoff=12), basis),
                        ObservableSet(["mean_phonon", "ground_state_pop"]))
    assert vals["mean_phonon"] == pytest.approx(ref["mean_phonon"], rel=1e-7)
    assert vals["ground_state_pop"] == pytest.approx(ref["ground_state_pop"], rel=1e-10)


def test_effective_short_dynamics_match_oracle():
    ref = FROZEN["effective_dyn_fig6_c7"]
    m = build_effective_two_level(fig6_params(cutoff=7), "bare")
    tr = evolve(m, initial_state(m, n0=1.0), [0.0] + ref["t"], ObservableSet(["mean_phonon"]))
    assert np.allclose(tr["mean_phonon"][1:], ref["mean_phonon"], rtol=1e-6)


def test_bare_spin_off_two_photon_resonance_matches_oracle():
    ref = FROZEN["spin_asym_detuned"]
    m = build_effective_two_level(asym(), "bare", with_phonons=False)
    rho = steady_state(m.liouvillian())
    assert rho[0, 0].real == pytest.approx(ref["rho_ee"], rel=1e-6)
    assert abs(rho[0, 1]) == pytest.approx(ref["abs_rho_eg"], rel=1e-6)


@pytest.mark.parametrize("delta", [0.02, 0.1])
def test_bare_spin_tracks_three_level_off_resonance(delta):
    # the three-level internal steady state, renormalized to the ground manifold
    p = asym(delta).replace(Omega_g=TP * 30, Omega_e=TP * 45)
    r3 = steady_state(build_three_level(p, internal_only=True).liouvillian())
    r2 = steady_state(build_effective_two_level(p, "bare", with_phonons=False).liouvillian())
    ground = r3[:2, :2] / np.trace(r3[:2, :2])
    assert np.max(np.abs(ground - r2)) < 2e-3
    assert ground[0, 0].real == pytest.approx(r2[0, 0].real, rel=1e-3)


def test_bare_vs_three_level_weak_dynamics():
    # reduced cutoff and initial occupation keep the dense propagator small
    Om = resonant_rabi(TP * 503.1, TP * 18, TP * 1.59)
    p = fig4_params(Omega_g=Om, Omega_e=Om, eta_z=0.001, cutoff=10)
    t = np.linspace(0, 2000, 21)
    curves = []
    for m in (build_three_level(p), build_effective_two_level(p, "bare")):
        tr = evolve(m, initial_state(m, n0=1.0), t, ObservableSet(["mean_phonon"]),
                    method="propagator")
        curves.append(tr["mean_phonon"])
    assert curves[0][-1] < 0.75 * curves[0][0]
    assert np.max(np.abs(curves[1] / curves[0] - 1)) < 0.03


def test_three_level_vs_effective_steady_weak():
    p = fig4_params(eta_z=0.001, gamma_m=TP * 0.75e-6, n_th=4.6, cutoff=12)
    _, a, _ = steady(build_three_level(p), OBS)
    _, b, _ = steady(build_effective_two_level(p, "bare"), OBS)
    assert b["mean_phonon"] == pytest.approx(a["mean_phonon"], rel=0.05)


# ---------------------------------------------------------------- multi-ion models


def tc_params(N, cutoff, eta=0.13):
    return fig6_params(N=N, cutoff=cutoff, eta_z=eta)


def test_tc_conserves_excitation_number():
    p = tc_params(3, 4)
    for frame in ("lab", "rotating"):
        m = build_multi_ion(p, frame=frame)
        H = m.hamiltonian.to_dense()
        s = m.space
        pp = spin_ops(("+", "-"))["++"]
        nex = embed(pp, "ion0", s) + embed(pp, "ion1", s) + embed(pp, "ion2", s)
        nex = (nex + embed(boson_ops(5)[2], "mode", s)).to_dense()
        # S_z differs from N_+ by a constant
        assert np.max(np.abs(nex @ H - H @ nex)) < 1e-13


def test_tc_rabi_exchange():
    # dissipation switched off, |+, n-1> <-> |-, n> with matrix element g_R sqrt(n)
    dc = derive_couplings(fig6_params())
    m = build_multi_ion(fig6_params(N=1, cutoff=8), frame="rotating")
    H = m.hamiltonian.to_dense()
    n = 3
    i_up, i_dn = 0 * 9 + (n - 1), 1 * 9 + n
    assert abs(H[i_up, i_dn]) == pytest.approx(dc.g_R * math.sqrt(n), rel=1e-12)
    free = LindbladModel(m.space, m.hamiltonian, [], m.basis_doc, m.kind, m.params,
                         m.spin_factors, m.mode_factors, m.levels, m.dark_state)
    psi = np.zeros(m.dim, complex)
    psi[i_up] = 1.0
    T = 2 * math.pi / (dc.g_R * math.sqrt(n))
    t = np.array([0, T / 8, T / 4, T / 2, T])
    y = evolve(free, ket2dm(psi), t, ObservableSet(["mean_phonon"]))["mean_phonon"]
    # <n> = n - 1 + sin^2(g_R sqrt(n) t)
    assert np.allclose(y, n - 1 + np.sin(dc.g_R * math.sqrt(n) * t) ** 2, atol=1e-6)
    # the amplitude itself comes back after T
    from scipy.linalg import expm
    back = expm(-1j * H * T) @ psi
    assert abs(back[i_up]) ** 2 == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("N", [1, 2])
def test_tc_rotating_matches_oracle(N):
    ref = FROZEN[f"tc_rot_fig6_N{N}_c8"]
    m = build_multi_ion(fig6_params(N=N, cutoff=8), frame="rotating")
    tr = evolve(m, initial_state(m, n0=1.0), [0.0] + ref["t"], ObservableSet(["mean_phonon"]))
    assert np.allclose(tr["mean_phonon"][1:], ref["mean_phonon"], rtol=1e-6)


def test_tc_sector_integration_matches_full():
    m = build_multi_ion(fig6_params(N=2, cutoff=6), frame="rotating")
    rho0 = initial_state(m, n0=1.0)
    t = [0, 5, 20]
    a = evolve(m, rho0, t, ObservableSet(["mean_phonon"]))["mean_phonon"]
    b = evolve(m, rho0, t, ObservableSet(["mean_phonon"]),
               sector="excitation_number")["mean_phonon"]
    assert np.allclose(a, b, rtol=1e-7)


def test_tc_lab_and_rotating_frames_agree_on_phonons():
    p = fig6_params(N=1, cutoff=6, eta_z=0.02)
    t = [0, 5, 10]
    out = []
    for frame in ("lab", "rotating"):
        m = build_multi_ion(p, frame=frame)
        out.append(evolve(m, initial_state(m, n0=1.0), t,
                          ObservableSet(["mean_phonon"]))["mean_phonon"])
    # the secular jumps drop terms rotating at omega_s >> gamma_b
    assert np.allclose(out[0], out[1], rtol=0.02)


def test_tc_vs_full_dressed_weak():
    p = fig4_params(N=2, cutoff=5)
    p = p.replace(Omega_g=resonant_rabi(p.Delta_R, p.gamma, p.omega_m),
                  Omega_e=resonant_rabi(p.Delta_R, p.gamma, p.omega_m))
    dc = derive_couplings(p)
    p = p.replace(eta_z=2 * 0.01 * p.omega_m / abs(dc.Omega_R))
    dc = derive_couplings(p)
    assert dc.g_R / p.omega_m == pytest.approx(0.01)
    rate = 4 * dc.g_R ** 2 / dc.gamma_b
    t = np.linspace(0, 5 / rate, 11)
    obs = ObservableSet(["mean_phonon"])
    modes = synth_modes("degenerate", 2, p.omega_m)
    full = build_multi_ion(p, modes, approx="full-dressed")
    tc = build_multi_ion(p, modes, frame="rotating")
    a = evolve(full, initial_state(full, n0=0.5), t, obs)["mean_phonon"]
    b = evolve(tc, initial_state(tc, n0=0.5), t, obs)["mean_phonon"]
    assert np.max(np.abs(b / a - 1)) < 0.02


def test_tc_preconditions():
    with pytest.raises(UnsupportedConfiguration):
        build_multi_ion(fig6_params(N=2, g_O=0.01))
    off = fig6_params(N=2).replace(Omega_g=TP * 30, Omega_e=TP * 30)
    with pytest.raises(UnsupportedConfiguration):
        build_multi_ion(off)
    with pytest.raises(InvalidArgument):
        build_multi_ion(fig6_params(N=3), synth_modes("com_only", 2, TP * 1.59))


# ---------------------------------------------------------------- recoil


def test_quadrature_weights():
    for n in (4, 8, 16, 32):
        mu, w = quadrature(n)
        assert abs(w.sum() - 1) < 1e-12
    for bad in (3, 5, 2, 4.5):
        with pytest.raises(InvalidArgument):
            quadrature(bad)


def test_recoil_requires_positive_ratios():
    with pytest.raises(InvalidArgument):
        build_recoil_model(fig6_params(cutoff=4))
    with pytest.raises(InvalidArgument):
        build_recoil_model(fig6_params(cutoff=4, k_ratio_g=1, k_ratio_e=1), "other")


def test_recoil_vanishing_kick_three_level():
    p = fig6_params(cutoff=5, k_ratio_g=1e-13, k_ratio_e=1e-13)
    t = [0, 1, 4]
    a = build_three_level(p)
    b = build_recoil_model(p, "three-level", 8)
    obs = ObservableSet(["mean_phonon"])
    ya = evolve(a, initial_state(a, n0=1.0), t, obs)["mean_phonon"]
    yb = evolve(b, initial_state(b, n0=1.0), t, obs)["mean_phonon"]
    assert np.max(np.abs(ya - yb)) < 1e-10


def test_recoil_vanishing_kick_effective():
    # the expanded recoil jumps keep the laser Lamb-Dicke terms at k -> 0, so the
    # limit is the effective model with first-order jumps, not the zeroth-order one
    p = fig6_params(cutoff=12, k_ratio_g=1e-13, k_ratio_e=1e-13)
    _, vals, _ = steady(build_recoil_model(p, "effective", 8), OBS)
    ref = FROZEN["effective_ldjumps_fig6_c12"]["mean_phonon"]
    assert vals["mean_phonon"] == pytest.approx(ref, rel=1e-6)


def test_recoil_three_level_matches_oracle():
    ref = FROZEN["recoil3_fig6_k3_c12"]
    p = fig6_params(cutoff=12, k_ratio_g=3.0, k_ratio_e=3.0)
    _, vals, _ = steady(build_recoil_model(p, "three-level", 16), OBS)
    assert vals["mean_phonon"] == pytest.approx(ref["mean_phonon"], rel=1e-6)
    assert vals["phonon_vacuum"] == pytest.approx(ref["phonon_vacuum"], rel=1e-9)


def test_recoil_effective_matches_oracle():
    ref = FROZEN["recoil_eff_fig6_k3_c12"]
    p = fig6_params(cutoff=12, k_ratio_g=3.0, k_ratio_e=3.0)
    _, vals, _ = steady(build_recoil_model(p, "effective", 16), OBS)
    assert vals["mean_phonon"] == pytest.approx(ref["mean_phonon"], rel=1e-6)


def test_recoil_quadrature_converged():
    p = fig6_params(cutoff=8, k_ratio_g=3.0, k_ratio_e=3.0)
    vals = [steady(build_recoil_model(p, "three-level", n), OBS)[1]["mean_phonon"]
            for n in (16, 32)]
    assert abs(vals[1] - vals[0]) < 1e-6
