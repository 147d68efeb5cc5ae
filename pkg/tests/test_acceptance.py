"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed in the terminal summary.
The slow ones run full presets (fig4b/fig4d, fig6a/b, fig8a/b, fig9a) and
together take roughly a quarter of an hour on one core.
"""
import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from darkcool import cli
from darkcool.engine import ObservableSet, evolve, steady
from darkcool.models import build_effective_two_level, derive_couplings, resonant_rabi
from darkcool.strong import closed_form_steady, decay_ladder, mean_bright_exact, \
    summary_formulas, table1_row
from darkcool.weak import ob_system, phonon_rates, spectrum_lorentzian, spectrum_regression

from conftest import TP, fig4_params, fig6_params, fig9_params, record


def preset(name, **numerics):
    sc = cli.load_config(cli.preset_dir() / f"{name}.toml")
    sc.numerics.update(numerics)
    return sc


def run(sc):
    return cli.RUNNERS[sc.kind](sc)


def column(cols, data, name):
    return data[:, cols.index(name)]


def rel(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)) / np.abs(np.asarray(b))


# ---------------------------------------------------------------- 1


def test_crit01_back_action_floor():
    start = time.perf_counter()
    gamma = TP * 18
    worst_below, worst_res = math.inf, 0.0
    ok = True
    for ratio in (10, 30, 100):
        DR = ratio * gamma
        Om = resonant_rabi(DR, gamma, TP * 1.59)
        base = fig4_params(Delta_g=DR, Delta_e=DR, gamma_m=0.0, eta_z=0.01, N=1)
        floor = (gamma / (4 * DR)) ** 2
        for a, b in itertools.product(np.linspace(0.6, 1.4, 10), repeat=2):
            nf = phonon_rates(base.replace(Omega_g=a * Om, Omega_e=b * Om)).n_f
            ok &= nf >= floor * (1 - 1e-6)
            worst_below = min(worst_below, nf / floor - 1)
        nf = phonon_rates(base.replace(Omega_g=Om, Omega_e=Om)).n_f
        worst_res = max(worst_res, abs(nf / floor - 1))
    ok &= worst_res < 1e-6
    wall = time.perf_counter() - start
    ok &= wall < 1.0
    record(1, "back-action floor", ok,
           f"min n_f/floor-1 = {worst_below:.2e}, resonance rel dev {worst_res:.2e}, {wall:.2f} s")
    assert ok


# ---------------------------------------------------------------- 2, 3


@pytest.mark.slow
def test_crit02_weak_rethermalization():
    cols, data, _, _ = run(preset("fig4b"))
    num = column(cols, data, "n_f_numeric")
    ana = column(cols, data, "n_f_analytic")
    nf = num.min()
    dev = rel(ana, num).max()
    at_min = rel(ana, num)[np.argmin(num)]
    ok = abs(nf / 0.086 - 1) <= 0.20 and dev <= 0.10
    record(2, "fig4b minimum n_f", ok,
           f"min n_f numeric {nf:.4f} (target 0.086 +-20%), analytic/numeric dev {at_min:.4f} "
           f"at the minimum, {dev:.3f} worst over the Omega_g grid")
    assert ok


@pytest.mark.slow
def test_crit03_odf_enhancement():
    cols, data, _, _ = run(preset("fig4d"))
    nf = column(cols, data, "n_f_numeric").min()
    # enhancement from the regression spectrum at the resonant, equal-Rabi point
    p0 = fig4_params(eta_z=0.001, n_th=4.6, gamma_m=TP * 0.75e-6)
    p0 = p0.replace(Omega_g=resonant_rabi(p0.Delta_R, p0.gamma, p0.omega_m),
                    Omega_e=resonant_rabi(p0.Delta_R, p0.gamma, p0.omega_m))
    pO = p0.replace(g_O=TP * 3.6e-3)
    pr = pO.g_O / derive_couplings(pO).g_R
    ratio = phonon_rates(pO, "regression").gamma_s / phonon_rates(p0, "regression").gamma_s
    enh = ratio / (1 + pr ** 2) - 1
    ok = abs(nf / 0.0039 - 1) <= 0.20 and abs(enh) <= 0.05
    record(3, "ODF enhancement", ok,
           f"min n_f numeric {nf:.5f} (target 0.0039 +-20%), gamma_s ratio {ratio:.3f} "
           f"vs 1+p^2 = {1 + pr ** 2:.3f}")
    assert ok


# ---------------------------------------------------------------- 4


def test_crit04_scattering_dip():
    start = time.perf_counter()
    cols, data, _, _ = run(preset("fig3b"))
    wall = time.perf_counter() - start
    x = data[:, 0]
    i1 = int(np.argmin(np.abs(x - 1.0)))
    parts, ok = [], wall < 10
    for j in range(1, len(cols)):
        y = data[:, j]
        floor = abs(y[i1])
        supp = y.max() / floor if floor > 0 else math.inf
        ok &= supp >= 1e3
        parts.append(f"{cols[j]} peak {y.max():.3g} /us, at 1: {y[i1]:.2g} (x{supp:.3g})")
    record(4, "scattering profile dip", ok, ", ".join(parts) + f", {wall:.1f} s")
    assert ok


# ---------------------------------------------------------------- 5, 6


@pytest.mark.slow
def test_crit05_collective_independence_weak():
    curves, walls = {}, []
    for ions in ([1, 2, 3], [4, 5]):
        start = time.perf_counter()
        cols, data, _, _ = run(preset("fig6a", ions=ions))
        walls.append(time.perf_counter() - start)
        for N in ions:
            curves[N] = column(cols, data, f"mean_phonon_N{N}")
    dev = max(rel(curves[a], curves[b]).max() for a, b in itertools.combinations(curves, 2))
    ok = dev < 0.02 and walls[0] < 300
    record(5, "weak collective independence", ok,
           f"max pairwise dev {dev:.4f} over N=1..5, N=1..3 in {walls[0]:.0f} s")
    assert ok


@pytest.mark.slow
def test_crit06_collective_speedup_strong():
    sc = preset("fig6b", ions=[1, 2, 3, 4])
    cols, data, _, extra = run(sc)
    _, adata = extra["analytic"]
    t = data[:, 0]
    t_min = 3 / derive_couplings(sc.params).gamma_b
    window = (10.0, 40.0)
    rates, devs, full = [], [], []
    for j, N in enumerate((1, 2, 3, 4), start=1):
        y, a = data[:, j], adata[:, j]
        rates.append(-math.log(np.interp(window[1], t, y) / np.interp(window[0], t, y))
                     / (window[1] - window[0]))
        late = t > t_min
        full.append(rel(a[late], y[late]).max())
        # the exact curve reaches ~1e-3 where the two-state ladder is not meant to apply
        mask = late & (y >= 0.05)
        devs.append(rel(a[mask], y[mask]).max())
    ok = bool(np.all(np.diff(rates) > 0)) and max(devs) <= 0.15
    record(6, "strong collective speed-up", ok,
           f"rates {window[0]:.0f}-{window[1]:.0f} us " + " ".join(f"{r:.4f}" for r in rates)
           + f" /us, ladder dev {max(devs):.3f} where <n> >= 0.05 "
           f"(unrestricted {max(full):.3g})")
    assert ok


# ---------------------------------------------------------------- 7


def brute_mean_bright(N, n_ex):
    total = hits = 0
    for bits in itertools.product((0, 1), repeat=N):
        m = sum(bits)
        if m <= n_ex:
            total += 1
            hits += m
    return Fraction(hits, total)


def test_crit07_ladder_identities():
    start = time.perf_counter()
    p = fig6_params()
    g1 = derive_couplings(p).gamma_1sc
    worst = 0.0
    half_ok = True
    for N in range(1, 65):
        lad = decay_ladder(p, N, N + 2)
        worst = max(worst, abs(lad[0] / (2 * N / (N + 1) * g1) - 1),
                    abs(lad[1] / (4 * N ** 2 / (N ** 2 + N + 2) * g1) - 1))
        half_ok &= all(mean_bright_exact(N, n) == Fraction(N, 2) for n in (N, N + 1, N + 2))
    brute_ok = all(mean_bright_exact(N, n) == brute_mean_bright(N, n)
                   for N in range(1, 13) for n in range(N + 2))
    wall = time.perf_counter() - start
    ok = worst < 1e-12 and half_ok and brute_ok and wall < 1.0
    record(7, "ladder identities", ok,
           f"max rung rel err {worst:.1e}, N/2 plateau {half_ok}, brute force {brute_ok}, {wall:.2f} s")
    assert ok


# ---------------------------------------------------------------- 8


def test_crit08_ground_state_limit():
    worst = 0.0
    for eta in (1e-4, 1e-3, 0.13):
        row = table1_row(fig6_params(eta_z=eta), 1)
        worst = max(worst, abs(row["strong_limit"] / (0.4375 * eta ** 2) - 1))
    pgs_cf, _, _ = closed_form_steady(fig6_params(eta_z=1e-3), 1)
    cf = (1 - pgs_cf) / (0.4375e-6) - 1
    p = fig6_params(eta_z=0.13, cutoff=12)
    _, vals, _ = steady(build_effective_two_level(p, "dressed"), ObservableSet(["ground_state_pop"]))
    exact = 1 - vals["ground_state_pop"]
    dev = exact / (0.4375 * 0.13 ** 2) - 1
    ok = worst < 1e-10 and abs(dev) <= 0.25
    record(8, "strong-coupling ground state", ok,
           f"table1 strong_limit vs 0.4375 eta^2 rel {worst:.1e}; closed form at eta=1e-3 rel {cf:.1e}; "
           f"exact 1-p_gs {exact:.5f} vs {0.4375 * 0.13 ** 2:.5f} ({dev:+.3f})")
    assert ok


# ---------------------------------------------------------------- 9


def fock_bright_state(model, n):
    kets = []
    for lab, d in zip(model.space.labels, model.space.dims):
        k = np.zeros(d, dtype=complex)
        k[0 if lab in model.spin_factors else n] = 1.0
        kets.append(k)
    psi = kets[0]
    for k in kets[1:]:
        psi = np.kron(psi, k)
    return np.outer(psi, psi.conj())


def test_crit09_rabi_period():
    # |+> (x) |n> in the effective two-level master equation, dissipation included
    p = fig6_params(N=1, cutoff=25)
    g_R = derive_couplings(p).g_R
    m = build_effective_two_level(p, "dressed")
    t = np.linspace(0.0, 20.0, 2001)
    parts, ok = [], True
    for n in (3, 5):
        y = evolve(m, fock_bright_state(m, n), t, ObservableSet(["mean_phonon"]))["mean_phonon"]
        peaks = [i for i in range(1, len(t) - 1) if y[i] > y[i - 1] and y[i] >= y[i + 1]]
        period = float(np.mean(np.diff(t[peaks[:4]])))
        target = 2 * math.pi / (g_R * math.sqrt(n))
        ok &= abs(period / target - 1) <= 0.03
        parts.append(f"n={n}: {period:.3f} us vs {target:.3f} us")
    record(9, "Rabi period", ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 10


@pytest.mark.slow
def test_crit10_recoil():
    cols, data, _, _ = run(preset("fig8a"))
    n0 = column(cols, data, "n_no_recoil")
    n1 = column(cols, data, "n_recoil")
    hot = n0 >= 1.0
    dev = rel(n1[hot], n0[hot]).max()
    sc = preset("fig8b")
    sc.sweep = ("k_ratio_g", np.array([3.0, 20.0]))
    cols, data, _, _ = run(sc)
    change = column(cols, data, "nonvacuum_rel_change")
    ok = dev < 0.05 and 0.10 <= change[1] <= 0.80
    record(10, "recoil", ok,
           f"weak dev {dev:.4f} while <n> >= 1; strong non-vacuum change at k=20 {change[1]:+.3g} "
           f"(k=3: {change[0]:+.3g})")
    assert ok


# ---------------------------------------------------------------- 11


def test_crit11_spectrum_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        g = TP * rng.uniform(3, 20)
        split = rng.uniform(0.2, 0.8)
        D = g * 10 ** rng.uniform(1, 2)
        p = fig4_params(Omega_g=TP * rng.uniform(10, 60), Omega_e=TP * rng.uniform(10, 60),
                        Delta_g=D, Delta_e=D, gamma_g=split * g, gamma_e=(1 - split) * g,
                        eta_z=rng.uniform(1e-4, 1e-2), g_O=TP * rng.uniform(0, 5e-3))
        ws = derive_couplings(p).omega_s
        w = np.linspace(-4 * ws, 4 * ws, 401)
        worst = max(worst, rel(spectrum_regression(ob_system(p), w), spectrum_lorentzian(p, w)).max())
    wall = time.perf_counter() - start
    ok = worst < 0.01 and wall < 5
    record(11, "spectrum oracle", ok, f"max rel dev {worst:.2e} over 20 sets, {wall:.2f} s")
    assert ok


# ---------------------------------------------------------------- 12


@pytest.mark.slow
def test_crit12_optimality_scan():
    sc = preset("fig9a")
    cols, data, _, _ = run(sc)
    eta = data[:, 0]
    gs = column(cols, data, "gamma_s_numeric")
    nf = column(cols, data, "n_f_numeric")
    nf_an = column(cols, data, "n_f_analytic_N1")
    g_strong = column(cols, data, "gamma_strong_N1")
    s = summary_formulas(fig9_params(eta_z=0.01), 1)
    eta_c = 0.01 * math.sqrt(s.gamma_strong / s.gamma_weak)
    below, above = eta < eta_c / 2, eta > 2 * eta_c
    slope = np.polyfit(np.log(eta[below]), np.log(gs[below]), 1)[0]
    plateau = rel(gs[above], g_strong[above]).max()
    p = sc.params
    n_ba = p.gamma ** 2 / (16 * p.Delta_R ** 2)
    flat = rel(nf[below], n_ba).max()
    eq_dev = rel(nf, nf_an).max()
    thermal = summary_formulas(fig9_params(eta_z=0.01), 1, weight="thermal")
    first = math.log(gs[1] / gs[0]) / math.log(eta[1] / eta[0])
    ok = (abs(slope - 2) <= 0.15 and plateau <= 0.25 and flat <= 0.25 and eq_dev <= 0.25
          and nf[-1] > 2 * n_ba)
    record(12, "optimality scan", ok,
           f"eta_c {eta_c:.4f}, slope {slope:.3f} (first pair {first:.3f}), plateau dev {plateau:.3f} "
           f"(Bose-Einstein weight would give gamma_strong {thermal.gamma_strong:.4f} vs "
           f"{s.gamma_strong:.4f} /us), n_f flat dev {flat:.3f}, n_f vs combined {eq_dev:.3f}")
    assert ok
