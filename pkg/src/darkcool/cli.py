"""Config-driven scenario runner.

    darkcool run <config.toml | preset>      [--out DIR] [--threads K]
    darkcool compare <a.csv> <b.csv> --tol rel=0.1[,abs=..,xmin=..,xmax=..] [--interpolate]
    darkcool presets list
    darkcool modes validate <file> [--omega-m-2pi-mhz F]

Exit codes: 0 ok, 1 comparison failed, 2 config or argument error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .engine import (ObservableSet, evolve, fit_cooling_rate, initial_state,
                     scattering_rate_profile, steady)
from .errors import ConfigError, DarkcoolError, InvalidArgument, SolverFailure
from .models import (PhysParams, build_effective_two_level, build_multi_ion, build_recoil_model,
                     build_three_level, derive_couplings, resonant_rabi)
from .modes import load_modes, synth_modes
from .qops import thermal_populations
from .strong import (build_ladder, closed_form_steady, decay_ladder, default_n_max,
                     ladder_trajectory, observable_vectors, summary_formulas, table1_row)
from .svgplot import line_plot
from .weak import ob_system, phonon_rates, rate_equation_trajectory, spectrum_lorentzian, \
    spectrum_regression

KINDS = ("steady_sweep", "dynamics", "spectrum", "scattering_profile", "collective_rates",
         "optimality_scan", "recoil_compare")
MODELS = ("three_level", "effective_bare", "effective_dressed", "tavis_cummings", "full_dressed",
          "analytic_weak", "analytic_strong")
PARAM_FIELDS = tuple(f.name for f in dataclasses.fields(PhysParams))
INT_FIELDS = ("N", "cutoff")

TWO_PI = 2 * math.pi
UNITS = {
    "rad_per_us": 1.0,
    "2pi_MHz": TWO_PI,
    "2pi_kHz": TWO_PI * 1e-3,
    "2pi_Hz": TWO_PI * 1e-6,
    "2pi_per_us": TWO_PI,
    "2pi_per_s": TWO_PI * 1e-6,
}

SECTIONS = {
    "scenario": {"name", "kind", "model", "outputs", "seed_figure", "modes", "description"},
    "physics": set(PARAM_FIELDS),
    "sweep": {"parameter", "unit", "values", "start", "stop", "num", "spacing"},
    "numerics": {"t_max_us", "n_points", "method", "rtol", "atol", "ions", "initial", "n0",
                 "sector", "frame", "analytic", "fit_window", "workers", "quantity", "n_ex_max",
                 "weight", "numeric", "level_scheme", "quad_nodes", "mode", "tie_k_ratio",
                 "ratio_min", "ratio_max", "omega_min", "omega_max", "bandwidth_2pi_MHz",
                 "steady_method", "cutoff_check"},
    "output": {"dir", "plot", "logx", "logy", "plot_columns"},
    "variant": None,  # list of tables, checked separately
}


# ---------------------------------------------------------------- config


@dataclasses.dataclass
class Scenario:
    name: str
    kind: str
    model: str
    params: PhysParams
    raw_physics: dict
    sweep: tuple | None
    sweep_unit: str
    outputs: list
    modes_source: object
    seed_figure: str | None
    numerics: dict
    output: dict
    variants: list
    source: str


def _unit_value(value, field):
    if isinstance(value, bool):
        raise ConfigError(f"{field}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        units = [k for k in value if k in UNITS]
        extra = set(value) - set(UNITS)
        if extra:
            raise ConfigError(f"{field}: unknown unit key(s) {sorted(extra)}; "
                              f"use one of {sorted(UNITS)}")
        if len(units) != 1:
            raise ConfigError(f"{field}: give exactly one unit key")
        v = value[units[0]]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{field}: value must be a number")
        return float(v) * UNITS[units[0]]
    raise ConfigError(f"{field}: expected a number or a unit table like {{ 2pi_MHz = 40.0 }}")


def resolve_physics(raw: dict, overrides: dict | None = None) -> PhysParams:
    """Turn a [physics] table into PhysParams.

    Frequencies may be plain rad/us numbers or unit tables. ``Omega_g`` /
    ``Omega_e`` may be the string "resonant" (equal-Rabi lock onto
    omega_s = omega_m); ``eta_z`` may be ``{ g_R_over_gamma_b = x }``.
    """
    raw = dict(raw)
    raw.update(overrides or {})
    unknown = set(raw) - set(PARAM_FIELDS)
    if unknown:
        raise ConfigError(f"physics: unknown field(s) {sorted(unknown)}")
    vals, lock, eta_ratio = {}, [], None
    for k, v in raw.items():
        if k in ("Omega_g", "Omega_e") and v == "resonant":
            lock.append(k)
        elif k == "eta_z" and isinstance(v, dict) and "g_R_over_gamma_b" in v:
            if set(v) != {"g_R_over_gamma_b"}:
                raise ConfigError("physics.eta_z: g_R_over_gamma_b cannot be combined with units")
            eta_ratio = float(v["g_R_over_gamma_b"])
        elif k in INT_FIELDS:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"physics.{k}: expected an integer")
            vals[k] = v
        elif k in ("eta_gz", "eta_ez") and v is None:
            continue
        else:
            vals[k] = _unit_value(v, f"physics.{k}")
    missing = {"Delta_g", "Delta_e", "gamma_g", "gamma_e", "omega_m"} - set(vals)
    if missing:
        raise ConfigError(f"physics: missing field(s) {sorted(missing)}")
    for k in ("Omega_g", "Omega_e"):
        if k not in vals and k not in lock:
            raise ConfigError(f"physics: missing field {k}")
    if lock:
        DR = 0.5 * (vals["Delta_g"] + vals["Delta_e"])
        Om = resonant_rabi(DR, vals["gamma_g"] + vals["gamma_e"], vals["omega_m"])
        for k in lock:
            vals[k] = Om
    try:
        p = PhysParams(**vals)
        if eta_ratio is not None:
            dc = derive_couplings(p.replace(eta_z=1.0))
            p = p.replace(eta_z=eta_ratio * dc.gamma_b / dc.g_R)
    except (DarkcoolError, ValueError, TypeError) as exc:
        raise ConfigError(f"physics: {exc}") from None
    return p


def _sweep_grid(sw):
    if "parameter" not in sw:
        raise ConfigError("sweep.parameter: missing")
    param = sw["parameter"]
    if param not in PARAM_FIELDS:
        raise ConfigError(f"sweep.parameter: {param!r} is not a physics field")
    unit = sw.get("unit", "rad_per_us")
    if unit not in UNITS and unit != "1":
        raise ConfigError(f"sweep.unit: unknown unit {unit!r}")
    if "values" in sw:
        grid = np.asarray(sw["values"], dtype=float)
    elif {"start", "stop", "num"} <= set(sw):
        spacing = sw.get("spacing", "linear")
        if spacing == "linear":
            grid = np.linspace(sw["start"], sw["stop"], int(sw["num"]))
        elif spacing == "log":
            if sw["start"] <= 0 or sw["stop"] <= 0:
                raise ConfigError("sweep: log spacing needs positive start and stop")
            grid = np.geomspace(sw["start"], sw["stop"], int(sw["num"]))
        else:
            raise ConfigError(f"sweep.spacing: unknown spacing {spacing!r}")
    else:
        raise ConfigError("sweep: give values or start/stop/num")
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise ConfigError("sweep: grid must be nonempty and finite")
    return param, unit, grid


def load_config(path) -> Scenario:
    path = str(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for sec, body in raw.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        allowed = SECTIONS[sec]
        if allowed is not None:
            if not isinstance(body, dict):
                raise ConfigError(f"[{sec}] must be a table")
            bad = set(body) - allowed
            if bad:
                raise ConfigError(f"{sec}: unknown field(s) {sorted(bad)}")
    sc = raw.get("scenario", {})
    for key in ("name", "kind"):
        if key not in sc:
            raise ConfigError(f"scenario.{key}: missing")
    kind = sc["kind"]
    if kind not in KINDS:
        raise ConfigError(f"scenario.kind: {kind!r} not one of {KINDS}")
    model = sc.get("model", "three_level")
    if model not in MODELS:
        raise ConfigError(f"scenario.model: {model!r} not one of {MODELS}")
    if "physics" not in raw:
        raise ConfigError("missing section [physics]")
    params = resolve_physics(raw["physics"])
    sweep, unit = None, ""
    if "sweep" in raw:
        param, unit, grid = _sweep_grid(raw["sweep"])
        sweep = (param, grid)
    variants = []
    for i, v in enumerate(raw.get("variant", [])):
        if not isinstance(v, dict) or "label" not in v:
            raise ConfigError(f"variant[{i}].label: missing")
        ov = {k: x for k, x in v.items() if k != "label"}
        resolve_physics(raw["physics"], ov)  # validate now
        variants.append((str(v["label"]), ov))
    outputs = sc.get("outputs", ["mean_phonon"])
    if not isinstance(outputs, list) or not all(isinstance(o, str) for o in outputs):
        raise ConfigError("scenario.outputs: expected a list of observable labels")
    num = dict(raw.get("numerics", {}))
    for key in ("rtol", "atol", "t_max_us"):
        if key in num and (not isinstance(num[key], (int, float)) or num[key] <= 0):
            raise ConfigError(f"numerics.{key}: must be a positive number")
    return Scenario(
        name=str(sc["name"]), kind=kind, model=model, params=params,
        raw_physics=raw["physics"], sweep=sweep, sweep_unit=unit, outputs=outputs,
        modes_source=sc.get("modes"), seed_figure=sc.get("seed_figure"), numerics=num,
        output=dict(raw.get("output", {})), variants=variants, source=path,
    )


def _modes_for(sc: Scenario, p: PhysParams):
    src = sc.modes_source
    if src is None:
        return None
    if src in ("com_only", "degenerate", "uniform_band"):
        bw = sc.numerics.get("bandwidth_2pi_MHz", 0.0) * TWO_PI
        return synth_modes(src, p.N, p.omega_m, bandwidth=bw)
    path = Path(src)
    if not path.is_absolute():
        path = Path(sc.source).parent / path
    return load_modes(path)


# ---------------------------------------------------------------- workers


def _pool_width(sc: Scenario, n_tasks: int) -> int:
    width = int(sc.numerics.get("workers", os.cpu_count() or 1))
    env = os.environ.get("DARKCOOL_THREADS")
    if env:
        try:
            width = min(width, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"DARKCOOL_THREADS must be an integer, got {env!r}") from None
    return max(1, min(width, n_tasks))


def _guarded(fn, *args):
    try:
        return ("ok", fn(*args))
    except DarkcoolError as exc:
        return ("error", type(exc).__name__, str(exc), getattr(exc, "residual", None))


def _map(sc: Scenario, fn, tasks):
    """Run fn(*task) for each task; results in task order."""
    width = _pool_width(sc, len(tasks))
    if width == 1:
        results = [_guarded(fn, *t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=width) as ex:
            futs = [ex.submit(_guarded, fn, *t) for t in tasks]
            results = [f.result() for f in futs]
    out = []
    for r in results:
        if r[0] == "error":
            _, name, msg, res = r
            raise SolverFailure(f"{name}: {msg}", residual=res)
        out.append(r[1])
    return out


def _build(model: str, p: PhysParams, modes=None, num=None):
    num = num or {}
    if model == "three_level":
        return build_three_level(p)
    if model == "effective_bare":
        return build_effective_two_level(p, "bare")
    if model == "effective_dressed":
        return build_effective_two_level(p, "dressed")
    if model == "tavis_cummings":
        return build_multi_ion(p, modes, approx="tavis-cummings",
                               frame=num.get("frame", "rotating"))
    if model == "full_dressed":
        return build_multi_ion(p, modes, approx="full-dressed", frame="lab")
    raise ConfigError(f"scenario.model: {model!r} has no numerical model")


def _steady_point(model, p, outputs, steady_method=None):
    m = _build(model, p)
    _, vals, info = steady(m, ObservableSet(outputs), method=steady_method)
    return vals, info


def _weak_nf(p):
    if p.Delta_g != p.Delta_e:
        return math.nan
    return phonon_rates(p).n_f


def _trajectory(model, p, modes, outputs, t_grid, num):
    m = _build(model, p, modes, num)
    n0 = num.get("n0", p.n_th)
    rho0 = initial_state(m, n0=n0, internal=num.get("initial", "dark"))
    tr = evolve(m, rho0, t_grid, ObservableSet(outputs),
                tol=(num.get("rtol", 1e-8), num.get("atol", 1e-10)),
                method=num.get("method", "rk45"), sector=num.get("sector"))
    return {k: tr[k] for k in outputs}, tr.metadata


def _analytic_trajectory(kind, p, modes, outputs, t_grid, n0, internal="dark"):
    nan = np.full(len(t_grid), math.nan)
    if internal not in ("dark", "bright"):
        raise ConfigError(f"numerics.initial: analytic curves need 'dark' or 'bright', got {internal!r}")
    if kind == "weak":
        traj = rate_equation_trajectory(phonon_rates(p), n0, t_grid)
        return {k: (traj if k == "mean_phonon" else nan) for k in outputs}
    if kind == "strong":
        shift = p.N if internal == "bright" else 0
        n_max = max(default_n_max(p.N, n0), p.cutoff) + shift
        ladder = build_ladder(p, p.N, n_max, modes)
        # every ion bright adds N to the excitation number of each Fock state
        p0 = np.zeros(n_max + 1)
        p0[shift:] = thermal_populations(n_max + 1 - shift, n0, warn=False)
        rows = ladder_trajectory(ladder, p0, t_grid)
        vec = observable_vectors(p, p.N, n_max, modes)
        table = {"mean_phonon": vec.n_vec, "ground_state_pop": vec.p_gs_vec,
                 "excitation_number": vec.n_ex_vec}
        return {k: (rows @ table[k] if k in table else nan) for k in outputs}
    raise ConfigError(f"numerics.analytic: unknown analytic theory {kind!r}")


def _fit_point(p, fit_window, n_points, steady_method=None):
    """Exact N=1 dressed numerics: fitted initial rate and steady phonon number."""
    m = build_effective_two_level(p, "dressed")
    t_grid = np.linspace(0.0, fit_window[1], n_points)
    rho0 = initial_state(m, n0=p.n_th)
    tr = evolve(m, rho0, t_grid, ObservableSet(["mean_phonon"]))
    rate = fit_cooling_rate(tr, tuple(fit_window))
    _, vals, info = steady(m, ObservableSet(["mean_phonon"]), method=steady_method)
    return rate, vals["mean_phonon"], {"evolve": tr.metadata, "steady": info}


def _recoil_steady(p, scheme, nodes, steady_method=None):
    base = build_three_level(p) if scheme == "three-level" else build_effective_two_level(p, "bare")
    obs = ObservableSet(["mean_phonon", "phonon_vacuum"])
    _, a, ia = steady(base, obs, method=steady_method)
    _, b, ib = steady(build_recoil_model(p, scheme, nodes), obs, method=steady_method)
    return a, b, {"no_recoil": ia, "recoil": ib}


def _recoil_dynamics(p, scheme, nodes, t_grid, num, recoil):
    if recoil:
        m = build_recoil_model(p, scheme, nodes)
    else:
        m = build_three_level(p) if scheme == "three-level" else build_effective_two_level(p, "bare")
    rho0 = initial_state(m, n0=num.get("n0", p.n_th))
    tr = evolve(m, rho0, t_grid, ObservableSet(["mean_phonon"]),
                tol=(num.get("rtol", 1e-8), num.get("atol", 1e-10)),
                method=num.get("method", "rk45"))
    return tr["mean_phonon"], tr.metadata


# ---------------------------------------------------------------- scenario kinds


def _col(param, unit):
    return f"{param}_{unit.replace('_', '')}" if unit not in ("", "1", "rad_per_us") else param


def _variant_params(sc):
    out = [("", sc.params)]
    for label, ov in sc.variants:
        out.append((f"_{label}", resolve_physics(sc.raw_physics, ov)))
    return out


def _t_grid(num):
    t_max = float(num.get("t_max_us", 100.0))
    return np.linspace(0.0, t_max, int(num.get("n_points", 101)))


def run_steady_sweep(sc):
    if sc.sweep is None:
        raise ConfigError("steady_sweep needs a [sweep] section")
    param, grid = sc.sweep
    scale = UNITS.get(sc.sweep_unit, 1.0)
    cols = [_col(param, sc.sweep_unit)]
    data = [grid]
    stats = {}
    for suffix, base in _variant_params(sc):
        pts = [base.replace(**{param: (int(v) if param in INT_FIELDS else float(v) * scale)})
               for v in grid]
        if sc.model != "analytic_weak":
            res = _map(sc, _steady_point, [(sc.model, q, sc.outputs,
                                            sc.numerics.get("steady_method")) for q in pts])
            for lab in sc.outputs:
                name = "n_f" if lab == "mean_phonon" else lab
                cols.append(f"{name}_numeric{suffix}")
                data.append(np.array([r[0][lab] for r in res]))
            stats[f"steady{suffix}"] = [r[1] for r in res]
        cols.append(f"n_f_analytic{suffix}")
        data.append(np.array([_weak_nf(q) for q in pts]))
    return cols, np.column_stack(data), stats, {}


def run_dynamics(sc):
    t_grid = _t_grid(sc.numerics)
    ions = sc.numerics.get("ions", [sc.params.N])
    analytic = sc.numerics.get("analytic", "none")
    multi = len(ions) > 1
    cols, data, adata, stats = ["t_us"], [t_grid], [t_grid], {}
    tasks, keys = [], []
    for suffix, base in _variant_params(sc):
        for N in ions:
            p = base.replace(N=int(N))
            tasks.append((p, suffix))
    modes_list = [_modes_for(sc, p) for p, _ in tasks]
    if sc.model.startswith("analytic_"):
        kind = sc.model.split("_")[1]
        results = [(_analytic_trajectory(kind, p, m, sc.outputs, t_grid,
                                         sc.numerics.get("n0", p.n_th),
                                         sc.numerics.get("initial", "dark")), {})
                   for (p, _), m in zip(tasks, modes_list)]
        analytic = "none"
    else:
        results = _map(sc, _trajectory, [(sc.model, p, m, sc.outputs, t_grid, sc.numerics)
                                         for (p, _), m in zip(tasks, modes_list)])
    for (p, suffix), m, (rec, meta) in zip(tasks, modes_list, results):
        tag = (f"_N{p.N}" if multi else "") + suffix
        for lab in sc.outputs:
            cols.append(f"{lab}{tag}")
            data.append(rec[lab])
            keys.append(f"{lab}{tag}")
        stats[f"N{p.N}{suffix}"] = meta
        if analytic != "none":
            arec = _analytic_trajectory(analytic, p, m, sc.outputs, t_grid,
                                        sc.numerics.get("n0", p.n_th),
                                        sc.numerics.get("initial", "dark"))
            adata.extend(arec[lab] for lab in sc.outputs)
    if sc.numerics.get("cutoff_check") and not sc.model.startswith("analytic_"):
        stats["cutoff_check"] = _cutoff_check(sc, tasks, modes_list, results, t_grid)
    extra = {}
    if analytic != "none":
        extra["analytic"] = (cols, np.column_stack(adata))
    return cols, np.column_stack(data), stats, extra


def _cutoff_check(sc, tasks, modes_list, results, t_grid):
    """Rerun every trajectory with cutoff + 5; report the change of the final <n>."""
    if "mean_phonon" not in sc.outputs:
        raise ConfigError("numerics.cutoff_check needs mean_phonon among the outputs")
    bigger = _map(sc, _trajectory, [(sc.model, p.replace(cutoff=p.cutoff + 5), m, ["mean_phonon"],
                                     t_grid, sc.numerics) for (p, _), m in zip(tasks, modes_list)])
    report = {}
    for (p, suffix), (rec, _), (rec5, _) in zip(tasks, results, bigger):
        a, b = rec["mean_phonon"][-1], rec5["mean_phonon"][-1]
        rel = abs(b - a) / abs(b) if b else abs(b - a)
        report[f"N{p.N}{suffix}"] = {"cutoff": p.cutoff, "final_mean_phonon": float(a),
                                     "final_mean_phonon_plus5": float(b), "rel_change": float(rel),
                                     "pass": bool(rel < 0.01)}
        if rel >= 0.01:
            print(f"warning: N={p.N}{suffix}: final <n> moves by {rel:.2%} at cutoff "
                  f"{p.cutoff + 5}", file=sys.stderr)
    return report


def run_spectrum(sc):
    p = sc.params
    dc = derive_couplings(p)
    lo = sc.numerics.get("omega_min", -4.0)
    hi = sc.numerics.get("omega_max", 4.0)
    w = np.linspace(lo, hi, int(sc.numerics.get("n_points", 801))) * dc.omega_s
    reg = spectrum_regression(ob_system(p), w)
    lor = spectrum_lorentzian(p, w)
    return (["omega_2piMHz", "S_lorentzian", "S_regression"],
            np.column_stack([w / TWO_PI, lor, reg]), {}, {})


def run_scattering_profile(sc):
    lo = sc.numerics.get("ratio_min", 0.99)
    hi = sc.numerics.get("ratio_max", 1.01)
    n = int(sc.numerics.get("n_points", 201))
    grid = np.linspace(lo, hi, n)
    if lo < 1.0 < hi:
        grid = np.union1d(grid, [1.0])
    cols, data = ["Delta_g_over_Delta_e"], [grid]
    for suffix, p in _variant_params(sc):
        prof = scattering_rate_profile(p, grid)
        cols.append(f"gamma_rho_rr{suffix}")
        data.append(np.array([v for _, v in prof]))
    return cols, np.column_stack(data), {}, {}


def run_collective_rates(sc):
    quantity = sc.numerics.get("quantity", "decay_ladder")
    ions = [int(n) for n in sc.numerics.get("ions", [sc.params.N])]
    if quantity == "decay_ladder":
        n_max = int(sc.numerics.get("n_ex_max", 100))
        n_ex = np.arange(1, n_max + 1)
        cols, data = ["n_ex"], [n_ex]
        for N in ions:
            cols.append(f"gamma_sc_N{N}")
            data.append(decay_ladder(sc.params, N, n_max))
        return cols, np.column_stack(data), {}, {}
    if quantity == "table1":
        rows, keys = [], None
        for N in ions:
            p = sc.params.replace(N=N)
            row = table1_row(p, N, _modes_for(sc, p))
            keys = list(row)
            rows.append([N] + [row[k] for k in keys])
        return ["N"] + keys, np.array(rows, dtype=float), {}, {}
    raise ConfigError(f"numerics.quantity: unknown quantity {quantity!r}")


def run_optimality_scan(sc):
    if sc.sweep is None or sc.sweep[0] != "eta_z":
        raise ConfigError("optimality_scan needs [sweep] parameter = \"eta_z\"")
    grid = sc.sweep[1]
    ions = [int(n) for n in sc.numerics.get("ions", [1])]
    weight = sc.numerics.get("weight", "verbatim")
    cols, data, stats = ["eta_z"], [grid], {}
    if sc.numerics.get("numeric", False):
        fw = sc.numerics.get("fit_window", [0.0, 50.0])
        npts = int(sc.numerics.get("n_points", 51))
        p1 = sc.params.replace(N=1)
        res = _map(sc, _fit_point, [(p1.replace(eta_z=float(e)), fw, npts,
                                     sc.numerics.get("steady_method")) for e in grid])
        cols += ["gamma_s_numeric", "n_f_numeric"]
        data += [np.array([r[0] for r in res]), np.array([r[1] for r in res])]
        stats["numeric"] = [r[2] for r in res]
    for N in ions:
        gs, nf, nex, gw, gst = [], [], [], [], []
        for e in grid:
            p = sc.params.replace(N=N, eta_z=float(e))
            modes = _modes_for(sc, p)
            s = summary_formulas(p, N, modes, weight=weight)
            _, n_ex, _ = closed_form_steady(p, N, modes)
            gs.append(s.gamma_s_combined)
            nf.append(s.n_f_combined)
            nex.append(p.gamma ** 2 / (16 * p.Delta_R ** 2) + n_ex)
            gw.append(s.gamma_weak)
            gst.append(s.gamma_strong)
        cols += [f"gamma_s_analytic_N{N}", f"n_f_analytic_N{N}", f"n_ex_total_N{N}",
                 f"gamma_weak_N{N}", f"gamma_strong_N{N}"]
        data += [np.array(v) for v in (gs, nf, nex, gw, gst)]
    return cols, np.column_stack(data), stats, {}


def run_recoil_compare(sc):
    num = sc.numerics
    scheme = num.get("level_scheme", "three-level")
    nodes = int(num.get("quad_nodes", 16))
    tie = bool(num.get("tie_k_ratio", True))
    mode = num.get("mode", "dynamics")
    if mode == "steady":
        if sc.sweep is None:
            grid, param = np.array([sc.params.k_ratio_g]), "k_ratio_g"
        else:
            param, grid = sc.sweep
        pts = []
        for v in grid:
            q = sc.params.replace(**{param: float(v)})
            if tie and param in ("k_ratio_g", "k_ratio_e"):
                q = q.replace(k_ratio_g=float(v), k_ratio_e=float(v))
            pts.append(q)
        res = _map(sc, _recoil_steady, [(q, scheme, nodes, num.get("steady_method"))
                                        for q in pts])
        a = np.array([[r[0]["mean_phonon"], r[0]["phonon_vacuum"]] for r in res])
        b = np.array([[r[1]["mean_phonon"], r[1]["phonon_vacuum"]] for r in res])
        change = (1 - b[:, 1]) / (1 - a[:, 1]) - 1
        cols = [param, "n_f_no_recoil", "n_f_recoil", "vacuum_no_recoil", "vacuum_recoil",
                "nonvacuum_rel_change"]
        return cols, np.column_stack([grid, a[:, 0], b[:, 0], a[:, 1], b[:, 1], change]), \
            {"steady": [r[2] for r in res]}, {}
    if mode != "dynamics":
        raise ConfigError(f"numerics.mode: unknown mode {mode!r}")
    t_grid = _t_grid(num)
    res = _map(sc, _recoil_dynamics, [(sc.params, scheme, nodes, t_grid, num, r)
                                      for r in (False, True)])
    cols = ["t_us", "n_no_recoil", "n_recoil"]
    return cols, np.column_stack([t_grid, res[0][0], res[1][0]]), \
        {"no_recoil": res[0][1], "recoil": res[1][1]}, {}


RUNNERS = {
    "steady_sweep": run_steady_sweep,
    "dynamics": run_dynamics,
    "spectrum": run_spectrum,
    "scattering_profile": run_scattering_profile,
    "collective_rates": run_collective_rates,
    "optimality_scan": run_optimality_scan,
    "recoil_compare": run_recoil_compare,
}


# ---------------------------------------------------------------- output


def write_csv(path, cols, data):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in np.atleast_2d(data):
            w.writerow([f"{v:.17g}" for v in row])
    os.replace(tmp, path)


def read_csv(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise InvalidArgument(f"{path}: no such file") from None
    if not rows:
        raise InvalidArgument(f"{path}: empty file")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise InvalidArgument(f"{path}: {exc}") from None
    return rows[0], data.reshape(len(rows) - 1, len(rows[0]))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _jsonable(float(x.real)), "im": _jsonable(float(x.imag))}
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _plot(sc, path, cols, data):
    out = sc.output
    chosen = out.get("plot_columns") or cols[1:]
    series = {c: data[:, cols.index(c)] for c in chosen if c in cols}
    line_plot(path, data[:, 0], series, xlabel=cols[0], ylabel=", ".join(sc.outputs),
              title=sc.seed_figure or sc.name, logx=bool(out.get("logx", False)),
              logy=bool(out.get("logy", False)))


def run_scenario(sc: Scenario, out_dir=None) -> dict:
    out_dir = Path(out_dir or sc.output.get("dir", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    cols, data, stats, extra = RUNNERS[sc.kind](sc)
    wall = time.perf_counter() - start
    files = {}
    csv_path = out_dir / f"{sc.name}.csv"
    write_csv(csv_path, cols, data)
    files["csv"] = str(csv_path)
    for tag, (ecols, edata) in extra.items():
        ep = out_dir / f"{sc.name}.{tag}.csv"
        write_csv(ep, ecols, edata)
        files[tag] = str(ep)
    if sc.output.get("plot", True):
        svg = out_dir / f"{sc.name}.svg"
        _plot(sc, svg, cols, data)
        files["svg"] = str(svg)
    try:
        derived = derive_couplings(sc.params).as_dict()
    except DarkcoolError as exc:
        derived = {"error": str(exc)}
    meta = {
        "name": sc.name, "kind": sc.kind, "model": sc.model, "seed_figure": sc.seed_figure,
        "config": sc.source, "code_version": __version__, "params": sc.params.as_dict(),
        "derived_couplings": derived,
        "sweep": None if sc.sweep is None else {"parameter": sc.sweep[0], "unit": sc.sweep_unit,
                                                "grid": sc.sweep[1]},
        "variants": [{"label": lab, "overrides": ov} for lab, ov in sc.variants],
        "numerics": sc.numerics, "outputs": sc.outputs, "columns": cols,
        "solver_stats": stats, "wall_s": wall, "files": files,
    }
    meta_path = out_dir / f"{sc.name}.meta"
    tmp = f"{meta_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, meta_path)
    files["meta"] = str(meta_path)
    return files


# ---------------------------------------------------------------- compare


def parse_tolerance(spec: str) -> dict:
    tol = {"rel": 0.0, "abs": 0.0, "xmin": -math.inf, "xmax": math.inf}
    for part in filter(None, (s.strip() for s in spec.split(","))):
        if "=" not in part:
            raise InvalidArgument(f"tolerance item {part!r} must look like key=value")
        k, v = (s.strip() for s in part.split("=", 1))
        if k not in tol:
            raise InvalidArgument(f"unknown tolerance key {k!r}; use rel, abs, xmin, xmax")
        try:
            tol[k] = float(v)
        except ValueError:
            raise InvalidArgument(f"tolerance {k}: {v!r} is not a number") from None
    if tol["rel"] < 0 or tol["abs"] < 0:
        raise InvalidArgument("tolerances must be non-negative")
    return tol


def compare(a_path, b_path, tol_spec, interpolate=False, columns=None):
    """Pointwise comparison of the shared columns of two CSV files.

    A point passes when |b - a| <= abs or |b - a| <= rel |a|. Returns a
    report dict; ``report["pass"]`` is the overall verdict.
    """
    tol = parse_tolerance(tol_spec)
    ha, da = read_csv(a_path)
    hb, db = read_csv(b_path)
    xa, xb = da[:, 0], db[:, 0]
    if not interpolate and (xa.shape != xb.shape or np.any(xa != xb)):
        raise InvalidArgument("abscissa grids differ; pass --interpolate to compare anyway")
    shared = columns or [c for c in ha[1:] if c in hb[1:]]
    if not shared:
        raise InvalidArgument("the files share no data columns")
    mask = (xa >= tol["xmin"]) & (xa <= tol["xmax"])
    report = {"columns": {}, "points": [], "pass": True, "tolerance": tol}
    for c in shared:
        if c not in ha or c not in hb:
            raise InvalidArgument(f"column {c!r} missing from one file")
        a = da[:, ha.index(c)]
        b = db[:, hb.index(c)]
        if interpolate:
            b = np.interp(xa, xb, b)
        diff = np.abs(b - a)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(a != 0, diff / np.abs(a), np.where(diff == 0, 0.0, np.inf))
        ok = (diff <= tol["abs"]) | (rel <= tol["rel"])
        ok |= ~mask
        idx = np.flatnonzero(mask)
        for i in idx:
            report["points"].append((c, int(i), float(xa[i]), float(a[i]), float(b[i]), float(rel[i])))
        sel = rel[mask]
        worst = int(idx[np.argmax(sel)]) if idx.size else -1
        info = {"max_rel": float(sel.max()) if sel.size else 0.0,
                "mean_rel": float(sel[np.isfinite(sel)].mean()) if np.isfinite(sel).any() else 0.0,
                "worst_index": worst, "failures": [int(i) for i in np.flatnonzero(~ok)],
                "pass": bool(ok.all())}
        report["columns"][c] = info
        report["pass"] &= info["pass"]
    return report


# ---------------------------------------------------------------- presets


def preset_dir() -> Path:
    return Path(str(resources.files("darkcool") / "presets"))


def list_presets():
    out = []
    for path in sorted(preset_dir().glob("*.toml")):
        with open(path, "rb") as fh:
            sc = tomllib.load(fh).get("scenario", {})
        out.append((path.stem, sc.get("kind", "?"), sc.get("description", "")))
    return out


def _resolve_config(arg: str) -> str:
    if os.path.exists(arg):
        return arg
    cand = preset_dir() / f"{arg}.toml"
    if cand.exists():
        return str(cand)
    raise ConfigError(f"{arg!r} is neither a config file nor a preset name")


# ---------------------------------------------------------------- entry point


def _cmd_run(args):
    sc = load_config(_resolve_config(args.config))
    if args.threads:
        sc.numerics["workers"] = args.threads
    files = run_scenario(sc, args.out)
    for k, v in files.items():
        print(f"{k}: {v}")
    return 0


def _cmd_compare(args):
    cols = args.columns.split(",") if args.columns else None
    rep = compare(args.a, args.b, args.tol, interpolate=args.interpolate, columns=cols)
    print("column,index,x,a,b,rel_dev")
    for c, i, x, a, b, r in rep["points"]:
        print(f"{c},{i},{x:.10g},{a:.10g},{b:.10g},{r:.6g}")
    for c, info in rep["columns"].items():
        verdict = "PASS" if info["pass"] else "FAIL"
        line = (f"{verdict} {c}: max rel {info['max_rel']:.4g} at index {info['worst_index']}, "
                f"mean rel {info['mean_rel']:.4g}")
        if info["failures"]:
            line += f", {len(info['failures'])} point(s) out of tolerance, first at index " \
                    f"{info['failures'][0]}"
        print(line)
    return 0 if rep["pass"] else 1


def _cmd_presets(args):
    for name, kind, desc in list_presets():
        print(f"{name:8s} {kind:19s} {desc}")
    return 0


def _cmd_modes(args):
    spec = load_modes(args.file)
    wm = args.omega_m_2pi_mhz * TWO_PI if args.omega_m_2pi_mhz is not None else None
    spec.validate(wm)
    print(f"ok: N={spec.N}, {spec.M} mode(s), COM {spec.freqs_mhz[0]:.6g} MHz, "
          f"profiles {'present' if spec.profiles is not None else 'none'}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="darkcool", description="Dark-state cooling scenarios")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a config file or preset")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides [output] dir)")
    r.add_argument("--threads", type=int, help="worker pool width")
    r.set_defaults(func=_cmd_run)
    c = sub.add_parser("compare", help="compare two CSV files column by column")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol", required=True, help="e.g. rel=0.1,abs=1e-6,xmin=5")
    c.add_argument("--interpolate", action="store_true")
    c.add_argument("--columns", help="comma-separated column names")
    c.set_defaults(func=_cmd_compare)
    p = sub.add_parser("presets", help="list shipped presets")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=_cmd_presets)
    m = sub.add_parser("modes", help="mode-spectrum files")
    m.add_argument("action", choices=["validate"])
    m.add_argument("file")
    m.add_argument("--omega-m-2pi-mhz", type=float)
    m.set_defaults(func=_cmd_modes)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        res = f" (residual {exc.residual:.3e})" if exc.residual is not None else ""
        print(f"solver failure: {exc}{res}", file=sys.stderr)
        return 3
    except DarkcoolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
