"""Experiment orchestration: config parsing, dispatch, CSV artifacts, manifest.

Configs are INI files with [model], [run], [experiment] and optional
[output] sections; unknown keys are rejected so archived configs stay
unambiguous.  Every run writes deterministic CSV artifacts plus
manifest.json (config hash, package version, seeds, artifact hashes); the
wall-clock timestamp lives in a separate run_meta.txt so reruns are
byte-identical.

Usage:
    nlwmix run config.ini [--check] [--out DIR] [--threads K]
    nlwmix validate config.ini
    nlwmix list-experiments

Environment overrides: NLWMIX_SEED, NLWMIX_THREADS.

Heavy numerical imports happen inside the runners so --threads can cap the
BLAS pools before they initialize.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK_FAILED = 3

_FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# CSV emission


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return _FLOAT_FMT % value
    if isinstance(value, (int,)):
        return str(value)
    if value is None:
        return ""
    try:  # numpy scalars
        import numpy as np

        if isinstance(value, np.floating):
            return _FLOAT_FMT % float(value)
        if isinstance(value, np.integer):
            return str(int(value))
    except ImportError:
        pass
    return str(value)


def emit_csv(path, header, rows):
    """Write one report: header row, 17-significant-digit floats, UTF-8."""
    path = Path(path)
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def parse_csv(path):
    """Read an emitted CSV back as (header, rows of strings)."""
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# config schema


def _parse_float_list(text: str):
    return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]


def _parse_int_list(text: str):
    return [int(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]


def _parse_checkpoints(text: str):
    """Either 'start:stop:count' or a comma list of times."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("checkpoint range must be start:stop:count")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("checkpoint count must be >= 1")
        import numpy as np

        return list(np.linspace(start, stop, count))
    return _parse_float_list(text)


_MODEL_SCHEMA = {
    "dim": (int, 1),
    "modes_per_axis": (int, 32),
    "gamma": (float, 0.15),
    "nonlinearity": (str, "sine_gordon"),
    "rho": (float, 1.0),
    "lambda_kg": (float, 0.0),
    "h_amplitude": (float, 0.1),
    "b0": (float, 0.3),
    "noise_decay_q": (float, 1.0),
    "noise_cutoff": (int, None),
    "alpha": (float, None),
    "nu": (float, None),
    "diss_scan_range": (float, 50.0),
}

_RUN_SCHEMA = {
    "T": (float, 20.0),
    "dt": (float, 1e-3),
    "n": (int, 64),
    "seed": (int, 1),
    "checkpoints": (_parse_checkpoints, None),
}

_EXPERIMENT_SCHEMAS = {
    "energy": {
        "y0_hnorm": (float, 5.0),
        "fit_fraction": (float, 0.5),
        "kappa": (str, "auto"),
        "excursion_tolerance": (float, 0.05),
    },
    "tails": {
        "r_grid": (_parse_float_list, [2.0, 4.0, 8.0, 16.0]),
        "calib_n": (int, 128),
        "calib_T": (float, 20.0),
        "quantile": (float, 0.99),
        "tolerance": (float, 0.0),
        "y0_hnorm": (float, 0.0),
    },
    "fp-scan": {
        "n_list": (_parse_int_list, [0, 1, 2, 4, 8, 16]),
        "n_pairs": (int, 32),
        "pair_delta": (float, 0.5),
        "base_hnorm": (float, 1.5),
        "fail_hnorm": (float, 5.0),
        "rate_r2": (float, 0.9),
    },
    "girsanov": {
        "deltas": (_parse_float_list, [0.01, 0.02, 0.04]),
        "n_pairs": (int, 64),
        "n_pinned": (int, 2),
        "base_hnorm": (float, 0.5),
        "tau_mode": (str, "off"),
        "fit_r2": (float, 0.9),
    },
    "mixing": {
        "y0a_hnorm": (float, 5.0),
        "fit_t0": (float, 10.0),
        "fit_t1": (float, 80.0),
        "clip": (float, 5.0),
        "n_obs_modes": (int, 8),
        "floor_factor": (float, 3.0),
    },
    "lln": {
        "psi": (str, "u1"),
        "reference": (float, None),
        "burn_in": (float, 100.0),
        "points_per_octave": (int, 4),
        "fit_t_min": (float, 10.0),
        "slope_max": (float, -0.35),
        "clip": (float, 5.0),
    },
    "clt": {
        "t_eval": (float, 50.0),
        "psi": (str, "u1"),
        "reference": (float, None),
        "pilot_T": (float, 10000.0),
        "burn_in": (float, 100.0),
        "p_min": (float, 0.01),
        "clip": (float, 5.0),
    },
    "hitting": {
        "d": (float, 0.5),
        "y0_hnorm": (float, 5.0),
        "hist_bins": (int, 20),
    },
    "split": {
        "s": (float, 0.4),
        "y0_hnorm": (float, 0.0),
        "ratio_max": (float, 1.5),
    },
    "dissipativity": {
        "scan_range": (float, 50.0),
    },
}


@dataclass
class ExperimentConfig:
    model: dict
    run: dict
    experiment: str
    params: dict
    output_dir: str
    source_path: str
    source_bytes: bytes


class ConfigError(ValueError):
    pass


def _parse_section(parser, section, schema, path):
    out = {}
    if not parser.has_section(section):
        raise ConfigError(f"{path}: missing [{section}] section")
    for key in parser[section]:
        if key not in schema:
            raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
    for key, (conv, default) in schema.items():
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                out[key] = conv(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: bad value for [{section}] {key}: {exc}") from exc
        else:
            out[key] = default
    return out


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = path.read_bytes()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (T vs t)
    try:
        parser.read_string(raw.decode("utf-8"), source=str(path))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    for section in parser.sections():
        if section not in ("model", "run", "experiment", "output"):
            raise ConfigError(f"{path}: unknown section [{section}]")

    model = _parse_section(parser, "model", _MODEL_SCHEMA, path)
    run = _parse_section(parser, "run", _RUN_SCHEMA, path)

    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    if not parser.has_option("experiment", "name"):
        raise ConfigError(f"{path}: [experiment] needs a 'name' key")
    name = parser.get("experiment", "name").strip()
    if name not in _EXPERIMENT_SCHEMAS:
        known = ", ".join(sorted(_EXPERIMENT_SCHEMAS))
        raise ConfigError(f"{path}: unknown experiment '{name}' (known: {known})")
    schema = dict(_EXPERIMENT_SCHEMAS[name])
    schema["name"] = (str, name)
    params = _parse_section(parser, "experiment", schema, path)
    params.pop("name")

    out_dir = "out"
    if parser.has_section("output"):
        for key in parser["output"]:
            if key != "dir":
                raise ConfigError(f"{path}: unknown key '{key}' in [output]")
        out_dir = parser.get("output", "dir", fallback="out")
    return ExperimentConfig(
        model=model, run=run, experiment=name, params=params,
        output_dir=out_dir, source_path=str(path), source_bytes=raw,
    )


# ---------------------------------------------------------------------------
# model construction


def _build_model(cfg: ExperimentConfig):
    from .basis import build_basis
    from .model import NoiseSpec, NonlinearitySpec, make_model

    mc = cfg.model
    basis = build_basis(mc["dim"], mc["modes_per_axis"])
    spec = NonlinearitySpec(mc["nonlinearity"], rho=mc["rho"], lambda_kg=mc["lambda_kg"])
    noise = NoiseSpec(b0=mc["b0"], decay_q=mc["noise_decay_q"], cutoff_n=mc["noise_cutoff"])
    return make_model(
        basis,
        gamma=mc["gamma"],
        nonlinearity=spec,
        noise=noise,
        h_amplitude=mc["h_amplitude"],
        alpha=mc["alpha"],
        nu=mc["nu"],
        diss_scan_range=mc["diss_scan_range"],
    )


# ---------------------------------------------------------------------------
# experiment runners (each returns (artifacts, checks))
#   artifacts: list of (filename, header, rows)
#   checks: list of (name, passed: bool, detail: str)


def _default_checkpoints(run):
    import numpy as np

    if run["checkpoints"] is not None:
        return list(run["checkpoints"])
    return list(np.linspace(0.0, run["T"], 41))


def _run_energy(cfg, m):
    import numpy as np

    from .energy import exp_moment_series
    from .ergodics import simulate_ensemble
    from .model import state_with_weighted_norm
    from .stats import exp_decay_fit

    run, p = cfg.run, cfg.params
    y0 = state_with_weighted_norm(m.basis, m.alpha, p["y0_hnorm"])
    cps = _default_checkpoints(run)
    ens = simulate_ensemble(y0, m, run["n"], run["T"], run["dt"], run["seed"], cps)
    t = ens.checkpoints
    mean_e = ens.energy_cp.mean(axis=1)
    se = ens.energy_cp.std(axis=1, ddof=1) / np.sqrt(ens.n) if ens.n > 1 else 0.0 * mean_e
    mean_est = ens.est_cp.mean(axis=1)

    # decay-plus-constant envelope: least-squares rate, then the smallest
    # constant dominating the training half
    t_fit = run["T"] * p["fit_fraction"]
    fit_mask = t <= t_fit
    e0_hat, alpha_hat, _ = exp_decay_fit(t[fit_mask], mean_e[fit_mask])
    c_hat = float(np.max(mean_e[fit_mask] - e0_hat * np.exp(-alpha_hat * t[fit_mask])))
    bound = e0_hat * np.exp(-alpha_hat * t) + c_hat
    excursion = (mean_e - bound) / bound
    max_exc = float(np.max(excursion[~fit_mask])) if (~fit_mask).any() else 0.0

    kappa = p["kappa"]
    if kappa == "auto":
        b_total = m.noise_energy
        kappa_val = 0.5 * m.alpha / b_total if b_total > 0 else 0.0
    else:
        kappa_val = float(kappa)
    series = exp_moment_series(ens, kappa_val, m)

    artifacts = [
        ("energy.csv", ["t", "mean_energy", "se", "mean_e_st", "bound"],
         [(tt, me, s, mes, bb) for tt, me, s, mes, bb in zip(t, mean_e, se, mean_est, bound)]),
        ("energy_summary.csv",
         ["e0_hat", "alpha_hat", "c_hat", "max_excursion", "fit_t_max", "n", "kappa"],
         [(e0_hat, alpha_hat, c_hat, max_exc, t_fit, ens.n, kappa_val)]),
        ("exp_moment.csv", ["t", "value", "ci_lo", "ci_hi", "bound"], series.to_rows()),
    ]
    checks = [
        ("alpha_hat_positive", alpha_hat > 0, f"alpha_hat = {alpha_hat:.6g}"),
        ("excursions_within_tolerance", max_exc <= p["excursion_tolerance"],
         f"max relative excursion {max_exc:.4f} vs {p['excursion_tolerance']}"),
    ]
    from .stats import line_fit

    late = t >= run["T"] / 2.0
    trend = line_fit(t[late], series.mean[late])
    lo, hi = trend.slope_ci()
    checks.append(("exp_moment_no_upward_trend", lo <= 0.0,
                   f"slope CI [{lo:.3g}, {hi:.3g}]"))
    checks.append(("exp_moment_bounded",
                   float(series.mean.max()) <= series.reference_level,
                   f"max {series.mean.max():.4f} vs 3x median {series.reference_level:.4f}"))
    return artifacts, checks


def _run_tails(cfg, m):
    import numpy as np

    from .energy import StoppingParams, calibrate_k_drift, supermartingale_tail
    from .ergodics import simulate_ensemble
    from .model import state_with_weighted_norm

    run, p = cfg.run, cfg.params
    k_drift = calibrate_k_drift(
        m, run["dt"], n_paths=p["calib_n"], T=p["calib_T"],
        seed=run["seed"] + 1000, quantile=p["quantile"],
    )
    sp = StoppingParams.from_model(m, k_drift)
    y0 = state_with_weighted_norm(m.basis, m.alpha, p["y0_hnorm"])
    ens = simulate_ensemble(
        y0, m, run["n"], run["T"], run["dt"], run["seed"], [run["T"]],
        tail_k=k_drift, stopping=sp, record_energy_cp=False,
    )
    rep = supermartingale_tail(ens, sp, m, p["r_grid"], tolerance=p["tolerance"])

    tau_frac = float(np.mean(ens.envelope_crossed))
    c_int = m.c_diss_integrated
    tau_bound = float(np.exp(min(4.0 * sp.beta * c_int - sp.beta * sp.r, 50.0))) \
        if np.isfinite(sp.beta) else 0.0
    artifacts = [
        ("tails.csv", ["r", "value", "ci_lo", "ci_hi", "bound"], rep.to_rows()),
        ("tails_summary.csv",
         ["k_drift", "beta", "l_rate", "m_rate", "r_envelope", "n_paths",
          "tau_finite_frac", "tau_bound"],
         [(k_drift, sp.beta, sp.l_rate, sp.m_rate, sp.r, ens.n, tau_frac, tau_bound)]),
    ]
    checks = [
        ("tail_below_bound", bool(rep.passed.all()),
         "; ".join(f"r={r:g}: {e:.4g}<= {b:.4g}" for r, e, b in
                   zip(rep.r_grid, rep.ci_hi, rep.bound))),
        ("envelope_crossings_within_bound",
         tau_frac <= min(1.0, tau_bound) + 1e-12 or tau_bound >= 1.0,
         f"frac {tau_frac:.4g} vs bound {tau_bound:.4g}"),
    ]
    return artifacts, checks


def _run_fp_scan(cfg, m):
    import numpy as np

    from .coupling import fp_scan

    run, p = cfg.run, cfg.params
    rep = fp_scan(
        m, run["dt"], p["n_list"], n_pairs=p["n_pairs"], pair_delta=p["pair_delta"],
        base_norm=p["base_hnorm"], T=run["T"], seed=run["seed"],
        fail_norm=p["fail_hnorm"], r2_threshold=p["rate_r2"],
    )
    n_star = rep.n_star if rep.n_star is not None else -1
    from .coupling import fp_decay_rate

    # series keys: the contract rows in listed order, then the fail probe
    keys = [str(r.n_pinned) for r in rep.rows if r.regime == "contract"] + ["fail"]
    series_rows = []
    refit = {}
    for key, row in zip(keys, rep.rows):
        times, diffs = rep.diff_series[int(key) if key != "fail" else "fail"]
        med = np.median(diffs, axis=1)
        lo = diffs.min(axis=1)
        hi = diffs.max(axis=1)
        for tt, mm_, ll, hh in zip(times, med, lo, hi):
            series_rows.append((key, tt, mm_, ll, hh))
        window = (times[-1] / 4.0, times[-1])
        if np.all(med > 0):
            fit = fp_decay_rate(med, times, window)
            refit[key] = (fit.rate, window)
        else:
            refit[key] = (np.nan, window)
    rows = []
    for key, r in zip(keys, rep.rows):
        rate_refit, window = refit[key]
        rows.append((
            r.regime, r.n_pinned, r.n_pairs, r.rate_median, r.rate_min, r.rate_max,
            r.r2_min, r.frac_success, r.frac_no_decay, r.tail_proj_norm, n_star,
            rate_refit, window[0], window[1],
        ))
    fail_row = [r for r in rep.rows if r.regime == "fail-probe"][0]
    contract_rows = [r for r in rep.rows if r.regime == "contract"]
    tail_decays = all(
        a.tail_proj_norm >= b.tail_proj_norm - 1e-12
        for a, b in zip(contract_rows, contract_rows[1:])
    )
    # single representative pair in the spec's report layout: series rows
    # plus one trailing summary row
    from .coupling import CouplingParams, fp_pair_report, paired_start

    rep_n = rep.n_star if rep.n_star is not None else max(p["n_list"])
    y, y2 = paired_start(m, p["base_hnorm"], p["pair_delta"])
    pair = fp_pair_report(
        y, y2, m, CouplingParams(n_pinned=max(rep_n, 1), T=run["T"], seed=run["seed"]),
        run["dt"], series_stride=max(1, int(round(0.05 / run["dt"]))),
    )

    artifacts = [
        ("fp_scan.csv",
         ["regime", "n_pinned", "n_pairs", "rate_median", "rate_min", "rate_max",
          "r2_min", "frac_success", "frac_no_decay", "tail_proj_norm", "n_star",
          "rate_of_median_series", "fit_t0", "fit_t1"],
         rows),
        ("fp_series.csv", ["n_pinned", "t", "diff_median", "diff_min", "diff_max"],
         series_rows),
        ("fp_pair.csv", list(pair.CSV_HEADER), pair.to_rows()),
    ]
    checks = [
        ("n_star_located", rep.n_star is not None and rep.n_star <= max(p["n_list"]),
         f"n_star = {rep.n_star}"),
        ("failure_regime_exhibited",
         fail_row.rate_min <= 0.0 or fail_row.frac_no_decay > 0.0,
         f"fail probe: rate_min {fail_row.rate_min:.4f}, "
         f"frac_no_decay {fail_row.frac_no_decay:.2f}"),
        ("projection_tail_decays", tail_decays,
         "||(I-P_N) f(u_lin)|| monotone in N"),
    ]
    return artifacts, checks


def _run_girsanov(cfg, m):
    import numpy as np

    from .coupling import (
        CouplingParams,
        _pair_batch,
        novikov_tv_bound,
        paired_start,
    )
    from .stats import origin_fit

    run, p = cfg.run, cfg.params
    deltas = p["deltas"]
    n_pinned = p["n_pinned"]
    rows = []
    tv_bounds = []
    for gi, delta in enumerate(deltas):
        y, y2 = paired_start(m, p["base_hnorm"], delta)
        cp = CouplingParams(n_pinned=n_pinned, T=run["T"], seed=run["seed"] + 17 * gi,
                            tau_mode=p["tau_mode"])
        bundle, n_steps = _pair_batch(y, y2, m, cp, run["dt"], p["n_pairs"],
                                      record_energy=False, state_stride=None)
        times = run["dt"] * np.arange(n_steps + 1)
        drift_l2 = np.trapezoid(bundle.drift_sq, times, axis=0)
        nb = novikov_tv_bound(drift_l2, m.b_vec, n_pinned)
        tv_bounds.append(nb.bound)
        rows.append((delta, nb.bound, nb.exponent_max, nb.mean_exp,
                     float(drift_l2.mean()), p["n_pairs"]))
    slope, r2 = origin_fit(np.asarray(deltas), np.asarray(tv_bounds))
    zero_bound = novikov_tv_bound(np.zeros(4), m.b_vec, n_pinned).bound
    artifacts = [
        ("girsanov.csv",
         ["delta", "tv_bound", "exponent_max", "mean_exp", "drift_l2_mean", "n_pairs"],
         rows),
        ("girsanov_summary.csv",
         ["slope", "r2", "zero_drift_bound", "n_pinned"],
         [(slope, r2, zero_bound, n_pinned)]),
    ]
    checks = [
        ("linear_through_origin", r2 >= p["fit_r2"], f"R^2 = {r2:.4f}"),
        ("zero_drift_gives_zero_bound", zero_bound == 0.0, f"bound = {zero_bound}"),
    ]
    return artifacts, checks


def _run_mixing(cfg, m):
    import numpy as np

    from .ergodics import default_observables, mixing_rate
    from .model import state_with_weighted_norm

    run, p = cfg.run, cfg.params
    obs = default_observables(m, n_modes=p["n_obs_modes"], clip=p["clip"])
    y0a = state_with_weighted_norm(m.basis, m.alpha, p["y0a_hnorm"])
    y0b = state_with_weighted_norm(m.basis, m.alpha, 0.0)
    cps = _default_checkpoints(run)
    rep = mixing_rate(y0a, y0b, m, obs, run["n"], run["T"], run["dt"], run["seed"],
                      checkpoints=cps, fit_window=(p["fit_t0"], p["fit_t1"]))
    # the ci column carries the same-law floor distance, the sampling-noise
    # scale of each W1 estimate
    rows = []
    for i, name in enumerate(rep.names):
        for k, t in enumerate(rep.checkpoints):
            rows.append((t, name, rep.w1[i, k], rep.floor_w1[i, k]))
    for k, t in enumerate(rep.checkpoints):
        rows.append((t, "pooled", rep.pooled[k], rep.floor_pooled[k]))
    summary = [
        (name, rep.per_obs_kappa[i], rep.per_obs_r2[i], rep.fit_window[0],
         rep.fit_window[1], rep.n)
        for i, name in enumerate(rep.names)
    ]
    summary.append(("pooled", rep.kappa_hat, rep.r2, rep.fit_window[0],
                    rep.fit_window[1], rep.n))
    k80 = int(np.argmin(np.abs(rep.checkpoints - p["fit_t1"])))
    final_w1 = float(rep.pooled[k80])
    floor = rep.floor_level()
    artifacts = [
        ("mixing.csv", ["t", "observable", "w1", "ci"], rows),
        ("mixing_summary.csv",
         ["observable", "kappa_hat", "r2", "fit_t0", "fit_t1", "n"], summary),
    ]
    checks = [
        ("kappa_positive", rep.kappa_hat > 0, f"kappa_hat = {rep.kappa_hat:.5f}"),
        ("fit_quality", rep.r2 >= 0.9, f"R^2 = {rep.r2:.4f}"),
        ("near_floor_at_window_end", final_w1 <= p["floor_factor"] * floor,
         f"W1({rep.checkpoints[k80]:g}) = {final_w1:.4f} vs "
         f"{p['floor_factor']}x floor = {p['floor_factor'] * floor:.4f}"),
    ]
    return artifacts, checks


def _observable_by_key(m, key, clip):
    from .ergodics import default_observables

    obs = default_observables(m, n_modes=8, clip=clip)
    return obs, obs.by_name(key)


def _run_lln(cfg, m):
    import numpy as np

    from .ergodics import lln_curve_from_integral, simulate_ensemble
    from .model import state_with_weighted_norm

    run, p = cfg.run, cfg.params
    T, dt = run["T"], run["dt"]
    burn = p["burn_in"]
    obs, psi = _observable_by_key(m, p["psi"], p["clip"])
    y0 = state_with_weighted_norm(m.basis, m.alpha, 0.0)

    ppo = p["points_per_octave"]
    n_oct = int(np.floor(np.log2(T)))
    geo = sorted({min(2.0 ** (k / ppo), T) for k in range(0, n_oct * ppo + 1)})
    cps = sorted(set(geo) | {burn, T})
    ens = simulate_ensemble(
        y0, m, 2, T, dt, run["seed"], cps, observables=obs,
        integrate_names=[psi.name], record_energy_cp=False,
    )
    snap = ens.obs_integral[psi.name]
    t = ens.checkpoints
    if p["reference"] is not None:
        reference = p["reference"]
    else:
        kb = int(np.argmin(np.abs(t - burn)))
        reference = float((snap[-1, 0] - snap[kb, 0]) / (t[-1] - t[kb]))
    geo_idx = [int(np.argmin(np.abs(t - g))) for g in geo]
    curve = lln_curve_from_integral(t[geo_idx], snap[geo_idx, 1], reference,
                                    fit_t_min=p["fit_t_min"])
    artifacts = [
        ("lln.csv", ["t", "err"], list(zip(curve.times, curve.errors))),
        ("lln_summary.csv", ["slope", "r2", "reference", "fit_t_min", "psi"],
         [(curve.slope, curve.r2, reference, p["fit_t_min"], psi.name)]),
    ]
    checks = [
        ("lln_slope", curve.slope <= p["slope_max"],
         f"slope = {curve.slope:.4f} vs max {p['slope_max']}"),
    ]
    return artifacts, checks


def _run_clt(cfg, m):
    import numpy as np

    from .ergodics import clt_statistic, simulate_ensemble
    from .model import state_with_weighted_norm

    run, p = cfg.run, cfg.params
    t_eval = p["t_eval"]
    obs, psi = _observable_by_key(m, p["psi"], p["clip"])
    y0 = state_with_weighted_norm(m.basis, m.alpha, 0.0)
    if p["reference"] is not None:
        reference = p["reference"]
    else:
        pilot = simulate_ensemble(
            y0, m, 1, p["pilot_T"], run["dt"], run["seed"] + 1000,
            [p["burn_in"], p["pilot_T"]], observables=obs,
            integrate_names=[psi.name], record_energy_cp=False,
        )
        snap = pilot.obs_integral[psi.name]
        dtspan = pilot.checkpoints[-1] - pilot.checkpoints[0]
        reference = float((snap[-1, 0] - snap[0, 0]) / dtspan)
    ens = simulate_ensemble(
        y0, m, run["n"], max(run["T"], t_eval), run["dt"], run["seed"],
        sorted({t_eval, max(run["T"], t_eval)}), observables=obs,
        integrate_names=[psi.name], record_energy_cp=False,
    )
    res = clt_statistic(ens, psi.name, t_eval, reference)
    qs = np.linspace(0.005, 0.995, 199)
    sample_q = np.quantile(res.samples, qs)
    from scipy import stats as sp_stats

    normal_q = sp_stats.norm.ppf(qs, scale=res.a_hat if res.a_hat > 0 else 1.0)
    artifacts = [
        ("clt_samples.csv", ["value"], [(v,) for v in res.samples]),
        ("clt.csv", ["p", "sample_quantile", "normal_quantile"],
         list(zip(qs, sample_q, normal_q))),
        ("clt_summary.csv", ["ks", "p_value", "a_hat", "n", "t", "reference"],
         [(res.ks_stat, res.p_value, res.a_hat, res.samples.size, res.t, reference)]),
    ]
    checks = [
        ("clt_ks_pvalue", res.degenerate or res.p_value > p["p_min"],
         f"p = {res.p_value:.4f}"),
    ]
    return artifacts, checks


def _run_hitting(cfg, m):
    import numpy as np

    from .ergodics import hitting_probability
    from .model import state_with_weighted_norm

    run, p = cfg.run, cfg.params
    y0 = state_with_weighted_norm(m.basis, m.alpha, p["y0_hnorm"])
    rep = hitting_probability(y0, m, p["d"], run["T"], run["n"], run["dt"], run["seed"])
    hits = rep.first_hit_times[~np.isnan(rep.first_hit_times)]
    edges = np.linspace(0.0, run["T"], p["hist_bins"] + 1)
    counts, _ = np.histogram(hits, bins=edges)
    artifacts = [
        ("hitting.csv", ["d", "T", "p_hat", "ci_lo", "ci_hi"],
         [(rep.d, rep.T, rep.p_hat, rep.ci_lo, rep.ci_hi)]),
        ("hitting_summary.csv", ["n", "p_sup"], [(rep.n, rep.p_sup)]),
        ("hitting_hist.csv", ["bin_lo", "bin_hi", "count"],
         [(edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)]),
    ]
    checks = [
        ("hitting_positive", rep.ci_lo > 0.0,
         f"p = {rep.p_hat:.4f}, CI [{rep.ci_lo:.4f}, {rep.ci_hi:.4f}]"),
    ]
    return artifacts, checks


def _run_split(cfg, m):
    from .ergodics import split_uz_hs
    from .integrator import simulate_path
    from .model import state_with_weighted_norm

    run, p = cfg.run, cfg.params
    y0 = state_with_weighted_norm(m.basis, m.alpha, p["y0_hnorm"])
    stride = max(1, int(round(0.1 / run["dt"])))
    traj = simulate_path(y0, m, run["T"], run["dt"], run["seed"],
                         store_stride=stride, record_energy=False)
    rep = split_uz_hs(traj, m, p["s"])
    ratio = rep.max_second_half / rep.max_first_half if rep.max_first_half > 0 else 0.0
    artifacts = [
        ("split.csv", ["t", "hs_norm"], list(zip(rep.times, rep.hs_norm))),
        ("split_summary.csv",
         ["s", "max_first_half", "max_second_half", "ratio", "reconstruction_error"],
         [(rep.s, rep.max_first_half, rep.max_second_half, ratio,
           rep.reconstruction_error)]),
    ]
    checks = [
        ("hs_norm_bounded", ratio <= p["ratio_max"],
         f"second/first half max ratio = {ratio:.4f}"),
        ("reconstruction_exact", rep.reconstruction_error <= 1e-10,
         f"max |v + z - u| = {rep.reconstruction_error:.3g}"),
    ]
    return artifacts, checks


def _run_dissipativity(cfg, m):
    from .model import check_dissipativity

    p = cfg.params
    rep = check_dissipativity(m.nonlinearity, m.nu, p["scan_range"])
    rows = [
        ("primitive_lower", rep.c_primitive_lower),
        ("drift_lower", rep.c_drift_lower),
        ("second_derivative_growth", rep.c_second_deriv),
        ("overall", rep.c_overall),
    ]
    artifacts = [
        ("dissipativity.csv", ["condition", "constant"], rows),
        ("dissipativity_summary.csv", ["nu", "scan_range", "ok"],
         [(rep.nu, rep.scan_range, rep.ok)]),
    ]
    checks = [("dissipativity_finite", rep.ok, f"C = {rep.c_overall:.6g}")]
    return artifacts, checks


_RUNNERS = {
    "energy": _run_energy,
    "tails": _run_tails,
    "fp-scan": _run_fp_scan,
    "girsanov": _run_girsanov,
    "mixing": _run_mixing,
    "lln": _run_lln,
    "clt": _run_clt,
    "hitting": _run_hitting,
    "split": _run_split,
    "dissipativity": _run_dissipativity,
}


# ---------------------------------------------------------------------------
# orchestration


def run_experiment(cfg: ExperimentConfig, check: bool = False,
                   out_dir: str | None = None) -> int:
    """Run one configured experiment and write its artifact directory."""
    from . import __version__

    target = Path(out_dir if out_dir is not None else cfg.output_dir)
    target.mkdir(parents=True, exist_ok=True)
    m = _build_model(cfg)
    artifacts, checks = _RUNNERS[cfg.experiment](cfg, m)

    written = {}
    for fname, header, rows in artifacts:
        path = emit_csv(target / fname, header, rows)
        written[fname] = hashlib.sha256(path.read_bytes()).hexdigest()

    manifest = {
        "experiment": cfg.experiment,
        "config_sha256": hashlib.sha256(cfg.source_bytes).hexdigest(),
        "config_file": os.path.basename(cfg.source_path),
        "code_version": __version__,
        "seed": cfg.run["seed"],
        "model": {k: v for k, v in cfg.model.items()},
        "run": {k: (v if not isinstance(v, list) else list(map(float, v)))
                for k, v in cfg.run.items()},
        "params": {k: v for k, v in cfg.params.items()},
        "artifacts": written,
        "checks": [
            {"name": name, "passed": bool(passed), "detail": detail}
            for name, passed, detail in checks
        ],
    }
    (target / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
        encoding="utf-8",
    )
    (target / "run_meta.txt").write_text(
        f"completed_unix_time={time.time():.0f}\n", encoding="utf-8"
    )

    for name, passed, detail in checks:
        print(f"[{cfg.experiment}] {'PASS' if passed else 'FAIL'} {name}: {detail}")
    if check and not all(passed for _, passed, _ in checks):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _apply_thread_env(threads: int | None):
    value = os.environ.get("NLWMIX_THREADS")
    if threads is None and value:
        threads = int(value)
    if threads is not None:
        # BLAS pools read these when numpy first loads
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlwmix",
        description="Experiments for the stochastically forced damped nonlinear wave equation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--check", action="store_true",
                       help="turn report thresholds into exit-code failures")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.add_argument("--threads", type=int, default=None,
                       help="cap BLAS threads (must be set before numpy loads)")

    p_val = sub.add_parser("validate", help="parse and validate a config")
    p_val.add_argument("config")

    sub.add_parser("list-experiments", help="list known experiment names")

    args = parser.parse_args(argv)

    if args.command == "list-experiments":
        for name in sorted(_EXPERIMENT_SCHEMAS):
            print(name)
        return EXIT_OK

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if os.environ.get("NLWMIX_SEED"):
        cfg.run["seed"] = int(os.environ["NLWMIX_SEED"])

    if args.command == "validate":
        print(f"ok: experiment '{cfg.experiment}' "
              f"(dim {cfg.model['dim']}, modes {cfg.model['modes_per_axis']}, "
              f"T {cfg.run['T']}, n {cfg.run['n']}, seed {cfg.run['seed']})")
        return EXIT_OK

    _apply_thread_env(args.threads)
    try:
        return run_experiment(cfg, check=args.check, out_dir=args.out)
    except Exception as exc:  # surfaced verbatim with nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
