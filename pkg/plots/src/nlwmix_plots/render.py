"""Render figures from an nlwmix artifact directory.

Pure consumer of the CSV artifacts plus manifest.json: nothing is ever
re-simulated.  Each recognized CSV maps to one figure with deterministic
styling.  Any fitted quantity that can be recomputed from raw columns
(mixing rate, LLN slope, TV-bound slope, the contraction rate of the stored
median series) is re-fitted here and compared against the CSV summary
value; a mismatch beyond 1e-9 aborts with a nonzero exit, which guards
against schema or convention drift between the packages.

Usage: render_figures <artifact_dir> <out_dir>
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REFIT_TOL = 1e-9

plt.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
})


class SchemaError(RuntimeError):
    pass


class RefitMismatch(RuntimeError):
    pass


def read_csv(path: Path, expected_header):
    with path.open("r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path.name}: empty file")
    header = rows[0]
    if header != list(expected_header):
        raise SchemaError(
            f"{path.name}: header {header} does not match expected {list(expected_header)}"
        )
    return rows[1:]


def column(rows, header, name, kind=float):
    idx = list(header).index(name)
    return np.array([kind(r[idx]) for r in rows]) if kind is not str else [r[idx] for r in rows]


def line_fit(x, y):
    """Plain least squares y = a + b x; returns (slope, intercept)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    return float(slope), float(ym - slope * xm)


def check_refit(name, summary_value, refit_value):
    if not (np.isfinite(summary_value) and np.isfinite(refit_value)):
        return
    if abs(summary_value - refit_value) > REFIT_TOL:
        raise RefitMismatch(
            f"{name}: summary value {summary_value!r} vs re-fit {refit_value!r} "
            f"(tolerance {REFIT_TOL})"
        )


# ---------------------------------------------------------------------------
# figure builders (one per experiment family)


def fig_energy(art, out):
    header = ["t", "mean_energy", "se", "mean_e_st", "bound"]
    rows = read_csv(art / "energy.csv", header)
    t = column(rows, header, "t")
    mean_e = column(rows, header, "mean_energy")
    se = column(rows, header, "se")
    e_st = column(rows, header, "mean_e_st")
    bound = column(rows, header, "bound")
    fig, ax = plt.subplots()
    ax.plot(t, mean_e, label="mean energy", color="C0")
    ax.fill_between(t, mean_e - 1.96 * se, mean_e + 1.96 * se, color="C0", alpha=0.25)
    ax.plot(t, e_st, label="unweighted energy", color="C2", lw=1)
    ax.plot(t, bound, "--", label="fitted decay + constant", color="C3")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend()
    fig.savefig(out / "energy.png")
    plt.close(fig)
    return ["energy.png"]


def fig_exp_moment(art, out):
    header = ["t", "value", "ci_lo", "ci_hi", "bound"]
    rows = read_csv(art / "exp_moment.csv", header)
    t = column(rows, header, "t")
    val = column(rows, header, "value")
    lo = column(rows, header, "ci_lo")
    hi = column(rows, header, "ci_hi")
    bound = column(rows, header, "bound")
    fig, ax = plt.subplots()
    ax.plot(t, val, color="C0", label="mean exp(kappa E)")
    ax.fill_between(t, lo, hi, color="C0", alpha=0.25)
    ax.plot(t, bound, "--", color="C3", label="3x time-median")
    ax.set_xlabel("t")
    ax.set_ylabel("exponential moment")
    ax.legend()
    fig.savefig(out / "exp_moment.png")
    plt.close(fig)
    return ["exp_moment.png"]


def fig_tails(art, out):
    header = ["r", "value", "ci_lo", "ci_hi", "bound"]
    rows = read_csv(art / "tails.csv", header)
    r = column(rows, header, "r")
    val = column(rows, header, "value")
    hi = column(rows, header, "ci_hi")
    bound = column(rows, header, "bound")
    fig, ax = plt.subplots()
    floor = 0.5 / 10**6
    ax.semilogy(r, np.maximum(val, floor), "o-", label="empirical exceedance")
    ax.semilogy(r, np.maximum(hi, floor), "v--", color="C0", alpha=0.6,
                label="Wilson upper CI")
    ax.semilogy(r, bound, "s--", color="C3", label="exp(-beta r)")
    ax.set_xlabel("r")
    ax.set_ylabel("P(sup statistic >= r)")
    ax.legend()
    fig.savefig(out / "tails.png")
    plt.close(fig)
    return ["tails.png"]


def fig_fp_scan(art, out):
    header = ["regime", "n_pinned", "n_pairs", "rate_median", "rate_min",
              "rate_max", "r2_min", "frac_success", "frac_no_decay",
              "tail_proj_norm", "n_star", "rate_of_median_series",
              "fit_t0", "fit_t1"]
    rows = read_csv(art / "fp_scan.csv", header)
    s_header = ["n_pinned", "t", "diff_median", "diff_min", "diff_max"]
    s_rows = read_csv(art / "fp_series.csv", s_header)

    keys = column(s_rows, s_header, "n_pinned", str)
    t_all = column(s_rows, s_header, "t")
    med_all = column(s_rows, s_header, "diff_median")

    # re-fit the stored median-series decay rate for every scan row
    for row in rows:
        regime = row[0]
        key = "fail" if regime == "fail-probe" else row[1]
        mask = np.array([k == key for k in keys])
        tt, med = t_all[mask], med_all[mask]
        summary_rate = float(row[header.index("rate_of_median_series")])
        t0, t1 = float(row[header.index("fit_t0")]), float(row[header.index("fit_t1")])
        sel = (tt >= t0) & (tt <= t1)
        if np.all(med[sel] > 0):
            slope, _ = line_fit(tt[sel], 2.0 * np.log(med[sel]))
            check_refit(f"fp_scan[{regime} N={row[1]}]", summary_rate, -slope)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    for key in dict.fromkeys(keys):
        mask = np.array([k == key for k in keys])
        label = f"N = {key}" if key != "fail" else "N = 0, large start"
        style = "--" if key == "fail" else "-"
        ax1.semilogy(t_all[mask], np.maximum(med_all[mask], 1e-300), style,
                     label=label, lw=1.2)
    ax1.set_xlabel("t")
    ax1.set_ylabel("median |xi_v - xi_u|_H")
    ax1.legend(fontsize=7)

    contract = [r for r in rows if r[0] == "contract"]
    n_vals = [int(r[1]) for r in contract]
    med_rates = [float(r[header.index("rate_median")]) for r in contract]
    min_rates = [float(r[header.index("rate_min")]) for r in contract]
    ax2.plot(n_vals, med_rates, "o-", label="median rate")
    ax2.plot(n_vals, min_rates, "v-", label="min rate", alpha=0.7)
    ax2.axhline(0.0, color="k", lw=0.8)
    n_star = int(contract[0][header.index("n_star")])
    if n_star >= 0:
        ax2.axvline(n_star, color="C3", ls="--", label=f"N* = {n_star}")
    ax2.set_xlabel("pinned modes N")
    ax2.set_ylabel("squared-norm decay rate")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "fp_scan.png")
    plt.close(fig)
    return ["fp_scan.png"]


def fig_fp_pair(art, out):
    header = ["t", "diff_norm", "fitted_rate", "drift_l2", "tv_bound",
              "n_pinned", "seed"]
    rows = read_csv(art / "fp_pair.csv", header)
    series = [r for r in rows if r[0] != ""]
    summary = [r for r in rows if r[0] == ""][0]
    t = np.array([float(r[0]) for r in series])
    diff = np.array([float(r[1]) for r in series])
    rate = float(summary[2]) if summary[2] != "" else np.nan
    fig, ax = plt.subplots()
    ax.semilogy(t, np.maximum(diff, 1e-300), color="C0",
                label=f"|xi_v - xi_u|_H (N = {summary[5]})")
    if np.isfinite(rate) and diff[0] > 0:
        ax.semilogy(t, diff[0] * np.exp(-0.5 * rate * (t - t[0])), "--",
                    color="C3", label=f"fitted rate {rate:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel("pair distance")
    ax.set_title(f"drift L2 {float(summary[3]):.3g}, TV bound {float(summary[4]):.3g}")
    ax.legend()
    fig.savefig(out / "fp_pair.png")
    plt.close(fig)
    return ["fp_pair.png"]


def fig_girsanov(art, out):
    header = ["delta", "tv_bound", "exponent_max", "mean_exp", "drift_l2_mean",
              "n_pairs"]
    rows = read_csv(art / "girsanov.csv", header)
    s_header = ["slope", "r2", "zero_drift_bound", "n_pinned"]
    s_rows = read_csv(art / "girsanov_summary.csv", s_header)
    delta = column(rows, header, "delta")
    tv = column(rows, header, "tv_bound")
    summary_slope = float(s_rows[0][0])
    refit_slope = float(delta @ tv) / float(delta @ delta)
    check_refit("girsanov slope", summary_slope, refit_slope)

    fig, ax = plt.subplots()
    ax.plot(delta, tv, "o", label="TV bound")
    xs = np.linspace(0.0, delta.max() * 1.1, 50)
    ax.plot(xs, summary_slope * xs, "--", color="C3",
            label=f"line through origin (slope {summary_slope:.2f})")
    ax.set_xlabel("|y - y'|_H")
    ax.set_ylabel("total-variation bound")
    ax.legend()
    fig.savefig(out / "girsanov.png")
    plt.close(fig)
    return ["girsanov.png"]


def fig_mixing(art, out):
    # the ci column is the same-law floor distance (sampling-noise scale)
    header = ["t", "observable", "w1", "ci"]
    rows = read_csv(art / "mixing.csv", header)
    s_header = ["observable", "kappa_hat", "r2", "fit_t0", "fit_t1", "n"]
    s_rows = read_csv(art / "mixing_summary.csv", s_header)

    names = column(rows, header, "observable", str)
    t = column(rows, header, "t")
    w1 = column(rows, header, "w1")
    floor = column(rows, header, "ci")
    pooled_mask = np.array([n == "pooled" for n in names])
    tp, wp, fp_ = t[pooled_mask], w1[pooled_mask], floor[pooled_mask]

    pooled_summary = [r for r in s_rows if r[0] == "pooled"][0]
    kappa = float(pooled_summary[1])
    t0, t1 = float(pooled_summary[3]), float(pooled_summary[4])
    sel = (tp >= t0) & (tp <= t1) & (wp > 0)
    slope, intercept = line_fit(tp[sel], np.log(wp[sel]))
    check_refit("mixing kappa", kappa, -slope)

    fig, ax = plt.subplots()
    for name in dict.fromkeys(names):
        if name == "pooled":
            continue
        mask = np.array([n == name for n in names])
        ax.semilogy(t[mask], np.maximum(w1[mask], 1e-12), color="0.75", lw=0.6)
    ax.semilogy(tp, np.maximum(wp, 1e-12), color="C0", lw=2.0, label="pooled W1")
    ax.semilogy(tp, np.maximum(fp_, 1e-12), color="0.4", ls=":",
                label="same-law floor")
    xs = np.linspace(t0, t1, 50)
    ax.semilogy(xs, np.exp(intercept + slope * xs), "--", color="C3",
                label=f"fit: kappa = {kappa:.4f}")
    ax.set_xlabel("t")
    ax.set_ylabel("W1 distance")
    ax.legend()
    fig.savefig(out / "mixing.png")
    plt.close(fig)
    return ["mixing.png"]


def fig_lln(art, out):
    header = ["t", "err"]
    rows = read_csv(art / "lln.csv", header)
    s_header = ["slope", "r2", "reference", "fit_t_min", "psi"]
    s_rows = read_csv(art / "lln_summary.csv", s_header)
    t = column(rows, header, "t")
    err = column(rows, header, "err")
    slope_summary = float(s_rows[0][0])
    t_min = float(s_rows[0][3])
    sel = (t >= t_min) & (err > 0)
    slope, intercept = line_fit(np.log(t[sel]), np.log(err[sel]))
    check_refit("lln slope", slope_summary, slope)

    fig, ax = plt.subplots()
    ax.loglog(t, np.maximum(err, 1e-16), "o-", ms=3, label="running-average error")
    xs = np.linspace(np.log(max(t_min, t[0])), np.log(t[-1]), 40)
    ax.loglog(np.exp(xs), np.exp(intercept + slope * xs), "--", color="C3",
              label=f"slope {slope:.3f}")
    ax.loglog(t[sel], err[sel][0] * (t[sel] / t[sel][0]) ** -0.5, ":",
              color="0.4", label="reference slope -1/2")
    ax.set_xlabel("t")
    ax.set_ylabel("|running average - reference|")
    ax.legend()
    fig.savefig(out / "lln.png")
    plt.close(fig)
    return ["lln.png"]


def fig_clt(art, out):
    v_header = ["value"]
    v_rows = read_csv(art / "clt_samples.csv", v_header)
    q_header = ["p", "sample_quantile", "normal_quantile"]
    read_csv(art / "clt.csv", q_header)  # schema check
    s_header = ["ks", "p_value", "a_hat", "n", "t", "reference"]
    s_rows = read_csv(art / "clt_summary.csv", s_header)
    samples = column(v_rows, v_header, "value")
    a_hat = float(s_rows[0][2])
    p_value = float(s_rows[0][1])

    fig, ax = plt.subplots()
    ax.hist(samples, bins=31, density=True, alpha=0.6, label="samples")
    if a_hat > 0:
        xs = np.linspace(samples.min(), samples.max(), 200)
        pdf = np.exp(-0.5 * (xs / a_hat) ** 2) / (a_hat * np.sqrt(2 * np.pi))
        ax.plot(xs, pdf, color="C3", label=f"N(0, {a_hat:.3f}^2)")
    ax.set_xlabel("normalized path integral")
    ax.set_ylabel("density")
    ax.set_title(f"KS p-value {p_value:.3f}")
    ax.legend()
    fig.savefig(out / "clt.png")
    plt.close(fig)
    return ["clt.png"]


def fig_hitting(art, out):
    header = ["d", "T", "p_hat", "ci_lo", "ci_hi"]
    rows = read_csv(art / "hitting.csv", header)
    read_csv(art / "hitting_summary.csv", ["n", "p_sup"])  # schema check
    h_header = ["bin_lo", "bin_hi", "count"]
    h_rows = read_csv(art / "hitting_hist.csv", h_header)
    p_hat = float(rows[0][2])
    lo, hi = float(rows[0][3]), float(rows[0][4])
    d, T = float(rows[0][0]), float(rows[0][1])
    bins_lo = column(h_rows, h_header, "bin_lo")
    bins_hi = column(h_rows, h_header, "bin_hi")
    counts = column(h_rows, h_header, "count")

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    ax1.bar(["P(|y(T)| <= d)"], [p_hat], yerr=[[p_hat - lo], [hi - p_hat]],
            capsize=6, color="C0", alpha=0.8)
    ax1.set_ylim(0, 1)
    ax1.set_title(f"d = {d:g}, T = {T:g}")
    widths = bins_hi - bins_lo
    ax2.bar(bins_lo, counts, width=widths, align="edge", alpha=0.8)
    ax2.set_xlabel("first hitting time")
    ax2.set_ylabel("paths")
    fig.tight_layout()
    fig.savefig(out / "hitting.png")
    plt.close(fig)
    return ["hitting.png"]


def fig_split(art, out):
    header = ["t", "hs_norm"]
    rows = read_csv(art / "split.csv", header)
    s_header = ["s", "max_first_half", "max_second_half", "ratio",
                "reconstruction_error"]
    s_rows = read_csv(art / "split_summary.csv", s_header)
    t = column(rows, header, "t")
    hs = column(rows, header, "hs_norm")
    s_val = float(s_rows[0][0])
    m1, m2 = float(s_rows[0][1]), float(s_rows[0][2])
    fig, ax = plt.subplots()
    ax.plot(t, hs, color="C0")
    ax.axhline(m1, color="C2", ls="--", lw=0.8, label="first-half max")
    ax.axhline(m2, color="C3", ls="--", lw=0.8, label="second-half max")
    ax.set_xlabel("t")
    ax.set_ylabel(f"|xi_z|_(H^{s_val:g})")
    ax.legend()
    fig.savefig(out / "split.png")
    plt.close(fig)
    return ["split.png"]


def fig_dissipativity(art, out):
    header = ["condition", "constant"]
    rows = read_csv(art / "dissipativity.csv", header)
    names = [r[0] for r in rows]
    consts = [float(r[1]) for r in rows]
    fig, ax = plt.subplots()
    ax.bar(names, consts, color="C0", alpha=0.8)
    ax.set_ylabel("smallest admissible constant")
    ax.tick_params(axis="x", labelrotation=20)
    fig.tight_layout()
    fig.savefig(out / "dissipativity.png")
    plt.close(fig)
    return ["dissipativity.png"]


# main artifact of each family -> builder
_BUILDERS = {
    "energy.csv": fig_energy,
    "exp_moment.csv": fig_exp_moment,
    "tails.csv": fig_tails,
    "fp_scan.csv": fig_fp_scan,
    "fp_pair.csv": fig_fp_pair,
    "girsanov.csv": fig_girsanov,
    "mixing.csv": fig_mixing,
    "lln.csv": fig_lln,
    "clt_samples.csv": fig_clt,
    "hitting.csv": fig_hitting,
    "split.csv": fig_split,
    "dissipativity.csv": fig_dissipativity,
}

# companions consumed by the builders above, never rendered standalone
_COMPANIONS = {
    "energy_summary.csv", "tails_summary.csv", "fp_series.csv",
    "girsanov_summary.csv", "mixing_summary.csv", "lln_summary.csv",
    "clt.csv", "clt_summary.csv", "hitting_summary.csv", "hitting_hist.csv",
    "split_summary.csv", "dissipativity_summary.csv",
}


def render_figures(artifact_dir, out_dir) -> list:
    """Render one figure per recognized artifact; returns written file names."""
    art = Path(artifact_dir)
    manifest_path = art / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"no manifest.json in {art}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    artifacts = manifest.get("artifacts", {})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    written = []
    for fname in sorted(artifacts):
        if fname in _COMPANIONS:
            continue
        builder = _BUILDERS.get(fname)
        if builder is None:
            raise SchemaError(f"unrecognized artifact {fname!r} in manifest")
        if not (art / fname).exists():
            raise SchemaError(f"artifact {fname!r} listed in manifest but missing")
        written.extend(builder(art, out))
    return written


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: render_figures <artifact_dir> <out_dir>", file=sys.stderr)
        return 2
    try:
        written = render_figures(argv[0], argv[1])
    except (SchemaError, RefitMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name in written:
        print(name)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
