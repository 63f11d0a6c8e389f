"""Ensembles, observable distances, mixing fits, LLN/CLT checks, splitting.

The dual-Lipschitz distance between laws on the phase space is not
computable directly, so it is surrogated by the maximum over a fixed set of
1-Lipschitz observables of the exact one-dimensional Wasserstein-1 distance
between their empirical marginals.  The surrogate lower-bounds the true
metric: exponential decay of the surrogate is necessary-condition evidence
for exponential mixing, never proof.  All reports carry the same-law noise
floor so fitted decays can be judged against sampling error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as sp_stats
from scipy.integrate import cumulative_trapezoid

from .energy import StoppingParams
from .errors import (
    ConfigurationError,
    EnsembleError,
    InsufficientSampleError,
    ShapeError,
)
from .integrator import (
    StateRecorder,
    Trajectory,
    _EnsembleNoise,
    _needs_nodal,
    _primitive_into,
    _run_loop,
    _Stepper,
    linear_propagator,
    n_steps_for,
)
from .model import ModelParams, State
from .stats import line_fit, wilson_ci

__all__ = [
    "Observable",
    "ObservableSet",
    "Ensemble",
    "MixingReport",
    "SplitReport",
    "HittingReport",
    "CltResult",
    "LlnCurve",
    "default_observables",
    "simulate_ensemble",
    "w1_observable_distance",
    "mixing_rate",
    "lln_error_curve",
    "clt_statistic",
    "hitting_probability",
    "split_uz_hs",
    "nonlinearity_lipschitz_check",
]


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """Named functional of the state, clipped and normalized to be 1-Lipschitz.

    `raw` maps (U, V, nodal, model) to one value per row; the final value is
    clip(raw, -clip, clip) / lip_bound with lip_bound an upper bound on the
    raw Lipschitz constant in the weighted phase-space norm.
    """

    name: str
    raw: object
    lip_bound: float
    clip: float

    def __call__(self, U, V, nodal, m) -> np.ndarray:
        vals = self.raw(U, V, nodal, m)
        return np.clip(vals, -self.clip, self.clip) / self.lip_bound


class ObservableSet:
    def __init__(self, observables):
        self.observables = list(observables)
        names = [o.name for o in self.observables]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate observable names")

    def __iter__(self):
        return iter(self.observables)

    def __len__(self):
        return len(self.observables)

    @property
    def names(self):
        return [o.name for o in self.observables]

    def by_name(self, name: str) -> Observable:
        for o in self.observables:
            if o.name == name:
                return o
        raise ConfigurationError(f"no observable named {name!r}")


def default_observables(m: ModelParams, n_modes: int = 8, clip: float = 5.0) -> ObservableSet:
    """Clipped mode coordinates, clipped weighted norm, clipped primitive integral.

    Lipschitz normalizers: a position coordinate moves by at most
    |dy|_H / sqrt(lambda_1); a velocity coordinate by (1 + alpha/sqrt(lambda_1)) |dy|_H;
    the norm itself is 1-Lipschitz; the primitive integral is bounded through
    sup|f| on the clip range times sqrt(Vol)/sqrt(lambda_1).
    """
    lam1 = float(m.basis.eigenvalues[0])
    k = min(n_modes, m.basis.mode_count)
    obs = []
    u_div = max(1.0, lam1 ** -0.5)
    v_div = 1.0 + m.alpha / np.sqrt(lam1)

    def u_coord(j):
        return lambda U, V, nodal, mm: U[:, j]

    def v_coord(j):
        return lambda U, V, nodal, mm: V[:, j]

    for j in range(k):
        obs.append(Observable(f"u{j + 1}", u_coord(j), u_div, clip))
        obs.append(Observable(f"v{j + 1}", v_coord(j), v_div, clip))

    def hnorm(U, V, nodal, mm):
        hn = (U * U) @ mm.basis.eigenvalues
        sh = V + mm.alpha * U
        hn += np.einsum("nm,nm->n", sh, sh)
        return np.sqrt(hn)

    obs.append(Observable("hnorm", hnorm, 1.0, 2 * clip))

    if not m.nonlinearity.is_zero:
        # sup |f| over the field range the clip keeps relevant
        u_ref = np.linspace(-4 * clip, 4 * clip, 4001)
        sup_f = float(np.max(np.abs(m.nonlinearity.f(u_ref))))
        f_div = max(1.0, sup_f * np.sqrt(m.basis.volume / lam1))

        def f_integral(U, V, nodal, mm):
            if nodal is None:
                raise ConfigurationError("primitive observable needs nodal fields")
            prim = mm.nonlinearity.primitive(nodal)
            return prim @ mm.basis.quadrature_weights

        obs.append(Observable("f_int", f_integral, f_div, 2 * clip))
    return ObservableSet(obs)


# ---------------------------------------------------------------------------
# ensemble simulation


@dataclass
class Ensemble:
    """Checkpoint samples and online statistics of n independent trajectories."""

    n: int
    T: float
    dt: float
    base_seed: int
    model: ModelParams
    checkpoints: np.ndarray
    obs: dict                      # name -> (n_cp, n) values
    obs_integral: dict             # name -> (n_cp, n) running path integrals
    energy_cp: np.ndarray | None   # (n_cp, n)
    hnorm_cp: np.ndarray | None
    est_cp: np.ndarray | None
    final_u: np.ndarray
    final_v: np.ndarray
    valid: np.ndarray              # (n,) rows that never diverged
    tail_sup: np.ndarray | None = None
    tail_k: float | None = None
    envelope_crossed: np.ndarray | None = None
    envelope_time: np.ndarray | None = None
    first_hit_time: np.ndarray | None = None
    min_hnorm: np.ndarray | None = None
    hit_radius: float | None = None

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


class _EnsembleTracker:
    """Single recorder computing all requested per-step ensemble statistics."""

    def __init__(self, m: ModelParams, dt: float, n_steps: int, n_rows: int,
                 cp_indices, observables, integrate_names, tail_k, stopping,
                 hit_radius, record_energy_cp):
        self.m = m
        self.dt = dt
        self.lam = m.basis.eigenvalues
        self.alpha = m.alpha
        self.w = m.basis.quadrature_weights
        self.cp_lookup = {int(i): k for k, i in enumerate(cp_indices)}
        n_cp = len(cp_indices)
        self.observables = list(observables) if observables is not None else []
        if integrate_names and observables is None:
            raise ConfigurationError("integrated observables need an observable set")
        self.integrate = {}
        for name in integrate_names:
            self.integrate[name] = {
                "obs": observables.by_name(name),
                "prev": None,
                "acc": np.zeros(n_rows),
                "snap": np.full((n_cp, n_rows), np.nan),
            }
        self.obs_values = {
            o.name: np.full((n_cp, n_rows), np.nan) for o in self.observables
        }
        self.record_energy_cp = record_energy_cp
        self.energy_cp = np.full((n_cp, n_rows), np.nan) if record_energy_cp else None
        self.hnorm_cp = np.full((n_cp, n_rows), np.nan) if record_energy_cp else None
        # unweighted energy ||grad u||^2 + ||v||^2 + 2 int F, monotone for the
        # deterministic flow
        self.est_cp = np.full((n_cp, n_rows), np.nan) if record_energy_cp else None

        self.tail_k = tail_k
        self.need_e_per_step = tail_k is not None or stopping is not None
        if tail_k is not None:
            self.tail_sup = np.full(n_rows, -np.inf)
            self._tail_acc = np.zeros(n_rows)
            self._e0 = None
        self.stopping = stopping
        if stopping is not None:
            self.env_crossed = np.zeros(n_rows, dtype=bool)
            self.env_time = np.full(n_rows, np.nan)
            self._g_acc = np.zeros(n_rows)
            self._g0 = None
        self._e_prev = None
        self.hit_radius = hit_radius
        if hit_radius is not None:
            self.first_hit = np.full(n_rows, np.nan)
            self.min_hnorm = np.full(n_rows, np.inf)
        self.need_hn_per_step = hit_radius is not None or self.need_e_per_step
        self.needs_nodal = (not m.nonlinearity.is_zero) and (
            self.need_e_per_step or record_energy_cp
            or any(o.name == "f_int" for o in self.observables)
        )
        self._fbuf = None

    def _hnorm_sq(self, U, V):
        hn = (U * U) @ self.lam
        sh = V + self.alpha * U
        hn += np.einsum("nm,nm->n", sh, sh)
        return hn

    def _energy(self, hn, nodal):
        if self.m.nonlinearity.is_zero or nodal is None:
            return hn
        if self._fbuf is None or self._fbuf.shape != nodal.shape:
            self._fbuf = np.empty_like(nodal)
        _primitive_into(self.m.nonlinearity, nodal, self._fbuf)
        return hn + 2.0 * (self._fbuf @ self.w)

    def record(self, i, t, U, V, nodal):
        cp = self.cp_lookup.get(i)
        hn = None
        if self.need_hn_per_step or (cp is not None and self.record_energy_cp):
            hn = self._hnorm_sq(U, V)

        if i == 0:
            self._t0 = t
        if self.need_e_per_step:
            e = self._energy(hn, nodal)
            if self.tail_k is not None:
                g = self.alpha * e - self.tail_k
                if self._e0 is None:
                    self._e0 = e.copy()
                else:
                    self._tail_acc += 0.5 * self.dt * (self._g_prev_tail + g)
                self._g_prev_tail = g
                np.maximum(self.tail_sup, e + self._tail_acc - self._e0,
                           out=self.tail_sup)
            if self.stopping is not None:
                abs_e = np.abs(e)
                if self._g0 is None:
                    self._g0 = abs_e.copy()
                else:
                    self._g_acc += 0.5 * self.dt * (self._g_prev_env + abs_e)
                self._g_prev_env = abs_e
                g_val = abs_e + self.alpha * self._g_acc
                thresh = (self._g0 + self.stopping.r
                          + (self.stopping.l_rate + self.stopping.m_rate) * (t - self._t0))
                newly = (g_val >= thresh) & ~self.env_crossed
                if newly.any():
                    self.env_crossed |= newly
                    self.env_time[newly] = t
            self._last_e = e

        if self.hit_radius is not None:
            hval = np.sqrt(hn)
            np.minimum(self.min_hnorm, hval, out=self.min_hnorm)
            newly = (hval <= self.hit_radius) & np.isnan(self.first_hit)
            if newly.any():
                self.first_hit[newly] = t

        for name, st in self.integrate.items():
            vals = st["obs"](U, V, nodal, self.m)
            if st["prev"] is not None:
                st["acc"] += 0.5 * self.dt * (st["prev"] + vals)
            st["prev"] = vals
            if cp is not None:
                st["snap"][cp] = st["acc"]

        if cp is not None:
            for o in self.observables:
                self.obs_values[o.name][cp] = o(U, V, nodal, self.m)
            if self.record_energy_cp:
                self.hnorm_cp[cp] = hn
                e_here = self._last_e if self.need_e_per_step else self._energy(hn, nodal)
                self.energy_cp[cp] = e_here
                shift = 2.0 * self.alpha * np.einsum("nm,nm->n", V, U)
                self.est_cp[cp] = e_here - shift - self.alpha**2 * np.einsum("nm,nm->n", U, U)


def _checkpoint_indices(checkpoints, T, dt, n_steps):
    cps = np.asarray(checkpoints, dtype=float)
    if cps.ndim != 1 or cps.size == 0:
        raise ConfigurationError("need at least one checkpoint")
    if np.any(cps < -1e-12) or np.any(cps > T + 1e-12):
        raise ConfigurationError("checkpoints must lie in [0, T]")
    idx = np.rint(cps / dt).astype(int)
    idx = np.clip(idx, 0, n_steps)
    return idx, idx * dt


def simulate_ensemble(
    y0: State,
    m: ModelParams,
    n: int,
    T: float,
    dt: float,
    seed: int,
    checkpoints,
    observables: ObservableSet | None = None,
    integrate_names=(),
    tail_k: float | None = None,
    stopping: StoppingParams | None = None,
    hit_radius: float | None = None,
    record_energy_cp: bool = True,
    max_divergence_fraction: float = 0.01,
) -> Ensemble:
    """Run n independent trajectories, streaming statistics at checkpoints.

    Trajectory i draws from the (seed, i) noise stream, so results do not
    depend on evaluation order and a single-trajectory ensemble reproduces
    simulate_path with the same indices.  Per-trajectory divergences are
    tolerated up to max_divergence_fraction, then the whole run fails.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    n_steps = n_steps_for(T, dt)
    cp_idx, cp_times = _checkpoint_indices(checkpoints, T, dt, n_steps)
    prop = linear_propagator(m.basis, m, dt)
    tracker = _EnsembleTracker(
        m, dt, n_steps, n, cp_idx, observables, integrate_names,
        tail_k, stopping, hit_radius, record_energy_cp,
    )
    stepper = _Stepper(m, prop, n, needs_nodal=tracker.needs_nodal)
    U = np.repeat(y0.u[None, :], n, axis=0)
    V = np.repeat(y0.v[None, :], n, axis=0)
    noise = _EnsembleNoise(seed, range(n), m.basis.mode_count) if prop.has_noise else None
    U, V, div = _run_loop(stepper, U, V, n_steps, noise, [tracker], y0.t)

    valid = div < 0
    frac_bad = 1.0 - valid.mean()
    if frac_bad > max_divergence_fraction:
        raise EnsembleError(
            f"{(~valid).sum()} of {n} trajectories diverged "
            f"({100 * frac_bad:.1f}% > {100 * max_divergence_fraction:.1f}%)"
        )
    return Ensemble(
        n=n,
        T=T,
        dt=dt,
        base_seed=seed,
        model=m,
        checkpoints=cp_times,
        obs=tracker.obs_values,
        obs_integral={k: v["snap"] for k, v in tracker.integrate.items()},
        energy_cp=tracker.energy_cp,
        hnorm_cp=tracker.hnorm_cp,
        est_cp=tracker.est_cp,
        final_u=U.copy(),
        final_v=V.copy(),
        valid=valid,
        tail_sup=getattr(tracker, "tail_sup", None),
        tail_k=tail_k,
        envelope_crossed=getattr(tracker, "env_crossed", None),
        envelope_time=getattr(tracker, "env_time", None),
        first_hit_time=getattr(tracker, "first_hit", None),
        min_hnorm=getattr(tracker, "min_hnorm", None),
        hit_radius=hit_radius,
    )


# ---------------------------------------------------------------------------
# distances and fits


def w1_observable_distance(samples_a, samples_b) -> float:
    """Exact one-dimensional Wasserstein-1 distance between empirical samples."""
    a = np.asarray(samples_a, dtype=float).reshape(-1)
    b = np.asarray(samples_b, dtype=float).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise InsufficientSampleError("empty sample set")
    return float(sp_stats.wasserstein_distance(a, b))


@dataclass(frozen=True)
class MixingReport:
    checkpoints: np.ndarray
    names: list
    w1: np.ndarray            # (n_obs, n_cp)
    floor_w1: np.ndarray      # (n_obs, n_cp) same-law reference
    pooled: np.ndarray        # (n_cp,) max over observables
    floor_pooled: np.ndarray
    kappa_hat: float
    prefactor: float
    r2: float
    per_obs_kappa: np.ndarray
    per_obs_r2: np.ndarray
    fit_window: tuple
    n: int
    degenerate: bool

    def floor_level(self) -> float:
        t0, t1 = self.fit_window
        mask = (self.checkpoints >= t0) & (self.checkpoints <= t1)
        return float(np.median(self.floor_pooled[mask]))


def mixing_rate(
    y0a: State,
    y0b: State,
    m: ModelParams,
    obs: ObservableSet,
    n: int,
    T: float,
    dt: float,
    seed: int,
    checkpoints=None,
    fit_window=(10.0, 80.0),
) -> MixingReport:
    """Observable-marginal W1 decay between two ensembles with distinct starts.

    A third ensemble with the same law as the second provides the sampling
    noise floor.  kappa is fitted on log pooled W1 over the window; a
    degenerate flag marks identical starts, whose distances sit at the floor.
    """
    if checkpoints is None:
        checkpoints = np.linspace(0.0, T, 41)
    ens_a = simulate_ensemble(y0a, m, n, T, dt, seed, checkpoints,
                              observables=obs, record_energy_cp=False)
    ens_b = simulate_ensemble(y0b, m, n, T, dt, seed + 1, checkpoints,
                              observables=obs, record_energy_cp=False)
    ens_b2 = simulate_ensemble(y0b, m, n, T, dt, seed + 2, checkpoints,
                               observables=obs, record_energy_cp=False)
    names = obs.names
    n_cp = len(ens_a.checkpoints)
    w1 = np.zeros((len(names), n_cp))
    floor = np.zeros((len(names), n_cp))
    va, vb, vb2 = ens_a.valid, ens_b.valid, ens_b2.valid
    for i, name in enumerate(names):
        for k in range(n_cp):
            w1[i, k] = w1_observable_distance(ens_a.obs[name][k][va], ens_b.obs[name][k][vb])
            floor[i, k] = w1_observable_distance(ens_b.obs[name][k][vb], ens_b2.obs[name][k][vb2])
    pooled = w1.max(axis=0)
    floor_pooled = floor.max(axis=0)

    degenerate = bool(np.allclose(y0a.u, y0b.u) and np.allclose(y0a.v, y0b.v))
    t = ens_a.checkpoints
    t0, t1 = fit_window
    mask = (t >= t0) & (t <= t1) & (pooled > 0)
    per_k = np.full(len(names), np.nan)
    per_r2 = np.full(len(names), np.nan)
    for i in range(len(names)):
        mi = mask & (w1[i] > 0)
        if mi.sum() >= 3:
            fit = line_fit(t[mi], np.log(w1[i][mi]))
            per_k[i], per_r2[i] = -fit.slope, fit.r2
    if degenerate or mask.sum() < 3:
        kappa, r2, pref = np.nan, np.nan, np.nan
    else:
        fit = line_fit(t[mask], np.log(pooled[mask]))
        kappa, r2, pref = -fit.slope, fit.r2, float(np.exp(fit.intercept))
    return MixingReport(
        checkpoints=t, names=names, w1=w1, floor_w1=floor, pooled=pooled,
        floor_pooled=floor_pooled, kappa_hat=float(kappa), prefactor=float(pref),
        r2=float(r2), per_obs_kappa=per_k, per_obs_r2=per_r2,
        fit_window=tuple(fit_window), n=n, degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# LLN / CLT


@dataclass(frozen=True)
class LlnCurve:
    times: np.ndarray
    errors: np.ndarray
    slope: float
    r2: float
    fit_t_min: float
    reference: float


def lln_error_curve(traj: Trajectory, psi, reference: float,
                    points_per_octave: int = 4, fit_t_min: float = 10.0) -> LlnCurve:
    """Running-average error of an observable along one stored trajectory.

    The path integral is a trapezoid over the stored grid; errors are
    reported on a geometric time grid (dyadic refined by points_per_octave)
    and the log-log slope is fitted for t >= fit_t_min.
    """
    if traj.times.size < 3:
        raise ConfigurationError("trajectory too short")
    t = traj.times - traj.t0
    vals = psi(traj.u, traj.v, None, traj.model)
    integral = cumulative_trapezoid(vals, t, initial=0.0)
    t_end = t[-1]
    n_oct = int(np.floor(np.log2(max(t_end, 1.0))))
    grid = [2.0 ** (k / points_per_octave)
            for k in range(0, n_oct * points_per_octave + 1)]
    grid = np.asarray([g for g in grid if g <= t_end])
    idx = np.searchsorted(t, grid)
    idx = np.clip(idx, 1, t.size - 1)
    errors = np.abs(integral[idx] / t[idx] - reference)
    times = t[idx]
    fit_mask = (times >= fit_t_min) & (errors > 0)
    if fit_mask.sum() >= 3:
        fit = line_fit(np.log(times[fit_mask]), np.log(errors[fit_mask]))
        slope, r2 = fit.slope, fit.r2
    else:
        slope, r2 = np.nan, np.nan
    return LlnCurve(times=times, errors=errors, slope=float(slope), r2=float(r2),
                    fit_t_min=fit_t_min, reference=reference)


def lln_curve_from_integral(times, integral_snapshots, reference,
                            fit_t_min: float = 10.0) -> LlnCurve:
    """Error curve straight from streamed path-integral snapshots."""
    t = np.asarray(times, dtype=float)
    snap = np.asarray(integral_snapshots, dtype=float)
    mask = t > 0
    errors = np.abs(snap[mask] / t[mask] - reference)
    times_out = t[mask]
    fit_mask = (times_out >= fit_t_min) & (errors > 0)
    if fit_mask.sum() >= 3:
        fit = line_fit(np.log(times_out[fit_mask]), np.log(errors[fit_mask]))
        slope, r2 = fit.slope, fit.r2
    else:
        slope, r2 = np.nan, np.nan
    return LlnCurve(times=times_out, errors=errors, slope=float(slope),
                    r2=float(r2), fit_t_min=fit_t_min, reference=reference)


@dataclass(frozen=True)
class CltResult:
    samples: np.ndarray
    a_hat: float
    ks_stat: float
    p_value: float
    t: float
    degenerate: bool


def clt_statistic(ens: Ensemble, psi_name: str, t: float, reference: float) -> CltResult:
    """Normalized path integrals against their variance-fitted normal law.

    samples_i = t^(-1/2) (int_0^t psi(y_i) ds - reference * t); the KS
    distance is measured against N(0, a^2) with a^2 the sample variance.
    """
    if psi_name not in ens.obs_integral:
        raise ConfigurationError(
            f"ensemble did not integrate observable {psi_name!r}"
        )
    k = int(np.argmin(np.abs(ens.checkpoints - t)))
    if abs(ens.checkpoints[k] - t) > ens.dt + 1e-9:
        raise ConfigurationError(f"t = {t} is not an ensemble checkpoint")
    t_cp = float(ens.checkpoints[k])
    if t_cp <= 0:
        raise ConfigurationError("CLT time must be positive")
    ints = ens.obs_integral[psi_name][k][ens.valid]
    if ints.size < 50:
        raise InsufficientSampleError(
            f"need at least 50 samples for the CLT check, got {ints.size}"
        )
    samples = (ints - reference * t_cp) / np.sqrt(t_cp)
    a2 = float(np.var(samples, ddof=1))
    if a2 == 0.0:
        return CltResult(samples=samples, a_hat=0.0, ks_stat=0.0, p_value=1.0,
                         t=t_cp, degenerate=True)
    a = np.sqrt(a2)
    res = sp_stats.kstest(samples, "norm", args=(0.0, a), mode="asymp")
    return CltResult(samples=samples, a_hat=a, ks_stat=float(res.statistic),
                     p_value=float(res.pvalue), t=t_cp, degenerate=False)


# ---------------------------------------------------------------------------
# hitting and splitting


@dataclass(frozen=True)
class HittingReport:
    d: float
    T: float
    p_hat: float
    ci_lo: float
    ci_hi: float
    n: int
    final_norms: np.ndarray
    first_hit_times: np.ndarray
    p_sup: float


def hitting_probability(y0: State, m: ModelParams, d: float, T: float,
                        n: int, dt: float, seed: int) -> HittingReport:
    """Fraction of paths inside the radius-d ball at the fixed time T.

    The estimate uses the time-T marginal; the pathwise first-hitting times
    on the step grid are returned as a diagnostic histogram input.
    """
    if d <= 0:
        raise ConfigurationError("d must be > 0")
    if T == 0.0:
        hn = np.sqrt(_state_norm_sq(y0, m.alpha))
        p = 1.0 if hn <= d else 0.0
        return HittingReport(d=d, T=T, p_hat=p, ci_lo=p, ci_hi=p, n=n,
                             final_norms=np.full(n, hn),
                             first_hit_times=np.full(n, 0.0 if p else np.nan),
                             p_sup=p)
    ens = simulate_ensemble(
        y0, m, n, T, dt, seed, checkpoints=[T], observables=None,
        hit_radius=d, record_energy_cp=False,
    )
    lam = m.basis.eigenvalues
    sh = ens.final_v + m.alpha * ens.final_u
    final = np.sqrt((ens.final_u**2) @ lam + np.einsum("nm,nm->n", sh, sh))
    final = final[ens.valid]
    k = int(np.count_nonzero(final <= d))
    lo, hi = wilson_ci(k, final.size)
    first = ens.first_hit_time[ens.valid]
    return HittingReport(
        d=d, T=T, p_hat=k / final.size, ci_lo=lo, ci_hi=hi, n=final.size,
        final_norms=final, first_hit_times=first,
        p_sup=float(np.mean(~np.isnan(first))),
    )


def _state_norm_sq(y: State, alpha: float) -> float:
    lam = y.basis.eigenvalues
    sh = y.v + alpha * y.u
    return float(lam @ (y.u * y.u) + sh @ sh)


@dataclass(frozen=True)
class SplitReport:
    times: np.ndarray
    hs_norm: np.ndarray
    s: float
    max_first_half: float
    max_second_half: float
    reconstruction_error: float


def split_uz_hs(traj: Trajectory, m: ModelParams, s: float) -> SplitReport:
    """Sobolev-tail norms of the nonlinear remainder in u = v + z.

    v re-integrates the forced linear equation on the trajectory's own noise
    record; z = u - v then carries the nonlinearity and stays bounded in the
    smoother norm |xi_z|_{H^s}^2 = sum lambda^s (lambda z^2 + zdot^2) for
    0 < s < 1 - rho/2.
    """
    rho = m.nonlinearity.rho
    if not 0.0 < s < 1.0 - rho / 2.0:
        raise ConfigurationError(
            f"s must lie in (0, {1.0 - rho / 2.0:.3g}) for rho = {rho}, got {s}"
        )
    if traj.noise is None:
        raise ConfigurationError("trajectory carries no noise record")
    m_lin = replace(m, nonlinearity=_zero_spec())
    prop = linear_propagator(m.basis, m_lin, traj.dt)
    rec = StateRecorder(traj.n_steps, 1, m.basis.mode_count, stride=traj.stride)
    stepper = _Stepper(m_lin, prop, 1)
    # same start, same noise stream, nonlinearity switched off
    U = traj.u[0][None, :].copy()
    V = traj.v[0][None, :].copy()
    noise = traj.noise.source() if prop.has_noise else None
    _run_loop(stepper, U, V, traj.n_steps, noise, [rec], traj.t0)

    if rec.u.shape[0] != traj.u.shape[0]:
        raise ShapeError("stored grids of u and v runs differ")
    zu = traj.u - rec.u[:, 0, :]
    zv = traj.v - rec.v[:, 0, :]
    lam = m.basis.eigenvalues
    hs = (lam ** s) * (lam * zu**2 + zv**2)
    hs_norm = np.sqrt(hs.sum(axis=1))
    t_rel = traj.times - traj.t0
    half = t_rel[-1] / 2.0
    first = hs_norm[t_rel <= half]
    second = hs_norm[t_rel > half]
    recon = float(np.max(np.abs((rec.u[:, 0, :] + zu) - traj.u)))
    return SplitReport(
        times=traj.times.copy(),
        hs_norm=hs_norm,
        s=s,
        max_first_half=float(first.max()) if first.size else np.nan,
        max_second_half=float(second.max()) if second.size else np.nan,
        reconstruction_error=recon,
    )


def _zero_spec():
    from .model import NonlinearitySpec

    return NonlinearitySpec("zero")


def nonlinearity_lipschitz_check(m: ModelParams, u_samples: np.ndarray,
                                 v_samples: np.ndarray, s: float | None = None):
    """Ratio statistics for the smoother-norm Lipschitz bound on f.

    For sampled position fields u, v the bound reads
    ||f(u)-f(v)||_{L2} <= C (|u|_{H^{1-s}}^rho + |v|_{H^{1-s}}^rho + 1) |u-v|_{H^{1-s}}
    with s = (2-rho)/(2(rho+1)) by default.  Returns the per-pair ratios; the
    fitted constant is their maximum.
    """
    rho = m.nonlinearity.rho
    if s is None:
        s = (2.0 - rho) / (2.0 * (rho + 1.0))
    basis = m.basis
    lam = basis.eigenvalues
    u_samples = np.atleast_2d(u_samples)
    v_samples = np.atleast_2d(v_samples)
    fu = basis.to_nodal_batch(u_samples)
    fv = basis.to_nodal_batch(v_samples)
    df = m.nonlinearity.f(fu) - m.nonlinearity.f(fv)
    num = np.sqrt((df * df) @ basis.quadrature_weights)
    pow_ = lam ** (1.0 - s)
    nu_ = np.sqrt((u_samples**2) @ pow_)
    nv_ = np.sqrt((v_samples**2) @ pow_)
    dn = np.sqrt(((u_samples - v_samples) ** 2) @ pow_)
    denom = (nu_**rho + nv_**rho + 1.0) * dn
    ok = denom > 0
    return num[ok] / denom[ok]
