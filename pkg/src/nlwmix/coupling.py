"""Coupled pairs with pinned leading modes, contraction rates, drift bounds.

Two solutions are driven by the same noise: u solves the plain equation and
the companion v carries the extra term P_N [f(u) - f(v)], which replaces the
nonlinear force of v by that of u on the N leading modes.  Their difference
then obeys a damped wave equation whose only forcing lives in the unpinned
range, so for N large enough it contracts exponentially; the measured decay
rate of |xi_v - xi_u|_H is the central quantity here.

The projected mismatch a(t) = P_N(0, [f(u) - f(v)]) doubles as the drift one
would add to the noise to trade v's law for u's; its squared path integral
controls the total-variation distance between the path laws through

    |D z - D z~|_var <= 1/2 * ( ( E exp[6 max_{j<=N} b_j^{-1} int |a|^2 ] )^(1/2) - 1 )^(1/2),

valid as long as the exponential moment is finite (the empirical exponent is
reported as a sanity diagnostic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import StoppingParams, growth_functional
from .errors import ConfigurationError, NonDegeneracyError
from .integrator import (
    NoiseRecord,
    Trajectory,
    _EnsembleNoise,
    _primitive_into,
    _Stepper,
    linear_propagator,
    n_steps_for,
    propagator_matrices,
)
from .model import ModelParams, State
from .stats import line_fit

__all__ = [
    "CouplingParams",
    "FpReport",
    "FpRateFit",
    "NovikovBound",
    "simulate_fp_pair",
    "pair_difference_norms",
    "fp_pair_report",
    "fp_decay_rate",
    "girsanov_drift",
    "novikov_tv_bound",
    "fp_scan",
    "paired_start",
]

TAU_OFF = "off"
TAU_ENERGY = "energy"


@dataclass(frozen=True)
class CouplingParams:
    """Projection size, horizon and shared-noise seed of a coupled pair."""

    n_pinned: int
    T: float
    seed: int
    epsilon: float | None = None   # contraction-rate slack used in assertions
    tau_mode: str = TAU_OFF
    stopping: StoppingParams | None = None

    def validate(self, mode_count: int):
        if not 0 <= self.n_pinned <= mode_count:
            raise ConfigurationError(
                f"n_pinned must lie in [0, {mode_count}], got {self.n_pinned}"
            )
        if self.T <= 0:
            raise ConfigurationError("T must be > 0")
        if self.tau_mode not in (TAU_OFF, TAU_ENERGY):
            raise ConfigurationError(f"unknown tau_mode {self.tau_mode!r}")
        if self.tau_mode == TAU_ENERGY and self.stopping is None:
            raise ConfigurationError("tau_mode='energy' needs stopping params")


# ---------------------------------------------------------------------------
# pair stepping


class _PairRecorderBundle:
    """Collect per-step series from the stacked pair loop."""

    def __init__(self, m: ModelParams, n_steps: int, n_pairs: int, n_pinned: int,
                 record_energy: bool, state_stride: int | None):
        mm = m.basis.mode_count
        self.m = m
        self.lam = m.basis.eigenvalues
        self.alpha = m.alpha
        self.w = m.basis.quadrature_weights
        self.n_pinned = n_pinned
        self.diff_norm = np.full((n_steps + 1, n_pairs), np.nan)
        self.drift_sq = np.full((n_steps + 1, n_pairs), np.nan)
        self.record_energy = record_energy
        if record_energy:
            self.energy_u = np.full((n_steps + 1, n_pairs), np.nan)
            self.energy_v = np.full((n_steps + 1, n_pairs), np.nan)
            self._fbuf = None
        self.state_stride = state_stride
        if state_stride is not None:
            idx = list(range(0, n_steps + 1, state_stride))
            if idx[-1] != n_steps:
                idx.append(n_steps)
            self.state_indices = np.asarray(idx)
            self._where = {int(i): k for k, i in enumerate(idx)}
            self.times = np.full(len(idx), np.nan)
            self.u_states = np.full((len(idx), 2, n_pairs, mm), np.nan)
            self.v_states = np.full((len(idx), 2, n_pairs, mm), np.nan)

    def record(self, i, t, Uu, Vu, Uv, Vv, fu, fv, nod):
        du = Uv - Uu
        dv = Vv - Vu
        hn = (du * du) @ self.lam
        shifted = dv + self.alpha * du
        hn += np.einsum("nm,nm->n", shifted, shifted)
        self.diff_norm[i] = np.sqrt(hn)
        if self.n_pinned > 0 and fu is not None:
            d = fu[:, : self.n_pinned] - fv[:, : self.n_pinned]
            self.drift_sq[i] = np.einsum("nm,nm->n", d, d)
        else:
            self.drift_sq[i] = 0.0
        if self.record_energy:
            n = Uu.shape[0]
            hu = (Uu * Uu) @ self.lam
            su = Vu + self.alpha * Uu
            hu += np.einsum("nm,nm->n", su, su)
            hv = (Uv * Uv) @ self.lam
            sv = Vv + self.alpha * Uv
            hv += np.einsum("nm,nm->n", sv, sv)
            if self.m.nonlinearity.is_zero or nod is None:
                self.energy_u[i] = hu
                self.energy_v[i] = hv
            else:
                if self._fbuf is None or self._fbuf.shape != nod.shape:
                    self._fbuf = np.empty_like(nod)
                _primitive_into(self.m.nonlinearity, nod, self._fbuf)
                f_int = self._fbuf @ self.w
                self.energy_u[i] = hu + 2.0 * f_int[:n]
                self.energy_v[i] = hv + 2.0 * f_int[n:]
        if self.state_stride is not None:
            k = self._where.get(i)
            if k is not None:
                self.times[k] = t
                self.u_states[k, 0] = Uu
                self.u_states[k, 1] = Uv
                self.v_states[k, 0] = Vu
                self.v_states[k, 1] = Vv


def _run_pair_loop(m, prop, Uu, Vu, Uv, Vv, n_steps, noise, bundle, t0, pin):
    """Advance the coupled pair; rows [0:n] are u, rows [n:2n] are v."""
    n = Uu.shape[0]
    stepper = _Stepper(m, prop, 2 * n, needs_nodal=True)
    spec = m.nonlinearity
    half, half_h = stepper.half, stepper.half_h
    U = np.vstack([Uu, Uv])
    V = np.vstack([Vu, Vv])
    kick = np.empty_like(U)
    f_eff = np.empty_like(U)

    def force(Ucur):
        nod = stepper.nodal(Ucur)
        if spec.is_zero:
            kick[...] = half_h
            return nod, None, None
        if spec.kind == "sine_gordon":
            np.sin(nod, out=stepper._fnod)
            fval = stepper._fnod
        else:
            fval = spec.f(nod)
        if stepper._dim1:
            np.dot(fval, stepper.proj, out=f_eff)
            fm = f_eff
        else:
            fm = m.basis.to_modal_batch(fval)
        fu, fv = fm[:n], fm[n:]
        fu_c, fv_c = fu.copy(), fv.copy()
        # companion force: f(v) + pin * (f(u) - f(v))
        fv += (fu - fv) * pin
        np.multiply(fm, -half, out=kick)
        np.add(kick, half_h, out=kick)
        return nod, fu_c, fv_c

    dt = prop.dt
    from .integrator import NOISE_BLOCK

    nod, fu, fv = force(U)
    bundle.record(0, t0, U[:n], V[:n], U[n:], V[n:], fu, fv, nod)
    s = 0
    while s < n_steps:
        k = min(NOISE_BLOCK, n_steps - s)
        z_block = noise.block(k) if noise is not None else None
        for q in range(k):
            V += kick
            if z_block is not None:
                z = np.concatenate([z_block[q], z_block[q]], axis=0)
            else:
                z = None
            U, V = stepper.linear(U, V, z)
            nod, fu, fv = force(U)
            V += kick
            i = s + q + 1
            bundle.record(i, t0 + i * dt, U[:n], V[:n], U[n:], V[n:], fu, fv, nod)
        s += k
    return U, V


def paired_start(m: ModelParams, base_norm: float, delta: float, n_spread: int = 8):
    """Two states at weighted-norm distance exactly delta.

    The base state puts its norm in the first position mode; the offset is a
    velocity perturbation spread over the leading modes with weights 1/j, so
    it has content both inside and outside small projection ranges.
    """
    from .model import state_with_weighted_norm

    y = state_with_weighted_norm(m.basis, m.alpha, base_norm)
    k = min(n_spread, m.basis.mode_count)
    w = 1.0 / np.arange(1.0, k + 1.0)
    w *= delta / np.sqrt(w @ w)
    v2 = y.v.copy()
    v2[:k] += w
    y2 = State(t=y.t, u=y.u.copy(), v=v2, basis=m.basis)
    return y, y2


def _pair_batch(y: State, y2: State, m: ModelParams, cp: CouplingParams, dt: float,
                n_pairs: int, record_energy: bool, state_stride: int | None):
    cp.validate(m.basis.mode_count)
    n_steps = n_steps_for(cp.T, dt)
    prop = linear_propagator(m.basis, m, dt)
    pin = np.zeros(m.basis.mode_count)
    pin[: cp.n_pinned] = 1.0
    bundle = _PairRecorderBundle(
        m, n_steps, n_pairs, cp.n_pinned,
        record_energy=record_energy, state_stride=state_stride,
    )
    noise = (
        _EnsembleNoise(cp.seed, range(n_pairs), m.basis.mode_count)
        if prop.has_noise else None
    )
    Uu = np.repeat(y.u[None, :], n_pairs, axis=0)
    Vu = np.repeat(y.v[None, :], n_pairs, axis=0)
    Uv = np.repeat(y2.u[None, :], n_pairs, axis=0)
    Vv = np.repeat(y2.v[None, :], n_pairs, axis=0)
    _run_pair_loop(m, prop, Uu, Vu, Uv, Vv, n_steps, noise, bundle, y.t, pin)
    return bundle, n_steps


def simulate_fp_pair(y: State, y2: State, m: ModelParams, cp: CouplingParams,
                     dt: float, store_stride: int = 1):
    """Simulate the coupled pair on shared noise; returns (traj_u, traj_v).

    Both trajectories carry the same noise record.  Per-step energies are
    recorded so stopping times can be evaluated on either path.
    """
    bundle, n_steps = _pair_batch(
        y, y2, m, cp, dt, n_pairs=1, record_energy=True, state_stride=store_stride
    )
    record = NoiseRecord(seed=cp.seed, traj_index=0, n_modes=m.basis.mode_count)

    def mk(which: int, energy_series) -> Trajectory:
        return Trajectory(
            t0=y.t,
            dt=dt,
            n_steps=n_steps,
            stride=store_stride,
            times=bundle.times.copy(),
            u=bundle.u_states[:, which, 0, :].copy(),
            v=bundle.v_states[:, which, 0, :].copy(),
            energy=energy_series[:, 0].copy(),
            hnorm_sq=None,
            noise=record,
            model=m,
        )

    traj_u = mk(0, bundle.energy_u)
    traj_v = mk(1, bundle.energy_v)
    return traj_u, traj_v


def pair_difference_norms(traj_u: Trajectory, traj_v: Trajectory) -> np.ndarray:
    """Weighted-norm distance |xi_v - xi_u|_H on the pair's stored grid."""
    m = traj_u.model
    lam = m.basis.eigenvalues
    du = traj_v.u - traj_u.u
    dv = traj_v.v - traj_u.v
    sh = dv + m.alpha * du
    return np.sqrt((du * du) @ lam + np.einsum("km,km->k", sh, sh))


@dataclass(frozen=True)
class FpReport:
    """One coupled pair: difference-norm series plus fitted summary."""

    times: np.ndarray
    diff_norm: np.ndarray
    fitted_rate: float | None
    drift_l2: float
    tv_bound: float
    n_pinned: int
    seed: int

    def to_rows(self):
        """Series rows followed by one summary row (spec CSV layout)."""
        rows = [(t, d, "", "", "", "", "") for t, d in zip(self.times, self.diff_norm)]
        rows.append(("", "", self.fitted_rate if self.fitted_rate is not None else "",
                     self.drift_l2, self.tv_bound, self.n_pinned, self.seed))
        return rows

    CSV_HEADER = ("t", "diff_norm", "fitted_rate", "drift_l2", "tv_bound",
                  "n_pinned", "seed")


def fp_pair_report(y: State, y2: State, m: ModelParams, cp: CouplingParams,
                   dt: float, fit_window=None, series_stride: int = 1) -> FpReport:
    """Run one coupled pair and assemble its report.

    The drift integral uses the dense per-step mismatch the pair loop
    records; tv_bound is the single-sample change-of-measure bound (zero
    when no modes are pinned).
    """
    bundle, n_steps = _pair_batch(y, y2, m, cp, dt, n_pairs=1,
                                  record_energy=False, state_stride=None)
    times = y.t + dt * np.arange(n_steps + 1)
    diff = bundle.diff_norm[:, 0]
    if fit_window is None:
        fit_window = (cp.T / 4.0, cp.T)
    fit = fp_decay_rate(diff, times - y.t, fit_window)
    drift_l2 = float(np.trapezoid(bundle.drift_sq[:, 0], times))
    if cp.n_pinned > 0:
        tv = novikov_tv_bound([drift_l2], m.b_vec, cp.n_pinned).bound
    else:
        tv = 0.0
    return FpReport(
        times=times[::series_stride].copy(),
        diff_norm=diff[::series_stride].copy(),
        fitted_rate=fit.rate,
        drift_l2=drift_l2,
        tv_bound=float(tv),
        n_pinned=cp.n_pinned,
        seed=cp.seed,
    )


# ---------------------------------------------------------------------------
# rate fitting and drift bounds


@dataclass(frozen=True)
class FpRateFit:
    rate: float | None
    r2: float
    n_points: int
    degenerate: bool


def fp_decay_rate(diff_norm, times, window) -> FpRateFit:
    """Least-squares decay rate of the squared difference norm.

    Fits log |xi_v - xi_u|^2 over the window and reports the negated slope;
    a series that touches zero (identical starts) is flagged degenerate.
    """
    diff_norm = np.asarray(diff_norm, dtype=float)
    times = np.asarray(times, dtype=float)
    t0, t1 = window
    mask = (times >= t0) & (times <= t1)
    d = diff_norm[mask]
    if d.size < 2:
        raise ConfigurationError("fit window contains fewer than two points")
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        return FpRateFit(rate=None, r2=0.0, n_points=int(d.size), degenerate=True)
    fit = line_fit(times[mask], 2.0 * np.log(d))
    return FpRateFit(rate=-fit.slope, r2=fit.r2, n_points=fit.n, degenerate=False)


@dataclass(frozen=True)
class GirsanovDrift:
    times: np.ndarray
    a: np.ndarray          # (k, N) projected mismatch in the velocity modes
    drift_l2: float
    tau_tilde: float | None


def girsanov_drift(traj_u: Trajectory, traj_v: Trajectory, m: ModelParams,
                   n_pinned: int, tau_mode: str = TAU_OFF,
                   stopping: StoppingParams | None = None) -> GirsanovDrift:
    """Projected nonlinearity mismatch along a stored pair and its L2 integral.

    With tau_mode='energy' the drift is switched off after the first growth
    envelope crossing of either path (evaluated from their energy series).
    """
    if traj_u.times.shape != traj_v.times.shape or not np.allclose(traj_u.times, traj_v.times):
        raise ConfigurationError("trajectories do not share a time grid")
    if tau_mode not in (TAU_OFF, TAU_ENERGY):
        raise ConfigurationError(f"unknown tau_mode {tau_mode!r}")
    basis = m.basis
    spec = m.nonlinearity
    times = traj_u.times
    if n_pinned == 0 or spec.is_zero:
        a = np.zeros((times.size, n_pinned))
        return GirsanovDrift(times=times.copy(), a=a, drift_l2=0.0, tau_tilde=None)

    fu = basis.to_modal_batch(spec.f(basis.to_nodal_batch(traj_u.u)))
    fv = basis.to_modal_batch(spec.f(basis.to_nodal_batch(traj_v.u)))
    a = (fu - fv)[:, :n_pinned]

    tau = None
    if tau_mode == TAU_ENERGY:
        if stopping is None:
            raise ConfigurationError("tau_mode='energy' needs stopping params")
        from .energy import stopping_time

        taus = [stopping_time(tr, stopping, m) for tr in (traj_u, traj_v)]
        taus = [t for t in taus if t is not None]
        if taus:
            tau = min(taus)
            a = a.copy()
            a[times > tau] = 0.0
    sq = np.einsum("km,km->k", a, a)
    drift_l2 = float(np.trapezoid(sq, times))
    return GirsanovDrift(times=times.copy(), a=a, drift_l2=drift_l2, tau_tilde=tau)


@dataclass(frozen=True)
class NovikovBound:
    bound: float
    exponent_max: float
    mean_exp: float
    n_samples: int


def novikov_tv_bound(drift_l2_samples, b_vec, n_pinned: int) -> NovikovBound:
    """Total-variation bound from Monte Carlo samples of the drift integral.

    bound = 1/2 * ( (E exp[6 max_{j<=N} b_j^{-1} * int |a|^2])^(1/2) - 1 )^(1/2).
    Requires strictly positive noise amplitudes on the pinned modes.
    """
    if n_pinned < 1:
        raise NonDegeneracyError("the bound needs at least one pinned mode")
    b = np.asarray(b_vec, dtype=float)[:n_pinned]
    if np.any(b <= 0.0):
        raise NonDegeneracyError(
            "zero noise amplitude among the pinned modes makes the bound vacuous"
        )
    samples = np.asarray(drift_l2_samples, dtype=float)
    if samples.size == 0:
        raise ConfigurationError("need at least one drift sample")
    scale = 6.0 * float(np.max(1.0 / b))
    exponents = scale * samples
    with np.errstate(over="ignore"):
        mean_exp = float(np.mean(np.exp(exponents)))
    inner = np.sqrt(mean_exp) - 1.0
    bound = 0.5 * np.sqrt(max(inner, 0.0))
    return NovikovBound(
        bound=float(bound),
        exponent_max=float(np.max(exponents)),
        mean_exp=mean_exp,
        n_samples=int(samples.size),
    )


# ---------------------------------------------------------------------------
# projection scan


@dataclass(frozen=True)
class FpScanRow:
    regime: str
    n_pinned: int
    n_pairs: int
    rate_median: float
    rate_min: float
    rate_max: float
    r2_min: float
    frac_success: float
    frac_no_decay: float
    tail_proj_norm: float


@dataclass(frozen=True)
class FpScanReport:
    rows: list
    n_star: int | None
    rate_threshold: float
    r2_threshold: float
    fit_window: tuple
    diff_series: dict      # n_pinned -> (times, diff_norm matrix) for plotting


def fp_scan(
    m: ModelParams,
    dt: float,
    n_list,
    n_pairs: int = 32,
    pair_delta: float = 0.5,
    base_norm: float = 1.0,
    T: float = 20.0,
    seed: int = 0,
    fit_window: tuple | None = None,
    fail_norm: float = 5.0,
    fail_T: float | None = None,
    rate_threshold: float | None = None,
    r2_threshold: float = 0.9,
    keep_series_every: int = 50,
) -> FpScanReport:
    """Scan the projection size and locate the empirical contraction threshold.

    For each N the same batch of shared-noise pairs is integrated and the
    squared-norm decay rate fitted per pair over the window.  N* is the
    smallest listed N from which on every pair contracts at the threshold
    rate with an acceptable fit.  A separate large-amplitude probe at N = 0
    records the regime where contraction fails.
    """
    if rate_threshold is None:
        rate_threshold = m.alpha / 2.0
    if fit_window is None:
        fit_window = (T / 4.0, T)
    if fail_T is None:
        fail_T = T

    n_list = sorted(set(int(n) for n in n_list))
    y, y2 = paired_start(m, base_norm, pair_delta)
    rows = []
    success = {}
    series = {}
    tail_norms = _pinned_tail_norms(m, fail_norm, n_list, T)
    for n_pin in n_list:
        cp = CouplingParams(n_pinned=n_pin, T=T, seed=seed)
        bundle, n_steps = _pair_batch(y, y2, m, cp, dt, n_pairs,
                                      record_energy=False, state_stride=None)
        times = y.t + dt * np.arange(n_steps + 1)
        rates, r2s, no_decay = _fit_batch(bundle.diff_norm, times, fit_window)
        ok = (rates >= rate_threshold) & (r2s >= r2_threshold) & ~no_decay
        success[n_pin] = bool(ok.all())
        rows.append(FpScanRow(
            regime="contract",
            n_pinned=n_pin,
            n_pairs=n_pairs,
            rate_median=float(np.median(rates)),
            rate_min=float(np.min(rates)),
            rate_max=float(np.max(rates)),
            r2_min=float(np.min(r2s)),
            frac_success=float(np.mean(ok)),
            frac_no_decay=float(np.mean(no_decay)),
            tail_proj_norm=tail_norms[n_pin],
        ))
        series[n_pin] = (times[::keep_series_every],
                         bundle.diff_norm[::keep_series_every].copy())

    # large-amplitude probe with no pinned modes
    yf, yf2 = paired_start(m, fail_norm, pair_delta)
    cp = CouplingParams(n_pinned=0, T=fail_T, seed=seed + 1)
    bundle, n_steps = _pair_batch(yf, yf2, m, cp, dt, n_pairs,
                                  record_energy=False, state_stride=None)
    times = yf.t + dt * np.arange(n_steps + 1)
    f_window = (fail_T / 4.0, fail_T)
    rates, r2s, no_decay = _fit_batch(bundle.diff_norm, times, f_window)
    ok = (rates >= rate_threshold) & (r2s >= r2_threshold) & ~no_decay
    rows.append(FpScanRow(
        regime="fail-probe",
        n_pinned=0,
        n_pairs=n_pairs,
        rate_median=float(np.median(rates)),
        rate_min=float(np.min(rates)),
        rate_max=float(np.max(rates)),
        r2_min=float(np.min(r2s)),
        frac_success=float(np.mean(ok)),
        frac_no_decay=float(np.mean(no_decay)),
        tail_proj_norm=tail_norms[0] if 0 in tail_norms else np.nan,
    ))
    series["fail"] = (times[::keep_series_every],
                      bundle.diff_norm[::keep_series_every].copy())

    n_star = None
    for n_pin in n_list:
        if all(success[k] for k in n_list if k >= n_pin):
            n_star = n_pin
            break
    return FpScanReport(
        rows=rows,
        n_star=n_star,
        rate_threshold=rate_threshold,
        r2_threshold=r2_threshold,
        fit_window=fit_window,
        diff_series=series,
    )


def _fit_batch(diff_norm, times, window):
    n_pairs = diff_norm.shape[1]
    rates = np.empty(n_pairs)
    r2s = np.empty(n_pairs)
    no_decay = np.zeros(n_pairs, dtype=bool)
    t0, t1 = window
    mask = (times >= t0) & (times <= t1)
    for i in range(n_pairs):
        fit = fp_decay_rate(diff_norm[:, i], times, window)
        if fit.degenerate:
            rates[i] = np.nan
            r2s[i] = 0.0
            no_decay[i] = True
            continue
        rates[i] = fit.rate
        r2s[i] = fit.r2
        col = diff_norm[mask, i]
        no_decay[i] = col[-1] >= col[0]
    return rates, r2s, no_decay


def _pinned_tail_norms(m: ModelParams, start_norm: float, n_list, T: float,
                       n_times: int = 64) -> dict:
    """max_t ||(I - P_N) f(u_lin(t))|| for the homogeneous linear flow.

    The linear flow is propagated in closed form; the norms should decay to
    zero as N grows, which is the sanity check behind truncated-noise runs.
    """
    from .model import state_with_weighted_norm

    basis = m.basis
    spec = m.nonlinearity
    y = state_with_weighted_norm(basis, m.alpha, start_norm)
    times = np.linspace(0.0, T, n_times)
    u_t = np.empty((n_times, basis.mode_count))
    for k, t in enumerate(times):
        phi = propagator_matrices(basis.eigenvalues, m.gamma, t)
        u_t[k] = phi[:, 0, 0] * y.u + phi[:, 0, 1] * y.v
    if spec.is_zero:
        return {n: 0.0 for n in set(list(n_list) + [0])}
    f_mod = basis.to_modal_batch(spec.f(basis.to_nodal_batch(u_t)))
    out = {}
    for n_pin in set(list(n_list) + [0]):
        tail = f_mod[:, n_pin:]
        out[n_pin] = float(np.sqrt(np.max(np.einsum("km,km->k", tail, tail))))
    return out
