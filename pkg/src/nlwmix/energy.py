"""Lyapunov machinery: weighted norm, energy, growth envelope, tail diagnostics.

The weighted phase-space norm is |y|^2 = ||grad u||^2 + ||v + alpha*u||^2;
the energy adds twice the integrated primitive of the nonlinearity.  The
growth functional

    G_y(t) = |E(y(t))| + alpha * int_0^t |E(y(s))| ds

grows at most linearly along typical paths; the stopping time triggers when
it escapes the linear envelope G_y(0) + (L + M) t + r.  The tail statistic

    sup_t [ E(t) + int_0^t (alpha E - K) ds ] - E(0)

exceeds r with probability at most exp(-beta r), beta = alpha / (8 sup_j b_j^2);
the Monte Carlo tail report checks that bound empirically with Wilson bands.
K is not known in closed form, so it is calibrated as a high quantile of the
observed per-step drift and then frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ConfigurationError
from .integrator import (
    EnergySeriesRecorder,
    Trajectory,
    _EnsembleNoise,
    _run_loop,
    _Stepper,
    linear_propagator,
    n_steps_for,
)
from .model import ModelParams, State, eval_nonlinearity
from .stats import wilson_ci

__all__ = [
    "StoppingParams",
    "TailReport",
    "h_norm_sq",
    "energy",
    "growth_functional",
    "stopping_time",
    "exp_moment_series",
    "supermartingale_tail",
    "calibrate_k_drift",
]


def h_norm_sq(s: State, alpha: float) -> float:
    """Weighted squared norm: sum lambda_j u_j^2 + sum (v_j + alpha u_j)^2."""
    if alpha < 0.0:
        raise ConfigurationError("alpha must be >= 0")
    lam = s.basis.eigenvalues
    shifted = s.v + alpha * s.u
    return float(lam @ (s.u * s.u) + shifted @ shifted)


def energy(s: State, m: ModelParams) -> float:
    """E(y) = |y|_H^2 + 2 * int_D F(u) dx."""
    _, f_integral = eval_nonlinearity(m.nonlinearity, s.u, m.basis, t=s.t)
    return h_norm_sq(s, m.alpha) + 2.0 * f_integral


def growth_functional(traj: Trajectory, m: ModelParams) -> np.ndarray:
    """G(t) = |E(t)| + alpha * int_0^t |E| ds on the trajectory's step grid."""
    if traj.energy is None:
        raise ConfigurationError("trajectory was simulated without energy recording")
    abs_e = np.abs(traj.energy)
    integral = cumulative_trapezoid(abs_e, dx=traj.dt, initial=0.0)
    return abs_e + m.alpha * integral


@dataclass(frozen=True)
class StoppingParams:
    """Constants of the linear growth envelope and the tail bound.

    beta is always derived from the model (alpha and the largest noise
    amplitude), never configured.  l_rate follows the recipe
    L = K + 4 alpha C with C the integrated dissipativity constant.
    """

    k_drift: float
    l_rate: float
    m_rate: float
    r: float
    beta: float

    def __post_init__(self):
        if not (self.l_rate > 0 and self.m_rate > 0 and self.r > 0):
            raise ConfigurationError("L, M and r must all be positive")

    @classmethod
    def from_model(
        cls,
        m: ModelParams,
        k_drift: float,
        m_rate: float | None = None,
        r: float | None = None,
    ) -> "StoppingParams":
        b = m.b_vec
        sup_b2 = float(np.max(b * b))
        beta = np.inf if sup_b2 == 0.0 else m.alpha / (8.0 * sup_b2)
        c_int = m.c_diss_integrated
        if m_rate is None:
            m_rate = 2.0 / beta if np.isfinite(beta) else 1.0
            m_rate = max(m_rate, 1e-9)
        if r is None:
            r = (5.0 / beta if np.isfinite(beta) else 0.0) + 4.0 * c_int
            r = max(r, 1e-9)
        return cls(
            k_drift=k_drift,
            l_rate=k_drift + 4.0 * m.alpha * c_int,
            m_rate=m_rate,
            r=r,
            beta=beta,
        )


def stopping_time(traj: Trajectory, p: StoppingParams, m: ModelParams) -> float | None:
    """First grid time where G(t) >= G(0) + (L + M) t + r, if any."""
    g = growth_functional(traj, m)
    t = traj.step_times - traj.t0
    crossed = g >= g[0] + (p.l_rate + p.m_rate) * t + p.r
    idx = np.flatnonzero(crossed)
    if idx.size == 0:
        return None
    return float(traj.step_times[idx[0]])


def tail_statistic(energy_series: np.ndarray, dt: float, alpha: float, k_drift: float):
    """sup_t [E + int (alpha E - K)] - E(0) evaluated on the step grid.

    Accepts (n_steps+1,) or (n_steps+1, n) arrays; returns a scalar or (n,).
    """
    e = np.asarray(energy_series, dtype=float)
    t = dt * np.arange(e.shape[0])
    integral = cumulative_trapezoid(alpha * e, dx=dt, initial=0.0, axis=0)
    stat = e + integral - (k_drift * t)[(...,) + (None,) * (e.ndim - 1)]
    return (stat - e[0]).max(axis=0)


def calibrate_k_drift(
    m: ModelParams,
    dt: float,
    n_paths: int = 128,
    T: float = 20.0,
    seed: int = 0,
    quantile: float = 0.99,
    y0: State | None = None,
) -> float:
    """Estimate the drift constant K from a calibration ensemble.

    K is the given quantile of the observed per-step increments of
    E + alpha * int |E|, which dominates the drift of the tail statistic.
    """
    from .model import state_with_weighted_norm

    if y0 is None:
        y0 = state_with_weighted_norm(m.basis, m.alpha, 0.0)
    n_steps = n_steps_for(T, dt)
    prop = linear_propagator(m.basis, m, dt)
    rec = EnergySeriesRecorder(m, n_steps, n_paths)
    stepper = _Stepper(m, prop, n_paths, needs_nodal=rec.needs_nodal)
    U = np.repeat(y0.u[None, :], n_paths, axis=0)
    V = np.repeat(y0.v[None, :], n_paths, axis=0)
    noise = _EnsembleNoise(seed, range(n_paths), m.basis.mode_count) if prop.has_noise else None
    _run_loop(stepper, U, V, n_steps, noise, [rec], y0.t)
    e = rec.energy
    g = e + m.alpha * cumulative_trapezoid(np.abs(e), dx=dt, initial=0.0, axis=0)
    drifts = np.diff(g, axis=0) / dt
    return float(np.quantile(drifts, quantile))


@dataclass(frozen=True)
class ExpMomentSeries:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    kappa: float

    @property
    def reference_level(self) -> float:
        """3x the time-median, the stability reference the checks use."""
        return 3.0 * float(np.median(self.mean))

    def to_rows(self):
        ref = self.reference_level
        return [
            (t, v, v - 1.96 * s, v + 1.96 * s, ref)
            for t, v, s in zip(self.times, self.mean, self.se)
        ]


def exp_moment_series(ens, kappa: float, m: ModelParams) -> ExpMomentSeries:
    """Empirical mean of exp(kappa * E(y(t))) at the ensemble checkpoints.

    Requires kappa * B <= alpha / 2 (B the summed squared noise amplitudes),
    the smallness condition under which the moment stays bounded.
    """
    if kappa < 0.0:
        raise ConfigurationError("kappa must be >= 0")
    b_total = m.noise_energy
    if kappa * b_total > 0.5 * m.alpha + 1e-15:
        raise ConfigurationError(
            f"kappa*B = {kappa * b_total:.6g} violates the smallness condition "
            f"kappa*B <= alpha/2 = {0.5 * m.alpha:.6g}"
        )
    e = ens.energy_cp  # (n_cp, n)
    if e is None:
        raise ConfigurationError("ensemble carries no checkpoint energies")
    vals = np.exp(kappa * e)
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / np.sqrt(vals.shape[1])
    return ExpMomentSeries(times=ens.checkpoints.copy(), mean=mean, se=se, kappa=kappa)


@dataclass(frozen=True)
class TailReport:
    """Empirical exceedance of the tail statistic against exp(-beta r)."""

    r_grid: np.ndarray
    empirical: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    bound: np.ndarray
    passed: np.ndarray
    n_paths: int
    beta: float
    tolerance: float

    def to_rows(self):
        return list(zip(self.r_grid, self.empirical, self.ci_lo, self.ci_hi, self.bound))


def supermartingale_tail(
    ens, p: StoppingParams, m: ModelParams, r_grid, tolerance: float = 0.0
) -> TailReport:
    """Compare per-path sup-statistic exceedance frequencies with exp(-beta r).

    The ensemble must have been simulated with tail tracking at the same
    drift constant K; a pass at level r means the Wilson upper limit stays
    below bound * (1 + tolerance).
    """
    stat = getattr(ens, "tail_sup", None)
    if stat is None:
        raise ConfigurationError("ensemble was simulated without tail tracking")
    if not np.isclose(ens.tail_k, p.k_drift, rtol=1e-12, atol=0.0):
        raise ConfigurationError(
            f"ensemble tail statistic used K={ens.tail_k}, stopping params have K={p.k_drift}"
        )
    r_grid = np.asarray(r_grid, dtype=float)
    n = stat.size
    emp = np.empty(r_grid.size)
    lo = np.empty(r_grid.size)
    hi = np.empty(r_grid.size)
    for i, r in enumerate(r_grid):
        k = int(np.count_nonzero(stat >= r))
        emp[i] = k / n
        lo[i], hi[i] = wilson_ci(k, n)
    bound = np.exp(-p.beta * r_grid)
    passed = hi <= bound * (1.0 + tolerance)
    return TailReport(
        r_grid=r_grid, empirical=emp, ci_lo=lo, ci_hi=hi, bound=bound,
        passed=passed, n_paths=n, beta=p.beta, tolerance=tolerance,
    )
