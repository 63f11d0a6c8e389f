"""Time discretization: exact stochastic linear propagation + Strang kicks.

Each mode of the first-order system

    d[u_j, v_j] = A_j [u_j, v_j] dt + [0, b_j] dW_j,   A_j = [[0, 1], [-lambda_j, -gamma]]

is propagated exactly over a step: deterministic part with the closed-form
matrix exponential Phi_j(dt), stochastic part with an exact Gaussian draw of
covariance Sigma_j(dt) = int_0^dt exp(A s) Q exp(A^T s) ds, Q = diag(0, b_j^2).
The nonlinearity enters through half-step velocity kicks on both sides
(Strang composition), so the scheme is order 2 deterministically and exact
for the linear equation at any step size.

Kicks change only the velocity, so the nonlinearity evaluated at the end of
a step is still valid for the first kick of the next one; each step costs a
single pseudospectral evaluation.

Noise is counter-based: trajectory i of a run with seed s draws from a
Philox stream keyed by (s, i), so ensembles are reproducible regardless of
evaluation order and coupled pairs can share a stream exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .basis import Basis
from .errors import ConfigurationError, DivergenceError
from .model import SINE_GORDON, ModelParams, State

__all__ = [
    "LinearPropagator",
    "NoiseRecord",
    "Trajectory",
    "linear_propagator",
    "propagator_matrices",
    "noise_covariances",
    "step",
    "simulate_path",
]

# steps per noise-generation block; any value yields the same stream
NOISE_BLOCK = 256
# steps between divergence checks inside the hot loop
DIVERGENCE_CHECK_EVERY = 16

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# linear propagator


def _stable_cosine_pair(delta: np.ndarray, t: float):
    """Return c = cos(sqrt(delta) t) and sigma = sin(sqrt(delta) t)/sqrt(delta).

    Valid for delta of any sign (hyperbolic branch for delta < 0) with a
    series fallback near delta = 0.
    """
    delta = np.asarray(delta, dtype=float)
    c = np.empty_like(delta)
    sig = np.empty_like(delta)
    x = delta * t * t
    small = np.abs(x) < 1e-8
    osc = (delta > 0) & ~small
    hyp = (delta < 0) & ~small

    r = np.sqrt(delta[osc]) * t
    c[osc] = np.cos(r)
    sig[osc] = np.sin(r) / np.sqrt(delta[osc])

    r = np.sqrt(-delta[hyp]) * t
    c[hyp] = np.cosh(r)
    sig[hyp] = np.sinh(r) / np.sqrt(-delta[hyp])

    xs = x[small]
    c[small] = 1.0 - xs / 2.0 + xs * xs / 24.0
    sig[small] = t * (1.0 - xs / 6.0 + xs * xs / 120.0)
    return c, sig


def propagator_matrices(eigenvalues: np.ndarray, gamma: float, t: float) -> np.ndarray:
    """Closed-form exp(A_j t) for every mode, shape (M, 2, 2)."""
    lam = np.asarray(eigenvalues, dtype=float)
    delta = lam - gamma * gamma / 4.0
    c, sig = _stable_cosine_pair(delta, t)
    e = np.exp(-gamma * t / 2.0)
    half_g = gamma / 2.0
    out = np.empty((lam.shape[0], 2, 2))
    out[:, 0, 0] = e * (c + half_g * sig)
    out[:, 0, 1] = e * sig
    out[:, 1, 0] = -e * lam * sig
    out[:, 1, 1] = e * (c - half_g * sig)
    return out


def noise_covariances(
    eigenvalues: np.ndarray, gamma: float, b: np.ndarray, t: float
) -> np.ndarray:
    """Exact per-mode covariance of the stochastic convolution over one step.

    Evaluated with the block matrix-exponential identity: for
    B = [[-A, Q], [0, A^T]] one has exp(B t) = [[*, G], [0, F]] with
    Sigma(t) = F^T G.  Stable in every damping regime; the tests cross-check
    it against direct quadrature of the convolution integral.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros((lam.shape[0], 2, 2))
    for j in range(lam.shape[0]):
        if b[j] == 0.0:
            continue
        a = np.array([[0.0, 1.0], [-lam[j], -gamma]])
        q = np.array([[0.0, 0.0], [0.0, b[j] ** 2]])
        blk = np.zeros((4, 4))
        blk[:2, :2] = -a
        blk[:2, 2:] = q
        blk[2:, 2:] = a.T
        e = expm(blk * t)
        sigma = e[2:, 2:].T @ e[:2, 2:]
        out[j] = 0.5 * (sigma + sigma.T)
    return out


@dataclass(frozen=True)
class LinearPropagator:
    """Per-mode exact propagation data for one step size."""

    dt: float
    phi: np.ndarray     # (M, 2, 2) deterministic matrices
    sigma: np.ndarray   # (M, 2, 2) noise covariance per step
    chol: np.ndarray    # (M, 2, 2) lower Cholesky factors of sigma

    @property
    def has_noise(self) -> bool:
        return bool(np.any(self.chol != 0.0))


def linear_propagator(basis: Basis, m: ModelParams, dt: float) -> LinearPropagator:
    if dt <= 0.0:
        raise ConfigurationError(f"dt must be > 0, got {dt}")
    phi = propagator_matrices(basis.eigenvalues, m.gamma, dt)
    sigma = noise_covariances(basis.eigenvalues, m.gamma, m.b_vec, dt)
    chol = _cholesky_2x2(sigma)
    return LinearPropagator(dt=dt, phi=phi, sigma=sigma, chol=chol)


def _cholesky_2x2(sigma: np.ndarray) -> np.ndarray:
    out = np.zeros_like(sigma)
    l11 = np.sqrt(np.maximum(sigma[:, 0, 0], 0.0))
    nz = l11 > 0.0
    out[:, 0, 0] = l11
    out[nz, 1, 0] = sigma[nz, 0, 1] / l11[nz]
    out[:, 1, 1] = np.sqrt(np.maximum(sigma[:, 1, 1] - out[:, 1, 0] ** 2, 0.0))
    return out


# ---------------------------------------------------------------------------
# noise streams


def _philox(seed: int, traj_index: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, traj_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoiseRecord:
    """Handle to the exact Gaussian increments that drove a trajectory.

    It stores only the stream key; increments regenerate on demand,
    bit-identically, so replaying a trajectory or re-integrating a different
    equation on the same noise costs no storage.  Increments are standard
    normal pairs per (step, mode); the integrator maps them through the step
    covariance factor.
    """

    seed: int
    traj_index: int
    n_modes: int

    def normals(self, n_steps: int) -> np.ndarray:
        """Standard-normal increments for steps [0, n_steps), shape (n_steps, 2, M)."""
        gen = _philox(self.seed, self.traj_index)
        flat = gen.standard_normal(n_steps * 2 * self.n_modes)
        return flat.reshape(n_steps, 2, self.n_modes)

    def source(self) -> "_EnsembleNoise":
        return _EnsembleNoise(self.seed, [self.traj_index], self.n_modes)


class _EnsembleNoise:
    """Per-trajectory Philox streams consumed sequentially in blocks."""

    def __init__(self, seed: int, traj_indices, n_modes: int):
        self.n_modes = n_modes
        self._gens = [_philox(seed, i) for i in traj_indices]

    def block(self, n_steps: int) -> np.ndarray:
        """Next (n_steps, n, 2, M) block of standard normals."""
        n = len(self._gens)
        m = self.n_modes
        out = np.empty((n_steps, n, 2, m))
        for i, gen in enumerate(self._gens):
            out[:, i] = gen.standard_normal(n_steps * 2 * m).reshape(n_steps, 2, m)
        return out


class _ExplicitNoise:
    """Noise supplied by the caller (tests, scheme cross-checks)."""

    def __init__(self, normals: np.ndarray):
        arr = np.asarray(normals, dtype=float)
        if arr.ndim == 3:  # (n_steps, 2, M) -> single row
            arr = arr[:, None, :, :]
        self._arr = arr
        self._pos = 0

    def block(self, n_steps: int) -> np.ndarray:
        out = self._arr[self._pos: self._pos + n_steps]
        if out.shape[0] != n_steps:
            raise ConfigurationError("explicit noise array shorter than the run")
        self._pos += n_steps
        return out


# ---------------------------------------------------------------------------
# core stepping engine


class _Stepper:
    """Vectorized Strang stepping over an ensemble of modal states.

    Rows of U, V are independent trajectories.  force() returns the cached
    kick increment half*(h - P f(u)) alongside the nodal field it came from.
    """

    def __init__(self, m: ModelParams, prop: LinearPropagator, n_rows: int,
                 needs_nodal: bool = False):
        basis = m.basis
        self.m = m
        self.prop = prop
        self.spec = m.nonlinearity
        self.basis = basis
        self.needs_nodal = needs_nodal or not self.spec.is_zero
        self._dim1 = basis.dim == 1
        if self._dim1:
            self.eval_t = np.ascontiguousarray(basis._axis_eval.T)
            self.proj = basis._axis_eval * basis.axis_weight
        self.half = 0.5 * prop.dt
        self.half_h = self.half * m.h
        p = prop.phi
        self.a11, self.a12 = p[:, 0, 0].copy(), p[:, 0, 1].copy()
        self.a21, self.a22 = p[:, 1, 0].copy(), p[:, 1, 1].copy()
        c = prop.chol
        self.l11, self.l21, self.l22 = c[:, 0, 0].copy(), c[:, 1, 0].copy(), c[:, 1, 1].copy()
        mm = basis.mode_count
        self._bufU = np.empty((n_rows, mm))
        self._bufV = np.empty((n_rows, mm))
        self._nod = np.empty((n_rows, basis.grid_size))
        self._fnod = np.empty((n_rows, basis.grid_size))
        self._kick = np.zeros((n_rows, mm))

    def nodal(self, U: np.ndarray) -> np.ndarray:
        if self._dim1:
            np.dot(U, self.eval_t, out=self._nod)
            return self._nod
        return self.basis.to_nodal_batch(U)

    def force(self, U: np.ndarray):
        """Return (nodal, kick) with kick = half*(h - P f(u)); kick is a reused buffer."""
        if self.spec.is_zero:
            nod = self.nodal(U) if self.needs_nodal else None
            return nod, self.half_h
        nod = self.nodal(U)
        if self.spec.kind == SINE_GORDON:
            np.sin(nod, out=self._fnod)
            fv = self._fnod
        else:
            fv = self.spec.f(nod)
        if self._dim1:
            np.dot(fv, self.proj, out=self._kick)
        else:
            self._kick = self.basis.to_modal_batch(fv)
        self._kick *= -self.half
        self._kick += self.half_h
        return nod, self._kick

    def linear(self, U: np.ndarray, V: np.ndarray, z: np.ndarray | None):
        bu, bv = self._bufU, self._bufV
        np.multiply(U, self.a11, out=bu)
        bu += self.a12 * V
        np.multiply(U, self.a21, out=bv)
        bv += self.a22 * V
        if z is not None:
            bu += self.l11 * z[:, 0]
            bv += self.l21 * z[:, 0]
            bv += self.l22 * z[:, 1]
        # old arrays become the next step's scratch space
        self._bufU, self._bufV = U, V
        return bu, bv


def _needs_nodal(recorders) -> bool:
    return any(getattr(r, "needs_nodal", False) for r in recorders)


def _run_loop(stepper: _Stepper, U, V, n_steps, noise, recorders, t0,
              check_every=DIVERGENCE_CHECK_EVERY):
    """Advance (U, V) over n_steps; returns (U, V, diverged_at).

    diverged_at[i] = -1 for clean rows, else the step at which row i was
    detected non-finite (granularity check_every).  Stops early only when
    every row has diverged.
    """
    dt = stepper.prop.dt
    diverged_at = np.full(U.shape[0], -1, dtype=int)
    # overflow of diverging rows is detected and flagged, not raised
    with np.errstate(over="ignore", invalid="ignore"):
        nod, kick = stepper.force(U)
        for rec in recorders:
            rec.record(0, t0, U, V, nod)
        s = 0
        while s < n_steps:
            k = min(NOISE_BLOCK, n_steps - s)
            z_block = noise.block(k) if noise is not None else None
            for q in range(k):
                V += kick
                z = z_block[q] if z_block is not None else None
                U, V = stepper.linear(U, V, z)
                nod, kick = stepper.force(U)
                V += kick
                i = s + q + 1
                for rec in recorders:
                    rec.record(i, t0 + i * dt, U, V, nod)
                if i % check_every == 0 or i == n_steps:
                    bad = ~np.isfinite(U).all(axis=1)
                    if bad.any():
                        fresh = bad & (diverged_at < 0)
                        diverged_at[fresh] = i
                        if bad.all():
                            return U, V, diverged_at
            s += k
    return U, V, diverged_at


# ---------------------------------------------------------------------------
# recorders


class StateRecorder:
    """Store modal states every `stride` steps plus the final one."""

    needs_nodal = False

    def __init__(self, n_steps: int, n_rows: int, n_modes: int, stride: int = 1):
        self.stride = max(1, int(stride))
        idx = list(range(0, n_steps + 1, self.stride))
        if idx[-1] != n_steps:
            idx.append(n_steps)
        self.indices = np.asarray(idx)
        self._where = {int(i): k for k, i in enumerate(idx)}
        self.u = np.full((len(idx), n_rows, n_modes), np.nan)
        self.v = np.full((len(idx), n_rows, n_modes), np.nan)
        self.times = np.full(len(idx), np.nan)

    def record(self, i, t, U, V, nodal):
        k = self._where.get(i)
        if k is not None:
            self.u[k] = U
            self.v[k] = V
            self.times[k] = t


class EnergySeriesRecorder:
    """Per-step weighted norm and energy for every row.

    energy = |y|_H^2 + 2 * int F(u); the primitive integral reuses the nodal
    field the stepper just evaluated.
    """

    def __init__(self, m: ModelParams, n_steps: int, n_rows: int):
        self.m = m
        self.lam = m.basis.eigenvalues
        self.alpha = m.alpha
        self.w = m.basis.quadrature_weights
        self.needs_nodal = not m.nonlinearity.is_zero
        self.hnorm_sq = np.full((n_steps + 1, n_rows), np.nan)
        self.energy = np.full((n_steps + 1, n_rows), np.nan)
        self._fbuf = None

    def record(self, i, t, U, V, nodal):
        hn = (U * U) @ self.lam
        w_vel = V + self.alpha * U
        hn += np.einsum("nm,nm->n", w_vel, w_vel)
        self.hnorm_sq[i] = hn
        if not self.needs_nodal:
            self.energy[i] = hn
            return
        if self._fbuf is None or self._fbuf.shape != nodal.shape:
            self._fbuf = np.empty_like(nodal)
        _primitive_into(self.m.nonlinearity, nodal, self._fbuf)
        self.energy[i] = hn + 2.0 * (self._fbuf @ self.w)


def _primitive_into(spec, nodal, out):
    if spec.kind == SINE_GORDON:
        np.cos(nodal, out=out)
        out *= -1.0
        out += 1.0
    else:
        out[...] = spec.primitive(nodal)


# ---------------------------------------------------------------------------
# public operations


def step(s: State, m: ModelParams, prop: LinearPropagator,
         noise_increment: np.ndarray | None) -> State:
    """One Strang step from a single state.

    noise_increment holds standard normals of shape (2, M); they are mapped
    through the propagator's covariance factor.  Pass None for a noise-free
    step.
    """
    stepper = _Stepper(m, prop, 1)
    U = s.u[None, :].copy()
    V = s.v[None, :].copy()
    noise = None
    if noise_increment is not None:
        noise = _ExplicitNoise(np.asarray(noise_increment, dtype=float)[None, :, :])
    U, V, div = _run_loop(stepper, U, V, 1, noise, [], s.t, check_every=1)
    if div[0] >= 0:
        raise DivergenceError("state diverged during step", t=s.t + prop.dt)
    return State(t=s.t + prop.dt, u=U[0].copy(), v=V[0].copy(), basis=m.basis)


@dataclass
class Trajectory:
    """Simulated path: thinned modal states plus dense per-step scalar series.

    `times`, `u`, `v` hold the stored grid (every `stride` steps plus the
    final point).  `energy` and `hnorm_sq` cover every step when energy
    recording was on.  The noise record regenerates the exact increments
    that drove the path.
    """

    t0: float
    dt: float
    n_steps: int
    stride: int
    times: np.ndarray
    u: np.ndarray                  # (k, M)
    v: np.ndarray                  # (k, M)
    energy: np.ndarray | None      # (n_steps+1,)
    hnorm_sq: np.ndarray | None
    noise: NoiseRecord | None
    model: ModelParams
    diverged: bool = False
    divergence_step: int | None = None

    @property
    def step_times(self) -> np.ndarray:
        """Dense grid times matching the scalar series."""
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def state(self, k: int) -> State:
        return State(
            t=float(self.times[k]), u=self.u[k].copy(), v=self.v[k].copy(),
            basis=self.model.basis,
        )

    @property
    def final_state(self) -> State:
        return self.state(len(self.times) - 1)


def n_steps_for(T: float, dt: float) -> int:
    return int(np.ceil(T / dt - 1e-12))


def simulate_path(
    y0: State,
    m: ModelParams,
    T: float,
    dt: float,
    seed: int,
    traj_index: int = 0,
    store_stride: int = 1,
    record_energy: bool = True,
    extra_recorders=(),
) -> Trajectory:
    """Integrate one trajectory over [y0.t, y0.t + T].

    Deterministic in all arguments; the same (seed, traj_index) pair always
    produces the same noise.  On divergence the trajectory is truncated at
    the detection step and flagged rather than raising.
    """
    if T <= 0.0 or dt <= 0.0:
        raise ConfigurationError("T and dt must be > 0")
    n_steps = n_steps_for(T, dt)
    prop = linear_propagator(m.basis, m, dt)
    record = NoiseRecord(seed=seed, traj_index=traj_index, n_modes=m.basis.mode_count)
    noise = record.source() if prop.has_noise else None

    states = StateRecorder(n_steps, 1, m.basis.mode_count, stride=store_stride)
    recorders = [states]
    eng = None
    if record_energy:
        eng = EnergySeriesRecorder(m, n_steps, 1)
        recorders.append(eng)
    recorders.extend(extra_recorders)

    stepper = _Stepper(m, prop, 1, needs_nodal=_needs_nodal(recorders))
    U = y0.u[None, :].copy()
    V = y0.v[None, :].copy()
    U, V, div = _run_loop(stepper, U, V, n_steps, noise, recorders, y0.t)

    diverged = bool(div[0] >= 0)
    keep = states.indices <= (div[0] if diverged else n_steps)
    if diverged:
        keep &= np.isfinite(states.u[:, 0, :]).all(axis=1)
    return Trajectory(
        t0=y0.t,
        dt=dt,
        n_steps=n_steps,
        stride=store_stride,
        times=states.times[keep],
        u=states.u[keep, 0, :],
        v=states.v[keep, 0, :],
        energy=eng.energy[:, 0] if eng is not None else None,
        hnorm_sq=eng.hnorm_sq[:, 0] if eng is not None else None,
        noise=record,
        model=m,
        diverged=diverged,
        divergence_step=int(div[0]) if diverged else None,
    )
