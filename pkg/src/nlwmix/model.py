"""Equation data: nonlinearity, deterministic force, noise coefficients, drift.

The simulated equation for the displacement field u(t, x) on the box is

    u_tt + gamma * u_t - Lap(u) + f(u) = h(x) + noise,

written in first order form for y = [u, u_dot].  The nonlinearity f comes
with its exact antiderivative F (F(0) = 0) because the energy functional
integrates F over the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import Basis
from .errors import ConfigurationError, DivergenceError, ShapeError

__all__ = [
    "NonlinearitySpec",
    "NoiseSpec",
    "ModelParams",
    "State",
    "DissipativityReport",
    "eval_nonlinearity",
    "check_dissipativity",
    "noise_coefficients",
    "drift",
    "single_mode_field",
    "state_with_weighted_norm",
]

SINE_GORDON = "sine_gordon"
KLEIN_GORDON = "klein_gordon"
ZERO = "zero"


@dataclass(frozen=True)
class NonlinearitySpec:
    """Pointwise nonlinearity f with exact primitive F.

    kinds:
      sine_gordon   f(u) = sin(u),            F(u) = 1 - cos(u)
      klein_gordon  f(u) = |u|^rho u - lam*u, F(u) = |u|^(rho+2)/(rho+2) - lam*u^2/2
      zero          f = F = 0

    The growth exponent rho must stay below 2; the stability estimates the
    suite measures degrade and eventually fail beyond that.  For sine_gordon
    (bounded derivatives) rho only tags the growth class; the default 1 is
    used in range checks such as the Sobolev split index.
    """

    kind: str
    rho: float = 1.0
    lambda_kg: float = 0.0

    def __post_init__(self):
        if self.kind not in (SINE_GORDON, KLEIN_GORDON, ZERO):
            raise ConfigurationError(f"unknown nonlinearity kind {self.kind!r}")
        if not 0.0 < self.rho < 2.0:
            raise ConfigurationError(f"rho must lie in (0, 2), got {self.rho}")
        if self.lambda_kg < 0.0:
            raise ConfigurationError("lambda_kg must be >= 0")

    def f(self, u: np.ndarray) -> np.ndarray:
        if self.kind == SINE_GORDON:
            return np.sin(u)
        if self.kind == KLEIN_GORDON:
            return np.abs(u) ** self.rho * u - self.lambda_kg * u
        return np.zeros_like(u)

    def f_prime(self, u: np.ndarray) -> np.ndarray:
        if self.kind == SINE_GORDON:
            return np.cos(u)
        if self.kind == KLEIN_GORDON:
            return (self.rho + 1.0) * np.abs(u) ** self.rho - self.lambda_kg
        return np.zeros_like(u)

    def primitive(self, u: np.ndarray) -> np.ndarray:
        if self.kind == SINE_GORDON:
            return 1.0 - np.cos(u)
        if self.kind == KLEIN_GORDON:
            return (
                np.abs(u) ** (self.rho + 2.0) / (self.rho + 2.0)
                - 0.5 * self.lambda_kg * u**2
            )
        return np.zeros_like(u)

    @property
    def is_zero(self) -> bool:
        return self.kind == ZERO


@dataclass(frozen=True)
class NoiseSpec:
    """Per-mode white-noise amplitudes b_j = b0 * lambda_j^(-decay_q).

    An optional cutoff zeroes every coefficient beyond the first
    ``cutoff_n`` modes (sorted order); ``cutoff_n = 0`` switches the noise
    off entirely, which is how deterministic runs are configured.  ``seed``
    is carried for provenance; the run-level seed passed to the simulation
    operations is what actually keys the noise streams.
    """

    b0: float = 0.3
    decay_q: float = 1.0
    cutoff_n: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.b0 <= 0.0:
            raise ConfigurationError(f"noise amplitude b0 must be > 0, got {self.b0}")
        if self.decay_q < 0.0:
            raise ConfigurationError("decay_q must be >= 0")
        if self.cutoff_n is not None and self.cutoff_n < 0:
            raise ConfigurationError("cutoff_n must be >= 0")


def noise_coefficients(spec: NoiseSpec, basis: Basis):
    """Return (b_vec, B, B1) with B = sum b_j^2 and B1 = sum lambda_j b_j^2."""
    lam = basis.eigenvalues
    b = spec.b0 * lam ** (-spec.decay_q)
    if spec.cutoff_n is not None:
        b = b.copy()
        b[spec.cutoff_n:] = 0.0
    return b, float(b @ b), float(lam @ (b * b))


@dataclass(frozen=True)
class State:
    """Phase-space point [u, u_dot] in modal coordinates at time t.

    Both component vectors live in the same basis, which the state carries
    so norms and energies can be evaluated without extra arguments.
    """

    t: float
    u: np.ndarray
    v: np.ndarray
    basis: Basis = field(repr=False, kw_only=True)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        m = self.basis.mode_count
        if u.shape != (m,) or v.shape != (m,):
            raise ShapeError(
                f"u and v must be modal vectors of length {m}, got {u.shape}, {v.shape}"
            )
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ConfigurationError("state contains non-finite entries")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class ModelParams:
    """All coefficients of one model instance, validated and immutable.

    alpha is the weight of the phase-space norm
    |y|^2 = ||grad u||^2 + ||v + alpha*u||^2 and doubles as the nominal
    dissipation rate; it must stay small enough that the cross terms in the
    energy balance are absorbed with slack.  nu and c_diss are the
    dissipativity constants of the nonlinearity (c_diss is measured by a
    grid scan at construction rather than trusted from config).
    """

    basis: Basis
    gamma: float
    nonlinearity: NonlinearitySpec
    noise: NoiseSpec
    h: np.ndarray
    alpha: float
    nu: float
    c_diss: float

    def __post_init__(self):
        lam1 = float(self.basis.eigenvalues[0])
        if self.gamma <= 0.0:
            raise ConfigurationError("gamma must be > 0")
        if not 0.0 < self.nu <= min(lam1, self.gamma) / 8.0:
            raise ConfigurationError(
                f"nu must lie in (0, min(lambda_1, gamma)/8] = (0, {min(lam1, self.gamma)/8:.6g}]"
            )
        if not 0.0 < self.alpha <= alpha_max(self.gamma, lam1):
            raise ConfigurationError(
                f"alpha must lie in (0, {alpha_max(self.gamma, lam1):.6g}] for gamma={self.gamma}"
            )
        h = np.asarray(self.h, dtype=float)
        if h.shape != (self.basis.mode_count,):
            raise ShapeError("h must be a modal vector of the basis")
        object.__setattr__(self, "h", h)

    # -- convenient derived quantities --------------------------------------

    @property
    def b_vec(self) -> np.ndarray:
        return noise_coefficients(self.noise, self.basis)[0]

    @property
    def noise_energy(self) -> float:
        """B = sum of squared noise amplitudes."""
        return noise_coefficients(self.noise, self.basis)[1]

    @property
    def c_diss_integrated(self) -> float:
        """Dissipativity constant integrated over the box, C * Vol(D)."""
        return self.c_diss * self.basis.volume

    @property
    def h_norm(self) -> float:
        return float(np.sqrt(self.h @ self.h))

    def with_noise(self, noise: NoiseSpec) -> "ModelParams":
        return replace(self, noise=noise)


def alpha_max(gamma: float, lam1: float) -> float:
    # margin keeping every Young-inequality absorption strict
    return min(gamma, lam1 / gamma) / 4.0


def default_alpha(gamma: float, lam1: float) -> float:
    return min(gamma, lam1 / gamma) / 10.0


def make_model(
    basis: Basis,
    gamma: float,
    nonlinearity: NonlinearitySpec,
    noise: NoiseSpec,
    h_amplitude: float = 0.1,
    h: np.ndarray | None = None,
    alpha: float | None = None,
    nu: float | None = None,
    diss_scan_range: float = 50.0,
) -> ModelParams:
    """Build validated model parameters with the standard defaults.

    h defaults to h_amplitude times the first eigenfunction.  c_diss comes
    from a fresh dissipativity scan of the nonlinearity.
    """
    lam1 = float(basis.eigenvalues[0])
    if alpha is None:
        alpha = default_alpha(gamma, lam1)
    if nu is None:
        nu = min(lam1, gamma) / 16.0
    if h is None:
        h = single_mode_field(basis, h_amplitude, mode=0)
    report = check_dissipativity(nonlinearity, nu, diss_scan_range)
    if not report.ok:
        raise ConfigurationError(
            f"nonlinearity fails the dissipativity conditions on [-{diss_scan_range}, {diss_scan_range}]"
        )
    return ModelParams(
        basis=basis,
        gamma=gamma,
        nonlinearity=nonlinearity,
        noise=noise,
        h=h,
        alpha=alpha,
        nu=nu,
        c_diss=report.c_overall,
    )


def single_mode_field(basis: Basis, amplitude: float, mode: int = 0) -> np.ndarray:
    out = np.zeros(basis.mode_count)
    out[mode] = amplitude
    return out


def state_with_weighted_norm(
    basis: Basis, alpha: float, target_norm: float, mode: int = 0
) -> State:
    """State [c*e_mode, -alpha*c*e_mode] whose weighted norm is exactly target_norm.

    The velocity offset cancels the alpha cross term, so the norm reduces to
    sqrt(lambda_mode) * c.
    """
    lam = float(basis.eigenvalues[mode])
    c = target_norm / np.sqrt(lam)
    u = single_mode_field(basis, c, mode)
    return State(t=0.0, u=u, v=-alpha * u, basis=basis)


# ---------------------------------------------------------------------------
# operations


def eval_nonlinearity(
    spec: NonlinearitySpec, u: np.ndarray, basis: Basis, t: float | None = None
):
    """Pseudospectral f(u) plus the integral of the primitive.

    Returns (f_modal, F_integral) where f_modal is the quadrature projection
    of f evaluated on the oversampled grid and F_integral = int_D F(u) dx.
    Raises DivergenceError when the nodal field has overflowed.
    """
    nodal = basis.to_nodal(u)
    if not np.isfinite(nodal).all():
        raise DivergenceError("nodal field is non-finite", t=t)
    if spec.is_zero:
        return np.zeros(basis.mode_count), 0.0
    f_nodal = spec.f(nodal)
    if not np.isfinite(f_nodal).all():
        raise DivergenceError("nonlinearity overflowed on the grid", t=t)
    f_modal = basis.to_modal(f_nodal)
    f_integral = basis.integrate(spec.primitive(nodal))
    return f_modal, f_integral


@dataclass(frozen=True)
class DissipativityReport:
    """Smallest constants making the dissipativity inequalities hold on a scan grid.

    c_primitive_lower: F(u) >= -nu*u^2 - C
    c_drift_lower:     f(u)*u - F(u) >= -nu*u^2 - C
    c_second_deriv:    |f''(u)| <= C * (|u|^(rho-1) + 1)
    """

    nu: float
    scan_range: float
    c_primitive_lower: float
    c_drift_lower: float
    c_second_deriv: float
    ok: bool

    @property
    def c_overall(self) -> float:
        return max(self.c_primitive_lower, self.c_drift_lower)


def check_dissipativity(
    spec: NonlinearitySpec, nu: float, scan_range: float, n_grid: int = 200_001
) -> DissipativityReport:
    """Scan [-scan_range, scan_range] for the smallest admissible constants."""
    if scan_range <= 0:
        raise ConfigurationError("scan_range must be > 0")
    u = np.linspace(-scan_range, scan_range, n_grid)
    f = spec.f(u)
    big_f = spec.primitive(u)
    nu_u2 = nu * u * u

    c_prim = max(0.0, float(np.max(-big_f - nu_u2)))
    c_drift = max(0.0, float(np.max(-(f * u - big_f) - nu_u2)))
    c_second = _second_derivative_constant(spec, u)
    ok = np.isfinite(c_prim) and np.isfinite(c_drift) and np.isfinite(c_second)
    return DissipativityReport(
        nu=nu,
        scan_range=scan_range,
        c_primitive_lower=c_prim,
        c_drift_lower=c_drift,
        c_second_deriv=c_second,
        ok=bool(ok),
    )


def _second_derivative_constant(spec: NonlinearitySpec, u: np.ndarray) -> float:
    # ratio |f''(u)| / (|u|^(rho-1) + 1), evaluated in a form finite at u = 0
    if spec.kind == ZERO:
        return 0.0
    with np.errstate(divide="ignore"):
        if spec.kind == SINE_GORDON:
            ratio = np.abs(np.sin(u)) / (np.abs(u) ** (spec.rho - 1.0) + 1.0)
            return float(np.nanmax(ratio))
        # |f''| = rho*(rho+1)*|u|^(rho-1); ratio form keeps u = 0 finite
        rho = spec.rho
        ratio = rho * (rho + 1.0) / (1.0 + np.abs(u) ** (1.0 - rho))
    return float(np.max(ratio))


def drift(state: State, m: ModelParams):
    """Right-hand side [v, -gamma*v - lambda*u - f(u) + h] in modal coordinates."""
    if state.basis is not m.basis and state.basis.mode_count != m.basis.mode_count:
        raise ShapeError("state and model use different bases")
    f_modal, _ = eval_nonlinearity(m.nonlinearity, state.u, m.basis, t=state.t)
    du = state.v.copy()
    dv = -m.gamma * state.v - m.basis.eigenvalues * state.u - f_modal + m.h
    return du, dv
