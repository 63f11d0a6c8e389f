import numpy as np
import pytest
from scipy.integrate import quad

from nlwmix import (
    ConfigurationError,
    NoiseSpec,
    NonlinearitySpec,
    State,
    StoppingParams,
    build_basis,
    calibrate_k_drift,
    energy,
    growth_functional,
    h_norm_sq,
    make_model,
    simulate_path,
    single_mode_field,
    state_with_weighted_norm,
    stopping_time,
    supermartingale_tail,
)
from nlwmix.energy import exp_moment_series, tail_statistic
from nlwmix.ergodics import simulate_ensemble


class TestNormAndEnergy:
    def test_position_only(self, basis8):
        s = State(t=0.0, u=single_mode_field(basis8, 1.0), v=np.zeros(8), basis=basis8)
        assert abs(h_norm_sq(s, 0.0) - 1.0) < 1e-15

    def test_alpha_cross_term(self, basis8):
        s = State(t=0.0, u=single_mode_field(basis8, 1.0), v=np.zeros(8), basis=basis8)
        assert abs(h_norm_sq(s, 0.1) - 1.01) < 1e-15

    def test_velocity_only(self, basis8):
        s = State(t=0.0, u=np.zeros(8), v=single_mode_field(basis8, 1.0, mode=1),
                  basis=basis8)
        for alpha in (0.0, 0.1, 0.5):
            assert abs(h_norm_sq(s, alpha) - 1.0) < 1e-15

    def test_energy_zero_nonlinearity(self, basis8, linear_model8):
        s = State(t=0.0, u=single_mode_field(basis8, 0.7), v=single_mode_field(basis8, -0.2),
                  basis=basis8)
        assert abs(energy(s, linear_model8) - h_norm_sq(s, linear_model8.alpha)) < 1e-14

    def test_energy_zero_state(self, sg_model8, basis8):
        s = State(t=0.0, u=np.zeros(8), v=np.zeros(8), basis=basis8)
        assert energy(s, sg_model8) == 0.0

    def test_energy_matches_quadrature(self, basis32):
        m = make_model(basis32, gamma=0.15, nonlinearity=NonlinearitySpec("sine_gordon"),
                       noise=NoiseSpec())
        c = 1.3
        s = State(t=0.0, u=single_mode_field(basis32, c), v=np.zeros(32), basis=basis32)
        exact_f, _ = quad(
            lambda x: 1.0 - np.cos(c * np.sqrt(2 / np.pi) * np.sin(x)),
            0.0, np.pi, epsabs=1e-13, epsrel=1e-12,
        )
        expected = h_norm_sq(s, m.alpha) + 2 * exact_f
        assert abs(energy(s, m) - expected) < 1e-8


class TestGrowthFunctional:
    def _flat_trajectory(self, model, e0, n_steps=100, dt=0.1):
        # synthetic trajectory with a constant energy series
        from nlwmix.integrator import Trajectory

        times = dt * np.arange(n_steps + 1)
        u = np.zeros((n_steps + 1, model.basis.mode_count))
        return Trajectory(
            t0=0.0, dt=dt, n_steps=n_steps, stride=1, times=times, u=u, v=u,
            energy=np.full(n_steps + 1, e0), hnorm_sq=None, noise=None, model=model,
        )

    def test_constant_energy(self, sg_model8):
        traj = self._flat_trajectory(sg_model8, e0=-2.0)
        g = growth_functional(traj, sg_model8)
        t = traj.step_times
        assert np.abs(g - 2.0 * (1.0 + sg_model8.alpha * t)).max() < 1e-12

    def test_zero_path(self, basis8):
        m = make_model(basis8, gamma=0.2, nonlinearity=NonlinearitySpec("sine_gordon"),
                       noise=NoiseSpec(b0=0.3, cutoff_n=0), h_amplitude=0.0)
        y0 = State(t=0.0, u=np.zeros(8), v=np.zeros(8), basis=basis8)
        traj = simulate_path(y0, m, T=1.0, dt=1e-2, seed=0)
        assert np.abs(growth_functional(traj, m)).max() < 1e-14

    def test_matches_fine_grid_quadrature(self, sg_model8, basis8):
        # quadrature refinement on one simulated energy series: the native
        # trapezoid against a 4x-coarsened trapezoid of the same samples
        from nlwmix.integrator import Trajectory
        from scipy.integrate import cumulative_trapezoid

        y0 = state_with_weighted_norm(basis8, sg_model8.alpha, 1.0)
        traj = simulate_path(y0, sg_model8, T=1.0, dt=1e-3, seed=5)
        g_fine = growth_functional(traj, sg_model8)[-1]
        abs_e = np.abs(traj.energy[::4])
        coarse_int = cumulative_trapezoid(abs_e, dx=4 * traj.dt, initial=0.0)[-1]
        g_coarse = abs_e[-1] + sg_model8.alpha * coarse_int
        # O(dt^2) quadrature gap between the two rules on the same path
        assert abs(g_coarse - g_fine) < 1e-4

    def test_refinement_of_integral_on_same_series(self, sg_model8):
        # trapezoid error on a synthetic smooth series halves twice per refinement
        traj_c = self._flat_trajectory(sg_model8, 0.0, n_steps=50, dt=0.2)
        traj_f = self._flat_trajectory(sg_model8, 0.0, n_steps=100, dt=0.1)
        t_c, t_f = traj_c.step_times, traj_f.step_times
        traj_c.energy = np.sin(t_c) + 2.0
        traj_f.energy = np.sin(t_f) + 2.0
        exact = lambda t: np.abs(np.sin(t) + 2.0) + sg_model8.alpha * (
            2.0 * t + 1.0 - np.cos(t)
        )
        err_c = np.abs(growth_functional(traj_c, sg_model8) - exact(t_c)).max()
        err_f = np.abs(growth_functional(traj_f, sg_model8) - exact(t_f)).max()
        assert err_f < err_c / 3.0


class TestStoppingTime:
    def _with_energy(self, model, energy_series, dt):
        from nlwmix.integrator import Trajectory

        n = len(energy_series) - 1
        u = np.zeros((n + 1, model.basis.mode_count))
        return Trajectory(
            t0=0.0, dt=dt, n_steps=n, stride=1, times=dt * np.arange(n + 1),
            u=u, v=u, energy=np.asarray(energy_series, dtype=float),
            hnorm_sq=None, noise=None, model=model,
        )

    def test_never_crossed(self, sg_model8):
        traj = self._with_energy(sg_model8, np.full(101, 1.0), dt=0.1)
        p = StoppingParams(k_drift=0.0, l_rate=1.0, m_rate=1.0, r=5.0, beta=0.1)
        assert stopping_time(traj, p, sg_model8) is None

    def test_constructed_crossing(self, sg_model8):
        dt = 0.1
        t = dt * np.arange(101)
        l_rate, m_rate = 1.0, 1.0
        # G(t) grows twice as fast as the envelope slope with zero offset
        target = 2.0 * (l_rate + m_rate) * t
        # choose E(t) so that |E| + alpha int |E| equals the target
        alpha = sg_model8.alpha
        from scipy.integrate import cumulative_trapezoid

        e = np.zeros_like(t)
        for i in range(1, len(t)):
            integral = cumulative_trapezoid(np.abs(e[:i + 1]), dx=dt, initial=0.0)[-1]
            e[i] = target[i] - alpha * integral
        traj = self._with_energy(sg_model8, e, dt)
        p = StoppingParams(k_drift=0.0, l_rate=l_rate, m_rate=m_rate, r=1e-9, beta=0.1)
        tau = stopping_time(traj, p, sg_model8)
        assert tau == pytest.approx(dt, abs=1e-12)

    def test_monotone_in_r(self, sg_model8, basis8):
        y0 = state_with_weighted_norm(basis8, sg_model8.alpha, 1.0)
        traj = simulate_path(y0, sg_model8, T=5.0, dt=1e-2, seed=3)
        taus = []
        for r in (0.1, 0.5, 2.0, 8.0):
            p = StoppingParams(k_drift=0.0, l_rate=0.05, m_rate=0.05, r=r, beta=0.1)
            tau = stopping_time(traj, p, sg_model8)
            taus.append(np.inf if tau is None else tau)
        assert all(a <= b + 1e-12 for a, b in zip(taus, taus[1:]))


class TestExpMoment:
    def test_zero_noise_zero_state(self, basis8):
        m = make_model(basis8, gamma=0.2, nonlinearity=NonlinearitySpec("sine_gordon"),
                       noise=NoiseSpec(b0=0.3, cutoff_n=0), h_amplitude=0.0)
        y0 = State(t=0.0, u=np.zeros(8), v=np.zeros(8), basis=basis8)
        ens = simulate_ensemble(y0, m, 3, 1.0, 1e-2, 0, [0.0, 0.5, 1.0])
        series = exp_moment_series(ens, 0.05, m)
        assert np.abs(series.mean - 1.0).max() < 1e-12

    def test_kappa_zero(self, sg_model8, basis8):
        y0 = state_with_weighted_norm(basis8, sg_model8.alpha, 1.0)
        ens = simulate_ensemble(y0, sg_model8, 4, 0.5, 1e-2, 1, [0.0, 0.5])
        series = exp_moment_series(ens, 0.0, sg_model8)
        assert np.all(series.mean == 1.0)

    def test_smallness_condition_enforced(self, sg_model8, basis8):
        y0 = state_with_weighted_norm(basis8, sg_model8.alpha, 1.0)
        ens = simulate_ensemble(y0, sg_model8, 2, 0.2, 1e-2, 1, [0.2])
        too_big = 0.51 * sg_model8.alpha / sg_model8.noise_energy
        with pytest.raises(ConfigurationError, match="smallness"):
            exp_moment_series(ens, too_big, sg_model8)


class TestTailStatistic:
    def test_zero_noise_tails_zero(self, basis8):
        m = make_model(basis8, gamma=0.2, nonlinearity=NonlinearitySpec("sine_gordon"),
                       noise=NoiseSpec(b0=0.3, cutoff_n=0), h_amplitude=0.0)
        y0 = state_with_weighted_norm(basis8, m.alpha, 1.0)
        k_drift = 0.5
        ens = simulate_ensemble(y0, m, 4, 2.0, 1e-2, 0, [2.0], tail_k=k_drift)
        p = StoppingParams(k_drift=k_drift, l_rate=1.0, m_rate=1.0, r=1.0, beta=0.05)
        rep = supermartingale_tail(ens, p, m, [1.0, 2.0])
        # dissipative path with positive K: statistic never exceeds positive r
        assert np.all(rep.empirical == 0.0)
        assert np.all(rep.empirical <= rep.bound)

    def test_r_zero_bound_one(self, sg_model8, basis8):
        y0 = state_with_weighted_norm(basis8, sg_model8.alpha, 0.5)
        ens = simulate_ensemble(y0, sg_model8, 4, 0.5, 1e-2, 0, [0.5], tail_k=1.0)
        p = StoppingParams(k_drift=1.0, l_rate=1.0, m_rate=1.0, r=1.0, beta=0.03)
        rep = supermartingale_tail(ens, p, sg_model8, [0.0])
        assert rep.bound[0] == 1.0
        assert rep.passed[0]

    def test_tails_nonincreasing(self, sg_model8, basis8):
        y0 = state_with_weighted_norm(basis8, sg_model8.alpha, 1.0)
        ens = simulate_ensemble(y0, sg_model8, 32, 3.0, 1e-2, 4, [3.0], tail_k=0.0)
        p = StoppingParams(k_drift=0.0, l_rate=1.0, m_rate=1.0, r=1.0, beta=0.03)
        rep = supermartingale_tail(ens, p, sg_model8, [0.5, 1.0, 2.0, 4.0])
        assert np.all(np.diff(rep.empirical) <= 1e-15)

    def test_k_mismatch_rejected(self, sg_model8, basis8):
        y0 = state_with_weighted_norm(basis8, sg_model8.alpha, 1.0)
        ens = simulate_ensemble(y0, sg_model8, 2, 0.2, 1e-2, 0, [0.2], tail_k=1.0)
        p = StoppingParams(k_drift=2.0, l_rate=1.0, m_rate=1.0, r=1.0, beta=0.03)
        with pytest.raises(ConfigurationError):
            supermartingale_tail(ens, p, sg_model8, [1.0])

    def test_statistic_shapes(self):
        e = np.linspace(1.0, 2.0, 11)
        scalar = tail_statistic(e, 0.1, alpha=0.1, k_drift=0.0)
        assert np.isscalar(scalar) or scalar.shape == ()
        batch = tail_statistic(np.tile(e[:, None], (1, 3)), 0.1, 0.1, 0.0)
        assert batch.shape == (3,)


class TestEnergyInequalities:
    """Pointwise energy-norm inequalities along simulated paths."""

    def test_norm_dominated_by_energy(self, sg_model32, basis32):
        m = sg_model32
        y0 = state_with_weighted_norm(basis32, m.alpha, 3.0)
        traj = simulate_path(y0, m, T=5.0, dt=1e-3, seed=6, store_stride=100)
        c_int = m.c_diss_integrated
        for k in range(traj.u.shape[0]):
            s = traj.state(k)
            e = energy(s, m)
            assert h_norm_sq(s, m.alpha) <= 2.0 * abs(e) + 4.0 * c_int + 1e-9

    def test_energy_lower_bound(self, sg_model32, basis32):
        m = sg_model32
        y0 = state_with_weighted_norm(basis32, m.alpha, 4.0)
        traj = simulate_path(y0, m, T=5.0, dt=1e-3, seed=8, store_stride=200)
        vol = basis32.volume
        for k in range(traj.u.shape[0]):
            s = traj.state(k)
            e = energy(s, m)
            l2_u = float(s.u @ s.u)
            lower = h_norm_sq(s, m.alpha) - 2.0 * m.nu * l2_u - 2.0 * m.c_diss * vol
            assert e >= lower - 1e-9


class TestStoppingParams:
    def test_beta_never_configured(self, sg_model8):
        k = 1.0
        p = StoppingParams.from_model(sg_model8, k)
        expected = sg_model8.alpha / (8.0 * np.max(sg_model8.b_vec) ** 2)
        assert p.beta == pytest.approx(expected, rel=1e-12)
        assert p.l_rate == pytest.approx(
            k + 4 * sg_model8.alpha * sg_model8.c_diss_integrated, rel=1e-12
        )

    def test_positivity_enforced(self):
        with pytest.raises(ConfigurationError):
            StoppingParams(k_drift=0.0, l_rate=-1.0, m_rate=1.0, r=1.0, beta=0.1)

    def test_calibration_smoke(self, sg_model8):
        k = calibrate_k_drift(sg_model8, dt=5e-3, n_paths=8, T=2.0, seed=0)
        assert np.isfinite(k)
        assert k > 0.0

    def test_envelope_crossings_within_corollary_bound(self, sg_model8, basis8):
        # Monte Carlo frequency of a finite stopping time against
        # exp(4 beta C - beta r) with the calibrated constants
        k = calibrate_k_drift(sg_model8, dt=5e-3, n_paths=16, T=4.0, seed=1)
        sp = StoppingParams.from_model(sg_model8, k)
        y0 = state_with_weighted_norm(basis8, sg_model8.alpha, 0.5)
        ens = simulate_ensemble(y0, sg_model8, 64, 8.0, 5e-3, 2, [8.0],
                                tail_k=k, stopping=sp, record_energy_cp=False)
        frac = float(np.mean(ens.envelope_crossed))
        c_int = sg_model8.c_diss_integrated
        exponent = 4.0 * sp.beta * c_int - sp.beta * sp.r
        bound = min(1.0, float(np.exp(min(exponent, 50.0))))
        k_hit = int(frac * 64)
        from nlwmix.stats import wilson_ci

        _, hi = wilson_ci(k_hit, 64)
        assert frac <= 1.0
        assert hi <= bound + 0.2 or bound >= 1.0  # Monte Carlo band
