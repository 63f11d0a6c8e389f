"""Spectral-Galerkin simulation and verification suite for the stochastically
forced damped nonlinear wave equation on a box."""

__version__ = "0.1.0"

from .basis import Basis, build_basis, to_modal, to_nodal
from .coupling import (
    CouplingParams,
    FpRateFit,
    FpReport,
    NovikovBound,
    fp_decay_rate,
    fp_pair_report,
    fp_scan,
    girsanov_drift,
    novikov_tv_bound,
    pair_difference_norms,
    paired_start,
    simulate_fp_pair,
)
from .energy import (
    StoppingParams,
    TailReport,
    calibrate_k_drift,
    energy,
    exp_moment_series,
    growth_functional,
    h_norm_sq,
    stopping_time,
    supermartingale_tail,
)
from .ergodics import (
    CltResult,
    Ensemble,
    HittingReport,
    MixingReport,
    Observable,
    ObservableSet,
    SplitReport,
    clt_statistic,
    default_observables,
    hitting_probability,
    lln_error_curve,
    mixing_rate,
    nonlinearity_lipschitz_check,
    simulate_ensemble,
    split_uz_hs,
    w1_observable_distance,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    EnsembleError,
    InsufficientSampleError,
    NonDegeneracyError,
    ShapeError,
)
from .integrator import (
    LinearPropagator,
    NoiseRecord,
    Trajectory,
    linear_propagator,
    noise_covariances,
    propagator_matrices,
    simulate_path,
    step,
)
from .model import (
    DissipativityReport,
    ModelParams,
    NoiseSpec,
    NonlinearitySpec,
    State,
    check_dissipativity,
    drift,
    eval_nonlinearity,
    make_model,
    noise_coefficients,
    single_mode_field,
    state_with_weighted_norm,
)

__all__ = [name for name in dir() if not name.startswith("_")]
