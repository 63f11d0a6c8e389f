import os

# single-threaded BLAS: the suite's matrices are far below the threading
# payoff and the pools otherwise fight the Monte Carlo loops for cores
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from nlwmix import (
    NoiseSpec,
    NonlinearitySpec,
    build_basis,
    make_model,
    state_with_weighted_norm,
)


@pytest.fixture(scope="session")
def basis8():
    return build_basis(1, 8)


@pytest.fixture(scope="session")
def basis32():
    return build_basis(1, 32)


@pytest.fixture(scope="session")
def sg_model8(basis8):
    return make_model(
        basis8,
        gamma=0.2,
        nonlinearity=NonlinearitySpec("sine_gordon"),
        noise=NoiseSpec(b0=0.3, decay_q=1.0),
    )


@pytest.fixture(scope="session")
def sg_model32(basis32):
    return make_model(
        basis32,
        gamma=0.15,
        nonlinearity=NonlinearitySpec("sine_gordon"),
        noise=NoiseSpec(b0=0.3, decay_q=1.0),
    )


@pytest.fixture(scope="session")
def linear_model8(basis8):
    # zero nonlinearity, zero force, noise switched off via the cutoff
    return make_model(
        basis8,
        gamma=0.2,
        nonlinearity=NonlinearitySpec("zero"),
        noise=NoiseSpec(b0=0.3, decay_q=1.0, cutoff_n=0),
        h_amplitude=0.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_state(basis, alpha, norm, mode=0):
    return state_with_weighted_norm(basis, alpha, norm, mode=mode)
