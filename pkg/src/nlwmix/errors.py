"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameter, config key, or violated precondition."""


class ShapeError(ValueError):
    """Array shape or grid mismatch between arguments."""


class DivergenceError(RuntimeError):
    """A simulated field blew up (non-finite nodal values).

    Carries the simulation time at which the overflow was detected.
    """

    def __init__(self, message, t=None):
        if t is not None:
            message = f"{message} (t={t:.6g})"
        super().__init__(message)
        self.t = t


class EnsembleError(RuntimeError):
    """Too many trajectories of an ensemble diverged."""


class NonDegeneracyError(ValueError):
    """A noise coefficient required to be positive is zero."""


class InsufficientSampleError(ValueError):
    """Not enough Monte Carlo samples for the requested statistic."""
