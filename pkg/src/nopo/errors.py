"""Exception and warning types raised by the simulation stack."""


class NopoError(Exception):
    """Base class for every error raised by :mod:`nopo`."""


class ConfigError(NopoError, ValueError):
    """Invalid parameters or malformed configuration documents."""


class CutoffTooSmall(NopoError):
    """Fock truncation holds non-negligible probability at the top level."""


class NoConvergence(NopoError):
    """A series or iteration did not converge within its term budget."""


class AboveThresholdOnly(NopoError, ValueError):
    """A linearized result was requested at or below threshold (p <= 1)."""


class SingularSystem(NopoError):
    """A linear system was singular and no regularizer was supplied."""


class EmptyEnsemble(NopoError, ValueError):
    """Moment estimation was attempted on an empty ensemble."""


class Diverged(NopoError):
    """A stochastic trajectory left the numerically meaningful region.

    ``count`` is the number of divergent trajectories; ``partial`` optionally
    carries whatever records were produced before the abort.
    """

    def __init__(self, message, count=1, partial=None):
        super().__init__(message)
        self.count = count
        self.partial = partial if partial is not None else []


class TraceDrift(NopoError):
    """Density-matrix trace drifted beyond the tolerance of its solver."""

    def __init__(self, message, drift=float("nan"), partial=None):
        super().__init__(message)
        self.drift = drift
        self.partial = partial if partial is not None else []


class NegativeGainFloor(NopoError):
    """Re(G_f) < 0 in the truncated positive-P engine."""


class CutoffOverflow(UserWarning):
    """Top pump or signal Fock level carries more than 1e-4 population."""


class StepSizeWarning(UserWarning):
    """Explicit step too large for the fastest rate in the model."""


class ComplexSqrtBranch(UserWarning):
    """Principal-branch square root of a complex diffusion amplitude was used."""


class DivisionByZero(NopoError, ZeroDivisionError):
    """Ratio statistics requested for a non-positive mean photon number."""
