"""Exception types shared across the toolkit."""


class StableQVError(Exception):
    """Base class for all toolkit errors."""


class InvalidDirectionError(StableQVError, ValueError):
    """A direction vector is zero or has the wrong dimension."""


class EmptyMeasureError(StableQVError, ValueError):
    """A directional measure was built from no atoms."""


class ResourceLimitError(StableQVError):
    """Expected jump count of a series simulation exceeds the guard."""


class InvalidGridError(StableQVError, ValueError):
    """Grid step is non-positive or otherwise unusable."""


class InsufficientDataError(StableQVError, ValueError):
    """Too few observations for the requested statistic."""


class DegenerateSpectrumError(StableQVError):
    """Eigenvalue gap below threshold; perturbation formulas are invalid."""


class UndefinedEstimateError(StableQVError):
    """The ratio statistic is too close to 1 for the tail index to be defined."""


class DegenerateIncrementError(StableQVError):
    """A zero increment makes negative-power sums undefined."""


class ConfigError(StableQVError):
    """Experiment configuration failed validation; message lists all violations."""
