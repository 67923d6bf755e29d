"""Exception types shared across the package.

Two families: :class:`ConfigError` covers bad user input (parameters,
dimensions, insufficient data), :class:`NumericalError` covers failures of
the estimation machinery on otherwise valid input. The CLI maps the families
to distinct exit codes.
"""


class ConfigError(ValueError):
    """Invalid parameter, configuration, or input data shape."""


class ParameterError(ConfigError):
    """A scalar argument is out of its valid range."""


class DimensionError(ConfigError):
    """Array arguments have incompatible shapes or lengths."""


class InsufficientDataError(ConfigError):
    """Not enough samples for the requested model complexity."""


class NumericalError(RuntimeError):
    """Estimation failed for numerical reasons on valid input."""


class ExcitationError(NumericalError):
    """Regressor information matrix is singular or near-singular."""


class IdentifiabilityError(NumericalError):
    """Least-squares regressor is rank deficient."""


class ConditioningError(NumericalError):
    """Weighted normal equations are numerically singular."""


class InstabilityError(NumericalError):
    """A parameter vector implies an unstable denominator polynomial."""
