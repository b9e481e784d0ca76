"""
Exception hierarchy for SpecRoute.

Every failure raised by the library derives from SpecRouteError so the
harness can catch it once at the preset boundary.
"""

from typing import Optional, Sequence


class SpecRouteError(Exception):
    """Base class for all SpecRoute errors."""


class ConfigurationError(SpecRouteError):
    """Invalid chain, replay, settings or preset configuration."""


class ArgumentError(SpecRouteError):
    """An argument is out of range or inconsistent with another argument."""


class StructuralError(SpecRouteError):
    """Graph structure makes the requested operation ill-posed."""


class ConvergenceError(SpecRouteError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class RoutingError(SpecRouteError):
    """A spectral partition cannot host within-partition bagging."""


class TrainingError(SpecRouteError):
    """A base learner cannot be trained on its subsample."""


class DataError(SpecRouteError):
    """Generated or supplied data is degenerate (NaN, ill-conditioned)."""


class DomainError(SpecRouteError):
    """A theory oracle was called outside its parameter domain."""


class UnknownPresetError(ConfigurationError):
    """No preset file exists under the requested name."""

    def __init__(self, name: str, available: Sequence[str]):
        super().__init__(f"Unknown preset {name!r}; available presets: {', '.join(available) or '(none)'}")
        self.name = name
        self.available = list(available)
