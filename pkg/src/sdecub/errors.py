"""Exception types shared across the package.

Configuration problems raise :class:`ConfigError` subclasses; failures of the
numerics themselves raise :class:`NumericalError` subclasses.  The CLI maps the
former to exit code 2 and the latter to exit code 3.
"""


class SdeCubError(Exception):
    """Base class for all package errors."""


class ConfigError(SdeCubError):
    """Invalid configuration or inconsistent inputs."""


class NumericalError(SdeCubError):
    """A numerical procedure failed."""


class UnsupportedDimension(ConfigError):
    """Requested cubature construction is not implemented for this dimension."""


class LevelTooLarge(ConfigError):
    """Tensor truncation level exceeds the combinatorial guard."""


class InvalidParameter(ConfigError):
    """A scalar parameter is outside its admissible range."""


class IndexOutOfRange(ConfigError):
    """An index vector entry does not address a formula path."""


class TreeTooLarge(ConfigError):
    """The q**k leaf tree exceeds the enumeration guard."""


class DimensionMismatch(ConfigError):
    """Inconsistent array or vector-field dimensions."""


class ManifestMismatch(ConfigError):
    """A weight table's manifest does not match the supplied inputs."""


class OracleUnavailable(ConfigError):
    """No reference value is available for the requested benchmark."""


class NoNullVector(NumericalError):
    """The moment constraint matrix has a trivial kernel; support is minimal."""


class MatchFailure(NumericalError):
    """A surviving support point could not be traced back to a tree prefix."""


class NonFiniteState(NumericalError):
    """An integrator state left the finite floating-point range."""


class SingularDiffusion(NumericalError):
    """The diffusion matrix is not invertible at a grid point."""


class NonFiniteGradient(NumericalError):
    """A reverse-mode gradient contains NaN or infinity."""


class DivergenceDetected(NumericalError):
    """Training loss exceeded the divergence threshold."""
