"""Exception types shared across the package."""


class TiltGratingError(Exception):
    """Base class for all package errors."""


class ConfigError(TiltGratingError, ValueError):
    """Invalid or inconsistent user configuration."""


class ValidityError(TiltGratingError, ValueError):
    """The de Broglie wavelength is too long for the far-field formulas."""


class ShadowingError(TiltGratingError, ValueError):
    """The slit is fully shadowed at this angle of incidence."""


class GeometrySingularity(TiltGratingError, ValueError):
    """Incidence angle coincides with a bar wall (theta' = +-beta)."""


class DomainError(TiltGratingError, ValueError):
    """Position outside the open slit."""


class NumericalFailure(TiltGratingError, RuntimeError):
    """Quadrature, Monte Carlo or fit did not reach its tolerance."""
