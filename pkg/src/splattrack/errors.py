"""Exception types shared across the package."""


class SplatTrackError(Exception):
    """Base class for all package errors."""


class ContractError(SplatTrackError, ValueError):
    """Inputs violate a shape or range contract."""


class DegenerateInputError(SplatTrackError, ValueError):
    pass


class BehindCameraError(SplatTrackError, ValueError):
    """A point lies at or behind the near plane."""


class SceneSpecError(SplatTrackError, ValueError):
    pass


class NumericalError(SplatTrackError, FloatingPointError):
    """Optimization produced a non-finite value."""
