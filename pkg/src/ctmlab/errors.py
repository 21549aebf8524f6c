"""Exception hierarchy shared by all ctmlab modules."""


class CtmError(Exception):
    """Base class for every error raised by ctmlab."""


class ConfigError(CtmError, ValueError):
    pass


class DomainError(CtmError, ValueError):
    """Geometry outside the computational domain."""


class ResolutionError(CtmError, ValueError):
    """Feature too small to be represented on the grid."""


class ShapeError(CtmError, ValueError):
    """Fields or operators defined on mismatched grids."""


class DegenerateReferenceError(CtmError, ValueError):
    pass


class UndefinedCenterError(CtmError, ValueError):
    pass


class TimeRangeError(CtmError, ValueError):
    pass


class IngestionError(CtmError, ValueError):
    """A wind or field file failed to parse or validate."""


class PreconditionError(CtmError, ValueError):
    """Step stability bound (CFL or explicit diffusion) violated."""


class PairingError(CtmError, ValueError):
    """Adjoint run does not match the forward schedule it replays."""


class CapacityError(CtmError, ValueError):
    """Grid too large for explicit matrix assembly."""
