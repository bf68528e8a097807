"""Exception types raised across the simulator."""


class RingDriftError(Exception):
    """Base class for all simulator errors."""


class UnreachableWeight(RingDriftError, ValueError):
    """Requested weight needs a transmission the ring cannot produce."""


class DimensionMismatch(RingDriftError, ValueError):
    pass


class ZeroReference(RingDriftError, ValueError):
    pass


class Diverged(RingDriftError, RuntimeError):
    """Calibration error blew past its divergence guard."""


class MissingGradients(RingDriftError, ValueError):
    pass


class IllegalAssignment(RingDriftError, ValueError):
    pass


class SchemaError(RingDriftError, ValueError):
    pass


class ShapeMismatch(RingDriftError, ValueError):
    pass


class DidNotConverge(RingDriftError, RuntimeError):
    pass


class IoError(RingDriftError, OSError):
    """A trace or fixture file could not be written."""
