"""Exception types shared across the package."""


class RectiflowError(Exception):
    pass


class ShapeMismatchError(RectiflowError):
    """Inputs violate a shape contract."""


class DomainError(RectiflowError, ValueError):
    """Argument outside its documented domain."""


class SingularTimeError(DomainError):
    """Time too close to 1 for the chord-velocity formula."""


class NumericError(RectiflowError):
    """Non-finite value produced where finiteness is guaranteed."""


class StateError(RectiflowError):
    """Operation invoked in an invalid order (e.g. backward before forward)."""


class IngestError(RectiflowError):
    """Dataset root empty or unreadable."""


class CheckpointError(RectiflowError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointManifestError(CheckpointError):
    pass
