"""Exception types shared across the data plane."""


class BatchPlaneError(Exception):
    """Base class for all errors raised by this package."""


# --- object store ---

class InvalidKey(BatchPlaneError):
    pass


class NotFound(BatchPlaneError):
    pass


class RangeOutOfBounds(BatchPlaneError):
    pass


class TransientIo(BatchPlaneError):
    """Retryable I/O failure. The operation may or may not have taken effect;
    callers must re-read before retrying a conditional write."""


# --- TGB codec ---

class ShapeMismatch(BatchPlaneError):
    pass


class BadMagic(BatchPlaneError):
    pass


class TruncatedFooter(BatchPlaneError):
    pass


class CoordinateOutOfMesh(BatchPlaneError):
    pass


# --- manifest ---

class VersionOverflow(BatchPlaneError):
    pass


class SchemaViolation(BatchPlaneError):
    pass


class StaleSequence(BatchPlaneError):
    """A producer_seq at or below the committed offset was submitted for commit."""


# --- commit pacing ---

class DomainError(BatchPlaneError):
    pass


# --- producer ---

class LagExceeded(BatchPlaneError):
    """Non-blocking write refused: unacknowledged batches would exceed max_lag."""


class DeadlineExceeded(BatchPlaneError):
    pass


# --- consumer ---

class InvalidTopology(BatchPlaneError):
    pass


class StepReclaimed(BatchPlaneError):
    """The requested step is below the trim floor; the consumer fell behind GC."""


class WatermarkMissing(BatchPlaneError):
    pass


class UnsupportedRemap(BatchPlaneError):
    pass


# --- simulator ---

class ConfigInvalid(BatchPlaneError):
    pass
