/** Error types mirroring the core data plane's failure vocabulary. */

export class BatchPlaneError extends Error {}

export class NotFound extends BatchPlaneError {}
export class RangeOutOfBounds extends BatchPlaneError {}
export class InvalidKey extends BatchPlaneError {}

export class ShapeMismatch extends BatchPlaneError {}
export class BadMagic extends BatchPlaneError {}
export class TruncatedFooter extends BatchPlaneError {}
export class CoordinateOutOfMesh extends BatchPlaneError {}

export class SchemaViolation extends BatchPlaneError {}
export class StaleSequence extends BatchPlaneError {}
export class VersionOverflow extends BatchPlaneError {}

export class LagExceeded extends BatchPlaneError {}
export class DeadlineExceeded extends BatchPlaneError {}

export class InvalidTopology extends BatchPlaneError {}
export class StepReclaimed extends BatchPlaneError {}
export class WatermarkMissing extends BatchPlaneError {}

export class ClosedHandle extends BatchPlaneError {}
