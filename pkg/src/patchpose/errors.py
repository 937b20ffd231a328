"""Exception hierarchy shared across the package."""


class PatchPoseError(Exception):
    """Base class for all domain errors raised by this package."""


class EmptyMesh(PatchPoseError):
    """Mesh has no face with positive area."""


class TooFewPoints(PatchPoseError):
    """An operation was asked for more points than the cloud contains."""


class DegenerateCloud(PatchPoseError):
    """Cloud has no usable spatial extent (e.g. all points coincide)."""


class NonUnitQuaternion(PatchPoseError):
    """Quaternion norm deviates from 1 beyond tolerance."""


class EmptyCloud(PatchPoseError):
    """A point cloud argument contains no points."""


class EmptyPatch(PatchPoseError):
    """A supplied patch index set is empty."""


class LengthMismatch(PatchPoseError):
    """Two parallel sequences have different lengths."""


class IndexOutOfRange(PatchPoseError, IndexError):
    """An integer handle is outside its valid range."""


class DegenerateProjection(PatchPoseError):
    """Projection sums are too close to zero to disambiguate orientation."""


class EmptySet(PatchPoseError):
    """A set argument that must be nonempty is empty."""


class MissingGroundTruth(PatchPoseError):
    """An estimate refers to an instance id with no ground truth."""

    def __init__(self, instance_id):
        super().__init__(f"no ground truth for instance {instance_id!r}")
        self.instance_id = instance_id


class ParseError(PatchPoseError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, line, reason):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class UnsupportedFormat(PatchPoseError):
    """File is syntactically valid but uses an unsupported variant."""


class SchemaError(PatchPoseError):
    """A JSON document violates the expected schema."""

    def __init__(self, field, reason=""):
        msg = f"schema violation at {field!r}" + (f": {reason}" if reason else "")
        super().__init__(msg)
        self.field = field
