"""Exception hierarchy shared by every pipeline stage.

Each error carries a stable ``kind`` string so the CLI can emit
machine-readable failures without inspecting class names.
"""

from __future__ import annotations

class NeuroKinectError(Exception):
    kind = "InternalError"
    user_error = True

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "message": str(self)}
        out.update({k: _jsonable(v) for k, v in self.context.items()})
        return out

def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)

# io_ingest
class MissingFile(NeuroKinectError):
    """A manifest or referenced trial file does not exist."""

    kind = "MissingFile"

class SchemaViolation(NeuroKinectError):
    """Manifest or config field is missing or malformed."""

    kind = "SchemaViolation"

class InconsistentTiming(NeuroKinectError):
    """Trial event samples are out of order."""

    kind = "InconsistentTiming"

class UnknownTrial(NeuroKinectError):
    kind = "UnknownTrial"

class CorruptData(NeuroKinectError):
    """Non-finite values or array shape disagreeing with the manifest."""

    kind = "CorruptData"

# preprocess
class DegenerateAxis(NeuroKinectError):
    """A kinematic axis has zero range."""

    kind = "DegenerateAxis"

class FactorTooLarge(NeuroKinectError):
    kind = "FactorTooLarge"

class UnrealizableSpec(NeuroKinectError):
    """Filter edges cannot be realized at this sample rate."""

    kind = "UnrealizableSpec"

class ZeroVariance(NeuroKinectError):
    """A signal that must vary is constant."""

    kind = "ZeroVariance"

class KinLongerThanEeg(NeuroKinectError):
    kind = "KinLongerThanEeg"

# trial_qc
class SpanTooShort(NeuroKinectError):
    kind = "SpanTooShort"

class NotEnoughTrials(NeuroKinectError):
    kind = "NotEnoughTrials"

# dataset_builder
class TrialTooShort(NeuroKinectError):
    kind = "TrialTooShort"

class EmptyPartition(NeuroKinectError):
    kind = "EmptyPartition"

# grad_engine / model
class ShapeMismatch(NeuroKinectError):
    kind = "ShapeMismatch"
    user_error = False

class NonScalarLoss(NeuroKinectError):
    kind = "NonScalarLoss"
    user_error = False

class InvalidConfig(NeuroKinectError):
    kind = "InvalidConfig"

# train_eval
class LengthMismatch(NeuroKinectError):
    kind = "LengthMismatch"

class DegenerateTarget(NeuroKinectError):
    """Target is constant over the batch; the stat loss is undefined."""

    kind = "DegenerateTarget"

class NonFiniteLoss(NeuroKinectError):
    kind = "NonFiniteLoss"
    user_error = False

# erp
class InsufficientPrePost(NeuroKinectError):
    kind = "InsufficientPrePost"

class EmptyInput(NeuroKinectError):
    kind = "EmptyInput"

# synthdata
class SingularSystem(NeuroKinectError):
    kind = "SingularSystem"

# cli
class DatasetMissing(NeuroKinectError):
    kind = "DatasetMissing"

class CheckpointMissing(NeuroKinectError):
    kind = "CheckpointMissing"
