"""Exception hierarchy shared by every subpackage.

Each exception carries the process exit code the command-line front end
uses when it escapes a subcommand.
"""

from __future__ import annotations


class StereoPoseError(Exception):
    exit_code = 1


class UsageError(StereoPoseError):
    exit_code = 1


class DataError(StereoPoseError):
    exit_code = 2


class NumericError(StereoPoseError):
    exit_code = 3


class NonPositiveDisparity(NumericError):
    def __init__(self, joint: int, value: float):
        super().__init__(f"joint {joint}: disparity {value!r} <= 0")
        self.joint = joint
        self.value = value


class NonPositiveDepth(NumericError):
    def __init__(self, joint: int, value: float):
        super().__init__(f"joint {joint}: depth {value!r} <= 0")
        self.joint = joint
        self.value = value


class DegenerateBox(NumericError):
    pass


class ShapeMismatch(NumericError):
    pass


class InvalidConfig(UsageError):
    pass


class CorruptCheckpoint(DataError):
    pass


class CorruptDataset(DataError):
    def __init__(self, message: str, sample_id: int | None = None):
        if sample_id is not None:
            message = f"sample {sample_id:06d}: {message}"
        super().__init__(message)
        self.sample_id = sample_id


class RigFileError(DataError):
    pass


class HandOutOfFrustum(DataError):
    pass


class EmptyHeatmap(NumericError):
    pass


class UnnormalizedTarget(NumericError):
    pass


class IllegalAugmentation(UsageError):
    pass


class FrozenViolation(NumericError):
    pass
