"""Exception hierarchy shared by all modules."""


class RosetteGanError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RosetteGanError, ValueError):
    """Bad user input: shapes, ranges, malformed files. Maps to CLI exit code 1."""


class InvalidShapeError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class RankError(ValidationError):
    pass


class RangeError(ValidationError):
    pass


class DegenerateBatchError(ValidationError):
    pass


class DatasetValidationError(ValidationError):
    """Aggregates every per-row problem found while validating a dataset."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(f"{len(self.problems)} dataset problem(s):\n{lines}")


class NumericError(RosetteGanError, ArithmeticError):
    """Non-finite values where finite ones are required. Maps to CLI exit code 2."""


class CheckpointError(RosetteGanError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass
