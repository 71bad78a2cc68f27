from __future__ import annotations


class MolangException(Exception):  # noqa: N818
    """Base exception for the molang library."""


class MolangInvalidArgumentException(MolangException):
    """Exception raised when an invalid argument is passed."""


class MolangDegenerateRotationException(MolangInvalidArgumentException):
    """Exception raised when a 6D rotation has no well-defined frame."""


class MolangInvalidSkeletonException(MolangInvalidArgumentException):
    """Exception raised when a parent array doesn't form a single tree."""


class MolangInvalidSpecException(MolangInvalidArgumentException):
    """Exception raised when a synthetic dataset spec is unusable."""


class MolangShapeException(MolangException):
    """Exception raised when tensor shapes don't line up."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        names = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {names}")


class MolangConfigException(MolangException):
    """Exception raised when a configuration is inconsistent."""


class MolangParseException(MolangException):
    """Exception raised when a data file is malformed."""


class MolangCheckpointException(MolangException):
    """Exception raised when a checkpoint can't be loaded."""


class MolangContractException(MolangException):
    """Exception raised when an input violates an operation's contract."""


class MolangNumericalException(MolangException):
    """Exception raised when a loss or gradient stops being finite."""
