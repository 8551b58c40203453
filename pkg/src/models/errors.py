"""
Exception hierarchy for PGRD

The CLI maps these onto exit codes: usage/config problems exit 2,
numeric failures exit 3.
"""
from typing import Optional, Sequence


class PGRDError(Exception):
    """Base class for all PGRD errors"""


class ConfigError(PGRDError, ValueError):
    """Invalid or inconsistent run configuration"""


class ShapeError(PGRDError, ValueError):
    """Operand shapes violate an operation's shape rule"""

    def __init__(self, op: str, shapes: Sequence[Sequence[int]], rule: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        rendered = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if rule:
            message += f" ({rule})"
        super().__init__(message)


class NumericalError(PGRDError, ArithmeticError):
    """NaN or Inf produced or consumed by a numeric operation"""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class CheckpointError(PGRDError, ValueError):
    """Checkpoint payload does not match the expected model"""

    def __init__(self, message: str, tensor: Optional[str] = None):
        self.tensor = tensor
        if tensor is not None:
            message = f"{message} [tensor '{tensor}']"
        super().__init__(message)


class DatasetFormatError(PGRDError, ValueError):
    """Corrupt or inconsistent PGRDDATA file"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
