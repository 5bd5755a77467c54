"""
Exception hierarchy for stokesbench.

Everything raised on purpose by the package derives from StokesBenchError, so the
CLI can turn it into a clean message and a nonzero exit code.
"""

from typing import Optional


class StokesBenchError(Exception):
    """Base class for all stokesbench errors."""


class ConfigError(StokesBenchError, ValueError):
    """Invalid benchmark or solver configuration."""


class MeshError(StokesBenchError):
    """Invalid coarse mesh."""


class MeshParseError(MeshError):
    """Malformed mesh file; carries the offending line number."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}: "
        elif where:
            where = f"{where} "
        super().__init__(f"{where}{message}")


class NonConformingMeshError(MeshError):
    """A face is shared by more than two tetrahedra, or a tag names an interior face."""


class InvertedElementError(MeshError):
    """A tetrahedron has negative signed volume."""


class DegenerateElementError(MeshError):
    """A tetrahedron has (numerically) zero volume."""


class ResourceLimitError(StokesBenchError):
    """A requested level would exceed the configured node cap."""


class LevelMismatchError(StokesBenchError, ValueError):
    """Operands live on different grid levels."""


class MissingStencilError(StokesBenchError, KeyError):
    """An operator needed by a routine has not been assembled."""


class ZeroDiagonalError(StokesBenchError, ArithmeticError):
    """A smoother met a zero (or singular) diagonal entry."""


class DegenerateNormalError(StokesBenchError, ArithmeticError):
    """A free-slip node has a zero-length mass-conservative normal."""


class ZeroWeightError(StokesBenchError, ArithmeticError):
    """Mean-zero projection with zero total weight."""


class DegenerateSolutionError(StokesBenchError, ArithmeticError):
    """Accuracy ratio undefined because the discretization error vanishes."""
