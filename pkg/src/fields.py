"""
Nodal velocity and pressure storage with the vector algebra shared by all solvers.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from src.errors import LevelMismatchError, ZeroWeightError

_HEADER = struct.Struct("<4sIQ")
_MAGIC_VELOCITY = b"SBVU"
_MAGIC_PRESSURE = b"SBPR"


def _check_level(a: int, b: int) -> None:
    if a != b:
        raise LevelMismatchError(f"fields live on levels {a} and {b}")


@dataclass
class VelocityField:
    """Three velocity components per node, stored as an (N, 3) array."""
    level: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, 3)

    @classmethod
    def zeros(cls, level: int, n_nodes: int) -> "VelocityField":
        return cls(level, np.zeros((n_nodes, 3)))

    @property
    def n_nodes(self) -> int:
        return len(self.data)

    def copy(self) -> "VelocityField":
        return VelocityField(self.level, self.data.copy())


@dataclass
class PressureField:
    """One pressure value per node."""
    level: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1)

    @classmethod
    def zeros(cls, level: int, n_nodes: int) -> "PressureField":
        return cls(level, np.zeros(n_nodes))

    @property
    def n_nodes(self) -> int:
        return len(self.data)

    def copy(self) -> "PressureField":
        return PressureField(self.level, self.data.copy())


@dataclass
class StokesVector:
    """Block vector (u, p) on one level."""
    u: VelocityField
    p: PressureField

    def __post_init__(self):
        _check_level(self.u.level, self.p.level)

    @property
    def level(self) -> int:
        return self.u.level

    @classmethod
    def zeros(cls, level: int, n_nodes: int) -> "StokesVector":
        return cls(VelocityField.zeros(level, n_nodes), PressureField.zeros(level, n_nodes))

    @classmethod
    def from_flat(cls, level: int, flat: np.ndarray) -> "StokesVector":
        """Inverse of `flat()`: 3N velocity entries followed by N pressure entries."""
        flat = np.asarray(flat, dtype=float)
        n = len(flat) // 4
        return cls(VelocityField(level, flat[:3 * n].reshape(n, 3)), PressureField(level, flat[3 * n:]))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u.data.ravel(), self.p.data])

    def copy(self) -> "StokesVector":
        return StokesVector(self.u.copy(), self.p.copy())


def axpy(alpha: float, x: StokesVector, y: StokesVector) -> StokesVector:
    """y + alpha * x as a new vector."""
    _check_level(x.level, y.level)
    return StokesVector(
        VelocityField(y.level, y.u.data + alpha * x.u.data),
        PressureField(y.level, y.p.data + alpha * x.p.data),
    )


def dot(x: StokesVector, y: StokesVector) -> float:
    """Euclidean inner product over all components."""
    _check_level(x.level, y.level)
    return float(np.dot(x.u.data.ravel(), y.u.data.ravel()) + np.dot(x.p.data, y.p.data))


def h_norm(x: StokesVector, h_ell: float) -> float:
    """Mesh-dependent norm (|u|^2 + h^2 |p|^2)^(1/2)."""
    if not h_ell > 0:
        raise ValueError(f"h must be positive, got {h_ell}")
    return float(np.sqrt(np.dot(x.u.data.ravel(), x.u.data.ravel()) + h_ell ** 2 * np.dot(x.p.data, x.p.data)))


def mean_zero_project(p: Union[PressureField, np.ndarray],
                      weights: Optional[np.ndarray] = None) -> Union[PressureField, np.ndarray]:
    """
    Remove the weighted mean so that sum(w * p) = 0.

    With weights=None the plain arithmetic mean is removed. Arrays in, arrays out.
    """
    data = p.data if isinstance(p, PressureField) else np.asarray(p, dtype=float)
    if weights is None:
        weights = np.ones_like(data)
    total = float(np.sum(weights))
    if total == 0.0:
        raise ZeroWeightError("mean-zero projection with zero total weight")
    projected = data - float(np.dot(weights, data)) / total
    if isinstance(p, PressureField):
        return PressureField(p.level, projected)
    return projected


def random_initial(hierarchy, level: int, seed: int) -> StokesVector:
    """
    Random start vector: u uniform in [0, 1], p uniform in [0, 1/h_min].

    Uses the counter-based Philox generator so runs are reproducible across platforms.
    """
    grid = hierarchy.level(level)
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random((grid.n_nodes, 3))
    p = rng.random(grid.n_nodes) / grid.h_min
    return StokesVector(VelocityField(level, u), PressureField(level, p))


def nodal_interpolate(fn: Callable[[np.ndarray], np.ndarray], grid) -> Union[VelocityField, PressureField]:
    """
    Evaluate fn at all node coordinates of a level.

    fn receives an (N, 3) coordinate array and returns (N, 3) for a velocity or (N,)
    for a pressure.
    """
    values = np.asarray(fn(grid.coords), dtype=float)
    if values.ndim == 0:
        values = np.full(grid.n_nodes, float(values))
    if values.ndim == 2 and values.shape[1] == 3:
        return VelocityField(grid.level_index, values)
    return PressureField(grid.level_index, values.reshape(-1))


def dump_field(field: Union[VelocityField, PressureField], path: Union[str, Path]) -> Path:
    """Write a field as a 16-byte header (magic, level, count) plus little-endian float64 values."""
    path = Path(path)
    magic = _MAGIC_VELOCITY if isinstance(field, VelocityField) else _MAGIC_PRESSURE
    values = np.ascontiguousarray(field.data, dtype="<f8").ravel()
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(magic, field.level, values.size))
        fh.write(values.tobytes())
    return path


def load_field(path: Union[str, Path]) -> Union[VelocityField, PressureField]:
    """Read a field written by dump_field."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated field header")
    magic, level, count = _HEADER.unpack_from(raw)
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if values.size != count:
        raise ValueError(f"{path}: header announces {count} values, file holds {values.size}")
    if magic == _MAGIC_VELOCITY:
        return VelocityField(level, values.reshape(-1, 3).copy())
    if magic == _MAGIC_PRESSURE:
        return PressureField(level, values.copy())
    raise ValueError(f"{path}: unknown field magic {magic!r}")
