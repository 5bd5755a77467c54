"""
Model problems: the homogeneous benchmark, a manufactured smooth solution and the channel.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from src.mesh import channel_inflow
from src.operators import BCSpec

VectorFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StokesProblem:
    """Force, Dirichlet data and (when known) the analytic solution."""
    name: str
    force: Optional[VectorFn] = None
    dirichlet: Optional[VectorFn] = None
    exact_velocity: Optional[VectorFn] = None
    exact_pressure: Optional[Callable[[np.ndarray], np.ndarray]] = None
    nu: float = 1.0

    @property
    def bc(self) -> BCSpec:
        return BCSpec(dirichlet_value=self.dirichlet, nu=self.nu)

    @property
    def has_exact_solution(self) -> bool:
        return self.exact_velocity is not None and self.exact_pressure is not None


def manufactured_velocity(x: np.ndarray) -> np.ndarray:
    """u = (-4 cos 4x3, 8 cos 8x1, -2 cos 2x2)."""
    x = np.atleast_2d(x)
    return np.stack([
        -4.0 * np.cos(4.0 * x[:, 2]),
        8.0 * np.cos(8.0 * x[:, 0]),
        -2.0 * np.cos(2.0 * x[:, 1]),
    ], axis=1)


def manufactured_pressure(x: np.ndarray) -> np.ndarray:
    """p = sin 4x1 sin 8x2 sin 2x3 (before mean removal)."""
    x = np.atleast_2d(x)
    return np.sin(4.0 * x[:, 0]) * np.sin(8.0 * x[:, 1]) * np.sin(2.0 * x[:, 2])


def manufactured_force(nu: float = 1.0) -> VectorFn:
    """f = -nu Lap u + grad p; u is divergence free so the same f serves both formulations."""
    def force(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        u = manufactured_velocity(x)
        lap = u * np.array([16.0, 64.0, 4.0])
        s1, s2, s3 = np.sin(4.0 * x[:, 0]), np.sin(8.0 * x[:, 1]), np.sin(2.0 * x[:, 2])
        c1, c2, c3 = np.cos(4.0 * x[:, 0]), np.cos(8.0 * x[:, 1]), np.cos(2.0 * x[:, 2])
        grad_p = np.stack([4.0 * c1 * s2 * s3, 8.0 * s1 * c2 * s3, 2.0 * s1 * s2 * c3], axis=1)
        return nu * lap + grad_p
    return force


def homogeneous_problem(nu: float = 1.0) -> StokesProblem:
    """f = 0 with zero Dirichlet data; the exact discrete solution is zero."""
    return StokesProblem("homogeneous", nu=nu)


def manufactured_problem(nu: float = 1.0) -> StokesProblem:
    return StokesProblem(
        "manufactured",
        force=manufactured_force(nu),
        dirichlet=manufactured_velocity,
        exact_velocity=manufactured_velocity,
        exact_pressure=manufactured_pressure,
        nu=nu,
    )


def channel_problem(nu: float = 1.0) -> StokesProblem:
    """Parabolic inflow, do-nothing outflow; use with mesh.channel_mesh."""
    return StokesProblem("channel", dirichlet=channel_inflow, nu=nu)
