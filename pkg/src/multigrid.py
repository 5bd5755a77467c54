"""
Grid transfers, V and variable V cycles, and full multigrid.

Coarse operators are re-discretized on every level. The restriction is the transpose
of the P1 prolongation. Velocity corrections are passed through the nodal projectors
of both levels so Dirichlet values and free-slip normal components are never touched.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from loguru import logger
from scipy.sparse.linalg import factorized

from src.errors import LevelMismatchError
from src.fields import PressureField, VelocityField
from src.krylov import conjugate_gradient, preconditioned_minres
from src.mesh import GridHierarchy, lattice_points, lattice_rank
from src.models import CoarseSolverKind, CoarseSolverSpec, CycleKind, CycleSpec, Formulation, OperatorTag, SmootherKind
from src.operators import (
    BCSpec,
    OperatorCounter,
    SaddleSystem,
    assemble_level_operators,
    assemble_rhs,
    build_saddle_system,
    constrained_velocity_matrix,
)
from src.smoothers import hybrid_gs_sweep, uzawa_step, velocity_plan
from src.utils.trace import CycleTrace


@dataclass(frozen=True)
class Transfer:
    """P1 interpolation from level fine-1 to level fine: every fine node averages two coarse nodes."""
    fine_level: int
    lo: np.ndarray
    hi: np.ndarray
    n_coarse: int

    def prolongate(self, xc: np.ndarray) -> np.ndarray:
        return 0.5 * (xc[self.lo] + xc[self.hi])

    def restrict(self, rf: np.ndarray) -> np.ndarray:
        """P^T rf."""
        if rf.ndim == 1:
            return 0.5 * (np.bincount(self.lo, weights=rf, minlength=self.n_coarse)
                          + np.bincount(self.hi, weights=rf, minlength=self.n_coarse))
        out = np.empty((self.n_coarse, rf.shape[1]))
        for c in range(rf.shape[1]):
            out[:, c] = self.restrict(rf[:, c])
        return out

    def restrict_normalized(self, rf: np.ndarray) -> np.ndarray:
        """P^T rf scaled row-wise so constants map to the same constants."""
        weights = self.restrict(np.ones(len(self.lo)))
        out = self.restrict(rf)
        return out / (weights if out.ndim == 1 else weights[:, None])


def build_transfer(hierarchy: GridHierarchy, fine_level: int) -> Transfer:
    """Coarse lattice neighbors of every fine node: floor and ceil of half its lattice index."""
    if not 1 <= fine_level <= hierarchy.L:
        raise LevelMismatchError(f"no transfer into level {fine_level} (hierarchy has 0..{hierarchy.L})")
    fine = hierarchy.level(fine_level)
    coarse = hierarchy.level(fine_level - 1)
    pts = lattice_points(fine.n_intervals)
    lo_pts, hi_pts = pts // 2, (pts + 1) // 2
    rank_lo = lattice_rank(lo_pts[:, 0], lo_pts[:, 1], lo_pts[:, 2])
    rank_hi = lattice_rank(hi_pts[:, 0], hi_pts[:, 1], hi_pts[:, 2])
    lo = np.empty(fine.n_nodes, dtype=np.int64)
    hi = np.empty(fine.n_nodes, dtype=np.int64)
    lo[fine.lattice_ids.ravel()] = coarse.lattice_ids[:, rank_lo].ravel()
    hi[fine.lattice_ids.ravel()] = coarse.lattice_ids[:, rank_hi].ravel()
    return Transfer(fine_level, lo, hi, coarse.n_nodes)


def transfer_for(hierarchy: GridHierarchy, fine_level: int) -> Transfer:
    key = ("transfer", fine_level)
    if key not in hierarchy._cache:
        hierarchy._cache[key] = build_transfer(hierarchy, fine_level)
    return hierarchy._cache[key]


FieldLike = Union[VelocityField, PressureField, np.ndarray]


def prolongate(hierarchy: GridHierarchy, coarse: FieldLike, fine_level: int) -> FieldLike:
    """Interpolate a level fine_level-1 field to fine_level."""
    if isinstance(coarse, (VelocityField, PressureField)) and coarse.level != fine_level - 1:
        raise LevelMismatchError(f"field on level {coarse.level} cannot be prolongated to {fine_level}")
    T = transfer_for(hierarchy, fine_level)
    if isinstance(coarse, VelocityField):
        return VelocityField(fine_level, T.prolongate(coarse.data))
    if isinstance(coarse, PressureField):
        return PressureField(fine_level, T.prolongate(coarse.data))
    return T.prolongate(np.asarray(coarse))


def restrict_residual(hierarchy: GridHierarchy, fine: FieldLike, coarse_level: int) -> FieldLike:
    """Full-weighting restriction R = P^T to coarse_level."""
    if isinstance(fine, (VelocityField, PressureField)) and fine.level != coarse_level + 1:
        raise LevelMismatchError(f"field on level {fine.level} cannot be restricted to {coarse_level}")
    T = transfer_for(hierarchy, coarse_level + 1)
    if isinstance(fine, VelocityField):
        return VelocityField(coarse_level, T.restrict(fine.data))
    if isinstance(fine, PressureField):
        return PressureField(coarse_level, T.restrict(fine.data))
    return T.restrict(np.asarray(fine))


@dataclass
class CycleStats:
    """Per-solve bookkeeping of coarse-grid work."""
    coarse_iterations: List[int] = field(default_factory=list)
    coarse_failures: int = 0


class StokesMultigrid:
    """Constrained saddle systems of every level plus transfers, for one formulation."""

    def __init__(self, hierarchy: GridHierarchy, formulation: Formulation = Formulation.LAPLACE,
                 bc: Optional[BCSpec] = None, counter: Optional[OperatorCounter] = None,
                 pressure_omega: float = 0.3, trace: Optional[CycleTrace] = None):
        self.hierarchy = hierarchy
        self.formulation = Formulation(formulation)
        self.bc = bc or BCSpec()
        self.counter = counter or OperatorCounter()
        self.pressure_omega = pressure_omega
        self.trace = trace
        tags = [self.formulation.velocity_tag, OperatorTag.B, OperatorTag.BT, OperatorTag.C, OperatorTag.M]
        with self.counter.scope("setup"):
            self.systems: List[SaddleSystem] = [
                build_saddle_system(
                    assemble_level_operators(hierarchy, level, self.bc.nu, self.counter, tags),
                    self.formulation,
                )
                for level in range(hierarchy.L + 1)
            ]
        logger.debug({"evt": "multigrid_ready", "L": self.L, "formulation": self.formulation.value})

    @property
    def L(self) -> int:
        return self.hierarchy.L

    def system(self, level: int) -> SaddleSystem:
        if not 0 <= level <= self.L:
            raise LevelMismatchError(f"level {level} not in 0..{self.L}")
        return self.systems[level]

    def transfer(self, fine_level: int) -> Transfer:
        return transfer_for(self.hierarchy, fine_level)

    def rhs(self, level: int, force=None, quadrature: str = "gauss4") -> np.ndarray:
        return assemble_rhs(force, self.system(level), self.bc, quadrature)

    def restrict_saddle(self, fine_level: int, r: np.ndarray) -> np.ndarray:
        fine, coarse = self.system(fine_level), self.system(fine_level - 1)
        T = self.transfer(fine_level)
        ru, rp = fine.split(r)
        rcu = coarse.constraints.project(T.restrict(fine.constraints.project(ru)))
        rcp = T.restrict(rp)
        if coarse.constraints.pressure_kernel:
            rcp = rcp - rcp.mean()
        return coarse.join(rcu, rcp)

    def prolongate_saddle(self, fine_level: int, ec: np.ndarray) -> np.ndarray:
        fine, coarse = self.system(fine_level), self.system(fine_level - 1)
        T = self.transfer(fine_level)
        eu, ep = coarse.split(ec)
        return fine.join(fine.constraints.project(T.prolongate(eu)), T.prolongate(ep))

    def _free_norm(self, system: SaddleSystem, x: np.ndarray, b: np.ndarray) -> float:
        with self.counter.scope("monitor"):
            return system.free_norm(system.residual(x, b))

    def _velocity_norm(self, system: SaddleSystem, u: np.ndarray, f: np.ndarray) -> float:
        with self.counter.scope("monitor"):
            return float(np.linalg.norm(system.constraints.project(f - system.A(u))))


def coarse_velocity_solve(system: SaddleSystem, u: np.ndarray, f: np.ndarray,
                          spec: CoarseSolverSpec) -> Tuple[np.ndarray, Dict]:
    """CG on the constrained velocity block."""
    x, info = conjugate_gradient(system.A, f, u, tol=spec.rel_tol, maxiter=spec.max_iters,
                                 fixed_iterations=spec.fixed_iterations)
    if not info["success"]:
        logger.warning(f"coarse CG stopped at relative residual {info['res_norm']:.3e} after {info['niter']} iterations")
    return x, info


def direct_velocity_solve(system: SaddleSystem, u: np.ndarray, f: np.ndarray) -> Tuple[np.ndarray, Dict]:
    """Exact solve with a sparse LU of the constrained velocity block, factored once per system."""
    key = ("velocity_lu", system.formulation.value)
    if key not in system._cache:
        try:
            system._cache[key] = factorized(constrained_velocity_matrix(system).tocsc())
        except RuntimeError as e:
            logger.warning(f"coarse LU failed on level {system.level} ({e}); using CG to 1e-12")
            system._cache[key] = None
    solve = system._cache[key]
    if solve is None:
        return coarse_velocity_solve(system, u, f, CoarseSolverSpec(rel_tol=1e-12, max_iters=10 * u.size))
    r = f - system.A(u) if np.any(u) else f
    x = u + solve(np.ascontiguousarray(r, dtype=float).ravel()).reshape(u.shape)
    return x, {"niter": 1, "success": True, "res_norm": 0.0}


def block_preconditioner(system: SaddleSystem, inner_iterations: int):
    """Velocity: a few CG steps on A_c; pressure: inverse lumped mass."""
    inv_mass = 1.0 / system.mass

    def pc(v: np.ndarray) -> np.ndarray:
        vu, vp = system.split(v)
        zu, _ = conjugate_gradient(system.A, vu, None, tol=1e-12, fixed_iterations=inner_iterations)
        system.counter.record(OperatorTag.M, system.level)
        return system.join(zu, inv_mass * vp)
    return pc


def coarse_saddle_solve(system: SaddleSystem, x: np.ndarray, b: np.ndarray,
                        spec: CoarseSolverSpec) -> Tuple[np.ndarray, Dict]:
    """Block-diagonally preconditioned MINRES on the constrained saddle system."""
    pc = block_preconditioner(system, spec.inner_velocity_iterations)
    x, info = preconditioned_minres(system.apply, b, x, pc, tol=spec.rel_tol, maxiter=spec.max_iters,
                                    fixed_iterations=spec.fixed_iterations)
    if not info["success"]:
        logger.warning(f"coarse MINRES stopped at {info['res_norm']:.3e} after {info['niter']} iterations")
    u, p = system.split(x)
    return system.join(u, system.project_pressure(p)), info


def coarse_solve(spec: CoarseSolverSpec, system: SaddleSystem, rhs: np.ndarray,
                 x0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Dict]:
    """Level-0 solve dispatched on the coarse solver kind (velocity block or saddle system)."""
    if spec.kind is not CoarseSolverKind.PMINRES_SADDLE:
        n = system.n_nodes
        f = np.asarray(rhs).reshape(n, 3)
        u0 = np.zeros((n, 3)) if x0 is None else np.asarray(x0).reshape(n, 3)
        if spec.kind is CoarseSolverKind.LU_ON_A:
            return direct_velocity_solve(system, u0, f)
        return coarse_velocity_solve(system, u0, f, spec)
    x0 = np.zeros_like(rhs, dtype=float) if x0 is None else x0
    return coarse_saddle_solve(system, x0, rhs, spec)


def velocity_vcycle(mg: StokesMultigrid, level: int, u: np.ndarray, f: np.ndarray, spec: CycleSpec,
                    top: Optional[int] = None, stats: Optional[CycleStats] = None) -> np.ndarray:
    """V or Vvar cycle on A_c u = f with FHGS pre- and BHGS post-smoothing."""
    top = level if top is None else top
    system = mg.system(level)
    if level == 0:
        if spec.coarse.kind is CoarseSolverKind.LU_ON_A:
            u, info = direct_velocity_solve(system, u, f)
        else:
            u, info = coarse_velocity_solve(system, u, f, spec.coarse)
        if stats is not None:
            stats.coarse_iterations.append(info["niter"])
            stats.coarse_failures += 0 if info["success"] else 1
        return u

    n_pre, n_post = spec.smoothing_steps(level, top)
    before = mg._velocity_norm(system, u, f) if mg.trace else None
    plan = velocity_plan(system)
    for _ in range(n_pre):
        u = hybrid_gs_sweep(plan, u, f, SmootherKind.FHGS)
    r = f - system.A(u)
    T = mg.transfer(level)
    coarse = mg.system(level - 1)
    rc = coarse.constraints.project(T.restrict(system.constraints.project(r)))
    ec = velocity_vcycle(mg, level - 1, np.zeros_like(rc), rc, spec, top, stats)
    u = u + system.constraints.project(T.prolongate(ec))
    for _ in range(n_post):
        u = hybrid_gs_sweep(plan, u, f, SmootherKind.BHGS)
    if mg.trace:
        mg.trace.cycle_level(level, n_pre, n_post, before, mg._velocity_norm(system, u, f), system="velocity")
    return u


def saddle_vcycle(mg: StokesMultigrid, level: int, x: np.ndarray, b: np.ndarray, spec: CycleSpec,
                  top: Optional[int] = None, stats: Optional[CycleStats] = None) -> np.ndarray:
    """V or Vvar cycle on K_c x = b with inexact Uzawa smoothing."""
    top = level if top is None else top
    system = mg.system(level)
    if level == 0:
        x, info = coarse_saddle_solve(system, x, b, spec.coarse)
        if stats is not None:
            stats.coarse_iterations.append(info["niter"])
            stats.coarse_failures += 0 if info["success"] else 1
        return x

    n_pre, n_post = spec.smoothing_steps(level, top)
    before = mg._free_norm(system, x, b) if mg.trace else None
    for _ in range(n_pre):
        x = uzawa_step(system, x, b, 1, mg.pressure_omega)
    rc = mg.restrict_saddle(level, system.residual(x, b))
    ec = saddle_vcycle(mg, level - 1, np.zeros_like(rc), rc, spec, top, stats)
    x = x + mg.prolongate_saddle(level, ec)
    for _ in range(n_post):
        x = uzawa_step(system, x, b, 1, mg.pressure_omega)
    if mg.trace:
        mg.trace.cycle_level(level, n_pre, n_post, before, mg._free_norm(system, x, b))
    return x


def vcycle(mg: StokesMultigrid, level: int, x: np.ndarray, rhs: np.ndarray, spec: CycleSpec,
           system: str = "saddle", stats: Optional[CycleStats] = None) -> np.ndarray:
    """One cycle started on `level`: system is 'velocity' (A_c block) or 'saddle'."""
    if spec.kind is CycleKind.FMG:
        raise ValueError("use fmg() for full multigrid")
    if system == "velocity":
        return velocity_vcycle(mg, level, x, rhs, spec, level, stats)
    return saddle_vcycle(mg, level, x, rhs, spec, level, stats)


def fmg(mg: StokesMultigrid, spec: CycleSpec, force=None, quadrature: str = "gauss4",
        stats: Optional[CycleStats] = None) -> Tuple[np.ndarray, Dict[int, np.ndarray]]:
    """
    Full multigrid from a zero start on level 0.

    The right-hand side is re-assembled on every level. Each level runs
    spec.fmg_inner_cycles variable V-cycles. Returns the finest iterate and the
    iterate reached on every level.
    """
    stats = stats or CycleStats()
    b = mg.rhs(0, force, quadrature)
    system = mg.system(0)
    x, info = coarse_saddle_solve(system, np.zeros_like(b), b, spec.coarse)
    stats.coarse_iterations.append(info["niter"])
    per_level = {0: x.copy()}
    inner = CycleSpec(kind=CycleKind.VVAR, n_pre=spec.n_pre, n_post=spec.n_post, coarse=spec.coarse)
    for level in range(1, mg.L + 1):
        system = mg.system(level)
        b = mg.rhs(level, force, quadrature)
        coarse_sys = mg.system(level - 1)
        cu, cp = coarse_sys.split(x)
        T = mg.transfer(level)
        x = system.impose(system.join(T.prolongate(cu), T.prolongate(cp)), b)
        for _ in range(spec.fmg_inner_cycles):
            x = saddle_vcycle(mg, level, x, b, inner, level, stats)
        u, p = system.split(x)
        x = system.join(u, system.project_pressure(p))
        per_level[level] = x.copy()
        logger.debug({"evt": "fmg_level", "level": level, "cycles": spec.fmg_inner_cycles})
    return x, per_level
