"""
Outer Stokes solvers: Schur-complement CG (SCG), block-preconditioned MINRES (PMINRES)
and all-at-once Uzawa multigrid (UMG), plus the FMG accuracy study.

All three share one stopping test: the free-DoF residual of the constrained saddle system
relative to the residual of the stored start vector. Monitoring work is counted under its
own counter scope and never shows up in the reported operator counts.
"""

import time
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from src.errors import ConfigError
from src.fields import PressureField, StokesVector, VelocityField, random_initial
from src.krylov import preconditioned_minres
from src.mesh import GridHierarchy, free_dof_counts, node_counts
from src.metrics import gamma_ratio, memory_model
from src.models import (
    AccuracyLevel,
    AccuracyReport,
    CycleSpec,
    OperatorTag,
    RunResult,
    SolverConfig,
    SolverKind,
)
from src.multigrid import CycleStats, StokesMultigrid, fmg, saddle_vcycle, velocity_vcycle
from src.operators import BCSpec, OperatorCounter, SaddleSystem
from src.problems import StokesProblem

# Vectors held by each solver on top of solution, rhs and residual
EXTRA_VECTORS = {SolverKind.SCG: 3, SolverKind.PMINRES: 10, SolverKind.UMG: 0}


def check_stop(system: SaddleSystem, x0: np.ndarray, xk: np.ndarray, rhs: np.ndarray,
               eps: float) -> Tuple[float, bool]:
    """Relative free-DoF residual |K x_k - b| / |K x_0 - b| and whether it is <= eps."""
    with system.counter.scope("monitor"):
        base = system.free_norm(system.residual(x0, rhs))
        if base == 0.0:
            return 0.0, True
        rel = system.free_norm(system.residual(xk, rhs)) / base
    return rel, rel <= eps


class _Monitor:
    """Residual history against a fixed start residual."""

    def __init__(self, system: SaddleSystem, rhs: np.ndarray, x0: np.ndarray, eps: float, label: str):
        self.system = system
        self.rhs = rhs
        self.eps = eps
        self.label = label
        self.history: List[float] = [1.0]
        self.base = self.norm(x0)

    def norm(self, x: np.ndarray) -> float:
        with self.system.counter.scope("monitor"):
            return self.system.free_norm(self.system.residual(x, self.rhs))

    def record(self, k: int, rel: float) -> bool:
        if rel > 0.0:
            self.history.append(rel)
        logger.debug(f"[{self.label}] it {k}: rel residual {rel:.3e}")
        return rel <= self.eps

    def check(self, k: int, x: np.ndarray) -> bool:
        return self.record(k, self.norm(x) / self.base)


def _multigrid(target: Union[StokesMultigrid, GridHierarchy], cfg: SolverConfig,
               counter: Optional[OperatorCounter] = None) -> StokesMultigrid:
    if isinstance(target, StokesMultigrid):
        if target.formulation is not cfg.formulation:
            raise ConfigError(f"multigrid built for {target.formulation.value}, solver asks for {cfg.formulation.value}")
        return target
    return StokesMultigrid(target, cfg.formulation, BCSpec(nu=cfg.nu), counter, cfg.pressure_omega)


def _project(system: SaddleSystem, x: np.ndarray) -> np.ndarray:
    u, p = system.split(x)
    return system.join(u, system.project_pressure(p))


def _scg(cfg: SolverConfig, mg: StokesMultigrid, level: int, x: np.ndarray, mon: _Monitor,
         stats: CycleStats) -> Tuple[np.ndarray, int, bool]:
    system = mg.system(level)
    spec = cfg.cycle
    u, p = system.split(x)
    u, p = u.copy(), p.copy()
    f_u, g = system.split(mon.rhs)
    inv_mass = 1.0 / system.mass
    kernel = system.constraints.pressure_kernel

    def precondition(r: np.ndarray) -> np.ndarray:
        system.counter.record(OperatorTag.M, level)
        return inv_mass * r

    for k in range(1, cfg.max_iterations + 1):
        f_eff = f_u - system.Bt(p)
        for _ in range(cfg.n_A):
            u = velocity_vcycle(mg, level, u, f_eff, spec, level, stats)

        # CG on S p = B A^-1 f - g started from p; u moves only in the next velocity solve
        r = system.B(u) - system.C(p) - g
        if kernel:
            r = r - r.mean()
        z = precondition(r)
        d = z.copy()
        rz = float(np.dot(r, z))
        for _ in range(cfg.n_S):
            if rz <= 0.0:
                break
            y = np.zeros_like(u)
            bd = system.Bt(d)
            for _ in range(cfg.n_I):
                y = velocity_vcycle(mg, level, y, bd, spec, level, stats)
            Sd = system.B(y) + system.C(d)
            dSd = float(np.dot(d, Sd))
            if dSd <= 0.0:
                logger.warning(f"[SCG] non-positive Schur curvature {dSd:.3e} at outer iteration {k}")
                break
            alpha = rz / dSd
            p += alpha * d
            r -= alpha * Sd
            z = precondition(r)
            rz_new = float(np.dot(r, z))
            d = z + (rz_new / rz) * d
            rz = rz_new

        p = system.project_pressure(p)
        x = system.join(u, p)
        if mon.check(k, x):
            return x, k, True
    return x, cfg.max_iterations, False


def _pminres(cfg: SolverConfig, mg: StokesMultigrid, level: int, x: np.ndarray, mon: _Monitor,
             stats: CycleStats) -> Tuple[np.ndarray, int, bool]:
    system = mg.system(level)
    spec = cfg.cycle
    inv_mass = 1.0 / system.mass

    def pc(v: np.ndarray) -> np.ndarray:
        vu, vp = system.split(v)
        zu = velocity_vcycle(mg, level, np.zeros_like(vu), vu, spec, level, stats)
        system.counter.record(OperatorTag.M, level)
        return system.join(zu, inv_mass * vp)

    def callback(k: int, _x: np.ndarray, rel: float) -> None:
        mon.record(k, rel)

    x, info = preconditioned_minres(system.apply, mon.rhs, x, pc, tol=cfg.eps, maxiter=cfg.max_iterations,
                                    residual_norm=mon.norm, callback=callback)
    if info["breakdown"]:
        logger.warning(f"[PMINRES] breakdown after {info['niter']} iterations")
    return _project(system, x), info["niter"], bool(info["success"])


def _umg(cfg: SolverConfig, mg: StokesMultigrid, level: int, x: np.ndarray, mon: _Monitor,
         stats: CycleStats) -> Tuple[np.ndarray, int, bool]:
    system = mg.system(level)
    for k in range(1, cfg.max_iterations + 1):
        x = _project(system, saddle_vcycle(mg, level, x, mon.rhs, cfg.cycle, level, stats))
        if mon.check(k, x):
            return x, k, True
    return x, cfg.max_iterations, False


_DISPATCH: Dict[SolverKind, Callable] = {
    SolverKind.SCG: _scg,
    SolverKind.PMINRES: _pminres,
    SolverKind.UMG: _umg,
}


def run_solver(cfg: SolverConfig, target: Union[StokesMultigrid, GridHierarchy],
               rhs: Optional[np.ndarray] = None, x0: Optional[np.ndarray] = None,
               level: Optional[int] = None) -> Tuple[RunResult, np.ndarray]:
    """
    Solve K_c x = rhs on `level` (default: finest) and return the run record and the iterate.

    rhs defaults to the homogeneous problem. x0 defaults to the seeded random start vector;
    Dirichlet values are imposed on it and its pressure is mean-projected when needed.
    """
    if cfg.cycle is None:
        cfg = cfg.model_copy(update={"cycle": SolverConfig.defaults(cfg.kind, cfg.formulation).cycle})
    mg = _multigrid(target, cfg)
    level = mg.L if level is None else level
    system = mg.system(level)
    if rhs is None:
        rhs = mg.rhs(level)
    if x0 is None:
        x0 = random_initial(mg.hierarchy, level, cfg.seed).flat()
    x0 = _project(system, system.impose(np.asarray(x0, dtype=float), rhs))

    mg.counter.reset("solve")
    mg.counter.reset("monitor")
    stats = CycleStats()
    label = cfg.kind.value.upper()
    mon = _Monitor(system, rhs, x0, cfg.eps, label)

    start = time.perf_counter()
    if mon.base == 0.0:
        x, iterations, converged = x0, 0, True
    else:
        x, iterations, converged = _DISPATCH[cfg.kind](cfg, mg, level, x0.copy(), mon, stats)
    wall = time.perf_counter() - start

    n_u, n_p = node_counts(system.grid)
    result = RunResult(
        iterations=iterations,
        coarse_iterations=stats.coarse_iterations,
        residual_history=mon.history,
        wall_time=wall,
        op_counts=mg.counter.counts("solve"),
        memory_model=int(memory_model(n_u, n_p, level, extra_vectors=EXTRA_VECTORS[cfg.kind]).bytes_total),
        converged=converged,
    )
    if not converged:
        logger.warning(f"[{label}] not converged after {iterations} iterations "
                       f"(rel residual {mon.history[-1]:.3e})")
    logger.info({"evt": "solve_done", "solver": cfg.kind.value, "formulation": cfg.formulation.value,
                 "level": level, "iterations": iterations, "converged": converged, "wall_time": round(wall, 4)})
    return result, x


def solve(cfg: SolverConfig, target: Union[StokesMultigrid, GridHierarchy],
          rhs: Optional[np.ndarray] = None) -> RunResult:
    return run_solver(cfg, target, rhs)[0]


def _require(cfg: SolverConfig, kind: SolverKind) -> None:
    if cfg.kind is not kind:
        raise ConfigError(f"{kind.value} solver called with a {cfg.kind.value} configuration")


def solve_scg(cfg: SolverConfig, target: Union[StokesMultigrid, GridHierarchy],
              rhs: Optional[np.ndarray] = None) -> RunResult:
    """Alternate n_A velocity V-cycles with n_S lumped-mass preconditioned CG steps on the Schur complement."""
    _require(cfg, SolverKind.SCG)
    return solve(cfg, target, rhs)


def solve_pminres(cfg: SolverConfig, target: Union[StokesMultigrid, GridHierarchy],
                  rhs: Optional[np.ndarray] = None) -> RunResult:
    """MINRES with diag(one velocity V(1,1) cycle, lumped mass) as preconditioner."""
    _require(cfg, SolverKind.PMINRES)
    return solve(cfg, target, rhs)


def solve_umg(cfg: SolverConfig, target: Union[StokesMultigrid, GridHierarchy],
              rhs: Optional[np.ndarray] = None) -> RunResult:
    """Saddle-point Vvar cycles with Uzawa smoothing until the residual drops below eps."""
    _require(cfg, SolverKind.UMG)
    return solve(cfg, target, rhs)


def interpolant(problem: StokesProblem, system: SaddleSystem) -> StokesVector:
    """Nodal interpolant of the analytic solution; pressure made mean-free with mass weights."""
    grid = system.grid
    u = np.asarray(problem.exact_velocity(grid.coords), dtype=float).reshape(grid.n_nodes, 3)
    p = np.asarray(problem.exact_pressure(grid.coords), dtype=float)
    p = p - float(np.dot(system.mass, p)) / float(system.mass.sum())
    return StokesVector(VelocityField(grid.level_index, u), PressureField(grid.level_index, p))


def fmg_accuracy_report(mg: StokesMultigrid, spec: CycleSpec, problem: StokesProblem,
                        reference_eps: float = 1e-12, quadrature: str = "gauss4",
                        levels: Optional[Iterable[int]] = None,
                        references: Optional[Dict[int, np.ndarray]] = None) -> AccuracyReport:
    """
    Total error of one FMG run against the discretization error on every level.

    The discrete reference on each level is a UMG solve to reference_eps started from the FMG
    iterate. Levels default to 1..L. Pass a dict as `references` to share the discrete
    references between variants (filled on first use).
    """
    if not problem.has_exact_solution:
        raise ConfigError(f"problem {problem.name!r} has no analytic solution")
    if mg.bc.dirichlet_value is not problem.dirichlet:
        raise ConfigError("multigrid boundary data does not match the problem; build it with problem.bc")
    _, per_level = fmg(mg, spec, problem.force, quadrature)
    ref_cfg = SolverConfig.defaults(SolverKind.UMG, mg.formulation, eps=reference_eps, max_iterations=200,
                                  nu=mg.bc.nu, pressure_omega=mg.pressure_omega)
    references = {} if references is None else references
    report = AccuracyReport(variant=spec.label)
    for level in (levels if levels is not None else range(1, mg.L + 1)):
        system = mg.system(level)
        rhs = mg.rhs(level, problem.force, quadrature)
        if level not in references:
            _, references[level] = run_solver(ref_cfg, mg, rhs, per_level[level], level)
        x_ref = references[level]
        exact = interpolant(problem, system)
        fmg_vec = StokesVector.from_flat(level, per_level[level])
        ref_vec = StokesVector.from_flat(level, x_ref)
        h = system.grid.h_ell
        gamma, total, disc = gamma_ratio(fmg_vec, ref_vec, exact, h, system.mass)
        n_u, n_p = free_dof_counts(system.grid)
        report.add(AccuracyLevel(level=level, h=h, dofs=n_u + n_p, total_error=total,
                                 discretization_error=disc, gamma=gamma))
        logger.debug({"evt": "fmg_gamma", "variant": spec.label, "level": level, "gamma": round(gamma, 4)})
    return report
