"""
Cost accounting: workload-weighted operator counts, closed-form UMG counts, (parallel)
textbook multigrid efficiency, the memory model and the FMG accuracy ratio.

Everything here is a pure function of its inputs except measure_lups, which times
smoother sweeps on this machine.
"""

import time
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from src.errors import DegenerateSolutionError
from src.fields import PressureField, StokesVector, h_norm
from src.mesh import refine_hierarchy, unit_cube_mesh
from src.models import (
    Formulation,
    LupsReport,
    MemoryModel,
    OpCountReport,
    OperatorTag,
    SmootherKind,
    SolverKind,
    TMEReport,
)
from src.operators import OperatorCounter, assemble_level_operators, build_saddle_system
from src.smoothers import hybrid_gs_sweep, velocity_plan

# One work unit = one Stokes operator application: 3 blocks A, 6 blocks B/Bt, 1 block C
WU_BLOCKS = 10
BYTES_PER_VALUE = 8
DEFAULT_MU_SM = 23.9e6
DEFAULT_MU_D = 3.25

# Published operator evaluations on level 6 of the unit cube, (A, B, C, M)
REFERENCE_COUNTS: Dict[Tuple[SolverKind, Formulation], Tuple[int, int, int, int]] = {
    (SolverKind.SCG, Formulation.LAPLACE): (463, 72, 36, 31),
    (SolverKind.PMINRES, Formulation.LAPLACE): (305, 136, 68, 68),
    (SolverKind.UMG, Formulation.LAPLACE): (129, 138, 69, 0),
    (SolverKind.SCG, Formulation.DOP): (273, 44, 22, 16),
    (SolverKind.PMINRES, Formulation.DOP): (282, 126, 63, 63),
    (SolverKind.UMG, Formulation.DOP): (129, 138, 69, 0),
}

GROUPS = ("A", "B", "C", "M")


def reference_counts(kind: SolverKind, formulation: Formulation) -> Dict[str, float]:
    return dict(zip(GROUPS, map(float, REFERENCE_COUNTS[(SolverKind(kind), Formulation(formulation))])))


def level_weight(level: int, L: int) -> float:
    return 8.0 ** (level - L)


def weighted_op_count(raw: Mapping[str, Mapping[int, int]], L: int,
                      mu_d: float = DEFAULT_MU_D, min_level: int = 0) -> OpCountReport:
    """
    n_op = sum_l 8^(l-L) n_op,l per tag, then summed into the groups A, B, C, M.

    Levels below min_level are left out (min_level=1 drops coarse-grid work).
    totals holds n_total for both formulations.
    """
    weighted: Dict[str, float] = {}
    for tag, per_level in raw.items():
        for level, n in per_level.items():
            if n < 0:
                raise ValueError(f"negative count for {tag} on level {level}")
            if int(level) < min_level:
                continue
            weighted[tag] = weighted.get(tag, 0.0) + level_weight(int(level), L) * n
    groups = {g: 0.0 for g in GROUPS}
    for tag, value in weighted.items():
        groups[OperatorTag(tag).group] += value
    totals = {
        Formulation.LAPLACE.value: n_total(groups, Formulation.LAPLACE, mu_d),
        Formulation.DOP.value: n_total(groups, Formulation.DOP, mu_d),
    }
    return OpCountReport(L=L, raw={t: dict(v) for t, v in raw.items()}, weighted=groups, totals=totals)


def predict_umg_counts(L: int, n_I: float, n: int = 3, include_coarsest: bool = True) -> Dict[str, float]:
    """
    Weighted operator counts of n_I UMG iterations with Vvar(n, n) cycles.

    A: n_I sum 8^(l-L) (4(n + 2(L-l)) + 1); B: the same with +2; C = B / 2; M is left at 0.
    """
    if L < 0:
        raise ValueError("L must be >= 0")
    lo = 0 if include_coarsest else 1
    a = b = 0.0
    for level in range(lo, L + 1):
        steps = 4 * (n + 2 * (L - level))
        a += level_weight(level, L) * (steps + 1)
        b += level_weight(level, L) * (steps + 2)
    return {"A": n_I * a, "B": n_I * b, "C": n_I * b / 2.0, "M": 0.0}


def n_total(counts: Mapping[str, float], formulation: Formulation, mu_d: float = DEFAULT_MU_D) -> float:
    """3 A + 3 B + C + M, with A scaled by mu_d for the symmetric-gradient block."""
    scale = mu_d if Formulation(formulation) is Formulation.DOP else 1.0
    return 3.0 * scale * counts.get("A", 0.0) + 3.0 * counts.get("B", 0.0) + counts.get("C", 0.0) + counts.get("M", 0.0)


def formulation_ratio(counts_laplace: Mapping[str, float], counts_dop: Mapping[str, float],
                      mu_d: float = DEFAULT_MU_D) -> float:
    """n_total(dop) / n_total(laplace)."""
    if mu_d <= 0:
        raise ValueError("mu_d must be positive")
    return n_total(counts_dop, Formulation.DOP, mu_d) / n_total(counts_laplace, Formulation.LAPLACE)


def e_tme(n: int = 2, wu_per_smooth: float = 1.3, K: int = 20, L: Optional[int] = None) -> float:
    """
    Work units of FMG with Vvar(n, n) cycles.

    sum_{k<K} 8^-k sum_{l=1..L} 8^(l-L) (2 (n + 2(L-l)) wu + 1); L defaults to K, and
    K around 10 or more gives the large-L limit.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    L = K if L is None else L
    inner = sum(level_weight(level, L) * (2 * (n + 2 * (L - level)) * wu_per_smooth + 1)
                for level in range(1, L + 1))
    outer = sum(8.0 ** -k for k in range(K))
    return outer * inner


def e_partme(t: float, n_c: int, n: float, mu_sm: float = DEFAULT_MU_SM) -> float:
    """t n_c mu_sm / n: wall time measured in ideal per-thread work units."""
    if t <= 0 or n_c <= 0 or n <= 0 or mu_sm <= 0:
        raise ValueError("e_partme needs positive t, n_c, n and mu_sm")
    return t * n_c * mu_sm / n


def tme_report(t: Optional[float] = None, n: Optional[float] = None, n_c: int = 1,
               mu_sm: float = DEFAULT_MU_SM, cycle_n: int = 2) -> TMEReport:
    partme = e_partme(t, n_c, n, mu_sm) if t is not None and n is not None else None
    return TMEReport(wu_blocks=WU_BLOCKS, e_tme=e_tme(cycle_n), e_partme=partme,
                     mu_sm=mu_sm, n_c=n_c, t=t, n=n)


def memory_model(n_u: float, n_p: float, L: int, on_the_fly: bool = False,
                 extra_vectors: int = 0) -> MemoryModel:
    """
    Bytes for solution, right-hand side and residual on every level.

    on_the_fly drops the finest right-hand side. extra_vectors adds solver work vectors
    on the finest level.
    """
    if n_u < 0 or n_p < 0 or L < 0 or extra_vectors < 0:
        raise ValueError("memory_model needs nonnegative inputs")
    dofs = float(n_u) + float(n_p)
    if on_the_fly:
        coarse = sum(level_weight(level, L) for level in range(L))
        total = 2 * dofs * BYTES_PER_VALUE + 3 * dofs * coarse * BYTES_PER_VALUE
    else:
        total = 3 * dofs * sum(level_weight(level, L) for level in range(L + 1)) * BYTES_PER_VALUE
    total += extra_vectors * dofs * BYTES_PER_VALUE
    return MemoryModel(n_u=n_u, n_p=n_p, L=L, on_the_fly=on_the_fly,
                       extra_vectors=extra_vectors, bytes_total=total)


def _pressure_error(err: StokesVector, weights: Optional[np.ndarray]) -> StokesVector:
    p = err.p.data
    w = np.ones_like(p) if weights is None else weights
    p = p - float(np.dot(w, p)) / float(np.sum(w))
    return StokesVector(err.u, PressureField(err.level, p))


def gamma_ratio(x_fmg: StokesVector, x_ref: StokesVector, exact: StokesVector, h: float,
                weights: Optional[np.ndarray] = None) -> Tuple[float, float, float]:
    """
    (gamma, total error, discretization error) in the h-dependent norm.

    Pressure errors are compared modulo constants (weighted by `weights`, e.g. lumped mass).
    """
    total = h_norm(_pressure_error(_difference(exact, x_fmg), weights), h)
    disc = h_norm(_pressure_error(_difference(exact, x_ref), weights), h)
    if disc <= 0.0:
        raise DegenerateSolutionError("discretization error is zero; gamma is undefined")
    return total / disc, total, disc


def _difference(a: StokesVector, b: StokesVector) -> StokesVector:
    return StokesVector.from_flat(a.level, a.flat() - b.flat())


def measure_lups(level: int = 3, sweeps: int = 10, runs: int = 3, hierarchy=None) -> LupsReport:
    """
    Time forward hybrid sweeps of the Laplace velocity block and report node updates per second.

    One vector sweep counts as three scalar sweeps. Runs shorter than 50 ms in total are
    flagged as below timer resolution.
    """
    if sweeps < 1 or runs < 1:
        raise ValueError("sweeps and runs must be >= 1")
    hierarchy = hierarchy or refine_hierarchy(unit_cube_mesh(), level)
    counter = OperatorCounter()
    with counter.scope("setup"):
        ops = assemble_level_operators(hierarchy, level, 1.0, counter, [OperatorTag.A1])
        system = build_saddle_system(ops, Formulation.LAPLACE)
        plan = velocity_plan(system)
    grid = hierarchy.level(level)
    rng = np.random.default_rng(0)
    u = rng.random((grid.n_nodes, 3))
    f = np.zeros_like(u)
    updates = 3 * plan.n_updates * sweeps

    values, elapsed = [], 0.0
    for _ in range(runs):
        start = time.perf_counter()
        for _ in range(sweeps):
            u = hybrid_gs_sweep(plan, u, f, SmootherKind.FHGS)
        dt = time.perf_counter() - start
        elapsed += dt
        values.append(updates / dt if dt > 0 else float("inf"))

    finite = [v for v in values if np.isfinite(v)]
    mean = float(np.mean(finite)) if finite else float("inf")
    spread = float((max(finite) - min(finite)) / mean) if len(finite) > 1 and mean > 0 else 0.0
    warning = None
    if elapsed < 0.05:
        warning = f"total timed {elapsed * 1e3:.1f} ms is below 50 ms; increase sweeps or level"
        logger.warning(warning)
    logger.info({"evt": "lups", "level": level, "mean": mean, "spread": round(spread, 4)})
    return LupsReport(level=level, nodes=grid.n_nodes, sweeps=sweeps, runs=values, mean=mean,
                      spread=spread, total_seconds=elapsed, warning=warning)
