"""
stokesbench command-line harness.

Subcommands:
    run           iteration numbers and time-to-solution of the outer solvers
    fmg           total vs. discretization error of the FMG variants
    predict       memory model, closed-form operator counts, TME figures
    measure-lups  smoother throughput on this machine

Flags override the values of a JSON --config file. Exit code is 0 iff every requested
run converged, 2 on configuration errors, 1 on other failures.
"""

import argparse
import asyncio
import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from loguru import logger
from pydantic import ValidationError

from src.config import get_config, setup_logging
from src.errors import ConfigError, StokesBenchError
from src.mesh import (
    CoarseMesh,
    GridHierarchy,
    free_dof_counts,
    load_coarse_mesh,
    predict_dof_counts,
    refine_hierarchy,
    unit_cube_mesh,
)
from src.metrics import (
    formulation_ratio,
    measure_lups,
    memory_model,
    predict_umg_counts,
    reference_counts,
    tme_report,
)
from src.models import (
    AccuracyReport,
    BenchConfig,
    CoarseSolverKind,
    CoarseSolverSpec,
    CycleSpec,
    Formulation,
    LupsReport,
    ReportFormat,
    SolverConfig,
    SolverKind,
    TableArtifact,
    TableRow,
)
from src.multigrid import StokesMultigrid, transfer_for
from src.problems import manufactured_problem
from src.solvers import fmg_accuracy_report, run_solver
from src.utils import report
from src.utils.trace import CycleTrace

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def parse_levels(text: str) -> Tuple[int, int]:
    """'2..4' -> (2, 4); a single number selects one level."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return int(lo), int(hi)
        return int(text), int(text)
    except ValueError as e:
        raise ConfigError(f"cannot parse level range {text!r}; expected A..B") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stokesbench", description="Matrix-free multigrid Stokes solver benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None, help="JSON file with BenchConfig fields")
        src = p.add_mutually_exclusive_group()
        src.add_argument("--mesh", type=str, default=None, help="Coarse mesh file (tetmesh format)")
        src.add_argument("--unit-cube", action="store_true", help="Use the builtin unit cube (default)")
        p.add_argument("--formulation", choices=[f.value for f in Formulation], default=None)
        p.add_argument("--levels", type=str, default=None, help="Level range A..B")
        p.add_argument("--format", choices=[f.value for f in ReportFormat], default=None)
        p.add_argument("--out", type=str, default=None, help="Output directory")
        p.add_argument("--log-level", type=str, default=None)

    p_run = sub.add_parser("run", help="Run solver comparisons")
    common(p_run)
    p_run.add_argument("--solvers", type=str, default=None, help="Comma-separated: scg,pminres,umg")
    p_run.add_argument("--eps", type=float, default=None, help="Relative residual tolerance")
    p_run.add_argument("--seed", type=int, default=None, help="Seed of the random initial guess")
    p_run.add_argument("--coarse", choices=["tol", "fixed5"], default=None, help="Coarse-grid solver mode")
    p_run.add_argument("--jobs", type=int, default=None, help="Concurrent independent runs")
    p_run.add_argument("--include-setup", action="store_true", help="Report setup seconds separately")
    p_run.add_argument("--trace", action="store_true", help="Write JSONL cycle traces next to the table")

    p_fmg = sub.add_parser("fmg", help="FMG accuracy study on the manufactured solution")
    common(p_fmg)
    p_fmg.add_argument("--variants", type=str, default=None, help="Comma-separated, e.g. 1Vvar(1,1),2Vvar(2,2)")
    p_fmg.add_argument("--coarse", choices=["tol", "fixed5"], default=None)

    p_pred = sub.add_parser("predict", help="Memory, operator-count and TME predictions")
    common(p_pred)
    p_pred.add_argument("--n-i", dest="n_I", type=int, default=None, help="UMG iterations for op-count prediction")
    p_pred.add_argument("--time", dest="measured_time", type=float, default=None, help="Measured seconds for E_parTME")
    p_pred.add_argument("--dofs", type=float, default=None, help="DoFs for E_parTME")
    p_pred.add_argument("--threads", type=int, default=None, help="Thread count n_c for E_parTME")
    p_pred.add_argument("--mu-sm", dest="mu_sm", type=float, default=None, help="Node updates per second and thread")
    p_pred.add_argument("--mu-d", dest="mu_d", type=float, default=None, help="Cost factor of the symmetric-gradient block")
    p_pred.add_argument("--setup-table", action="store_true", help="Include the solver setup table")

    p_lups = sub.add_parser("measure-lups", help="Time hybrid Gauss-Seidel sweeps")
    p_lups.add_argument("--level", type=int, default=3)
    p_lups.add_argument("--sweeps", type=int, default=10)
    p_lups.add_argument("--runs", type=int, default=3)
    p_lups.add_argument("--format", choices=["csv", "json"], default="csv")
    p_lups.add_argument("--log-level", type=str, default=None)
    return parser


def load_bench_config(args: argparse.Namespace) -> BenchConfig:
    """File values first, then CLI flags on top."""
    data: Dict[str, Any] = {}
    settings = get_config()
    data["levels"] = settings.bench.default_levels
    data["output_dir"] = str(settings.bench.output_dir)
    data["jobs"] = settings.bench.jobs
    data["trace"] = settings.bench.trace_cycles
    data["eps"] = settings.solver.eps
    data["seeds"] = [settings.solver.seed]
    data["coarse_mode"] = settings.multigrid.coarse_mode
    data["mu_sm"] = settings.metrics.mu_sm
    data["mu_d"] = settings.metrics.mu_d
    if getattr(args, "config", None):
        try:
            data.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}") from e

    if getattr(args, "mesh", None):
        data["mesh"] = args.mesh
    if getattr(args, "unit_cube", False):
        data["mesh"] = None
    if getattr(args, "solvers", None) is not None:
        data["solvers"] = [s.strip() for s in args.solvers.split(",") if s.strip()]
    if getattr(args, "levels", None):
        data["levels"] = parse_levels(args.levels)
    if getattr(args, "seed", None) is not None:
        data["seeds"] = [args.seed]
    if getattr(args, "coarse", None):
        data["coarse_mode"] = args.coarse
    if getattr(args, "out", None):
        data["output_dir"] = args.out
    if getattr(args, "include_setup", False):
        data["include_setup"] = True
    if getattr(args, "trace", False):
        data["trace"] = True
    if getattr(args, "variants", None) is not None:
        data["fmg_variants"] = [v.strip() for v in args.variants.split(",") if v.strip()]
    for key in ("formulation", "eps", "format", "jobs", "n_I", "measured_time", "dofs", "threads", "mu_sm", "mu_d"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    try:
        return BenchConfig(**data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_mesh(cfg: BenchConfig) -> CoarseMesh:
    return unit_cube_mesh() if cfg.mesh is None else load_coarse_mesh(cfg.mesh)


def tune_coarse(spec: CoarseSolverSpec) -> CoarseSolverSpec:
    """Apply the multigrid settings (tolerances, limits, inner CG steps) to a coarse solver spec."""
    mg = get_config().multigrid
    rel_tol = mg.pminres_rel_tol if spec.kind is CoarseSolverKind.PMINRES_SADDLE else mg.cg_rel_tol
    return spec.model_copy(update={"rel_tol": rel_tol, "max_iters": mg.coarse_max_iterations,
                                   "inner_velocity_iterations": mg.inner_velocity_cg})


def _solver_config(cfg: BenchConfig, kind: SolverKind, seed: int) -> SolverConfig:
    settings = get_config()
    overrides: Dict[str, Any] = {"eps": cfg.eps, "seed": seed, "nu": settings.solver.nu,
                                 "pressure_omega": settings.multigrid.pressure_omega}
    if kind is SolverKind.SCG:
        overrides.update(n_A=settings.solver.scg_n_a, n_S=settings.solver.scg_n_s, n_I=settings.solver.scg_n_i,
                         max_iterations=settings.solver.max_iterations)
    elif kind is SolverKind.PMINRES:
        overrides["max_iterations"] = settings.solver.pminres_max_iterations
    else:
        overrides["max_iterations"] = settings.solver.max_iterations
    solver_cfg = SolverConfig.defaults(kind, cfg.formulation, cfg.coarse_mode, **overrides)
    cycle = solver_cfg.cycle.model_copy(update={"coarse": tune_coarse(solver_cfg.cycle.coarse)})
    return solver_cfg.model_copy(update={"cycle": cycle})


def run_one(cfg: BenchConfig, hierarchy: GridHierarchy, kind: SolverKind, level: int) -> TableRow:
    """One (solver, level) row; failures are recorded in the row, never raised."""
    grid = hierarchy.level(level)
    n_u, n_p = free_dof_counts(grid)
    row = TableRow(solver=kind.value, formulation=cfg.formulation.value, level=level, dofs=n_u + n_p,
                   iterations=0, time_s=0.0)
    try:
        iterations, times, coarse, converged = [], [], 0, True
        setup_s = 0.0
        for seed in cfg.seeds:
            solver_cfg = _solver_config(cfg, kind, seed)
            trace = None
            if cfg.trace:
                trace = CycleTrace(Path(cfg.output_dir) / f"trace_{kind.value}_{cfg.formulation.value}_L{level}_s{seed}.jsonl")
            start = time.perf_counter()
            mg = StokesMultigrid(hierarchy.truncated(level), cfg.formulation, counter=None,
                                 pressure_omega=solver_cfg.pressure_omega, trace=trace)
            rhs = mg.rhs(level)
            setup_s += time.perf_counter() - start
            result, _ = run_solver(solver_cfg, mg, rhs)
            iterations.append(result.iterations)
            times.append(result.wall_time)
            coarse = max(coarse, sum(result.coarse_iterations))
            converged = converged and result.converged
            row.op_counts = report.op_count_columns(result.op_counts)
        row.iterations = max(iterations)
        row.time_s = sum(times) / len(times)
        row.coarse_iterations = coarse
        row.converged = converged
        if cfg.include_setup:
            row.setup_s = setup_s / len(cfg.seeds)
    except StokesBenchError as e:
        logger.error(f"[{kind.value} L{level}] {e}")
        row.error = str(e)
    except Exception as e:
        logger.exception(f"[{kind.value} L{level}] unexpected failure")
        row.error = f"{type(e).__name__}: {e}"
    return row


async def _run_concurrently(cfg: BenchConfig, hierarchy: GridHierarchy,
                            tasks: Sequence[Tuple[SolverKind, int]]) -> List[TableRow]:
    sem = asyncio.Semaphore(cfg.jobs)

    async def one(kind: SolverKind, level: int) -> TableRow:
        async with sem:
            logger.info(f"Starting {kind.value} on level {level}")
            return await asyncio.to_thread(run_one, cfg, hierarchy, kind, level)

    return list(await asyncio.gather(*(one(kind, level) for kind, level in tasks)))


def cmd_run(cfg: BenchConfig, hierarchy: Optional[GridHierarchy] = None) -> TableArtifact:
    """Every (solver, level) pair of the configuration, in solver-major order."""
    mesh = hierarchy.coarse_mesh if hierarchy is not None else load_mesh(cfg)
    top = max(cfg.level_range)
    hierarchy = hierarchy if hierarchy is not None else refine_hierarchy(mesh, top)
    for fine in range(1, top + 1):
        transfer_for(hierarchy, fine)

    tasks = [(kind, level) for kind in cfg.solvers for level in cfg.level_range]
    if cfg.jobs > 1:
        rows = asyncio.run(_run_concurrently(cfg, hierarchy, tasks))
    else:
        rows = [run_one(cfg, hierarchy, kind, level) for kind, level in tasks]

    artifact = TableArtifact(format=cfg.format, metadata={
        "mesh": mesh.name,
        "formulation": cfg.formulation.value,
        "eps": cfg.eps,
        "seeds": cfg.seeds,
        "coarse_mode": cfg.coarse_mode.value,
        "jobs": cfg.jobs,
        "units": {"time_s": "seconds", "setup_s": "seconds", "dofs": "count", "iterations": "count"},
    })
    for row in rows:
        artifact.add(row)
    return artifact


def cmd_fmg(cfg: BenchConfig, hierarchy: Optional[GridHierarchy] = None) -> List[AccuracyReport]:
    """One accuracy report per FMG variant over the configured levels (level 0 is skipped)."""
    problem = manufactured_problem(get_config().solver.nu)
    top = max(cfg.level_range)
    hierarchy = hierarchy if hierarchy is not None else refine_hierarchy(load_mesh(cfg), top)
    mg = StokesMultigrid(hierarchy.truncated(top), cfg.formulation, problem.bc,
                         pressure_omega=get_config().multigrid.pressure_omega)
    coarse = tune_coarse(CoarseSolverSpec.for_kind(CoarseSolverKind.PMINRES_SADDLE, cfg.coarse_mode))
    levels = [level for level in cfg.level_range if level >= 1]
    if not levels:
        raise ConfigError("the FMG study needs at least one level >= 1")
    references: Dict[int, Any] = {}
    reports = []
    for label in cfg.fmg_variants:
        spec = CycleSpec.parse(label, coarse)
        logger.info(f"FMG variant {spec.label}")
        reports.append(fmg_accuracy_report(mg, spec, problem, quadrature=get_config().mesh.quadrature,
                                           levels=levels, references=references))
    return reports


def cmd_predict(cfg: BenchConfig, setup_table: bool = False) -> Dict[str, Any]:
    """Pure cost-model figures for the configured mesh and levels."""
    mesh = load_mesh(cfg)
    memory = []
    finest_dofs = 0
    for level in cfg.level_range:
        n_u, n_p = predict_dof_counts(mesh, level)
        memory.append(memory_model(n_u, n_p, level))
        finest_dofs = n_u + n_p
    L = max(cfg.level_range)
    umg = dict(predict_umg_counts(L, cfg.n_I), L=L, n_I=cfg.n_I)
    ratios = {
        kind.value.upper(): formulation_ratio(reference_counts(kind, Formulation.LAPLACE),
                                              reference_counts(kind, Formulation.DOP), cfg.mu_d)
        for kind in SolverKind
    }
    tme = tme_report(cfg.measured_time, cfg.dofs if cfg.dofs is not None else finest_dofs,
                     cfg.threads, cfg.mu_sm)
    rows = [SolverConfig.defaults(kind, cfg.formulation, cfg.coarse_mode).setup_row() for kind in SolverKind] if setup_table else None
    return report.predict_payload(memory, umg, ratios, tme, cfg.mu_d, rows)


def cmd_measure_lups(level: int = 3, sweeps: int = 10, runs: int = 3) -> LupsReport:
    return measure_lups(level, sweeps, runs)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = get_config().logging
    if args.log_level:
        settings = settings.model_copy(update={"level": args.log_level})
    setup_logging(settings)

    try:
        if args.command == "measure-lups":
            rep = cmd_measure_lups(args.level, args.sweeps, args.runs)
            if args.format == "json":
                print(rep.model_dump_json(indent=2))
            else:
                print(f"# smoother throughput, units: {rep.units}")
                print(rep.to_csv(), end="")
                print(f"# mean {rep.mean:.4g} {rep.units}, spread {rep.spread:.1%}")
            return EXIT_OK

        cfg = load_bench_config(args)
        if args.command == "run":
            artifact = cmd_run(cfg)
            text = report.render_table(artifact, cfg.format)
            report.write_report(text, cfg.output_dir, f"run_{cfg.formulation.value}", cfg.format)
            print(text)
            return EXIT_OK if artifact.all_converged else EXIT_FAILED
        if args.command == "fmg":
            reports = cmd_fmg(cfg)
            text = report.render_accuracy(reports, cfg.format)
            report.write_report(text, cfg.output_dir, f"fmg_{cfg.formulation.value}", cfg.format)
            print(text)
            return EXIT_OK
        if args.command == "predict":
            payload = cmd_predict(cfg, setup_table=args.setup_table)
            text = report.render_predict(payload, cfg.format)
            if args.out:
                report.write_report(text, cfg.output_dir, "predict", cfg.format)
            print(text)
            return EXIT_OK
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except StokesBenchError as e:
        logger.error(str(e))
        return EXIT_FAILED
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
