import numpy as np
import pytest

from src.errors import ConfigError
from src.fields import PressureField, StokesVector, VelocityField, h_norm, mean_zero_project
from src.mesh import node_counts
from src.metrics import memory_model, predict_umg_counts, weighted_op_count
from src.models import CycleSpec, Formulation, SolverConfig, SolverKind
from src.multigrid import StokesMultigrid
from src.problems import homogeneous_problem, manufactured_problem
from src.solvers import (
    EXTRA_VECTORS,
    check_stop,
    fmg_accuracy_report,
    interpolant,
    run_solver,
    solve_pminres,
    solve_scg,
    solve_umg,
)


def _cfg(kind, **overrides):
    return SolverConfig.defaults(kind, Formulation.LAPLACE, **overrides)


class TestStoppingTest:
    def test_relative_residual(self, mg_l2, rng):
        system = mg_l2.system(1)
        x0 = rng.standard_normal(4 * system.n_nodes)
        rhs = np.zeros_like(x0)
        rel, done = check_stop(system, x0, x0, rhs, 1e-8)
        assert rel == pytest.approx(1.0)
        assert not done
        rel, done = check_stop(system, x0, 0.5 * x0, rhs, 0.6)
        assert rel == pytest.approx(0.5)
        assert done

    def test_zero_start_residual(self, mg_l2):
        system = mg_l2.system(1)
        x = np.zeros(4 * system.n_nodes)
        assert check_stop(system, x, x, np.zeros_like(x), 1e-8) == (0.0, True)

    def test_monitoring_is_not_solver_work(self, mg_l2, rng):
        system = mg_l2.system(1)
        mg_l2.counter.reset()
        x = rng.standard_normal(4 * system.n_nodes)
        check_stop(system, x, x, np.zeros_like(x), 1e-8)
        assert mg_l2.counter.counts("solve") == {}
        assert mg_l2.counter.counts("monitor")


class TestRunSolver:
    @pytest.mark.parametrize("kind", list(SolverKind))
    def test_exact_start_needs_no_iterations(self, mg_l2, kind):
        system = mg_l2.system(2)
        result, x = run_solver(_cfg(kind), mg_l2, x0=np.zeros(4 * system.n_nodes))
        assert result.iterations == 0
        assert result.converged
        assert result.residual_history == [1.0]
        np.testing.assert_array_equal(x, 0.0)

    def test_wrong_solver_kind(self, mg_l2):
        with pytest.raises(ConfigError):
            solve_scg(_cfg(SolverKind.UMG), mg_l2)

    def test_formulation_mismatch(self, mg_l2):
        with pytest.raises(ConfigError):
            run_solver(SolverConfig.defaults(SolverKind.UMG, Formulation.DOP), mg_l2)

    def test_missing_cycle_gets_the_default(self, cube_l1):
        cfg = SolverConfig(kind=SolverKind.UMG, eps=1e-4, max_iterations=50)
        result, _ = run_solver(cfg, cube_l1)
        assert result.converged

    def test_memory_model_includes_solver_vectors(self, cube_l1):
        result, _ = run_solver(_cfg(SolverKind.UMG, eps=1e-3), cube_l1)
        n_u, n_p = node_counts(cube_l1.level(1))
        expected = memory_model(n_u, n_p, 1, extra_vectors=EXTRA_VECTORS[SolverKind.UMG]).bytes_total
        assert result.memory_model == int(expected)

    def test_seeded_start_is_reproducible(self, cube_l1):
        cfg = _cfg(SolverKind.UMG, eps=1e-3, seed=7)
        a, _ = run_solver(cfg, cube_l1)
        b, _ = run_solver(cfg, cube_l1)
        assert a.residual_history == b.residual_history


@pytest.mark.slow
class TestConvergence:
    @pytest.mark.parametrize("solve, kind", [
        (solve_scg, SolverKind.SCG),
        (solve_pminres, SolverKind.PMINRES),
        (solve_umg, SolverKind.UMG),
    ])
    def test_homogeneous_problem(self, cube_l2, solve, kind):
        result = solve(_cfg(kind, eps=1e-6), cube_l2)
        assert result.converged
        assert result.final_residual <= 1e-6
        assert result.iterations >= 1
        assert result.wall_time > 0.0
        assert result.coarse_iterations

    def test_umg_counts_follow_the_closed_form(self, mg_l2):
        result, _ = run_solver(_cfg(SolverKind.UMG, eps=1e-6), mg_l2)
        assert result.converged
        report = weighted_op_count(result.op_counts, 2, min_level=1)
        predicted = predict_umg_counts(2, result.iterations, include_coarsest=False)
        for group in ("A", "B", "C"):
            assert report.weighted[group] == pytest.approx(predicted[group])

    def test_symmetric_gradient_formulation(self, cube_l2):
        mg = StokesMultigrid(cube_l2, Formulation.DOP)
        result = solve_umg(SolverConfig.defaults(SolverKind.UMG, Formulation.DOP, eps=1e-6), mg)
        assert result.converged
        assert "A2" in result.op_counts and "A1" not in result.op_counts

    def test_manufactured_velocity_error_is_second_order(self, cube_l2):
        problem = manufactured_problem()
        mg = StokesMultigrid(cube_l2, Formulation.LAPLACE, problem.bc)
        rms = []
        for level in (1, 2):
            rhs = mg.rhs(level, problem.force)
            result, x = run_solver(_cfg(SolverKind.UMG, eps=1e-10), mg, rhs, level=level)
            assert result.converged
            system = mg.system(level)
            u, _ = system.split(x)
            err = u - interpolant(problem, system).u.data
            rms.append(np.sqrt(np.mean(err ** 2)))
        # halving h cuts the nodal velocity error by about 4
        assert rms[0] / rms[1] > 2.5


class TestAccuracyReport:
    def test_needs_an_analytic_solution(self, mg_l2):
        with pytest.raises(ConfigError):
            fmg_accuracy_report(mg_l2, CycleSpec.parse("1Vvar(1,1)"), homogeneous_problem())

    def test_boundary_data_must_match(self, mg_l2):
        with pytest.raises(ConfigError):
            fmg_accuracy_report(mg_l2, CycleSpec.parse("1Vvar(1,1)"), manufactured_problem())

    def test_interpolant_pressure_is_mean_free(self, mg_l2):
        system = mg_l2.system(1)
        exact = interpolant(manufactured_problem(), system)
        assert np.dot(system.mass, exact.p.data) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.slow
    def test_gamma_per_level(self, cube_l2):
        problem = manufactured_problem()
        mg = StokesMultigrid(cube_l2, Formulation.LAPLACE, problem.bc)
        references = {}
        report = fmg_accuracy_report(mg, CycleSpec.parse("2Vvar(2,2)"), problem, reference_eps=1e-10,
                                     references=references)
        assert [e.level for e in report.levels] == [1, 2]
        assert sorted(references) == [1, 2]
        for entry in report.levels:
            assert np.isfinite(entry.gamma) and entry.gamma > 0
            assert entry.total_error >= 0
            assert entry.gamma == pytest.approx(entry.total_error / entry.discretization_error)
        assert report.variant == "FMG-2Vvar(2,2)"


def _iterations(kind, hierarchy, levels, formulation=Formulation.LAPLACE, **overrides):
    mg = StokesMultigrid(hierarchy, formulation)
    cfg = SolverConfig.defaults(kind, formulation, **overrides)
    counts = {}
    for level in levels:
        result, _ = run_solver(cfg, mg, level=level)
        assert result.converged
        counts[level] = result.iterations
    return counts


@pytest.mark.slow
class TestIterationBands:
    def test_umg_is_level_independent(self, cube_l4):
        counts = _iterations(SolverKind.UMG, cube_l4, (2, 3, 4))
        assert max(counts.values()) <= 12
        assert max(counts.values()) - min(counts.values()) <= 2

    def test_scg_is_level_stable_and_cheaper_with_symmetric_gradient(self, cube_l3):
        laplace = _iterations(SolverKind.SCG, cube_l3, (2, 3))
        dop = _iterations(SolverKind.SCG, cube_l3, (2, 3), Formulation.DOP)
        assert all(8 <= n <= 45 for n in laplace.values())
        assert abs(laplace[3] - laplace[2]) <= 5
        for level in (2, 3):
            assert dop[level] < laplace[level]

    def test_pminres_counts_do_not_grow_with_level(self, cube_l4):
        counts = _iterations(SolverKind.PMINRES, cube_l4, (2, 3, 4))
        assert counts[2] <= 150
        assert counts[2] >= counts[3] >= counts[4]

    def test_pminres_reaches_tight_tolerances(self, cube_l2):
        result = solve_pminres(_cfg(SolverKind.PMINRES, eps=1e-10), cube_l2)
        assert result.converged
        assert result.final_residual <= 1e-10

    def test_umg_counts_follow_the_closed_form_on_level_three(self, cube_l3):
        mg = StokesMultigrid(cube_l3, Formulation.LAPLACE)
        result, _ = run_solver(_cfg(SolverKind.UMG), mg)
        assert result.converged
        report = weighted_op_count(result.op_counts, 3, min_level=1)
        predicted = predict_umg_counts(3, result.iterations, include_coarsest=False)
        for group in ("A", "B"):
            assert report.weighted[group] == pytest.approx(predicted[group], rel=0.02)


@pytest.mark.slow
def test_solvers_agree_on_the_discrete_solution(cube_l2):
    problem = manufactured_problem()
    mg = StokesMultigrid(cube_l2, Formulation.LAPLACE, problem.bc)
    system = mg.system(2)
    rhs = mg.rhs(2, problem.force)
    h = system.grid.h_ell
    solutions = {}
    for kind in SolverKind:
        result, x = run_solver(_cfg(kind, eps=1e-10), mg, rhs, x0=np.zeros_like(rhs))
        assert result.converged
        u, p = system.split(x)
        solutions[kind] = StokesVector(VelocityField(2, u.copy()),
                                       PressureField(2, mean_zero_project(p, system.mass)))
    ref = solutions[SolverKind.UMG]
    scale = h_norm(ref, h)
    for kind in (SolverKind.SCG, SolverKind.PMINRES):
        diff = StokesVector.from_flat(2, solutions[kind].flat() - ref.flat())
        assert h_norm(diff, h) / scale < 1e-6


@pytest.mark.slow
def test_fmg_gamma_on_level_three(cube_l3):
    problem = manufactured_problem()
    mg = StokesMultigrid(cube_l3, Formulation.LAPLACE, problem.bc)
    references = {}
    strong = fmg_accuracy_report(mg, CycleSpec.parse("2Vvar(2,2)"), problem, reference_eps=1e-10,
                                 levels=[3], references=references)
    weak = fmg_accuracy_report(mg, CycleSpec.parse("1Vvar(1,1)"), problem, reference_eps=1e-10,
                               levels=[3], references=references)
    gamma_strong = strong.levels[0].gamma
    assert 0.95 <= gamma_strong <= 1.15
    assert weak.levels[0].gamma > gamma_strong
