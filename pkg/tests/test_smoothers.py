import dataclasses

import numpy as np
import pytest

from src.errors import ZeroDiagonalError
from src.models import Formulation, OperatorTag, SmootherKind
from src.operators import assemble_level_operators, build_saddle_system
from src.smoothers import (
    build_sweep_plan,
    hybrid_gs_sweep,
    pressure_plan,
    shgs_step,
    uzawa_step,
    velocity_plan,
)


def _system(hierarchy, level, formulation=Formulation.LAPLACE):
    return build_saddle_system(assemble_level_operators(hierarchy, level), formulation)


@pytest.mark.parametrize("formulation", list(Formulation))
@pytest.mark.parametrize("kind", [SmootherKind.FHGS, SmootherKind.BHGS, SmootherKind.SHGS])
def test_exact_solution_is_a_fixed_point(freeslip_cube_l1, formulation, kind, rng):
    system = _system(freeslip_cube_l1, 1, formulation)
    u = system.constraints.project(rng.standard_normal((system.n_nodes, 3)))
    f = system.A(u)
    out = hybrid_gs_sweep(velocity_plan(system), u, f, kind)
    np.testing.assert_allclose(out, u, atol=1e-10)


def test_sweeps_reduce_the_residual(cube_l1, rng):
    system = _system(cube_l1, 1)
    plan = velocity_plan(system)
    u = system.constraints.project(rng.random((system.n_nodes, 3)))
    f = np.zeros_like(u)
    before = np.linalg.norm(system.A(u))
    for _ in range(20):
        u = shgs_step(plan, u, f)
    assert np.linalg.norm(system.A(u)) < 0.5 * before


def test_dirichlet_values_come_from_the_rhs(cube_l1, rng):
    system = _system(cube_l1, 1)
    u = rng.random((system.n_nodes, 3))
    f = rng.random((system.n_nodes, 3))
    out = hybrid_gs_sweep(velocity_plan(system), u, f, SmootherKind.FHGS)
    nodes = system.constraints.dirichlet
    np.testing.assert_array_equal(out[nodes], f[nodes])


def test_freeslip_normal_component_comes_from_the_rhs(freeslip_cube_l1, rng):
    system = _system(freeslip_cube_l1, 1, Formulation.DOP)
    cons = system.constraints
    u = rng.random((system.n_nodes, 3))
    f = rng.random((system.n_nodes, 3))
    out = hybrid_gs_sweep(velocity_plan(system), u, f, SmootherKind.BHGS)
    n_out = np.einsum("ij,ij->i", out[cons.freeslip], cons.normals)
    n_rhs = np.einsum("ij,ij->i", f[cons.freeslip], cons.normals)
    np.testing.assert_allclose(n_out, n_rhs, atol=1e-12)


def test_plan_visits_every_free_node_once(cube_l1):
    system = _system(cube_l1, 1)
    plan = velocity_plan(system)
    visited = np.concatenate([cs.nodes for sets in plan.sets.values() for cs in sets])
    assert len(visited) == len(np.unique(visited))
    assert plan.n_updates == system.n_nodes - len(system.constraints.dirichlet)
    assert velocity_plan(system) is plan


def test_pressure_plan_covers_all_nodes(cube_l1):
    system = _system(cube_l1, 1)
    assert pressure_plan(system).n_updates == system.n_nodes


def test_zero_diagonal_is_rejected(cube_l1):
    system = _system(cube_l1, 0)
    stencils = system.velocity_stencils
    broken = dataclasses.replace(stencils, kernels=np.zeros_like(stencils.kernels))
    with pytest.raises(ZeroDiagonalError):
        build_sweep_plan(broken, system.constraints)


def test_relaxed_sweep_checks_omega(cube_l1, rng):
    system = _system(cube_l1, 0)
    p = rng.random(system.n_nodes)
    with pytest.raises(ValueError):
        hybrid_gs_sweep(pressure_plan(system), p, p, SmootherKind.FHGS_RELAXED, omega=1.5)


def test_sweep_counts_one_operator_evaluation(cube_l1, rng):
    system = _system(cube_l1, 1)
    plan = velocity_plan(system)
    u = rng.random((system.n_nodes, 3))
    system.counter.reset("solve")
    shgs_step(plan, u, np.zeros_like(u))
    assert system.counter.get(OperatorTag.A1, 1) == 2


class TestUzawa:
    def test_exact_solution_is_a_fixed_point(self, cube_l1, rng):
        system = _system(cube_l1, 1)
        u = system.constraints.project(rng.standard_normal((system.n_nodes, 3)))
        x = system.join(u, rng.standard_normal(system.n_nodes))
        b = system.apply(x)
        np.testing.assert_allclose(uzawa_step(system, x, b), x, atol=1e-10)

    def test_operator_evaluations_per_step(self, cube_l1, rng):
        system = _system(cube_l1, 1)
        x = rng.standard_normal(4 * system.n_nodes)
        b = np.zeros_like(x)
        system.counter.reset("solve")
        uzawa_step(system, x, b, 1, 0.3)
        counts = system.counter.counts("solve")
        assert counts == {"A1": {1: 2}, "Bt": {1: 1}, "B": {1: 1}, "C": {1: 1}}

    def test_explicit_correction_operators(self, cube_l1, rng):
        system = _system(cube_l1, 1)
        x = rng.standard_normal(4 * system.n_nodes)
        b = np.zeros_like(x)
        zero = lambda r: np.zeros_like(r)
        out = uzawa_step(system, x, b, velocity_solve=zero, pressure_solve=zero)
        np.testing.assert_array_equal(out, x)
