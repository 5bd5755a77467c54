import json

import pytest
from pydantic import ValidationError

from src.models import (
    BenchConfig,
    BoundaryTag,
    CoarseMode,
    CoarseSolverKind,
    CoarseSolverSpec,
    CycleKind,
    CycleSpec,
    Formulation,
    OperatorTag,
    RunResult,
    SolverConfig,
    SolverKind,
    TableArtifact,
    TableRow,
)


class TestCycleSpec:
    @pytest.mark.parametrize("label, kind, pre, post, inner", [
        ("V(3,3)", CycleKind.V, 3, 3, 1),
        ("Vvar(1,1)", CycleKind.VVAR, 1, 1, 1),
        ("2Vvar(2,2)", CycleKind.FMG, 2, 2, 2),
        ("FMG-1Vvar(5,5)", CycleKind.FMG, 5, 5, 1),
    ])
    def test_parse(self, label, kind, pre, post, inner):
        spec = CycleSpec.parse(label)
        assert (spec.kind, spec.n_pre, spec.n_post, spec.fmg_inner_cycles) == (kind, pre, post, inner)

    def test_labels(self):
        assert CycleSpec.parse("V(1,1)").label == "V(1,1)"
        assert CycleSpec.parse("2Vvar(3,3)").label == "FMG-2Vvar(3,3)"

    @pytest.mark.parametrize("label", ["W(1,1)", "V(1)", "2V(1,1)", "Vvar"])
    def test_bad_labels(self, label):
        with pytest.raises(ValueError):
            CycleSpec.parse(label)

    def test_variable_smoothing(self):
        spec = CycleSpec.parse("Vvar(3,3)")
        assert spec.smoothing_steps(6, 6) == (3, 3)
        assert spec.smoothing_steps(4, 6) == (7, 7)
        assert CycleSpec.parse("V(3,3)").smoothing_steps(4, 6) == (3, 3)

    def test_negative_smoothing(self):
        with pytest.raises(ValidationError):
            CycleSpec(n_pre=-1)


class TestSolverConfig:
    def test_defaults(self):
        scg = SolverConfig.defaults(SolverKind.SCG)
        assert scg.cycle.label == "V(3,3)"
        assert scg.cycle.coarse.kind is CoarseSolverKind.CG_ON_A
        assert scg.cycle.coarse.rel_tol == 1e-3
        pminres = SolverConfig.defaults(SolverKind.PMINRES)
        assert pminres.cycle.label == "V(1,1)"
        assert pminres.max_iterations == 500
        assert pminres.cycle.coarse.kind is CoarseSolverKind.LU_ON_A
        assert pminres.setup_row()["coarse"] == "LU_on_A (direct)"
        timed = SolverConfig.defaults(SolverKind.PMINRES, coarse_mode=CoarseMode.FIXED5)
        assert timed.cycle.coarse.kind is CoarseSolverKind.CG_ON_A
        assert timed.cycle.coarse.fixed_iterations == 5
        umg = SolverConfig.defaults(SolverKind.UMG, Formulation.DOP)
        assert umg.cycle.label == "Vvar(3,3)"
        assert umg.cycle.coarse.kind is CoarseSolverKind.PMINRES_SADDLE
        assert umg.cycle.coarse.rel_tol == 5e-3
        assert umg.formulation is Formulation.DOP

    def test_fixed_coarse_iterations(self):
        cfg = SolverConfig.defaults(SolverKind.UMG, coarse_mode=CoarseMode.FIXED5)
        assert cfg.cycle.coarse.fixed_iterations == 5
        assert "5 it" in cfg.setup_row()["coarse"]

    def test_table_rows(self):
        rows = [SolverConfig.defaults(kind).setup_row() for kind in SolverKind]
        assert [r["solver"] for r in rows] == ["SCG", "PMINRES", "UMG"]
        assert "omega=0.3" in rows[2]["smoother"]

    @pytest.mark.parametrize("field, value", [("eps", 0.0), ("eps", 1.5), ("n_A", 0), ("nu", -1.0),
                                              ("pressure_omega", 0.0)])
    def test_validation(self, field, value):
        with pytest.raises(ValidationError):
            SolverConfig(kind=SolverKind.SCG, **{field: value})

    def test_coarse_spec_validation(self):
        with pytest.raises(ValidationError):
            CoarseSolverSpec(rel_tol=2.0)
        with pytest.raises(ValidationError):
            CoarseSolverSpec(fixed_iterations=0)


class TestRunResult:
    def test_serialization(self):
        result = RunResult(iterations=3, coarse_iterations=[4, 5], residual_history=[1.0, 1e-3, 1e-9],
                           wall_time=0.5, op_counts={"A1": {1: 6, 2: 12}}, memory_model=1024, converged=True)
        data = json.loads(result.to_json())
        assert set(data) == {"iterations", "coarse_iterations", "residual_history", "wall_time",
                             "op_counts", "memory_model", "converged"}
        row = result.to_csv_row()
        assert row["ops_A1_L2"] == 12
        assert row["coarse_iterations"] == 9
        assert row["final_residual"] == 1e-9
        assert result.final_residual == 1e-9

    def test_history_must_be_positive(self):
        with pytest.raises(ValidationError):
            RunResult(residual_history=[1.0, 0.0])


class TestTables:
    def _row(self, solver="umg", level=2, **kw):
        return TableRow(solver=solver, formulation="laplace", level=level, dofs=100, iterations=5,
                        time_s=0.1, **kw)

    def test_unique_rows(self):
        table = TableArtifact()
        table.add(self._row())
        table.add(self._row(level=3))
        with pytest.raises(ValueError):
            table.add(self._row())

    def test_all_converged(self):
        table = TableArtifact()
        assert not table.all_converged
        table.add(self._row(converged=True))
        assert table.all_converged
        table.add(self._row(level=3, converged=True, error="boom"))
        assert not table.all_converged


class TestBenchConfig:
    def test_defaults(self):
        cfg = BenchConfig()
        assert cfg.level_range == [2, 3, 4]
        assert cfg.solvers == [SolverKind.SCG, SolverKind.PMINRES, SolverKind.UMG]
        assert len(cfg.fmg_variants) == 8

    @pytest.mark.parametrize("field, value", [("levels", (3, 2)), ("solvers", []), ("eps", 0.0),
                                              ("jobs", 0), ("mu_d", 0.0), ("fmg_variants", ["X(1,1)"])])
    def test_validation(self, field, value):
        with pytest.raises(ValidationError):
            BenchConfig(**{field: value})


def test_enums():
    assert OperatorTag.BT.group == "B"
    assert OperatorTag.A2.group == "A"
    assert OperatorTag.M.group == "M"
    assert Formulation.DOP.velocity_tag is OperatorTag.A2
    assert BoundaryTag.DIRICHLET.priority > BoundaryTag.FREESLIP.priority > BoundaryTag.OUTFLOW.priority
