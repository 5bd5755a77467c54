import json

import pytest

from src.metrics import memory_model, tme_report
from src.models import AccuracyLevel, AccuracyReport, ReportFormat, TableArtifact, TableRow
from src.utils import report
from src.utils.trace import CycleTrace, read_trace


@pytest.fixture
def artifact():
    table = TableArtifact(metadata={"mesh": "unit_cube", "formulation": "laplace", "eps": 1e-8, "jobs": 1})
    table.add(TableRow(solver="scg", formulation="laplace", level=2, dofs=18_785, iterations=12,
                       time_s=0.123456789, setup_s=0.5, coarse_iterations=40, converged=True,
                       op_counts={"A1_L2": 96, "A1_L1": 120, "M_L2": 30}))
    table.add(TableRow(solver="umg", formulation="laplace", level=2, dofs=18_785, iterations=0,
                       time_s=0.0, converged=False, error="MeshError: bad"))
    return table


@pytest.fixture
def accuracy():
    reports = []
    for variant, scale in (("FMG-1Vvar(1,1)", 2.0), ("FMG-2Vvar(2,2)", 1.1)):
        rep = AccuracyReport(variant=variant)
        for level, h in ((1, 0.1), (2, 0.05)):
            rep.add(AccuracyLevel(level=level, h=h, dofs=1000 * level, total_error=scale * h,
                                  discretization_error=h, gamma=scale))
        reports.append(rep)
    return reports


class TestTables:
    def test_csv_reads_back(self, artifact):
        rows = report.parse_csv(report.table_to_csv(artifact))
        assert rows == artifact.rows

    def test_csv_columns(self, artifact):
        header = report.table_to_csv(artifact).splitlines()[0].split(",")
        assert header[:len(report.FIELDS)] == report.FIELDS
        assert header[len(report.FIELDS):] == ["ops_A1_L1", "ops_A1_L2", "ops_M_L2"]

    def test_markdown(self, artifact):
        text = report.render_table(artifact, ReportFormat.MD)
        assert "| Solver | L | DoFs (count) |" in text
        assert "time (s)" in text
        assert "| scg | 2 | 18,785 | 12 | 0.123 | 0.500 | 40 | yes |" in text
        assert "error: MeshError: bad" in text

    def test_json(self, artifact):
        data = json.loads(report.render_table(artifact, ReportFormat.JSON))
        assert data["metadata"]["mesh"] == "unit_cube"
        assert [r["solver"] for r in data["rows"]] == ["scg", "umg"]

    def test_op_count_columns(self):
        assert report.op_count_columns({"C": {1: 2}, "A1": {2: 5, 1: 3}}) == {"A1_L1": 3, "A1_L2": 5, "C_L1": 2}


class TestAccuracy:
    def test_markdown_has_one_column_per_variant(self, accuracy):
        text = report.render_accuracy(accuracy, ReportFormat.MD)
        assert "FMG-1Vvar(1,1)" in text and "FMG-2Vvar(2,2)" in text
        table = [line for line in text.splitlines() if line.startswith("|")]
        assert len(table) == 2 + 2

    def test_csv(self, accuracy):
        lines = report.render_accuracy(accuracy, ReportFormat.CSV).splitlines()
        assert lines[0] == "variant,level,h,dofs,total_error,discretization_error,gamma"
        assert len(lines) == 1 + 4

    def test_json(self, accuracy):
        data = json.loads(report.render_accuracy(accuracy, ReportFormat.JSON))
        assert data["reports"][1]["levels"][0]["gamma"] == 1.1


class TestPredict:
    @pytest.fixture
    def payload(self):
        memory = [memory_model(81, 125, 0), memory_model(3000, 1000, 1, on_the_fly=True)]
        umg = {"A": 13.0, "B": 14.0, "C": 7.0, "M": 0.0, "L": 0, "n_I": 1}
        return report.predict_payload(memory, umg, {"UMG": 2.0}, tme_report(t=1.0, n=1e6), 3.25,
                                      [{"solver": "UMG", "cycle": "Vvar(3,3)", "smoother": "SHGS",
                                        "coarse": "PMINRES_saddle", "notes": "-"}])

    def test_json(self, payload):
        data = json.loads(report.render_predict(payload, ReportFormat.JSON))
        assert data["memory"][0]["bytes_total"] == 3 * 206 * 8
        assert data["memory"][1]["on_the_fly"] is True
        assert data["tme"]["e_partme"] == pytest.approx(23.9)

    def test_csv(self, payload):
        lines = report.render_predict(payload, ReportFormat.CSV).splitlines()
        assert lines[0] == "quantity,value,unit"
        assert any(line.startswith("memory_L1_on_the_fly,") for line in lines)
        assert any(line.startswith("e_tme,") and line.endswith(",WU") for line in lines)

    def test_markdown(self, payload):
        text = report.render_predict(payload, ReportFormat.MD)
        assert "GiB" in text
        assert "Vvar(3,3)" in text


def test_write_report(tmp_path):
    path = report.write_report("a,b\n", tmp_path / "out", "run_laplace", ReportFormat.CSV)
    assert path.name == "run_laplace.csv"
    assert path.read_text() == "a,b\n"


def test_cycle_trace_file(tmp_path):
    path = tmp_path / "traces" / "umg.jsonl"
    trace = CycleTrace(path)
    trace.cycle_level(2, 3, 3, 1.0, 0.1)
    trace.cycle_level(1, 5, 5, 0.5, 0.05, system="velocity")
    records = read_trace(path)
    assert records == trace.records
    assert records[0] == {"system": "saddle", "level": 2, "n_pre": 3, "n_post": 3,
                          "res_before": 1.0, "res_after": 0.1, "event": "cycle_level"}
    assert records[1]["system"] == "velocity"


def test_cycle_trace_in_memory():
    trace = CycleTrace()
    trace.send("note", {"x": 1})
    assert trace.records == [{"x": 1, "event": "note"}]
