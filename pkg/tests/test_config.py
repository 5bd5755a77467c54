from pathlib import Path

import pytest
from pydantic import ValidationError

from src.config import AppConfig, get_config, reset_config, set_config, setup_logging


def test_defaults():
    config = AppConfig.from_env()
    assert config.solver.eps == 1e-8
    assert config.multigrid.pressure_omega == 0.3
    assert config.metrics.mu_sm == 23.9e6
    assert config.mesh.quadrature == "gauss4"


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("STOKESBENCH_EPS", "1e-6")
    monkeypatch.setenv("STOKESBENCH_NODE_CAP", "5000")
    monkeypatch.setenv("STOKESBENCH_OUTPUT_DIR", "/tmp/bench")
    config = AppConfig.from_env()
    assert config.solver.eps == 1e-6
    assert config.mesh.node_cap == 5000
    assert config.bench.output_dir == Path("/tmp/bench")


def test_invalid_environment_value_is_ignored(monkeypatch):
    monkeypatch.setenv("STOKESBENCH_JOBS", "many")
    assert AppConfig.from_env().bench.jobs == 1


@pytest.mark.parametrize("key, value", [
    ("STOKESBENCH_EPS", "2"),
    ("STOKESBENCH_PRESSURE_OMEGA", "5"),
    ("STOKESBENCH_COARSE_MODE", "exact"),
    ("STOKESBENCH_MU_D", "-1"),
    ("STOKESBENCH_JOBS", "0"),
])
def test_out_of_range_environment_value_keeps_default(monkeypatch, mocker, key, value):
    log = mocker.patch("src.config.logger")
    monkeypatch.setenv(key, value)
    config = AppConfig.from_env()
    assert config.solver.eps == 1e-8
    assert config.multigrid.pressure_omega == 0.3
    assert config.multigrid.coarse_mode == "tol"
    assert config.metrics.mu_d == 3.25
    assert config.bench.jobs == 1
    log.warning.assert_called_once()
    assert key in log.warning.call_args.args[0]


def test_assignment_is_validated():
    config = AppConfig()
    with pytest.raises(ValidationError):
        config.solver.eps = 2.0
    with pytest.raises(ValidationError):
        config.multigrid.pressure_omega = 0.0
    assert config.solver.eps == 1e-8
    config.multigrid.pressure_omega = 1.0
    assert config.multigrid.pressure_omega == 1.0


def test_global_instance():
    config = AppConfig()
    config.solver.seed = 7
    set_config(config)
    assert get_config().solver.seed == 7
    reset_config()
    assert get_config().solver.seed == 42


def test_to_dict_is_json_friendly():
    data = AppConfig().to_dict()
    assert isinstance(data["bench"]["output_dir"], str)
    assert data["logging"]["file"] is None


def test_log_file_sink(tmp_path):
    settings = AppConfig().logging.model_copy(update={"file": tmp_path / "logs" / "bench.log", "level": "warning"})
    setup_logging(settings)
    assert (tmp_path / "logs").is_dir()
    setup_logging(AppConfig().logging)
