"""
Configuration management for stokesbench.
"""

import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, Field, validator
from pydantic_settings import BaseSettings

# Load environment variables
load_dotenv()


class _Section(BaseModel):
    """Settings section whose validators also run on attribute assignment."""

    class Config:
        validate_assignment = True


class SolverSettings(_Section):
    """Outer solver defaults."""
    eps: float = 1e-8
    max_iterations: int = 200
    pminres_max_iterations: int = 500
    seed: int = 42
    nu: float = 1.0
    scg_n_a: int = 3
    scg_n_s: int = 3
    scg_n_i: int = 1

    @validator('eps')
    def validate_eps(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        return v

    @validator('nu')
    def validate_nu(cls, v):
        if v <= 0:
            raise ValueError("nu must be positive")
        return v

    @validator('max_iterations', 'pminres_max_iterations', 'scg_n_a', 'scg_n_s', 'scg_n_i')
    def validate_counts(cls, v):
        if v < 1:
            raise ValueError("iteration counts must be >= 1")
        return v


class MultigridSettings(_Section):
    """Cycle and coarse-grid defaults."""
    coarse_mode: str = "tol"  # tol | fixed5
    cg_rel_tol: float = 1e-3
    pminres_rel_tol: float = 5e-3
    coarse_max_iterations: int = 2000
    inner_velocity_cg: int = 3
    pressure_omega: float = 0.3

    @validator('coarse_mode')
    def validate_mode(cls, v):
        if v not in ("tol", "fixed5"):
            raise ValueError("coarse_mode must be 'tol' or 'fixed5'")
        return v

    @validator('pressure_omega')
    def validate_omega(cls, v):
        if not 0.0 < v <= 1.0:
            raise ValueError("pressure_omega must lie in (0, 1]")
        return v


class MeshSettings(_Section):
    """Mesh hierarchy limits."""
    node_cap: int = 25_000_000
    quadrature: str = "gauss4"  # gauss4 | vertex

    @validator('node_cap')
    def validate_node_cap(cls, v):
        if v < 1:
            raise ValueError("node_cap must be >= 1")
        return v

    @validator('quadrature')
    def validate_quadrature(cls, v):
        if v not in ("gauss4", "vertex"):
            raise ValueError("quadrature must be 'gauss4' or 'vertex'")
        return v


class MetricsSettings(_Section):
    """Machine constants for the efficiency metrics."""
    mu_sm: float = 23.9e6  # lattice updates per second and thread
    mu_d: float = 3.25     # cost factor of the symmetric-gradient block

    @validator('mu_sm', 'mu_d')
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError("machine constants must be positive")
        return v


class BenchSettings(_Section):
    """Benchmark harness defaults."""
    output_dir: Path = Path("./bench_output")
    default_levels: Tuple[int, int] = (2, 4)
    jobs: int = 1
    trace_cycles: bool = False

    @validator('jobs')
    def validate_jobs(cls, v):
        if v < 1:
            raise ValueError("jobs must be >= 1")
        return v


class LoggingSettings(_Section):
    """Log sink configuration."""
    level: str = "INFO"
    file: Optional[Path] = None
    rotation: str = "10 MB"


class AppConfig(BaseSettings):
    """Main application configuration."""
    solver: SolverSettings = Field(default_factory=SolverSettings)
    multigrid: MultigridSettings = Field(default_factory=MultigridSettings)
    mesh: MeshSettings = Field(default_factory=MeshSettings)
    metrics: MetricsSettings = Field(default_factory=MetricsSettings)
    bench: BenchSettings = Field(default_factory=BenchSettings)
    logging: LoggingSettings = Field(default_factory=LoggingSettings)

    class Config:
        env_file = '.env'
        env_file_encoding = 'utf-8'
        env_prefix = 'STOKESBENCH_'
        extra = 'ignore'

    @classmethod
    def from_env(cls) -> 'AppConfig':
        """Create configuration from environment variables."""
        config = cls()

        for key_env, section, attr, cast in [
            ('STOKESBENCH_EPS', 'solver', 'eps', float),
            ('STOKESBENCH_MAX_ITERATIONS', 'solver', 'max_iterations', int),
            ('STOKESBENCH_SEED', 'solver', 'seed', int),
            ('STOKESBENCH_NU', 'solver', 'nu', float),
            ('STOKESBENCH_COARSE_MODE', 'multigrid', 'coarse_mode', str),
            ('STOKESBENCH_PRESSURE_OMEGA', 'multigrid', 'pressure_omega', float),
            ('STOKESBENCH_NODE_CAP', 'mesh', 'node_cap', int),
            ('STOKESBENCH_MU_SM', 'metrics', 'mu_sm', float),
            ('STOKESBENCH_MU_D', 'metrics', 'mu_d', float),
            ('STOKESBENCH_JOBS', 'bench', 'jobs', int),
            ('STOKESBENCH_LOG_LEVEL', 'logging', 'level', str),
        ]:
            if os.getenv(key_env):
                try:
                    setattr(getattr(config, section), attr, cast(os.getenv(key_env)))
                except Exception:
                    logger.warning(f"Ignoring invalid value for {key_env}: {os.getenv(key_env)!r}")

        if os.getenv('STOKESBENCH_OUTPUT_DIR'):
            config.bench.output_dir = Path(os.getenv('STOKESBENCH_OUTPUT_DIR'))
        if os.getenv('STOKESBENCH_LOG_FILE'):
            config.logging.file = Path(os.getenv('STOKESBENCH_LOG_FILE'))
        if os.getenv('STOKESBENCH_TRACE_CYCLES'):
            config.bench.trace_cycles = os.getenv('STOKESBENCH_TRACE_CYCLES').lower() == 'true'

        return config

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary."""
        return {
            'solver': self.solver.dict(),
            'multigrid': self.multigrid.dict(),
            'mesh': self.mesh.dict(),
            'metrics': self.metrics.dict(),
            'bench': {
                **self.bench.dict(),
                'output_dir': str(self.bench.output_dir)
            },
            'logging': {
                **self.logging.dict(),
                'file': str(self.logging.file) if self.logging.file else None
            },
        }


def setup_logging(settings: Optional[LoggingSettings] = None) -> None:
    """Configure loguru sinks once from the logging section."""
    settings = settings or get_config().logging
    logger.remove()
    logger.add(sys.stderr, level=settings.level.upper())
    if settings.file:
        try:
            settings.file.parent.mkdir(parents=True, exist_ok=True)
            logger.add(str(settings.file), level="DEBUG", rotation=settings.rotation)
        except Exception as e:
            logger.warning(f"Could not open log file {settings.file}: {e}")


# Global configuration instance
_config: Optional[AppConfig] = None


def get_config() -> AppConfig:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = AppConfig.from_env()
    return _config


def set_config(config: AppConfig) -> None:
    """Set the global configuration instance."""
    global _config
    _config = config


def reset_config() -> None:
    """Reset the global configuration instance."""
    global _config
    _config = None
