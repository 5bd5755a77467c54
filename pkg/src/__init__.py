"""
stokesbench - matrix-free geometric multigrid solvers for the stabilized Stokes system.
"""

from src.config import get_config, reset_config, set_config

__version__ = "0.1.0"
__all__ = [
    "get_config",
    "set_config",
    "reset_config",
]
