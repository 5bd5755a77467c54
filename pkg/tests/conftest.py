"""Shared hierarchies and config isolation for the test suite."""

import numpy as np
import pytest

from src.config import reset_config
from src.mesh import box_mesh, channel_mesh, refine_hierarchy, unit_cube_mesh
from src.models import BoundaryTag, Formulation
from src.multigrid import StokesMultigrid


@pytest.fixture(autouse=True)
def fresh_config(monkeypatch):
    for key in ("STOKESBENCH_EPS", "STOKESBENCH_NODE_CAP", "STOKESBENCH_LOG_FILE", "STOKESBENCH_JOBS"):
        monkeypatch.delenv(key, raising=False)
    reset_config()
    yield
    reset_config()


@pytest.fixture(scope="session")
def cube_l1():
    return refine_hierarchy(unit_cube_mesh(), 1, node_cap=10**6)


@pytest.fixture(scope="session")
def cube_l2():
    return refine_hierarchy(unit_cube_mesh(), 2, node_cap=10**6)


@pytest.fixture(scope="session")
def cube_l3():
    return refine_hierarchy(unit_cube_mesh(), 3, node_cap=10**6)


@pytest.fixture(scope="session")
def cube_l4():
    return refine_hierarchy(unit_cube_mesh(), 4, node_cap=10**6)


@pytest.fixture(scope="session")
def freeslip_cube_l1():
    tags = {side: BoundaryTag.FREESLIP for side in ("x0", "x1", "y0", "y1", "z0", "z1")}
    return refine_hierarchy(box_mesh(side_tags=tags, name="freeslip_cube"), 1, node_cap=10**6)


@pytest.fixture(scope="session")
def channel_l1():
    return refine_hierarchy(channel_mesh(cells=(2, 1, 1)), 1, node_cap=10**6)


@pytest.fixture
def mg_l2(cube_l2):
    return StokesMultigrid(cube_l2, Formulation.LAPLACE)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
