import numpy as np
import pytest

from src.errors import LevelMismatchError, ZeroWeightError
from src.fields import (
    PressureField,
    StokesVector,
    VelocityField,
    axpy,
    dot,
    dump_field,
    h_norm,
    load_field,
    mean_zero_project,
    nodal_interpolate,
    random_initial,
)


def _vector(level, u, p):
    return StokesVector(VelocityField(level, u), PressureField(level, p))


def test_flat_layout():
    x = _vector(0, np.arange(6.0).reshape(2, 3), np.array([10.0, 11.0]))
    np.testing.assert_array_equal(x.flat(), [0, 1, 2, 3, 4, 5, 10, 11])
    y = StokesVector.from_flat(0, x.flat())
    np.testing.assert_array_equal(y.u.data, x.u.data)
    np.testing.assert_array_equal(y.p.data, x.p.data)


def test_axpy_and_dot():
    x = _vector(1, np.ones((2, 3)), np.ones(2))
    y = _vector(1, np.zeros((2, 3)), np.full(2, 2.0))
    z = axpy(2.0, x, y)
    np.testing.assert_allclose(z.u.data, 2.0)
    np.testing.assert_allclose(z.p.data, 4.0)
    assert dot(x, y) == pytest.approx(4.0)


def test_level_mismatch():
    x = _vector(1, np.ones((2, 3)), np.ones(2))
    y = _vector(2, np.ones((2, 3)), np.ones(2))
    with pytest.raises(LevelMismatchError):
        axpy(1.0, x, y)
    with pytest.raises(LevelMismatchError):
        StokesVector(VelocityField(0, np.zeros((2, 3))), PressureField(1, np.zeros(2)))


def test_h_norm():
    x = _vector(0, np.ones((2, 3)), np.ones(2))
    assert h_norm(x, 0.5) == pytest.approx(np.sqrt(6.0 + 0.25 * 2.0))
    with pytest.raises(ValueError):
        h_norm(x, 0.0)


def test_mean_zero_project():
    p = PressureField(0, np.array([1.0, 2.0, 3.0]))
    out = mean_zero_project(p)
    assert isinstance(out, PressureField)
    assert out.data.sum() == pytest.approx(0.0)
    w = np.array([1.0, 0.0, 1.0])
    weighted = mean_zero_project(p.data, w)
    assert np.dot(w, weighted) == pytest.approx(0.0)
    np.testing.assert_allclose(weighted, [-1.0, 0.0, 1.0])
    with pytest.raises(ZeroWeightError):
        mean_zero_project(p, np.zeros(3))


def test_random_initial_is_reproducible(cube_l1):
    a = random_initial(cube_l1, 1, seed=42)
    b = random_initial(cube_l1, 1, seed=42)
    c = random_initial(cube_l1, 1, seed=43)
    np.testing.assert_array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), c.flat())
    h_min = cube_l1.level(1).h_min
    assert np.all((a.u.data >= 0) & (a.u.data <= 1))
    assert np.all((a.p.data >= 0) & (a.p.data <= 1.0 / h_min))


def test_nodal_interpolate(cube_l1):
    grid = cube_l1.level(0)
    u = nodal_interpolate(lambda x: 2.0 * x, grid)
    p = nodal_interpolate(lambda x: x[:, 0], grid)
    assert isinstance(u, VelocityField) and isinstance(p, PressureField)
    np.testing.assert_allclose(u.data, 2.0 * grid.coords)
    assert p.level == 0


def test_dump_and_load(tmp_path):
    u = VelocityField(3, np.arange(12.0).reshape(4, 3))
    loaded = load_field(dump_field(u, tmp_path / "u.bin"))
    assert isinstance(loaded, VelocityField)
    assert loaded.level == 3
    np.testing.assert_array_equal(loaded.data, u.data)
    # 16-byte header then the values
    assert (tmp_path / "u.bin").stat().st_size == 16 + 12 * 8


def test_load_rejects_bad_files(tmp_path):
    path = tmp_path / "p.bin"
    dump_field(PressureField(0, np.ones(3)), path)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="header announces"):
        load_field(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        load_field(tmp_path / "magic.bin")
