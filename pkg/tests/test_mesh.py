import numpy as np
import pytest

from src.errors import (
    DegenerateElementError,
    InvertedElementError,
    MeshParseError,
    NonConformingMeshError,
    ResourceLimitError,
)
from src.mesh import (
    CoarseMesh,
    build_primitive_graph,
    channel_mesh,
    free_dof_counts,
    icosahedral_ball_mesh,
    load_coarse_mesh,
    predict_dof_counts,
    predicted_node_count,
    refine_hierarchy,
    two_tet_mesh,
    unit_cube_mesh,
    validate_mesh,
    write_coarse_mesh,
)
from src.models import BoundaryTag


class TestCoarseMesh:
    def test_unit_cube(self):
        mesh = unit_cube_mesh()
        assert mesh.n_vertices == 8
        assert mesh.n_tetrahedra == 6
        assert mesh.total_volume == pytest.approx(1.0)
        assert np.all(mesh.volumes() > 0)
        assert set(mesh.boundary_tags.values()) == {BoundaryTag.DIRICHLET}
        assert len(mesh.boundary_faces()) == 12

    def test_primitive_counts(self):
        graph = build_primitive_graph(unit_cube_mesh())
        counts = graph.counts
        assert counts["vertices"] == 8
        assert counts["volumes"] == 6
        # Euler characteristic of a ball
        assert counts["vertices"] - counts["edges"] + counts["faces"] - counts["volumes"] == 1

    def test_icosahedral_ball(self):
        mesh = icosahedral_ball_mesh()
        assert mesh.n_vertices == 13
        assert mesh.n_tetrahedra == 20
        assert set(mesh.boundary_tags.values()) == {BoundaryTag.FREESLIP}

    def test_inverted_element(self):
        verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        with pytest.raises(InvertedElementError):
            validate_mesh(CoarseMesh(verts, [[0, 2, 1, 3]]))

    def test_repeated_vertex(self):
        verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        with pytest.raises(DegenerateElementError):
            validate_mesh(CoarseMesh(verts, [[0, 1, 1, 3]]))

    def test_flat_element(self):
        verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
        with pytest.raises(DegenerateElementError):
            validate_mesh(CoarseMesh(verts, [[0, 1, 2, 3]]))

    def test_face_shared_three_times(self):
        verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [0, 0, 2]])
        tets = [[0, 1, 2, 3], [0, 2, 1, 4], [0, 1, 2, 5]]
        with pytest.raises(NonConformingMeshError):
            validate_mesh(CoarseMesh(verts, tets))

    def test_interior_face_tag_rejected(self):
        mesh = two_tet_mesh()
        interior = (1, 2, 3)
        mesh.boundary_tags[interior] = BoundaryTag.OUTFLOW
        with pytest.raises(NonConformingMeshError):
            validate_mesh(mesh)


class TestMeshFile:
    def test_write_then_load_keeps_tags(self, tmp_path):
        mesh = channel_mesh(cells=(2, 1, 1))
        path = write_coarse_mesh(mesh, tmp_path / "channel.mesh")
        loaded = load_coarse_mesh(path)
        np.testing.assert_allclose(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.tetrahedra, mesh.tetrahedra)
        assert loaded.boundary_tags == mesh.boundary_tags
        assert BoundaryTag.OUTFLOW in set(loaded.boundary_tags.values())

    def test_untagged_faces_default_to_dirichlet(self, tmp_path):
        path = tmp_path / "tet.mesh"
        path.write_text(
            "tetmesh 1\n"
            "# reference tetrahedron\n"
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
            "t 0 1 2 3\n"
            "b 0 1 2 freeslip\n"
        )
        mesh = load_coarse_mesh(path)
        assert mesh.tag_of((2, 1, 0)) is BoundaryTag.FREESLIP
        assert mesh.tag_of((0, 1, 3)) is BoundaryTag.DIRICHLET
        assert len(mesh.boundary_tags) == 4

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("mesh 2\nv 0 0 0\n")
        with pytest.raises(MeshParseError) as exc:
            load_coarse_mesh(path)
        assert exc.value.line == 1

    def test_unknown_record_reports_line(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("tetmesh 1\nv 0 0 0\nq 1 2 3\n")
        with pytest.raises(MeshParseError) as exc:
            load_coarse_mesh(path)
        assert exc.value.line == 3
        assert "bad.mesh:3" in str(exc.value)

    def test_index_out_of_range(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("tetmesh 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nt 0 1 2 7\n")
        with pytest.raises(MeshParseError) as exc:
            load_coarse_mesh(path)
        assert exc.value.line == 6

    def test_bad_tag(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("tetmesh 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nt 0 1 2 3\nb 0 1 2 slippery\n")
        with pytest.raises(MeshParseError) as exc:
            load_coarse_mesh(path)
        assert exc.value.line == 7


class TestHierarchy:
    def test_node_and_element_counts(self, cube_l2):
        for level in cube_l2.levels:
            n = 2 ** (level.level_index + 2)
            assert level.n_intervals == n
            assert level.n_nodes == (n + 1) ** 3
            assert level.n_nodes == predicted_node_count(cube_l2.graph, level.level_index)
            assert level.n_elements == 6 * n ** 3

    def test_volumes_and_conformity(self, cube_l2):
        for level in cube_l2.levels:
            assert level.element_volumes().sum() == pytest.approx(1.0)
            assert np.all(level.element_volumes() > 0)
            level.check_conformity()

    def test_nodes_form_the_lattice(self, cube_l1):
        level = cube_l1.finest
        scaled = level.coords * level.n_intervals
        np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-9)
        assert len(np.unique(np.round(scaled).astype(int), axis=0)) == level.n_nodes

    def test_containers_partition_the_nodes(self, cube_l1):
        level = cube_l1.finest
        ids = np.concatenate([nodes for _, _, nodes in level.containers()])
        np.testing.assert_array_equal(ids, np.arange(level.n_nodes))

    def test_mesh_size(self, cube_l2):
        h = [lvl.h_ell for lvl in cube_l2.levels]
        assert h[0] / h[1] == pytest.approx(2.0)
        assert h[1] / h[2] == pytest.approx(2.0)

    def test_boundary_tags_on_nodes(self, cube_l1):
        level = cube_l1.finest
        on_boundary = np.any((level.coords < 1e-12) | (level.coords > 1 - 1e-12), axis=1)
        np.testing.assert_array_equal(level.node_tag > 0, on_boundary)

    def test_dirichlet_wins_over_outflow(self, channel_l1):
        level = channel_l1.finest
        inflow = np.isclose(level.coords[:, 0], 0.0)
        outflow = level.nodes_with_tag(BoundaryTag.OUTFLOW)
        assert np.all(level.node_tag[inflow] == BoundaryTag.DIRICHLET.priority)
        assert len(outflow)
        assert np.allclose(level.coords[outflow, 0], 4.0)
        # outflow nodes on the wall edges are dirichlet
        x = level.coords[outflow]
        assert np.all(np.abs(x[:, 1:]) < 1.0 - 1e-12)

    def test_truncated_shares_cache(self, cube_l2):
        small = cube_l2.truncated(1)
        assert small.L == 1
        assert small.finest is cube_l2.level(1)
        assert small._cache is cube_l2._cache

    def test_node_cap(self):
        with pytest.raises(ResourceLimitError):
            refine_hierarchy(unit_cube_mesh(), 2, node_cap=1000)

    def test_negative_level(self):
        with pytest.raises(ValueError):
            refine_hierarchy(unit_cube_mesh(), -1)

    def test_level_out_of_range(self, cube_l1):
        with pytest.raises(IndexError):
            cube_l1.level(2)


class TestDofCounts:
    def test_prediction_matches_built_level(self, cube_l2, channel_l1):
        for hierarchy in (cube_l2, channel_l1):
            for level in hierarchy.levels:
                assert predict_dof_counts(hierarchy.coarse_mesh, level.level_index) == free_dof_counts(level)

    def test_unit_cube_level_seven(self):
        n_u, n_p = predict_dof_counts(unit_cube_mesh(), 7)
        assert n_u == 3 * 511 ** 3
        assert n_p == 513 ** 3
        assert n_u + n_p == 535_304_190

    def test_freeslip_nodes_carry_two_unknowns(self, freeslip_cube_l1):
        level = freeslip_cube_l1.level(0)
        n_u, n_p = free_dof_counts(level)
        boundary = int((level.node_tag > 0).sum())
        assert n_u == 3 * (level.n_nodes - boundary) + 2 * boundary
        assert n_p == level.n_nodes
