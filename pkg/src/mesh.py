"""
Coarse tetrahedral meshes and their block-structured refinement hierarchy.

A coarse mesh is split into macro primitives (vertices, edges, faces, volumes).
Every level refines each macro tetrahedron regularly into a Kuhn lattice with
n = 2**(level + 2) intervals per macro edge, so level 0 is the twice refined input.
Fine nodes are numbered primitive by primitive: macro vertices first, then the
interior nodes of every macro edge, face and volume, each block stored contiguously
in structured order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.spatial import ConvexHull

from src.config import get_config
from src.errors import (
    DegenerateElementError,
    InvertedElementError,
    MeshError,
    MeshParseError,
    NonConformingMeshError,
    ResourceLimitError,
)
from src.models import BoundaryTag

FaceKey = Tuple[int, int, int]

LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

NODE_KINDS: Tuple[str, ...] = ("vertex", "edge", "face", "volume")

# One cube path per axis permutation; paths and their reversals are point
# reflections of each other and therefore congruent.
ORIENTATIONS: Tuple[Tuple[int, int, int], ...] = tuple(itertools.permutations(range(3)))
CONGRUENCE_CLASS: Tuple[int, ...] = tuple(
    sorted({min(i, ORIENTATIONS.index(s[::-1])) for i, s in enumerate(ORIENTATIONS)}).index(
        min(i, ORIENTATIONS.index(s[::-1]))
    )
    for i, s in enumerate(ORIENTATIONS)
)

TAG_CODES: Dict[int, BoundaryTag] = {t.priority: t for t in BoundaryTag}


def signed_volumes(vertices: np.ndarray, tetrahedra: np.ndarray) -> np.ndarray:
    """Signed volume of every tetrahedron (positive for right-handed ordering)."""
    X = vertices[tetrahedra]
    E = X[:, 1:, :] - X[:, :1, :]
    return np.linalg.det(E) / 6.0


@dataclass
class CoarseMesh:
    """Conforming tetrahedral input mesh with tagged boundary faces."""
    vertices: np.ndarray
    tetrahedra: np.ndarray
    boundary_tags: Dict[FaceKey, BoundaryTag] = field(default_factory=dict)
    name: str = "mesh"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.tetrahedra = np.asarray(self.tetrahedra, dtype=np.int64).reshape(-1, 4)
        self.boundary_tags = {
            tuple(sorted(int(i) for i in key)): BoundaryTag(tag)
            for key, tag in self.boundary_tags.items()
        }

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tetrahedra(self) -> int:
        return len(self.tetrahedra)

    def volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.tetrahedra)

    @property
    def total_volume(self) -> float:
        return float(self.volumes().sum())

    def boundary_faces(self) -> List[FaceKey]:
        faces = np.sort(self.tetrahedra[:, LOCAL_FACES], axis=2).reshape(-1, 3)
        uniq, counts = np.unique(faces, axis=0, return_counts=True)
        return [tuple(int(i) for i in f) for f in uniq[counts == 1]]

    def tag_of(self, face: Sequence[int]) -> BoundaryTag:
        return self.boundary_tags.get(tuple(sorted(int(i) for i in face)), BoundaryTag.DIRICHLET)


def validate_mesh(mesh: CoarseMesh) -> CoarseMesh:
    """Check the coarse-mesh invariants and tag untagged boundary faces as dirichlet."""
    verts, tets = mesh.vertices, mesh.tetrahedra
    if len(tets) == 0:
        raise MeshError("mesh has no tetrahedra")
    if tets.min() < 0 or tets.max() >= len(verts):
        raise MeshError(f"tetrahedron references a vertex outside 0..{len(verts) - 1}")
    srt = np.sort(tets, axis=1)
    if (srt[:, 1:] == srt[:, :-1]).any():
        bad = int(np.nonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))[0][0])
        raise DegenerateElementError(f"tetrahedron {bad} repeats a vertex")

    diam = float(np.ptp(verts, axis=0).max()) or 1.0
    vols = mesh.volumes()
    tiny = 1e-13 * diam ** 3
    if (np.abs(vols) <= tiny).any():
        bad = int(np.nonzero(np.abs(vols) <= tiny)[0][0])
        raise DegenerateElementError(f"tetrahedron {bad} has zero volume")
    if (vols < 0).any():
        bad = int(np.nonzero(vols < 0)[0][0])
        raise InvertedElementError(f"tetrahedron {bad} has negative signed volume {vols[bad]:.3e}")

    faces = np.sort(tets[:, LOCAL_FACES], axis=2).reshape(-1, 3)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    if (counts > 2).any():
        bad = uniq[counts > 2][0]
        raise NonConformingMeshError(
            f"face {tuple(int(i) for i in bad)} is shared by {int(counts[counts > 2][0])} tetrahedra"
        )
    boundary = {tuple(int(i) for i in f) for f in uniq[counts == 1]}
    for key in mesh.boundary_tags:
        if key not in boundary:
            raise NonConformingMeshError(f"tagged face {key} is not a boundary face")
    for key in boundary:
        mesh.boundary_tags.setdefault(key, BoundaryTag.DIRICHLET)
    return mesh


def load_coarse_mesh(path: Union[str, Path]) -> CoarseMesh:
    """
    Read a mesh in the line-oriented `tetmesh 1` text format.

    Records: `v x y z`, `t i0 i1 i2 i3` (0-based), `b i j k TAG`. Text after `#` is
    ignored. Untagged boundary faces default to dirichlet.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise MeshParseError(f"cannot read mesh file: {e.strerror or e}", path=str(path)) from e
    verts: List[List[float]] = []
    tets: List[List[int]] = []
    tet_lines: List[int] = []
    tags: Dict[FaceKey, BoundaryTag] = {}
    tag_lines: Dict[FaceKey, int] = {}
    header_seen = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if not header_seen:
            if parts != ["tetmesh", "1"]:
                raise MeshParseError("expected header 'tetmesh 1'", lineno, str(path))
            header_seen = True
            continue
        kw = parts[0]
        try:
            if kw == "v":
                if len(parts) != 4:
                    raise MeshParseError("vertex record needs 3 coordinates", lineno, str(path))
                verts.append([float(x) for x in parts[1:]])
            elif kw == "t":
                if len(parts) != 5:
                    raise MeshParseError("tetrahedron record needs 4 vertex indices", lineno, str(path))
                tets.append([int(x) for x in parts[1:]])
                tet_lines.append(lineno)
            elif kw == "b":
                if len(parts) != 5:
                    raise MeshParseError("boundary record needs 3 vertex indices and a tag", lineno, str(path))
                key = tuple(sorted(int(x) for x in parts[1:4]))
                if key in tags:
                    raise MeshParseError(f"face {key} tagged twice", lineno, str(path))
                tags[key] = BoundaryTag(parts[4])
                tag_lines[key] = lineno
            else:
                raise MeshParseError(f"unknown record type {kw!r}", lineno, str(path))
        except ValueError as e:
            raise MeshParseError(str(e), lineno, str(path)) from e

    if not header_seen:
        raise MeshParseError("empty file, expected header 'tetmesh 1'", 1, str(path))
    for tet, lineno in zip(tets, tet_lines):
        if min(tet) < 0 or max(tet) >= len(verts):
            raise MeshParseError(f"vertex index out of range in {tet}", lineno, str(path))
    for key, lineno in tag_lines.items():
        if min(key) < 0 or max(key) >= len(verts):
            raise MeshParseError(f"vertex index out of range in {list(key)}", lineno, str(path))

    mesh = CoarseMesh(np.array(verts, dtype=float).reshape(-1, 3),
                      np.array(tets, dtype=np.int64).reshape(-1, 4),
                      tags, name=path.stem)
    mesh = validate_mesh(mesh)
    logger.debug(f"Loaded mesh {path}: {mesh.n_vertices} vertices, {mesh.n_tetrahedra} tetrahedra")
    return mesh


def write_coarse_mesh(mesh: CoarseMesh, path: Union[str, Path]) -> Path:
    """Write a mesh in the `tetmesh 1` format (all boundary tags explicit)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["tetmesh 1", f"# {mesh.name}: {mesh.n_vertices} vertices, {mesh.n_tetrahedra} tetrahedra"]
    lines.extend(f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices)
    lines.extend("t " + " ".join(str(int(i)) for i in tet) for tet in mesh.tetrahedra)
    for key in sorted(mesh.boundary_tags):
        lines.append(f"b {key[0]} {key[1]} {key[2]} {mesh.boundary_tags[key].value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _oriented(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    neg = signed_volumes(vertices, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def box_mesh(cells: Tuple[int, int, int] = (1, 1, 1),
             lower: Sequence[float] = (0.0, 0.0, 0.0),
             upper: Sequence[float] = (1.0, 1.0, 1.0),
             side_tags: Optional[Dict[str, BoundaryTag]] = None,
             name: str = "box") -> CoarseMesh:
    """
    Box split into cells, each cell into the 6 tetrahedra sharing its main diagonal.

    side_tags maps "x0", "x1", "y0", "y1", "z0", "z1" to a boundary tag
    (default dirichlet everywhere).
    """
    nx, ny, nz = cells
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    axes = [np.linspace(lower[d], upper[d], c + 1) for d, c in enumerate(cells)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")], axis=1)

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    tets = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                for perm in ORIENTATIONS:
                    corner = [0, 0, 0]
                    path = [vid(i, j, k)]
                    for axis in perm:
                        corner[axis] += 1
                        path.append(vid(i + corner[0], j + corner[1], k + corner[2]))
                    tets.append(path)
    tets = _oriented(vertices, np.array(tets))

    tags: Dict[FaceKey, BoundaryTag] = {}
    side_tags = side_tags or {}
    mesh = CoarseMesh(vertices, tets, {}, name=name)
    for face in mesh.boundary_faces():
        X = vertices[list(face)]
        for d, axis in enumerate("xyz"):
            for side, bound in (("0", lower[d]), ("1", upper[d])):
                if np.allclose(X[:, d], bound):
                    tags[face] = BoundaryTag(side_tags.get(f"{axis}{side}", BoundaryTag.DIRICHLET))
    mesh.boundary_tags = tags
    return validate_mesh(mesh)


def unit_cube_mesh() -> CoarseMesh:
    """(0,1)^3 as 8 vertices and 6 tetrahedra, all boundary faces dirichlet."""
    return box_mesh((1, 1, 1), name="unit_cube")


def reference_tet_mesh() -> CoarseMesh:
    """The reference tetrahedron."""
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return validate_mesh(CoarseMesh(verts, [[0, 1, 2, 3]], name="reference_tet"))


def two_tet_mesh() -> CoarseMesh:
    """Two tetrahedra glued along one face."""
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    tets = _oriented(verts, np.array([[0, 1, 2, 3], [1, 2, 3, 4]]))
    return validate_mesh(CoarseMesh(verts, tets, name="two_tets"))


def channel_mesh(length: float = 4.0, cells: Tuple[int, int, int] = (4, 2, 2),
                 wall: BoundaryTag = BoundaryTag.DIRICHLET) -> CoarseMesh:
    """
    Channel (0, length) x (-1, 1)^2: inflow at x1 = 0, do-nothing outflow at
    x1 = length, no-slip or free-slip walls.
    """
    tags = {"x0": BoundaryTag.DIRICHLET, "x1": BoundaryTag.OUTFLOW,
            "y0": wall, "y1": wall, "z0": wall, "z1": wall}
    return box_mesh(cells, (0.0, -1.0, -1.0), (length, 1.0, 1.0), tags, name="channel")


def channel_inflow(points: np.ndarray) -> np.ndarray:
    """Parabolic inflow profile ((1 - x2^2 - x3^2)^(1/2), 0, 0) on x1 = 0, zero elsewhere."""
    points = np.asarray(points, dtype=float)
    out = np.zeros_like(points)
    inflow = np.isclose(points[:, 0], 0.0)
    out[inflow, 0] = np.sqrt(np.clip(1.0 - points[inflow, 1] ** 2 - points[inflow, 2] ** 2, 0.0, None))
    return out


def icosahedral_ball_mesh(radius: float = 1.0, tag: BoundaryTag = BoundaryTag.FREESLIP) -> CoarseMesh:
    """Icosahedron around the origin split into 20 tetrahedra; a curved-boundary fixture."""

    phi = (1.0 + 5.0 ** 0.5) / 2.0
    pts = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            pts.extend([(0.0, a, b), (a, b, 0.0), (b, 0.0, a)])
    pts = np.array(pts)
    pts = radius * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    hull = ConvexHull(pts)
    verts = np.vstack([pts, np.zeros((1, 3))])
    center = len(pts)
    tets = _oriented(verts, np.array([[center, *tri] for tri in hull.simplices]))
    mesh = CoarseMesh(verts, tets, name="icosahedral_ball")
    mesh.boundary_tags = {face: tag for face in mesh.boundary_faces()}
    return validate_mesh(mesh)


@dataclass(frozen=True)
class PrimitiveGraph:
    """Macro primitives of a coarse mesh and their incidence."""
    macro_vertices: np.ndarray   # (nv,)
    macro_edges: np.ndarray      # (ne, 2) sorted vertex pairs
    macro_faces: np.ndarray      # (nf, 3) sorted vertex triples
    macro_volumes: np.ndarray    # (nt, 4)
    face_edges: np.ndarray       # (nf, 3)
    volume_faces: np.ndarray     # (nt, 4)
    volume_edges: np.ndarray     # (nt, 6)
    face_volumes: np.ndarray     # (nf, 2), -1 on the boundary
    boundary_faces: np.ndarray   # (nf,) bool

    @property
    def counts(self) -> Dict[str, int]:
        return {
            "vertices": len(self.macro_vertices),
            "edges": len(self.macro_edges),
            "faces": len(self.macro_faces),
            "volumes": len(self.macro_volumes),
        }

    def edge_index(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Indices of edges (a, b) in either orientation."""
        a, b = np.asarray(a), np.asarray(b)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        nv = len(self.macro_vertices)
        keys = self.macro_edges[:, 0] * nv + self.macro_edges[:, 1]
        return np.searchsorted(keys, lo * nv + hi)

    def face_index(self, faces: np.ndarray) -> np.ndarray:
        """Indices of faces given as (..., 3) vertex triples in any order."""
        faces = np.sort(np.asarray(faces), axis=-1)
        nv = len(self.macro_vertices)
        keys = (self.macro_faces[:, 0] * nv + self.macro_faces[:, 1]) * nv + self.macro_faces[:, 2]
        return np.searchsorted(keys, (faces[..., 0] * nv + faces[..., 1]) * nv + faces[..., 2])


def build_primitive_graph(mesh: CoarseMesh) -> PrimitiveGraph:
    """Enumerate macro vertices, edges, faces and volumes with their adjacency."""
    tets = mesh.tetrahedra
    nt = len(tets)
    all_edges = np.sort(tets[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
    edges, e_inv = np.unique(all_edges, axis=0, return_inverse=True)
    all_faces = np.sort(tets[:, LOCAL_FACES], axis=2).reshape(-1, 3)
    faces, f_inv, f_count = np.unique(all_faces, axis=0, return_inverse=True, return_counts=True)
    e_inv = e_inv.reshape(-1)
    f_inv = f_inv.reshape(-1)

    face_volumes = -np.ones((len(faces), 2), dtype=np.int64)
    owners = np.repeat(np.arange(nt), 4)
    order = np.argsort(f_inv, kind="stable")
    sorted_faces = f_inv[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_faces[1:] != sorted_faces[:-1]
    face_volumes[sorted_faces[first], 0] = owners[order[first]]
    face_volumes[sorted_faces[~first], 1] = owners[order[~first]]

    graph = PrimitiveGraph(
        macro_vertices=np.arange(mesh.n_vertices),
        macro_edges=edges,
        macro_faces=faces,
        macro_volumes=tets.copy(),
        face_edges=np.zeros((len(faces), 3), dtype=np.int64),
        volume_faces=f_inv.reshape(nt, 4),
        volume_edges=e_inv.reshape(nt, 6),
        face_volumes=face_volumes,
        boundary_faces=f_count == 1,
    )
    fe = np.stack([
        graph.edge_index(faces[:, 0], faces[:, 1]),
        graph.edge_index(faces[:, 0], faces[:, 2]),
        graph.edge_index(faces[:, 1], faces[:, 2]),
    ], axis=1)
    graph.face_edges[:] = fe
    return graph


def _macro_order(mesh: CoarseMesh) -> np.ndarray:
    """
    Local vertex order per macro tetrahedron.

    The Kuhn lattice splits the inner octahedron along the diagonal joining the
    midpoints of local edges (0,2) and (1,3). Vertices are ordered so that this is
    the shortest of the three octahedron diagonals; ties go to the pairing that
    gives the smallest vertex id its smallest partner.
    """
    pairings = (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)))
    order = np.empty_like(mesh.tetrahedra)
    for t, tet in enumerate(mesh.tetrahedra):
        X = mesh.vertices[tet]
        lengths = np.array([
            np.linalg.norm((X[a] + X[b]) / 2.0 - (X[c] + X[d]) / 2.0)
            for (a, b), (c, d) in pairings
        ])
        tied = np.nonzero(lengths <= lengths.min() * (1.0 + 1e-9))[0]
        best = None
        for k in tied:
            (a, b), (c, d) = pairings[k]
            first, second = (tet[a], tet[b]), (tet[c], tet[d])
            if min(tet) not in first:
                first, second = second, first
            partner = max(first)
            if best is None or partner < best[0]:
                best = (partner, first, second)
        _, first, second = best
        order[t] = (min(first), min(second), max(first), max(second))
    return order


def lattice_points(n: int) -> np.ndarray:
    """All (p, q, r) with n >= p >= q >= r >= 0 in rank order."""
    pts = np.indices((n + 1, n + 1, n + 1)).reshape(3, -1).T
    keep = (pts[:, 0] >= pts[:, 1]) & (pts[:, 1] >= pts[:, 2])
    return pts[keep]


def lattice_rank(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Position of a lattice point in rank order."""
    return p * (p + 1) * (p + 2) // 6 + q * (q + 1) // 2 + r


def _face_lattice(n: int) -> Tuple[np.ndarray, np.ndarray]:
    i, j = np.indices((n, n)).reshape(2, -1)
    keep = (i >= 1) & (j >= 1) & (i + j <= n - 1)
    return i[keep], j[keep]


@dataclass(frozen=True)
class GridLevel:
    """One refinement level: nodes, elements grouped by (macro, orientation), node containers."""
    level_index: int
    n_intervals: int
    coords: np.ndarray            # (N, 3)
    conn: np.ndarray              # (E, 4), grouped by element group
    group_bounds: np.ndarray      # (G + 1,)
    group_macro: np.ndarray       # (G,)
    group_orientation: np.ndarray  # (G,)
    element_classes: np.ndarray   # (G,) congruence class of every group
    group_vertices: np.ndarray    # (G, 4, 3) a representative element per group
    group_volumes: np.ndarray     # (G,)
    node_kind: np.ndarray         # (N,) index into NODE_KINDS
    node_primitive: np.ndarray    # (N,) primitive index within its kind
    node_color: np.ndarray        # (N,) color within the primitive
    node_tag: np.ndarray          # (N,) 0 interior, else BoundaryTag.priority
    kind_offsets: Tuple[int, ...]  # start of each kind block, plus N
    kind_sizes: Tuple[int, ...]    # nodes per primitive of each kind
    lattice_ids: np.ndarray       # (nt, K) global node of every macro lattice point
    h_ell: float
    h_min: float

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_elements(self) -> int:
        return len(self.conn)

    @property
    def n_groups(self) -> int:
        return len(self.group_macro)

    @property
    def nodes_per_primitive(self) -> Dict[str, int]:
        return dict(zip(NODE_KINDS, self.kind_sizes))

    def group_slice(self, g: int) -> slice:
        return slice(int(self.group_bounds[g]), int(self.group_bounds[g + 1]))

    def container(self, kind: str, index: int) -> np.ndarray:
        """Global node ids stored in one primitive container."""
        k = NODE_KINDS.index(kind)
        size = self.kind_sizes[k]
        start = self.kind_offsets[k] + index * size
        if start + size > self.kind_offsets[k + 1] or index < 0:
            raise IndexError(f"no {kind} primitive {index}")
        return np.arange(start, start + size)

    def containers(self) -> Iterator[Tuple[str, int, np.ndarray]]:
        for k, kind in enumerate(NODE_KINDS):
            size = self.kind_sizes[k]
            count = (self.kind_offsets[k + 1] - self.kind_offsets[k]) // size if size else 0
            for index in range(count):
                yield kind, index, self.container(kind, index)

    def nodes_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return np.nonzero(self.node_tag == tag.priority)[0]

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.nonzero(self.node_tag > 0)[0]

    def element_volumes(self) -> np.ndarray:
        return np.repeat(self.group_volumes, np.diff(self.group_bounds))

    def check_conformity(self) -> None:
        """Every fine face is shared by at most two fine tetrahedra."""
        faces = np.sort(self.conn[:, LOCAL_FACES], axis=2).reshape(-1, 3)
        _, counts = np.unique(faces, axis=0, return_counts=True)
        if (counts > 2).any():
            raise NonConformingMeshError(f"level {self.level_index}: a face is shared by {counts.max()} elements")


def _primitive_tags(mesh: CoarseMesh, graph: PrimitiveGraph) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tag code of every macro vertex, edge and face (highest precedence of its boundary faces)."""
    vtag = np.zeros(len(graph.macro_vertices), dtype=np.int8)
    etag = np.zeros(len(graph.macro_edges), dtype=np.int8)
    ftag = np.zeros(len(graph.macro_faces), dtype=np.int8)
    for f in np.nonzero(graph.boundary_faces)[0]:
        code = mesh.tag_of(graph.macro_faces[f]).priority
        ftag[f] = code
        np.maximum.at(vtag, graph.macro_faces[f], code)
        np.maximum.at(etag, graph.face_edges[f], code)
    return vtag, etag, ftag


def _block_sizes(n: int) -> Tuple[int, int, int, int]:
    return 1, n - 1, (n - 1) * (n - 2) // 2, (n - 1) * (n - 2) * (n - 3) // 6


def predicted_node_count(graph: PrimitiveGraph, level_index: int) -> int:
    """Closed-form node count of a level."""
    n = 2 ** (level_index + 2)
    sizes = _block_sizes(n)
    c = graph.counts
    return (c["vertices"] * sizes[0] + c["edges"] * sizes[1]
            + c["faces"] * sizes[2] + c["volumes"] * sizes[3])


def predict_dof_counts(mesh: CoarseMesh, level_index: int) -> Tuple[int, int]:
    """
    Closed-form free DoF counts (velocity, pressure) of a level without building it.

    Dirichlet nodes carry no velocity unknowns and free-slip nodes two.
    """
    graph = build_primitive_graph(mesh)
    n = 2 ** (level_index + 2)
    sizes = _block_sizes(n)
    vtag, etag, ftag = _primitive_tags(mesh, graph)
    per_code = {0: 3, BoundaryTag.OUTFLOW.priority: 3, BoundaryTag.FREESLIP.priority: 2,
                BoundaryTag.DIRICHLET.priority: 0}
    n_u = 0
    for tags, size in ((vtag, sizes[0]), (etag, sizes[1]), (ftag, sizes[2])):
        for code, dofs in per_code.items():
            n_u += int((tags == code).sum()) * size * dofs
    n_u += len(graph.macro_volumes) * sizes[3] * 3
    return n_u, predicted_node_count(graph, level_index)


def _build_level(mesh: CoarseMesh, graph: PrimitiveGraph, order: np.ndarray,
                 prim_tags: Tuple[np.ndarray, np.ndarray, np.ndarray], level_index: int) -> GridLevel:
    n = 2 ** (level_index + 2)
    nt = len(order)
    c = graph.counts
    nv, ne, nf = c["vertices"], c["edges"], c["faces"]
    sizes = _block_sizes(n)
    offsets = np.cumsum([0, nv * sizes[0], ne * sizes[1], nf * sizes[2], nt * sizes[3]])
    n_nodes = int(offsets[-1])

    pts = lattice_points(n)
    P, Q, R = pts.T
    m = np.stack([n - P, P - Q, Q - R, R], axis=1)
    code = ((m > 0) * (1 << np.arange(4))).sum(axis=1)
    ids = np.empty((nt, len(pts)), dtype=np.int64)

    for k in range(4):
        sel = code == (1 << k)
        ids[:, sel] = order[:, k][:, None]

    for a, b in LOCAL_EDGES:
        sel = code == ((1 << a) | (1 << b))
        ga, gb = order[:, a], order[:, b]
        e = graph.edge_index(ga, gb)
        t = np.where((gb > ga)[:, None], m[sel, b][None, :], m[sel, a][None, :])
        ids[:, sel] = offsets[1] + e[:, None] * sizes[1] + (t - 1)

    for tri in LOCAL_FACES[::-1]:
        sel = code == sum(1 << int(x) for x in tri)
        g3 = order[:, tri]
        perm = np.argsort(g3, axis=1)
        f = graph.face_index(g3)
        mv = m[sel][:, tri].T
        i = mv[perm[:, 1]]
        j = mv[perm[:, 2]]
        idx = (i - 1) * (n - 1) - (i - 1) * i // 2 + (j - 1)
        ids[:, sel] = offsets[2] + f[:, None] * sizes[2] + idx

    sel = code == 15
    ids[:, sel] = offsets[3] + np.arange(nt)[:, None] * sizes[3] + np.arange(sizes[3])[None, :]

    coords = np.empty((n_nodes, 3))
    X = mesh.vertices[order]
    coords[ids.ravel()] = np.einsum("kj,tjd->tkd", m / n, X).reshape(-1, 3)

    # Kuhn simplices of the cube cells inside p >= q >= r
    base = np.indices((n, n, n)).reshape(3, -1).T
    base = base[(base[:, 0] + 1 >= base[:, 1]) & (base[:, 1] + 1 >= base[:, 2])]
    local_conn = []
    for perm in ORIENTATIONS:
        offs = np.zeros((4, 3), dtype=np.int64)
        for step, axis in enumerate(perm, start=1):
            offs[step:, axis] += 1
        V = base[:, None, :] + offs[None, :, :]
        ok = ((V[..., 0] >= V[..., 1]) & (V[..., 1] >= V[..., 2])).all(axis=1)
        V = V[ok]
        local_conn.append(lattice_rank(V[..., 0], V[..., 1], V[..., 2]))

    blocks, bounds = [], [0]
    g_macro, g_orient, g_verts = [], [], []
    for t in range(nt):
        for s, local in enumerate(local_conn):
            cg = ids[t][local]
            Xg = coords[cg[0]]
            if np.linalg.det(Xg[1:] - Xg[0]) < 0:
                cg = cg[:, [0, 1, 3, 2]]
                Xg = Xg[[0, 1, 3, 2]]
            blocks.append(cg)
            bounds.append(bounds[-1] + len(cg))
            g_macro.append(t)
            g_orient.append(s)
            g_verts.append(Xg)
    conn = np.concatenate(blocks)
    g_verts = np.array(g_verts)
    g_vol = np.linalg.det(g_verts[:, 1:] - g_verts[:, :1]) / 6.0
    h_t = g_vol ** (1.0 / 3.0)

    kind = np.concatenate([np.full(int(offsets[k + 1] - offsets[k]), k, dtype=np.int8) for k in range(4)])
    prim = np.concatenate([
        np.arange(nv),
        np.repeat(np.arange(ne), sizes[1]),
        np.repeat(np.arange(nf), sizes[2]),
        np.repeat(np.arange(nt), sizes[3]),
    ]).astype(np.int64)
    t_edge = np.tile(np.arange(1, n), ne)
    fi, fj = _face_lattice(n)
    interior = pts[code == 15]
    color = np.concatenate([
        np.zeros(nv, dtype=np.int8),
        (t_edge % 2).astype(np.int8),
        np.tile(2 * ((fi + fj) % 2) + (fi % 2), nf).astype(np.int8),
        np.tile(interior.sum(axis=1) % 4, nt).astype(np.int8),
    ])
    vtag, etag, ftag = prim_tags
    tag = np.concatenate([
        vtag,
        np.repeat(etag, sizes[1]),
        np.repeat(ftag, sizes[2]),
        np.zeros(nt * sizes[3], dtype=np.int8),
    ]).astype(np.int8)

    return GridLevel(
        level_index=level_index,
        n_intervals=n,
        coords=coords,
        conn=conn,
        group_bounds=np.array(bounds, dtype=np.int64),
        group_macro=np.array(g_macro, dtype=np.int64),
        group_orientation=np.array(g_orient, dtype=np.int64),
        element_classes=np.array([CONGRUENCE_CLASS[s] for s in g_orient], dtype=np.int64),
        group_vertices=g_verts,
        group_volumes=g_vol,
        node_kind=kind,
        node_primitive=prim,
        node_color=color,
        node_tag=tag,
        kind_offsets=tuple(int(o) for o in offsets),
        kind_sizes=sizes,
        lattice_ids=ids,
        h_ell=float(h_t.max()),
        h_min=float(h_t.min()),
    )


@dataclass
class GridHierarchy:
    """Coarse mesh plus the refined levels 0..L (immutable once built)."""
    coarse_mesh: CoarseMesh
    graph: PrimitiveGraph
    macro_order: np.ndarray
    levels: List[GridLevel]
    _cache: Dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    def level(self, index: int) -> GridLevel:
        if not 0 <= index <= self.L:
            raise IndexError(f"level {index} not in 0..{self.L}")
        return self.levels[index]

    def __getitem__(self, index: int) -> GridLevel:
        return self.level(index)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> GridLevel:
        return self.levels[-1]

    def truncated(self, L: int) -> "GridHierarchy":
        """Levels 0..L of this hierarchy; shares the transfer cache."""
        self.level(L)
        return GridHierarchy(self.coarse_mesh, self.graph, self.macro_order, self.levels[:L + 1], self._cache)


def refine_hierarchy(mesh: CoarseMesh, L: int, node_cap: Optional[int] = None) -> GridHierarchy:
    """Build levels 0..L; level 0 is the twice refined input mesh."""
    if L < 0:
        raise ValueError(f"L must be >= 0, got {L}")
    if node_cap is None:
        node_cap = get_config().mesh.node_cap
    graph = build_primitive_graph(mesh)
    for index in range(L + 1):
        predicted = predicted_node_count(graph, index)
        if predicted > node_cap:
            raise ResourceLimitError(
                f"level {index} needs {predicted} nodes, above the configured cap of {node_cap}"
            )
    order = _macro_order(mesh)
    prim_tags = _primitive_tags(mesh, graph)
    levels = [_build_level(mesh, graph, order, prim_tags, index) for index in range(L + 1)]
    logger.info({
        "evt": "hierarchy_built",
        "mesh": mesh.name,
        "L": L,
        "nodes": [lvl.n_nodes for lvl in levels],
        "elements": [lvl.n_elements for lvl in levels],
    })
    return GridHierarchy(mesh, graph, order, levels)


def node_counts(level: GridLevel) -> Tuple[int, int]:
    """(n_u, n_p) of the full vector layout: 3 velocity entries and 1 pressure entry per node."""
    return 3 * level.n_nodes, level.n_nodes


def free_dof_counts(level: GridLevel) -> Tuple[int, int]:
    """Unknowns left after boundary constraints: what the published tables count as DoFs."""
    tag = level.node_tag
    n_u = (3 * int((tag == 0).sum())
           + 3 * int((tag == BoundaryTag.OUTFLOW.priority).sum())
           + 2 * int((tag == BoundaryTag.FREESLIP.priority).sum()))
    return n_u, level.n_nodes


def evaluate_on_nodes(level: GridLevel, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Vectorized evaluation of fn at all node coordinates."""
    return np.asarray(fn(level.coords), dtype=float)
