"""
Matrix-free P1-P1 stabilized Stokes operators.

Element matrices are computed once per element group (one macro tetrahedron and one
Kuhn orientation; all elements of a group are translates of each other) and applied
by gather, small dense products and scatter over the whole level. Velocity vectors
are (N, 3) arrays, pressure vectors (N,) arrays; the flat layout used by the Krylov
solvers is u.ravel() followed by p.

The constrained saddle system realizes Dirichlet and free-slip rows with the nodal
projector Pi (0 at Dirichlet nodes, I - n n^T at free-slip nodes, I elsewhere):

    A_c = Pi A Pi + (I - Pi),  Bt_c = Pi B^T,  B_c = B Pi,  C unchanged.
"""

import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp
from loguru import logger

from src.errors import (
    DegenerateElementError,
    DegenerateNormalError,
    LevelMismatchError,
    MissingStencilError,
    ResourceLimitError,
)
from src.fields import PressureField, StokesVector, VelocityField
from src.mesh import GridHierarchy, GridLevel
from src.models import BoundaryTag, Formulation, OperatorTag

DELTA_T = 1.0 / 12.0

# Symmetric 4-point rule on the reference tetrahedron, degree 2
GAUSS4_A = 0.5854101966249685
GAUSS4_B = 0.1381966011250105
GAUSS4_POINTS = np.full((4, 4), GAUSS4_B) + np.eye(4) * (GAUSS4_A - GAUSS4_B)

# (input components, output components, kernel acts per component)
_LAYOUT: Dict[OperatorTag, Tuple[int, int, bool]] = {
    OperatorTag.A1: (3, 3, True),
    OperatorTag.A2: (3, 3, False),
    OperatorTag.B: (3, 1, False),
    OperatorTag.BT: (1, 3, False),
    OperatorTag.C: (1, 1, True),
    OperatorTag.M: (1, 1, True),
}

Array = np.ndarray
Field = Union[VelocityField, PressureField, np.ndarray]


def element_gradients(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients (..., 4, 3) and volumes (...) of tetrahedra X (..., 4, 3)."""
    E = X[..., 1:, :] - X[..., :1, :]
    vol = np.linalg.det(E) / 6.0
    if np.any(np.abs(vol) <= 0.0):
        raise DegenerateElementError("element with zero volume")
    G = np.empty(X.shape, dtype=float)
    G[..., 1:, :] = np.swapaxes(np.linalg.inv(E), -1, -2)
    G[..., 0, :] = -G[..., 1:, :].sum(axis=-2)
    return G, vol


def element_kernels(tag: OperatorTag, X: np.ndarray, nu: float = 1.0, delta: float = DELTA_T) -> np.ndarray:
    """
    Local matrices of one operator for tetrahedra X (..., 4, 3).

    Scalar kernels are (..., 4, 4); block kernels use local dof 3*a + c for node a,
    component c: A2 (..., 12, 12), B (..., 4, 12), Bt (..., 12, 4).
    """
    G, vol = element_gradients(X)
    v = vol[..., None, None]
    GG = G @ np.swapaxes(G, -1, -2)
    if tag is OperatorTag.A1:
        return nu * v * GG
    if tag is OperatorTag.A2:
        eye = np.eye(3)
        K = np.einsum("...ab,cd->...acbd", GG, eye) + np.einsum("...ad,...bc->...acbd", G, G)
        return nu * v * K.reshape(*K.shape[:-4], 12, 12)
    if tag in (OperatorTag.B, OperatorTag.BT):
        K = -(vol / 4.0)[..., None, None, None] * G[..., None, :, :]
        K = np.broadcast_to(K, (*vol.shape, 4, 4, 3)).reshape(*vol.shape, 4, 12)
        return K if tag is OperatorTag.B else np.swapaxes(K, -1, -2).copy()
    if tag is OperatorTag.C:
        h2 = np.cbrt(vol) ** 2
        return delta * h2[..., None, None] * v * GG
    if tag is OperatorTag.M:
        return (vol / 4.0)[..., None, None] * np.eye(4)
    raise ValueError(f"unknown operator tag {tag}")


class OperatorCounter:
    """Thread-safe operator-evaluation counts keyed by (scope, tag, level)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: Dict[Tuple[str, str, int], int] = defaultdict(int)
        self._scope = "solve"

    @property
    def current_scope(self) -> str:
        return self._scope

    @contextmanager
    def scope(self, name: str):
        """Attribute evaluations inside the block to `name` (e.g. monitor, setup)."""
        previous = self._scope
        self._scope = name
        try:
            yield self
        finally:
            self._scope = previous

    def record(self, tag: OperatorTag, level: int, n: int = 1) -> None:
        with self._lock:
            self._counts[(self._scope, OperatorTag(tag).value, int(level))] += n

    def counts(self, scope: str = "solve") -> Dict[str, Dict[int, int]]:
        out: Dict[str, Dict[int, int]] = {}
        with self._lock:
            for (s, tag, level), n in self._counts.items():
                if s == scope:
                    out.setdefault(tag, {})[level] = n
        return out

    def get(self, tag: OperatorTag, level: int, scope: str = "solve") -> int:
        with self._lock:
            return self._counts.get((scope, OperatorTag(tag).value, int(level)), 0)

    def reset(self, scope: Optional[str] = None) -> None:
        """Clear all counts, or only those of one scope."""
        with self._lock:
            if scope is None:
                self._counts.clear()
                return
            for key in [k for k in self._counts if k[0] == scope]:
                del self._counts[key]


@dataclass
class StencilSet:
    """One operator on one level: element kernels per group, applied matrix-free."""
    level: int
    tag: OperatorTag
    grid: GridLevel
    kernels: np.ndarray
    counter: OperatorCounter
    nu: float = 1.0

    @property
    def layout(self) -> Tuple[int, int, bool]:
        return _LAYOUT[self.tag]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Operator times an array; counts one evaluation."""
        in_comp, out_comp, per_component = self.layout
        grid = self.grid
        n = grid.n_nodes
        x2 = np.asarray(x, dtype=float).reshape(n, in_comp)
        conn = grid.conn
        local = np.empty((len(conn), 4, out_comp))
        for g in range(grid.n_groups):
            sl = grid.group_slice(g)
            xg = x2[conn[sl]]
            K = self.kernels[g]
            if per_component:
                local[sl] = np.einsum("ij,ejc->eic", K, xg)
            else:
                local[sl] = (xg.reshape(len(xg), -1) @ K.T).reshape(-1, 4, out_comp)
        flat = conn.ravel()
        y = np.empty((n, out_comp))
        for c in range(out_comp):
            y[:, c] = np.bincount(flat, weights=local[..., c].ravel(), minlength=n)
        self.counter.record(self.tag, self.level)
        return y if out_comp == 3 else y[:, 0]

    def diagonal(self) -> np.ndarray:
        """Nodal diagonal: (N,) for scalar kernels, (N, 3, 3) blocks for A2."""
        grid = self.grid
        n = grid.n_nodes
        counts = np.diff(grid.group_bounds)
        if self.tag is OperatorTag.A2:
            blocks = np.stack([self.kernels[:, 3 * a:3 * a + 3, 3 * a:3 * a + 3] for a in range(4)], axis=1)
            per_elem = np.repeat(blocks, counts, axis=0)
            out = np.zeros((n, 3, 3))
            np.add.at(out, grid.conn, per_elem)
            return out
        if self.tag not in (OperatorTag.A1, OperatorTag.C, OperatorTag.M):
            raise ValueError(f"{self.tag.value} has no square nodal diagonal")
        diag = np.repeat(np.einsum("gaa->ga", self.kernels), counts, axis=0)
        return np.bincount(grid.conn.ravel(), weights=diag.ravel(), minlength=n)

    def node_stencil(self, node: int) -> Dict[int, np.ndarray]:
        """Row `node` of the operator as {neighbor: coefficient block}."""
        grid = self.grid
        in_comp, out_comp, per_component = self.layout
        elems, rows = np.nonzero(grid.conn == node)
        elem_group = np.searchsorted(grid.group_bounds, elems, side="right") - 1
        stencil: Dict[int, np.ndarray] = {}
        for e, a, g in zip(elems, rows, elem_group):
            K = self.kernels[g]
            for b, j in enumerate(grid.conn[e]):
                if per_component:
                    block = np.array([[K[a, b]]])
                else:
                    block = K[a * out_comp:(a + 1) * out_comp, b * in_comp:(b + 1) * in_comp]
                stencil[int(j)] = stencil.get(int(j), 0.0) + block
        return stencil


def assemble_stencils(hierarchy: GridHierarchy, level: int, tag: OperatorTag, nu: float = 1.0,
                      counter: Optional[OperatorCounter] = None, delta: float = DELTA_T) -> StencilSet:
    """Element kernels of `tag` for every element group of a level."""
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    grid = hierarchy.level(level)
    tag = OperatorTag(tag)
    kernels = element_kernels(tag, grid.group_vertices, nu=nu, delta=delta)
    return StencilSet(level, tag, grid, np.ascontiguousarray(kernels), counter or OperatorCounter(), nu)


def apply(stencils: StencilSet, x: Field) -> Field:
    """Matrix-free product; fields in, fields out (arrays pass through as arrays)."""
    if isinstance(x, (VelocityField, PressureField)):
        if x.level != stencils.level:
            raise LevelMismatchError(f"{stencils.tag.value} lives on level {stencils.level}, field on {x.level}")
        y = stencils.matvec(x.data)
        return VelocityField(x.level, y) if y.ndim == 2 else PressureField(x.level, y)
    return stencils.matvec(x)


def lumped_mass(grid: GridLevel) -> np.ndarray:
    """Row-sum lumped P1 mass: a quarter of every adjacent element volume."""
    vol = grid.element_volumes()
    return np.bincount(grid.conn.ravel(), weights=np.repeat(vol / 4.0, 4), minlength=grid.n_nodes)


@dataclass
class LevelOperators:
    """All stencil sets of one level sharing a counter."""
    grid: GridLevel
    stencils: Dict[OperatorTag, StencilSet]
    counter: OperatorCounter
    nu: float = 1.0

    @property
    def level(self) -> int:
        return self.grid.level_index

    def __getitem__(self, tag: OperatorTag) -> StencilSet:
        try:
            return self.stencils[OperatorTag(tag)]
        except KeyError:
            raise MissingStencilError(f"operator {OperatorTag(tag).value} not assembled on level {self.level}")

    def __contains__(self, tag: OperatorTag) -> bool:
        return OperatorTag(tag) in self.stencils


def assemble_level_operators(hierarchy: GridHierarchy, level: int, nu: float = 1.0,
                             counter: Optional[OperatorCounter] = None,
                             tags: Optional[Iterable[OperatorTag]] = None) -> LevelOperators:
    counter = counter or OperatorCounter()
    tags = list(tags) if tags is not None else list(OperatorTag)
    stencils = {OperatorTag(t): assemble_stencils(hierarchy, level, t, nu, counter) for t in tags}
    return LevelOperators(hierarchy.level(level), stencils, counter, nu)


def apply_saddle(ops: LevelOperators, x: StokesVector, formulation: Formulation) -> StokesVector:
    """(A_i u + B^T p, B u - C p) without boundary constraints."""
    if x.level != ops.level:
        raise LevelMismatchError(f"operators on level {ops.level}, vector on {x.level}")
    A = ops[Formulation(formulation).velocity_tag]
    top = A.matvec(x.u.data) + ops[OperatorTag.BT].matvec(x.p.data)
    bottom = ops[OperatorTag.B].matvec(x.u.data) - ops[OperatorTag.C].matvec(x.p.data)
    return StokesVector(VelocityField(x.level, top), PressureField(x.level, bottom))


@dataclass
class BCSpec:
    """Boundary data: Dirichlet values (None for homogeneous), viscosity and PSPG parameter."""
    dirichlet_value: Optional[Callable[[np.ndarray], np.ndarray]] = None
    nu: float = 1.0
    delta: float = DELTA_T

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")


def freeslip_normals(ops: LevelOperators, nodes: np.ndarray) -> np.ndarray:
    """
    Mass-conservative unit normals n_i ~ <grad phi_i, 1> = -(B^T 1)_i at the given nodes.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) == 0:
        return np.zeros((0, 3))
    with ops.counter.scope("setup"):
        raw = -ops[OperatorTag.BT].matvec(np.ones(ops.grid.n_nodes))[nodes]
    length = np.linalg.norm(raw, axis=1)
    # the largest raw normal sets the scale; interior-like patches give ~0
    if np.any(length <= 1e-12 * max(float(length.max()), np.finfo(float).tiny)):
        bad = int(nodes[np.argmin(length)])
        raise DegenerateNormalError(f"free-slip node {bad} has a zero-length normal")
    return raw / length[:, None]


def project_freeslip(u: Union[VelocityField, np.ndarray], nodes: np.ndarray,
                     normals: np.ndarray) -> Union[VelocityField, np.ndarray]:
    """Remove the normal component u_i . n_i at the given nodes."""
    data = u.data if isinstance(u, VelocityField) else np.asarray(u, dtype=float)
    out = data.copy()
    if len(nodes):
        out[nodes] -= np.einsum("ij,ij->i", out[nodes], normals)[:, None] * normals
    return VelocityField(u.level, out) if isinstance(u, VelocityField) else out


@dataclass
class Constraints:
    """Nodal velocity projector Pi of one level."""
    dirichlet: np.ndarray
    freeslip: np.ndarray
    normals: np.ndarray
    has_outflow: bool

    def project(self, u: np.ndarray) -> np.ndarray:
        """Pi u."""
        out = project_freeslip(u, self.freeslip, self.normals)
        out[self.dirichlet] = 0.0
        return out

    def complement(self, u: np.ndarray) -> np.ndarray:
        """(I - Pi) u."""
        return u - self.project(u)

    @property
    def pressure_kernel(self) -> bool:
        """Constant pressures are in the kernel unless some boundary is an outflow."""
        return not self.has_outflow

    def projector_matrix(self, n_nodes: int) -> sp.csr_matrix:
        """Pi as a sparse 3N x 3N matrix (oracle use)."""
        diag = np.ones(3 * n_nodes)
        for c in range(3):
            diag[3 * self.dirichlet + c] = 0.0
        P = sp.lil_matrix(sp.diags(diag))
        for i, n in zip(self.freeslip, self.normals):
            P[3 * i:3 * i + 3, 3 * i:3 * i + 3] = np.eye(3) - np.outer(n, n)
        return P.tocsr()


def build_constraints(ops: LevelOperators) -> Constraints:
    grid = ops.grid
    freeslip = grid.nodes_with_tag(BoundaryTag.FREESLIP)
    normals = freeslip_normals(ops, freeslip) if len(freeslip) else np.zeros((0, 3))
    return Constraints(
        dirichlet=grid.nodes_with_tag(BoundaryTag.DIRICHLET),
        freeslip=freeslip,
        normals=normals,
        has_outflow=bool(len(grid.nodes_with_tag(BoundaryTag.OUTFLOW))),
    )


@dataclass
class SaddleSystem:
    """Constrained saddle operator K_c of one level acting on flat vectors."""
    ops: LevelOperators
    formulation: Formulation
    constraints: Constraints
    mass: np.ndarray = field(init=False, repr=False)
    _cache: Dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.formulation = Formulation(self.formulation)
        self.mass = lumped_mass(self.ops.grid)

    @property
    def level(self) -> int:
        return self.ops.level

    @property
    def grid(self) -> GridLevel:
        return self.ops.grid

    @property
    def n_nodes(self) -> int:
        return self.ops.grid.n_nodes

    @property
    def counter(self) -> OperatorCounter:
        return self.ops.counter

    @property
    def velocity_stencils(self) -> StencilSet:
        return self.ops[self.formulation.velocity_tag]

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = self.n_nodes
        return x[:3 * n].reshape(n, 3), x[3 * n:]

    def join(self, u: np.ndarray, p: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(u).ravel(), np.asarray(p).ravel()])

    def A(self, u: np.ndarray) -> np.ndarray:
        """Pi A Pi u + (I - Pi) u."""
        pu = self.constraints.project(u)
        return self.constraints.project(self.velocity_stencils.matvec(pu)) + (u - pu)

    def Bt(self, p: np.ndarray) -> np.ndarray:
        return self.constraints.project(self.ops[OperatorTag.BT].matvec(p))

    def B(self, u: np.ndarray) -> np.ndarray:
        return self.ops[OperatorTag.B].matvec(self.constraints.project(u))

    def C(self, p: np.ndarray) -> np.ndarray:
        return self.ops[OperatorTag.C].matvec(p)

    def apply(self, x: np.ndarray) -> np.ndarray:
        u, p = self.split(x)
        return self.join(self.A(u) + self.Bt(p), self.B(u) - self.C(p))

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        return rhs - self.apply(x)

    def free_norm(self, r: np.ndarray) -> float:
        """Residual norm over free velocity components and all pressures."""
        ru, rp = self.split(r)
        pu = self.constraints.project(ru)
        return float(np.sqrt(np.dot(pu.ravel(), pu.ravel()) + np.dot(rp, rp)))

    def project_pressure(self, p: np.ndarray) -> np.ndarray:
        """Mass-weighted mean removal when constants are in the pressure kernel."""
        if not self.constraints.pressure_kernel:
            return p
        return p - float(np.dot(self.mass, p)) / float(self.mass.sum())

    def impose(self, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Overwrite constrained velocity components with their lifted rhs values."""
        u, p = self.split(x)
        ru, _ = self.split(rhs)
        u = self.constraints.project(u) + self.constraints.complement(ru)
        return self.join(u, p)


def build_saddle_system(ops: LevelOperators, formulation: Formulation) -> SaddleSystem:
    with ops.counter.scope("setup"):
        constraints = build_constraints(ops)
    return SaddleSystem(ops, Formulation(formulation), constraints)


def assemble_load(force: Optional[Callable[[np.ndarray], np.ndarray]], grid: GridLevel,
                  quadrature: str = "gauss4", delta: float = DELTA_T) -> Tuple[np.ndarray, np.ndarray]:
    """
    Load vector <f, phi> (N, 3) and stabilization term g(q) = -sum_T delta h_T^2 <f, grad q>_T (N,).
    """
    n = grid.n_nodes
    f_u = np.zeros((n, 3))
    g = np.zeros(n)
    if force is None:
        return f_u, g
    if quadrature not in ("gauss4", "vertex"):
        raise ValueError(f"unknown quadrature rule {quadrature!r}")
    lam = GAUSS4_POINTS if quadrature == "gauss4" else np.eye(4)
    G_all, vol_all = element_gradients(grid.group_vertices)
    for gi in range(grid.n_groups):
        sl = grid.group_slice(gi)
        conn = grid.conn[sl]
        X = grid.coords[conn]
        pts = np.einsum("kj,ejd->ekd", lam, X)
        fv = np.asarray(force(pts.reshape(-1, 3)), dtype=float).reshape(len(conn), 4, 3)
        w = vol_all[gi] / 4.0
        load = w * np.einsum("ka,ekd->ead", lam, fv)
        stab = -delta * np.cbrt(vol_all[gi]) ** 2 * w * np.einsum("ekd,ad->ea", fv, G_all[gi])
        flat = conn.ravel()
        for c in range(3):
            f_u[:, c] += np.bincount(flat, weights=load[..., c].ravel(), minlength=n)
        g += np.bincount(flat, weights=stab.ravel(), minlength=n)
    return f_u, g


def apply_dirichlet(system: SaddleSystem, rhs_raw: Tuple[np.ndarray, np.ndarray],
                    u_dirichlet: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Fold boundary constraints into the right-hand side of K_c x = b.

    Velocity: Pi (f - A u_D) + (I - Pi) u_D; pressure: g - B u_D, mean-free when
    constants lie in the pressure kernel.
    """
    f_u, g = rhs_raw
    n = system.n_nodes
    u_d = np.zeros((n, 3))
    if u_dirichlet is not None:
        u_d[system.constraints.dirichlet] = np.asarray(u_dirichlet).reshape(n, 3)[system.constraints.dirichlet]
    with system.counter.scope("setup"):
        Au = system.velocity_stencils.matvec(u_d)
        Bu = system.ops[OperatorTag.B].matvec(u_d)
    top = system.constraints.project(f_u - Au) + u_d
    bottom = g - Bu
    if system.constraints.pressure_kernel:
        bottom = bottom - bottom.mean()
    return system.join(top, bottom)


def assemble_rhs(force: Optional[Callable[[np.ndarray], np.ndarray]], system: SaddleSystem,
                 bc: Optional[BCSpec] = None, quadrature: str = "gauss4") -> np.ndarray:
    """Lifted right-hand side of the constrained system on one level."""
    bc = bc or BCSpec()
    grid = system.grid
    rhs_raw = assemble_load(force, grid, quadrature, bc.delta)
    u_d = None
    if bc.dirichlet_value is not None:
        u_d = np.asarray(bc.dirichlet_value(grid.coords), dtype=float).reshape(grid.n_nodes, 3)
    return apply_dirichlet(system, rhs_raw, u_d)


def assemble_sparse(grid: GridLevel, tag: OperatorTag, nu: float = 1.0, delta: float = DELTA_T,
                    scalar: bool = False) -> sp.csr_matrix:
    """
    Explicit sparse matrix of an operator, built element by element from coordinates.

    Oracle for the matrix-free path, levels <= 1 only. Vector operators use the flat
    dof 3*node + component; scalar=True returns the N x N form of A1.
    """
    if grid.level_index > 1:
        raise ResourceLimitError("explicit assembly is limited to levels 0 and 1")
    tag = OperatorTag(tag)
    X = grid.coords[grid.conn]
    K = element_kernels(tag, X, nu=nu, delta=delta)
    in_comp, out_comp, per_component = _LAYOUT[tag]
    n = grid.n_nodes
    conn = grid.conn
    if per_component and (scalar or in_comp == 1):
        rows = np.repeat(conn, 4, axis=1).ravel()
        cols = np.tile(conn, (1, 4)).ravel()
        return sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    if per_component:
        K = np.einsum("eab,cd->eacbd", K, np.eye(3)).reshape(len(conn), 12, 12)
    row_dofs = (conn[:, :, None] * out_comp + np.arange(out_comp)).reshape(len(conn), -1)
    col_dofs = (conn[:, :, None] * in_comp + np.arange(in_comp)).reshape(len(conn), -1)
    rows = np.repeat(row_dofs[:, :, None], col_dofs.shape[1], axis=2).ravel()
    cols = np.repeat(col_dofs[:, None, :], row_dofs.shape[1], axis=1).ravel()
    return sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n * out_comp, n * in_comp)).tocsr()


def constrained_velocity_matrix(system: SaddleSystem) -> sp.csr_matrix:
    """Explicit A_c = Pi A Pi + (I - Pi) of the velocity block (levels <= 1)."""
    n = system.n_nodes
    A = assemble_sparse(system.grid, system.formulation.velocity_tag, system.ops.nu)
    P = system.constraints.projector_matrix(n)
    return (P @ A @ P + (sp.identity(3 * n, format="csr") - P)).tocsr()


def assemble_constrained(system: SaddleSystem) -> sp.csr_matrix:
    """Explicit K_c (oracle for symmetry and dense checks)."""
    grid = system.grid
    nu = system.ops.nu
    B = assemble_sparse(grid, OperatorTag.B, nu)
    C = assemble_sparse(grid, OperatorTag.C, nu)
    P = system.constraints.projector_matrix(grid.n_nodes)
    return sp.bmat([[constrained_velocity_matrix(system), P @ B.T], [B @ P, -C]], format="csr")


def dump_matrix_market(matrix: sp.spmatrix, path: Union[str, Path], comment: str = "") -> Path:
    """Write an assembled operator in Matrix Market coordinate format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
    logger.debug(f"Wrote {matrix.shape[0]}x{matrix.shape[1]} matrix to {path}")
    return path
