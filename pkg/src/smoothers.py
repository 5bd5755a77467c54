"""
Hybrid Gauss-Seidel smoothers and the inexact Uzawa smoothing step.

A sweep visits the primitive classes in the fixed order vertex, edge, face, volume.
Inside a primitive, nodes are relaxed color by color (red colors first); every color
is an independent set of the operator graph, so a color is updated in one vectorized
step. Primitives of the same class are decoupled: while a class is swept, couplings
to other primitives of that class see the values frozen when the class started.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from src.errors import ZeroDiagonalError
from src.models import OperatorTag, SmootherKind
from src.operators import Constraints, SaddleSystem, StencilSet

# forward color order per node kind (vertex, edge, face, volume); red colors first
COLOR_ORDER: Dict[int, tuple] = {0: (0,), 1: (0, 1), 2: (0, 1, 2, 3), 3: (0, 2, 1, 3)}

_CHUNK = 1 << 16


@dataclass
class ColorSet:
    """Nodes of one color of one primitive class, with the element rows that touch them."""
    kind: int
    color: int
    nodes: np.ndarray
    elems: np.ndarray
    arow: np.ndarray
    gidx: np.ndarray
    pos: np.ndarray
    inverse: np.ndarray
    cross: Optional[sp.csr_matrix] = None


@dataclass
class SweepPlan:
    """Traversal data of one operator under one set of velocity constraints."""
    stencils: StencilSet
    constraints: Optional[Constraints]
    sets: Dict[int, List[ColorSet]] = field(default_factory=dict)
    class_nodes: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def block(self) -> bool:
        """True when the kernel couples velocity components (A2)."""
        return not self.stencils.layout[2]

    @property
    def vector(self) -> bool:
        return self.stencils.layout[1] == 3

    @property
    def n_updates(self) -> int:
        """Nodes relaxed per sweep."""
        return sum(len(cs.nodes) for sets in self.sets.values() for cs in sets)


def _block_inverses(stencils: StencilSet, constraints: Optional[Constraints], free: np.ndarray) -> np.ndarray:
    n = stencils.grid.n_nodes
    diag = stencils.diagonal()
    if diag.ndim == 1:
        if np.any(diag[free] <= 0.0):
            bad = int(np.nonzero(free & (diag <= 0.0))[0][0])
            raise ZeroDiagonalError(f"{stencils.tag.value}: nonpositive diagonal at node {bad}")
        if not stencils.layout[1] == 3:
            out = np.zeros(n)
            out[free] = 1.0 / diag[free]
            return out
        D = diag[:, None, None] * np.eye(3)
    else:
        D = diag
        if np.any(np.einsum("nii->ni", D)[free] <= 0.0):
            raise ZeroDiagonalError(f"{stencils.tag.value}: nonpositive diagonal block entry")
    Pi = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    if constraints is not None and len(constraints.freeslip):
        nn = np.einsum("ni,nj->nij", constraints.normals, constraints.normals)
        Pi[constraints.freeslip] -= nn
    Dt = Pi @ D @ Pi + (np.eye(3) - Pi)
    out = np.zeros((n, 3, 3))
    try:
        out[free] = np.linalg.inv(Dt[free]) @ Pi[free]
    except np.linalg.LinAlgError as e:
        raise ZeroDiagonalError(f"{stencils.tag.value}: singular diagonal block") from e
    return out


def _cross_coupling(stencils: StencilSet, in_class: np.ndarray, class_index: np.ndarray,
                    elem_group: np.ndarray) -> sp.csr_matrix:
    """Couplings between nodes of one class that sit on different primitives."""
    grid = stencils.grid
    conn = grid.conn
    prim = grid.node_primitive
    bs = 3 if not stencils.layout[2] else 1
    m = int(in_class.sum())
    rows, cols, vals = [], [], []
    for a in range(4):
        for b in range(4):
            if a == b:
                continue
            na, nb = conn[:, a], conn[:, b]
            e = np.nonzero(in_class[na] & in_class[nb] & (prim[na] != prim[nb]))[0]
            if not len(e):
                continue
            g = elem_group[e]
            ra, cb = class_index[na[e]], class_index[nb[e]]
            if bs == 1:
                rows.append(ra)
                cols.append(cb)
                vals.append(stencils.kernels[g, a, b])
            else:
                blk = stencils.kernels[g][:, 3 * a:3 * a + 3, 3 * b:3 * b + 3]
                rows.append(np.repeat((3 * ra[:, None] + np.arange(3))[:, :, None], 3, axis=2).ravel())
                cols.append(np.repeat((3 * cb[:, None] + np.arange(3))[:, None, :], 3, axis=1).ravel())
                vals.append(blk.ravel())
    if not rows:
        return sp.csr_matrix((m * bs, m * bs))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * bs, m * bs)
    ).tocsr()


def build_sweep_plan(stencils: StencilSet, constraints: Optional[Constraints] = None) -> SweepPlan:
    """Color sets, element rows and nodal inverses for sweeps with `stencils`."""
    grid = stencils.grid
    n = grid.n_nodes
    free = np.ones(n, dtype=bool)
    if constraints is not None:
        free[constraints.dirichlet] = False
    inverse = _block_inverses(stencils, constraints, free)
    elem_group = np.repeat(np.arange(grid.n_groups), np.diff(grid.group_bounds))
    bs = 3 if not stencils.layout[2] else 1
    plan = SweepPlan(stencils, constraints)

    for kind in range(4):
        in_class = (grid.node_kind == kind) & free
        nodes_k = np.nonzero(in_class)[0]
        plan.class_nodes[kind] = nodes_k
        plan.sets[kind] = []
        if not len(nodes_k):
            continue
        class_index = np.full(n, -1, dtype=np.int64)
        class_index[nodes_k] = np.arange(len(nodes_k))
        cross = _cross_coupling(stencils, in_class, class_index, elem_group) if kind in (1, 2) else None
        if cross is not None and cross.nnz == 0:
            cross = None

        for color in COLOR_ORDER[kind]:
            S = nodes_k[grid.node_color[nodes_k] == color]
            if not len(S):
                continue
            in_set = np.zeros(n, dtype=bool)
            in_set[S] = True
            elems, arow = np.nonzero(in_set[grid.conn])
            node_pos = np.full(n, -1, dtype=np.int64)
            node_pos[S] = np.arange(len(S))
            cs_cross = None
            if cross is not None:
                ci = class_index[S]
                rows = (bs * ci[:, None] + np.arange(bs)).ravel()
                cs_cross = cross[rows]
            plan.sets[kind].append(ColorSet(
                kind=kind,
                color=color,
                nodes=S,
                elems=elems,
                arow=arow,
                gidx=elem_group[elems],
                pos=node_pos[grid.conn[elems, arow]],
                inverse=inverse[S],
                cross=cs_cross,
            ))
    return plan


def _rows_product(plan: SweepPlan, cs: ColorSet, w: np.ndarray) -> np.ndarray:
    """(K w) restricted to the nodes of one color set."""
    stencils = plan.stencils
    conn = stencils.grid.conn
    out_shape = (len(cs.nodes), 3) if plan.vector else (len(cs.nodes),)
    acc = np.zeros(out_shape)
    for start in range(0, len(cs.elems), _CHUNK):
        sl = slice(start, start + _CHUNK)
        cn = conn[cs.elems[sl]]
        gidx, arow, pos = cs.gidx[sl], cs.arow[sl], cs.pos[sl]
        if plan.block:
            rows = 3 * arow[:, None] + np.arange(3)
            K = stencils.kernels[gidx[:, None], rows]
            vals = np.einsum("pcj,pj->pc", K, w[cn].reshape(len(cn), 12))
        else:
            K = stencils.kernels[gidx, arow]
            vals = np.einsum("pb,pb...->p...", K, w[cn])
        if plan.vector:
            for c in range(3):
                acc[:, c] += np.bincount(pos, weights=vals[:, c], minlength=len(cs.nodes))
        else:
            acc += np.bincount(pos, weights=vals, minlength=len(cs.nodes))
    return acc


def hybrid_gs_sweep(plan: SweepPlan, x: np.ndarray, rhs: np.ndarray,
                    kind: SmootherKind = SmootherKind.FHGS, omega: float = 1.0) -> np.ndarray:
    """
    One hybrid Gauss-Seidel sweep for K x = rhs (K constrained when the plan has constraints).

    BHGS reverses the color order inside each primitive but keeps the class order.
    FHGS_relaxed scales every nodal update by omega.
    """
    kind = SmootherKind(kind)
    if kind is SmootherKind.SHGS:
        return shgs_step(plan, x, rhs)
    if kind is SmootherKind.FHGS_RELAXED:
        if not 0.0 < omega <= 1.0:
            raise ValueError(f"omega must lie in (0, 1], got {omega}")
    else:
        omega = 1.0
    reverse = kind is SmootherKind.BHGS
    cons = plan.constraints
    w = cons.project(x) if cons is not None else np.array(x, dtype=float)

    for k in range(4):
        sets = plan.sets.get(k, [])
        if not sets:
            continue
        class_nodes = plan.class_nodes[k]
        snap = w[class_nodes].copy() if sets[0].cross is not None else None
        for cs in (reversed(sets) if reverse else sets):
            r = rhs[cs.nodes] - _rows_product(plan, cs, w)
            if snap is not None:
                diff = w[class_nodes] - snap
                if plan.block:
                    r += (cs.cross @ diff.ravel()).reshape(-1, 3)
                else:
                    r += cs.cross @ diff
            if plan.vector:
                delta = np.einsum("nij,nj->ni", cs.inverse, r)
            else:
                delta = cs.inverse * r
            w[cs.nodes] += omega * delta

    plan.stencils.counter.record(plan.stencils.tag, plan.stencils.level)
    if cons is not None:
        w += cons.complement(rhs)
    return w


def shgs_step(plan: SweepPlan, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Forward then backward hybrid sweep."""
    x = hybrid_gs_sweep(plan, x, rhs, SmootherKind.FHGS)
    return hybrid_gs_sweep(plan, x, rhs, SmootherKind.BHGS)


def velocity_plan(system: SaddleSystem) -> SweepPlan:
    """Cached sweep plan of the constrained velocity block."""
    key = ("velocity", system.formulation.value)
    if key not in system._cache:
        system._cache[key] = build_sweep_plan(system.velocity_stencils, system.constraints)
    return system._cache[key]


def pressure_plan(system: SaddleSystem) -> SweepPlan:
    """Cached sweep plan of the stabilization block C."""
    key = ("pressure",)
    if key not in system._cache:
        system._cache[key] = build_sweep_plan(system.ops[OperatorTag.C])
    return system._cache[key]


def uzawa_step(system: SaddleSystem, x: np.ndarray, rhs: np.ndarray, n_sweeps: int = 1,
               omega: float = 0.3,
               velocity_solve: Optional[Callable[[np.ndarray], np.ndarray]] = None,
               pressure_solve: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """
    Inexact Uzawa smoothing on flat saddle vectors.

    u <- u + A^-1 (f - A u - B^T p) by SHGS sweeps on the momentum equation with
    f - B^T p as right-hand side, then p <- p + S^-1 (B u - C p - g) by relaxed FHGS
    sweeps on C. The optional solves replace the smoothers by explicit correction
    operators (used to check the iteration against a dense triangular preconditioner).
    """
    u, p = system.split(np.asarray(x, dtype=float))
    u, p = u.copy(), p.copy()
    f_u, g = system.split(rhs)

    f_eff = f_u - system.Bt(p)
    if velocity_solve is not None:
        u = u + velocity_solve(f_eff - system.A(u))
    else:
        plan = velocity_plan(system)
        for _ in range(n_sweeps):
            u = shgs_step(plan, u, f_eff)

    rhs_p = system.B(u) - g
    if pressure_solve is not None:
        p = p + pressure_solve(rhs_p - system.C(p))
    else:
        plan = pressure_plan(system)
        for _ in range(n_sweeps):
            p = hybrid_gs_sweep(plan, p, rhs_p, SmootherKind.FHGS_RELAXED, omega)
    return system.join(u, p)
