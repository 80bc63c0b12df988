"""Isoparametric Q4/Q8 linear elasticity: assembly, solve, stress and energy."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from sprest.geometry import EDGES, Q4, Q8, QuadMesh, order_nodes
from sprest.quadrature import DEFAULT_ERROR_ORDER, PointSet, edge_points, element_points

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when a linear solve or factorisation cannot be trusted."""


@dataclass(frozen=True)
class Material:
    young: float = 1000.0
    poisson: float = 0.3
    plane: str = "strain"

    def __post_init__(self):
        if self.young <= 0:
            raise ValueError("Young's modulus must be positive")
        if self.plane not in ("strain", "stress"):
            raise ValueError(f"plane state must be 'strain' or 'stress', got {self.plane!r}")
        if not (0.0 <= self.poisson < 0.5):
            raise ValueError("Poisson ratio must satisfy 0 <= nu < 0.5")

    @property
    def shear_modulus(self) -> float:
        return self.young / (2.0 * (1.0 + self.poisson))

    @property
    def kolosov(self) -> float:
        nu = self.poisson
        return 3.0 - 4.0 * nu if self.plane == "strain" else (3.0 - nu) / (1.0 + nu)

    @property
    def D(self) -> np.ndarray:
        return elasticity_matrix(self)

    @property
    def S(self) -> np.ndarray:
        return np.linalg.inv(elasticity_matrix(self))


def elasticity_matrix(material: Material) -> np.ndarray:
    """Voigt constitutive matrix (xx, yy, xy with engineering shear strain)."""
    E, nu = material.young, material.poisson
    if material.plane == "strain":
        c = E / ((1 + nu) * (1 - 2 * nu))
        return c * np.array([[1 - nu, nu, 0.0], [nu, 1 - nu, 0.0], [0.0, 0.0, 0.5 - nu]])
    c = E / (1 - nu * nu)
    return c * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1 - nu)]])


def _bilinear(ref):
    xi, eta = ref[:, 0], ref[:, 1]
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    fx = 1 + xi[:, None] * sx
    fy = 1 + eta[:, None] * sy
    N = 0.25 * fx * fy
    dN = np.stack([0.25 * sx * fy, 0.25 * fx * sy], axis=-1)
    return N, dN


def _serendipity(ref):
    xi, eta = ref[:, 0:1], ref[:, 1:2]
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    np_ = len(ref)
    N = np.empty((np_, 8))
    dN = np.empty((np_, 8, 2))
    a = 1 + xi * sx
    b = 1 + eta * sy
    N[:, :4] = 0.25 * a * b * (xi * sx + eta * sy - 1)
    dN[:, :4, 0] = 0.25 * sx * b * (2 * xi * sx + eta * sy)
    dN[:, :4, 1] = 0.25 * sy * a * (xi * sx + 2 * eta * sy)
    x, e = xi[:, 0], eta[:, 0]
    # midsides: bottom (eta=-1), right (xi=1), top (eta=1), left (xi=-1)
    N[:, 4] = 0.5 * (1 - x * x) * (1 - e)
    N[:, 6] = 0.5 * (1 - x * x) * (1 + e)
    N[:, 5] = 0.5 * (1 + x) * (1 - e * e)
    N[:, 7] = 0.5 * (1 - x) * (1 - e * e)
    dN[:, 4] = np.stack([-x * (1 - e), -0.5 * (1 - x * x)], 1)
    dN[:, 6] = np.stack([-x * (1 + e), 0.5 * (1 - x * x)], 1)
    dN[:, 5] = np.stack([0.5 * (1 - e * e), -(1 + x) * e], 1)
    dN[:, 7] = np.stack([-0.5 * (1 - e * e), -(1 - x) * e], 1)
    return N, dN


def shape_values(order: str, ref):
    """Element basis and bilinear vertex functions at reference points.

    Returns ``(N, dN, Nv, dNv)`` with derivatives taken with respect to the
    reference coordinates; a single point may be passed as a length-2 array.
    """
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    Nv, dNv = _bilinear(ref)
    if order == Q4:
        return Nv, dNv, Nv, dNv
    if order == Q8:
        N, dN = _serendipity(ref)
        return N, dN, Nv, dNv
    raise ValueError(f"unknown element order {order!r}")


def strain_matrix(dNdx: np.ndarray) -> np.ndarray:
    """B matrices (..., 3, 2*nn) from physical shape derivatives (..., nn, 2)."""
    shp = dNdx.shape[:-2]
    nn = dNdx.shape[-2]
    B = np.zeros(shp + (3, 2 * nn))
    B[..., 0, 0::2] = dNdx[..., 0]
    B[..., 1, 1::2] = dNdx[..., 1]
    B[..., 2, 0::2] = dNdx[..., 1]
    B[..., 2, 1::2] = dNdx[..., 0]
    return B


def physical_gradients(dN: np.ndarray, jinv: np.ndarray) -> np.ndarray:
    # grad_x N = J^{-T} grad_ref N
    return np.einsum("pji,pnj->pni", jinv, dN)


def traction_from_stress(sig: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.stack([sig[:, 0] * n[:, 0] + sig[:, 2] * n[:, 1],
                     sig[:, 2] * n[:, 0] + sig[:, 1] * n[:, 1]], axis=1)


@dataclass(frozen=True)
class LoadCase:
    """Loads and essential data for one problem.

    ``traction(x, n, side)`` gives the prescribed traction on Neumann edges,
    ``pins`` are point constraints ``((x, y), component, value)`` used to
    remove rigid-body modes of traction problems.
    """

    body_force: Callable | None = None
    traction: Callable | None = None
    dirichlet: Callable | None = None
    pins: tuple = ()

    def b(self, x: np.ndarray) -> np.ndarray:
        if self.body_force is None:
            return np.zeros_like(x)
        return np.asarray(self.body_force(x), dtype=float)

    def t(self, x: np.ndarray, n: np.ndarray, sides) -> np.ndarray:
        if self.traction is None:
            return np.zeros_like(x)
        return np.asarray(self.traction(x, n, sides), dtype=float)

    def scaled(self, factor: float) -> LoadCase:
        def mul(f):
            return None if f is None else (lambda *a: factor * np.asarray(f(*a)))
        return LoadCase(mul(self.body_force), mul(self.traction), mul(self.dirichlet),
                        tuple((p, c, factor * v) for p, c, v in self.pins))


@dataclass(frozen=True, eq=False)
class FEField:
    mesh: QuadMesh
    material: Material
    load: LoadCase
    u: np.ndarray
    ndof: int
    residual: float
    n_unknowns: int = 0

    def element_dofs(self, elem: np.ndarray) -> np.ndarray:
        conn = self.mesh.elements[elem]
        ue = self.u.reshape(-1, 2)[conn]
        return ue.reshape(len(elem), -1)

    def displacement_at(self, ps: PointSet) -> np.ndarray:
        N, _, _, _ = shape_values(self.mesh.order, ps.ref)
        ue = self.u.reshape(-1, 2)[self.mesh.elements[ps.elem]]
        return np.einsum("pn,pnc->pc", N, ue)

    def stress_at(self, ps: PointSet) -> np.ndarray:
        _, dN, _, _ = shape_values(self.mesh.order, ps.ref)
        dNdx = physical_gradients(dN, ps.jinv)
        ue = self.u.reshape(-1, 2)[self.mesh.elements[ps.elem]]
        grad = np.einsum("pnc,pnd->pcd", ue, dNdx)  # grad[c, d] = d u_c / d x_d
        eps = np.stack([grad[:, 0, 0], grad[:, 1, 1], grad[:, 0, 1] + grad[:, 1, 0]], 1)
        return eps @ self.material.D.T

    def strain_energy(self) -> float:
        return energy_inner_product(self.mesh, self.stress_at, self.stress_at,
                                    material=self.material)[0]


def _element_matrices(mesh: QuadMesh, D: np.ndarray, n: int):
    ps = element_points(mesh, n)
    _, dN, _, _ = shape_values(mesh.order, ps.ref)
    B = strain_matrix(physical_gradients(dN, ps.jinv))
    nq = len(ps) // mesh.n_elements
    B = B.reshape(mesh.n_elements, nq, 3, -1)
    w = ps.weight.reshape(mesh.n_elements, nq)
    return np.einsum("eqki,kl,eqlj,eq->eij", B, D, B, w, optimize=True)


def _global_dofs(mesh: QuadMesh) -> np.ndarray:
    conn = mesh.elements
    return np.stack([2 * conn, 2 * conn + 1], axis=-1).reshape(len(conn), -1)


def assemble_stiffness(mesh: QuadMesh, material: Material, n: int | None = None):
    if n is None:
        n = 2 if mesh.order == Q4 else 3
    ke = _element_matrices(mesh, material.D, n)
    dofs = _global_dofs(mesh)
    nd = dofs.shape[1]
    rows = np.repeat(dofs, nd, axis=1).ravel()
    cols = np.tile(dofs, (1, nd)).ravel()
    ndof = 2 * mesh.n_nodes
    return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(ndof, ndof))


def assemble_load(mesh: QuadMesh, load: LoadCase, n: int = DEFAULT_ERROR_ORDER) -> np.ndarray:
    """Consistent nodal forces from body force and Neumann tractions."""
    f = np.zeros(2 * mesh.n_nodes)
    dofs = _global_dofs(mesh)
    if load.body_force is not None:
        ps = element_points(mesh, n)
        N, _, _, _ = shape_values(mesh.order, ps.ref)
        bw = load.b(ps.x) * ps.weight[:, None]
        fe = (N[:, :, None] * bw[:, None, :]).reshape(len(ps), -1)
        np.add.at(f, dofs[ps.elem].ravel(), fe.ravel())
    if load.traction is not None:
        es = edge_points(mesh, n, tags=("neumann",))
        if len(es):
            sides = np.array([mesh.boundary_edges[i].side for i in es.edge])
            N, _, _, _ = shape_values(mesh.order, es.ref)
            tw = load.t(es.x, es.normal, sides) * es.weight[:, None]
            fe = (N[:, :, None] * tw[:, None, :]).reshape(len(es), -1)
            np.add.at(f, dofs[es.elem].ravel(), fe.ravel())
    return f


@dataclass(frozen=True, eq=False)
class ConstraintMap:
    """Full dof vector = T @ free + g."""

    T: sp.csr_matrix
    g: np.ndarray
    fixed: np.ndarray
    n_free: int


def _find_node(mesh: QuadMesh, point) -> int:
    d = np.linalg.norm(mesh.nodes - np.asarray(point, float), axis=1)
    k = int(np.argmin(d))
    if d[k] > 1e-9 * max(1.0, float(np.abs(mesh.nodes).max())):
        raise ValueError(f"no mesh node at pinned point {tuple(point)}")
    return k


def build_constraints(mesh: QuadMesh, load: LoadCase) -> ConstraintMap:
    ndof = 2 * mesh.n_nodes
    fixed: dict[int, float] = {}
    for be in mesh.boundary_edges:
        nodes = mesh.edge_nodes(be)
        if be.tag == "dirichlet":
            if load.dirichlet is None:
                raise ValueError("mesh has Dirichlet edges but the load case has no data")
            vals = np.asarray(load.dirichlet(mesh.nodes[list(nodes)]), float)
            for nd, v in zip(nodes, vals):
                fixed[2 * nd] = float(v[0])
                fixed[2 * nd + 1] = float(v[1])
        elif be.tag == "symmetry-x":
            for nd in nodes:
                fixed[2 * nd] = 0.0
        elif be.tag == "symmetry-y":
            for nd in nodes:
                fixed[2 * nd + 1] = 0.0
    for point, comp, value in load.pins:
        fixed[2 * _find_node(mesh, point) + int(comp)] = float(value)
    slaves = {}
    for s, (masters, coefs) in mesh.constraints.items():
        for c in (0, 1):
            slaves[2 * s + c] = ([2 * m + c for m in masters], coefs)
    col = -np.ones(ndof, dtype=np.int64)
    nfree = 0
    for d in range(ndof):
        if d not in fixed and d not in slaves:
            col[d] = nfree
            nfree += 1
    g = np.zeros(ndof)
    for d, v in fixed.items():
        g[d] = v
    rows, cols, vals = [], [], []
    free = np.nonzero(col >= 0)[0]
    rows.extend(free.tolist())
    cols.extend(col[free].tolist())
    vals.extend([1.0] * len(free))
    for d, (ms, cs) in sorted(slaves.items()):
        for m, c in zip(ms, cs):
            if m in slaves:
                raise RuntimeError("unresolved hanging-node chain")
            if col[m] >= 0:
                rows.append(d)
                cols.append(int(col[m]))
                vals.append(c)
            g[d] += c * g[m]
    T = sp.csr_matrix((vals, (rows, cols)), shape=(ndof, nfree))
    return ConstraintMap(T, g, np.array(sorted(fixed), dtype=np.int64), nfree)


def rigid_modes(mesh: QuadMesh) -> np.ndarray:
    x = mesh.nodes
    modes = np.zeros((3, 2 * mesh.n_nodes))
    modes[0, 0::2] = 1.0
    modes[1, 1::2] = 1.0
    modes[2, 0::2] = -x[:, 1]
    modes[2, 1::2] = x[:, 0]
    return modes


def assemble_and_solve(mesh: QuadMesh, material: Material, load: LoadCase,
                       stiffness_order: int | None = None,
                       load_order: int = DEFAULT_ERROR_ORDER,
                       rtol: float = 1e-10) -> FEField:
    K = assemble_stiffness(mesh, material, stiffness_order)
    f = assemble_load(mesh, load, load_order)
    cm = build_constraints(mesh, load)
    T = cm.T
    if _admissible_rigid_modes(mesh, cm):
        raise NumericalError("singular stiffness matrix; " + _null_space_report(mesh, K, cm))
    Kr = (T.T @ K @ T).tocsc()
    fr = T.T @ (f - K @ cm.g)
    if cm.n_free == 0:
        a = np.zeros(0)
    else:
        try:
            with np.errstate(all="ignore"):
                a = spla.splu(Kr).solve(fr)
        except RuntimeError as exc:
            raise NumericalError(f"singular stiffness matrix: {exc}; "
                                 + _null_space_report(mesh, K, cm)) from exc
    res = float(np.linalg.norm(Kr @ a - fr) / max(np.linalg.norm(fr), 1e-300))
    if not np.all(np.isfinite(a)) or res > rtol:
        raise NumericalError(f"linear solve failed (relative residual {res:.3e}); "
                             + _null_space_report(mesh, K, cm))
    u = T @ a + cm.g
    ndof = 2 * (mesh.n_nodes - len(mesh.constraints))
    return FEField(mesh, material, load, u, ndof, res, cm.n_free)


def _admissible_rigid_modes(mesh: QuadMesh, cm: ConstraintMap) -> int:
    """Number of independent rigid-body motions left free by the constraints."""
    modes = rigid_modes(mesh)
    sub = modes[:, cm.fixed]
    if sub.shape[1] == 0:
        return 3
    scale = np.abs(modes).max(axis=1, keepdims=True)
    sv = np.linalg.svd(sub / scale, compute_uv=False)
    return int(3 - np.sum(sv > 1e-10 * max(sv.max(), 1.0)))


def _null_space_report(mesh, K, cm) -> str:
    names = ("translation-x", "translation-y", "rotation")
    bad = [name for name, mode in zip(names, rigid_modes(mesh))
           if np.all(np.abs(mode[cm.fixed]) < 1e-14)]
    n = _admissible_rigid_modes(mesh, cm)
    if not n:
        return "no unconstrained rigid-body mode detected"
    detail = ", ".join(bad) if bad else "a combined translation-rotation"
    return f"{n} unconstrained rigid-body mode(s): {detail}"


def fe_stress(field: FEField, element: int, ref) -> np.ndarray:
    """Stress (Voigt) of the FE solution at one reference point of an element."""
    ref = np.atleast_2d(np.asarray(ref, float))
    elem = np.full(len(ref), int(element))
    x, jac = field.mesh.map(elem, ref)
    ps = PointSet(elem, ref, x, jac, np.linalg.inv(jac), np.ones(len(ref)),
                  field.mesh.n_elements)
    out = field.stress_at(ps)
    return out[0] if len(out) == 1 else out


def energy_inner_product(mesh: QuadMesh, field_a, field_b, order: int = DEFAULT_ERROR_ORDER,
                         material: Material | None = None, points: PointSet | None = None):
    """Quadrature of sigma_a : S : sigma_b; returns (global, per-element).

    ``field_a``/``field_b`` are callables mapping a :class:`PointSet` to
    Voigt stresses of shape (npoints, 3).
    """
    if material is None:
        raise ValueError("material is required for the compliance weighting")
    ps = points if points is not None else element_points(mesh, order)
    sa = field_a(ps)
    sb = sa if field_b is field_a else field_b(ps)
    vals = np.einsum("pi,ij,pj->p", sa, material.S, sb) * ps.weight
    per = ps.per_element(vals)
    return math.fsum(per), per


def edge_dof_nodes(mesh: QuadMesh, local_edge: int) -> tuple[int, ...]:
    a, b, m = EDGES[local_edge]
    return (a, m, b) if mesh.order == Q8 else (a, b)


__all__ = [
    "Material", "LoadCase", "FEField", "NumericalError", "elasticity_matrix",
    "shape_values", "assemble_and_solve", "fe_stress", "energy_inner_product",
    "assemble_stiffness", "assemble_load", "build_constraints", "order_nodes",
]
