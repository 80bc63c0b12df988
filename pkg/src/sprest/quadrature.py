"""Gauss rules and flattened quadrature point sets over a mesh."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from sprest.geometry import EDGES, REF_NODES, QuadMesh

DEFAULT_ERROR_ORDER = 5


@lru_cache(maxsize=None)
def gauss_1d(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_2d(n: int):
    x, w = gauss_1d(n)
    pts = np.array([[a, b] for b in x for a in x])
    wts = np.array([wa * wb for wb in w for wa in w])
    return pts, wts


@dataclass(frozen=True, eq=False)
class PointSet:
    """Quadrature points flattened over elements (or boundary edges).

    ``weight`` already contains the Jacobian determinant (area points) or the
    line element (edge points).
    """

    elem: np.ndarray
    ref: np.ndarray
    x: np.ndarray
    jac: np.ndarray
    jinv: np.ndarray
    weight: np.ndarray
    n_elements: int
    normal: np.ndarray | None = None
    edge: np.ndarray | None = None

    def __len__(self):
        return len(self.elem)

    def per_element(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.elem, weights=values, minlength=self.n_elements)

    def integrate(self, values: np.ndarray) -> float:
        return math.fsum(self.per_element(values))


def _graded_rule(n: int, corner: int, depth: int):
    """Composite rule on [-1,1]^2 geometrically graded toward a corner."""
    base, bw = gauss_2d(n)
    c = 0.5 * (REF_NODES[corner] + 1.0)
    pts, wts = [], []
    lo, size = np.array([-1.0, -1.0]), 2.0
    for _ in range(depth):
        half = size / 2
        inner = lo + c * half
        for a in (0.0, 1.0):
            for b in (0.0, 1.0):
                o = lo + half * np.array([a, b])
                if np.allclose(o, inner):
                    continue
                pts.append(o + 0.5 * (base + 1) * half)
                wts.append(bw * (half / 2) ** 2)
        lo, size = inner, half
    pts.append(lo + 0.5 * (base + 1) * size)
    wts.append(bw * (size / 2) ** 2)
    return np.vstack(pts), np.concatenate(wts)


def element_points(mesh: QuadMesh, n: int = DEFAULT_ERROR_ORDER,
                   singular_point=None, singular_depth: int = 0) -> PointSet:
    """Tensor Gauss points on every element.

    Elements having ``singular_point`` as a corner get a rule graded toward
    that corner with ``singular_depth`` levels of subdivision.
    """
    ref0, w0 = gauss_2d(n)
    ne = mesh.n_elements
    elem = np.repeat(np.arange(ne), len(ref0))
    ref = np.tile(ref0, (ne, 1))
    wts = np.tile(w0, ne)
    if singular_point is not None and singular_depth > 0:
        sp = np.asarray(singular_point, float)
        d = np.linalg.norm(mesh.nodes[mesh.elements[:, :4]] - sp, axis=2)
        hit = np.argwhere(d < 1e-12 * max(1.0, float(np.abs(mesh.nodes).max())))
        if len(hit):
            special = {int(e): int(c) for e, c in hit}
            keep = ~np.isin(elem, list(special))
            elem, ref, wts = [elem[keep]], [ref[keep]], [wts[keep]]
            for e, c in sorted(special.items()):
                r, w = _graded_rule(n, c, singular_depth)
                elem.append(np.full(len(r), e))
                ref.append(r)
                wts.append(w)
            elem = np.concatenate(elem)
            ref = np.vstack(ref)
            wts = np.concatenate(wts)
            order = np.argsort(elem, kind="stable")
            elem, ref, wts = elem[order], ref[order], wts[order]
    x, jac = mesh.map(elem, ref)
    det = np.linalg.det(jac)
    return PointSet(elem, ref, x, jac, np.linalg.inv(jac), wts * det, ne)


def edge_ref_points(local_edge: int, tau: np.ndarray) -> np.ndarray:
    """Reference coordinates along a local edge, tau in [-1, 1] from start to end."""
    a, b, _ = EDGES[local_edge]
    pa, pb = REF_NODES[a], REF_NODES[b]
    tau = np.asarray(tau, float)
    return 0.5 * (1 - tau)[..., None] * pa + 0.5 * (1 + tau)[..., None] * pb


def edge_points(mesh: QuadMesh, n: int, tags=None, edges=None) -> PointSet:
    """Gauss points on boundary edges, with outward unit normals."""
    g, gw = gauss_1d(n)
    if edges is None:
        edges = [i for i, be in enumerate(mesh.boundary_edges)
                 if tags is None or be.tag in tags]
    edges = np.asarray(edges, dtype=np.int64)
    if len(edges) == 0:
        z = np.zeros(0)
        return PointSet(np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros((0, 2)),
                        np.zeros((0, 2, 2)), np.zeros((0, 2, 2)), z, mesh.n_elements,
                        np.zeros((0, 2)), np.zeros(0, np.int64))
    bes = [mesh.boundary_edges[i] for i in edges]
    elem = np.repeat([be.element for be in bes], n)
    ref = np.vstack([edge_ref_points(be.local_edge, g) for be in bes])
    x, jac = mesh.map(elem, ref)
    dref = np.vstack([np.repeat((REF_NODES[EDGES[be.local_edge][1]]
                                 - REF_NODES[EDGES[be.local_edge][0]])[None] / 2, n, 0)
                      for be in bes])
    tangent = np.einsum("pij,pj->pi", jac, dref)
    ds = np.linalg.norm(tangent, axis=1)
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1) / ds[:, None]
    wts = np.tile(gw, len(bes)) * ds
    return PointSet(elem, ref, x, jac, np.linalg.inv(jac), wts, mesh.n_elements,
                    normal, np.repeat(edges, n))


def node_points(mesh: QuadMesh) -> PointSet:
    """One evaluation point per mesh node, taken in its first element."""
    nn = mesh.elements.shape[1]
    flat = mesh.elements.ravel()
    _, first = np.unique(flat, return_index=True)
    elem = first // nn
    ref = REF_NODES[first % nn]
    x, jac = mesh.map(elem, ref)
    return PointSet(elem, ref, x, jac, np.linalg.inv(jac), np.zeros(len(elem)), mesh.n_elements)
