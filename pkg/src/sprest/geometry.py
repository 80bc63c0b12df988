"""Structured quadrilateral meshes with quadtree h-refinement.

Elements are images of axis-aligned parameter squares under the domain map,
so refined children are exact restrictions of their parents and hanging
edges stay geometrically conforming on curved domains as well.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

Q4 = "Q4"
Q8 = "Q8"
DEFAULT_MAX_LEVEL = 20

TAGS = ("dirichlet", "neumann", "symmetry-x", "symmetry-y")

# reference coordinates of element nodes: corners (ccw) then midsides
REF_NODES = np.array(
    [[-1, -1], [1, -1], [1, 1], [-1, 1], [0, -1], [1, 0], [0, 1], [-1, 0]],
    dtype=float,
)
# local edge k runs from corner EDGES[k][0] to EDGES[k][1] with midside EDGES[k][2]
EDGES = ((0, 1, 4), (1, 2, 5), (2, 3, 6), (3, 0, 7))
# outward direction of local edge k in parameter space
EDGE_DIRS = ((0, -1), (1, 0), (0, 1), (-1, 0))


def order_nodes(order: str) -> int:
    if order == Q4:
        return 4
    if order == Q8:
        return 8
    raise ValueError(f"unknown element order {order!r}")


def element_degree(order: str) -> int:
    return 1 if order == Q4 else 2


def parse_order(order: str) -> str:
    o = str(order).upper()
    order_nodes(o)
    return o


@dataclass(frozen=True)
class DomainSpec:
    """Benchmark geometry together with its parameter-to-physical map.

    ``kind`` is one of ``square`` (``[0, size]^2``), ``annulus`` (quarter
    ring ``a_inner <= r <= b_outer`` in the first quadrant) or ``lshape``
    (three ``size x size`` squares around a reentrant corner at the origin).
    """

    kind: str
    a_inner: float = 5.0
    b_outer: float = 20.0
    size: float = 2.0
    tag_overrides: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.kind not in ("square", "annulus", "lshape"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "annulus" and not (0 < self.a_inner < self.b_outer):
            raise ValueError("annulus requires 0 < a_inner < b_outer")
        if self.size <= 0:
            raise ValueError("size must be positive")
        for side, tag in self.tag_overrides:
            if tag not in TAGS:
                raise ValueError(f"unknown boundary tag {tag!r} for side {side!r}")

    @classmethod
    def square(cls, size: float = 2.0) -> DomainSpec:
        return cls("square", size=size)

    @classmethod
    def annulus(cls, a_inner: float = 5.0, b_outer: float = 20.0) -> DomainSpec:
        return cls("annulus", a_inner=a_inner, b_outer=b_outer, size=1.0)

    @classmethod
    def lshape(cls, size: float = 1.0) -> DomainSpec:
        return cls("lshape", size=size)

    def with_tags(self, **tags: str) -> DomainSpec:
        merged = dict(self.tag_overrides)
        merged.update({k.replace("_", "-"): v for k, v in tags.items()})
        return DomainSpec(self.kind, self.a_inner, self.b_outer, self.size,
                          tuple(sorted(merged.items())))

    # -- level-0 grid -------------------------------------------------
    def grid(self, n: int):
        """Return (parameter origin, level-0 cell size, nx, ny, cell set)."""
        if n < 1:
            raise ValueError("divisions must be >= 1")
        if self.kind == "square":
            cells = {(i, j) for i in range(n) for j in range(n)}
            return np.zeros(2), self.size / n, n, n, cells
        if self.kind == "annulus":
            cells = {(i, j) for i in range(n) for j in range(n)}
            return np.zeros(2), 1.0 / n, n, n, cells
        cells = {(i, j) for i in range(2 * n) for j in range(2 * n)
                 if not (i < n and j < n)}
        return np.array([-self.size, -self.size]), self.size / n, 2 * n, 2 * n, cells

    # -- map -----------------------------------------------------------
    def to_physical(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.kind != "annulus":
            return p.copy()
        r = self.a_inner + (self.b_outer - self.a_inner) * p[..., 0]
        th = 0.5 * np.pi * p[..., 1]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        """d(physical)/d(parameter), shape (..., 2, 2)."""
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (2, 2))
        if self.kind != "annulus":
            out[..., 0, 0] = 1.0
            out[..., 1, 1] = 1.0
            return out
        dr = self.b_outer - self.a_inner
        r = self.a_inner + dr * p[..., 0]
        th = 0.5 * np.pi * p[..., 1]
        c, s = np.cos(th), np.sin(th)
        out[..., 0, 0] = dr * c
        out[..., 1, 0] = dr * s
        out[..., 0, 1] = -0.5 * np.pi * r * s
        out[..., 1, 1] = 0.5 * np.pi * r * c
        return out

    # -- boundary sides ------------------------------------------------
    def side_name(self, direction: int, p_mid: np.ndarray) -> str:
        if self.kind == "square":
            return ("bottom", "right", "top", "left")[direction]
        if self.kind == "annulus":
            return ("bottom", "outer", "left", "inner")[direction]
        x, y = p_mid
        if direction == 0:
            return "bottom" if y < -0.5 * self.size else "notch-a"
        if direction == 3:
            return "left" if x < -0.5 * self.size else "notch-b"
        return ("bottom", "right", "top", "left")[direction]

    def default_tag(self, side: str) -> str:
        if self.kind == "annulus" and side == "bottom":
            return "symmetry-y"
        if self.kind == "annulus" and side == "left":
            return "symmetry-x"
        return "neumann"

    def tag(self, side: str) -> str:
        return dict(self.tag_overrides).get(side, self.default_tag(side))

    def is_straight(self, side: str) -> bool:
        return not (self.kind == "annulus" and side in ("inner", "outer"))

    def side_axis(self, side: str) -> int:
        """Parameter axis that runs along a side."""
        if self.kind == "annulus":
            return 1 if side in ("inner", "outer") else 0
        return 1 if side in ("left", "right", "notch-b") else 0

    def boundary_point(self, side: str, param_along: np.ndarray) -> np.ndarray:
        """Parameter coordinates of points on a side given the running coordinate."""
        t = np.asarray(param_along, dtype=float)
        const = {"square": {"bottom": (1, 0.0), "top": (1, self.size),
                            "left": (0, 0.0), "right": (0, self.size)},
                 "annulus": {"bottom": (1, 0.0), "left": (1, 1.0),
                             "inner": (0, 0.0), "outer": (0, 1.0)},
                 "lshape": {"bottom": (1, -self.size), "top": (1, self.size),
                            "left": (0, -self.size), "right": (0, self.size),
                            "notch-a": (1, 0.0), "notch-b": (0, 0.0)}}[self.kind][side]
        axis, value = const
        out = np.empty(t.shape + (2,))
        out[..., axis] = value
        out[..., 1 - axis] = t
        return out


@dataclass(frozen=True)
class BoundaryEdge:
    element: int
    local_edge: int
    side: str
    tag: str


@dataclass(frozen=True, eq=False)
class QuadMesh:
    """Leaf elements of a 2:1 balanced quadtree over a :class:`DomainSpec`."""

    domain: DomainSpec
    order: str
    divisions: int
    max_level: int
    leaves: tuple[tuple[int, int, int], ...]
    nodes: np.ndarray
    node_params: np.ndarray
    elements: np.ndarray
    levels: np.ndarray
    elem_origin: np.ndarray
    elem_size: np.ndarray
    boundary_edges: tuple[BoundaryEdge, ...]
    constraints: dict[int, tuple[tuple[int, ...], tuple[float, ...]]]
    vertex_constraints: dict[int, tuple[tuple[int, ...], tuple[float, ...]]]
    patch_vertices: np.ndarray
    elem_patches: np.ndarray
    elem_patch_weights: np.ndarray
    skipped: tuple[int, ...] = ()
    warnings: tuple[str, ...] = field(default=())

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def hanging_nodes(self) -> tuple[int, ...]:
        return tuple(sorted(self.constraints))

    @property
    def degree(self) -> int:
        return element_degree(self.order)

    @property
    def corner_nodes(self) -> np.ndarray:
        return np.unique(self.elements[:, :4])

    def map(self, elem: np.ndarray, ref: np.ndarray):
        """Physical points and Jacobians d(x)/d(ref) at reference points."""
        elem = np.asarray(elem)
        ref = np.asarray(ref, dtype=float)
        h = self.elem_size[elem]
        p = self.elem_origin[elem] + 0.5 * (ref + 1.0) * h[..., None]
        x = self.domain.to_physical(p)
        jac = self.domain.jacobian(p) * (0.5 * h)[..., None, None]
        return x, jac

    def param_of(self, elem: np.ndarray, ref: np.ndarray) -> np.ndarray:
        h = self.elem_size[elem]
        return self.elem_origin[elem] + 0.5 * (np.asarray(ref) + 1.0) * h[..., None]

    def centroids(self) -> np.ndarray:
        x, _ = self.map(np.arange(self.n_elements), np.zeros((self.n_elements, 2)))
        return x

    def jacobian_dets(self, ngauss: int = 3) -> np.ndarray:
        g, _ = np.polynomial.legendre.leggauss(ngauss)
        ref = np.array([[a, b] for b in g for a in g])
        ne = self.n_elements
        elem = np.repeat(np.arange(ne), len(ref))
        _, jac = self.map(elem, np.tile(ref, (ne, 1)))
        return np.linalg.det(jac).reshape(ne, len(ref))

    def patch_members(self, k: int) -> np.ndarray:
        return np.nonzero((self.elem_patches == k).any(axis=1))[0]

    def edge_nodes(self, edge: BoundaryEdge) -> tuple[int, ...]:
        a, b, m = EDGES[edge.local_edge]
        conn = self.elements[edge.element]
        if self.order == Q8:
            return (int(conn[a]), int(conn[m]), int(conn[b]))
        return (int(conn[a]), int(conn[b]))

    def check_balance(self) -> bool:
        leaves = set(self.leaves)
        _, _, nx, ny, cells = self.domain.grid(self.divisions)
        for (lv, i, j) in leaves:
            for dx, dy in EDGE_DIRS:
                ni, nj = i + dx, j + dy
                if not _in_domain(lv, ni, nj, nx, ny, cells):
                    continue
                for k in range(2, lv + 1):
                    if (lv - k, ni >> k, nj >> k) in leaves:
                        return False
        return True


@dataclass(frozen=True)
class Patch:
    vertex: int
    index: int
    elements: tuple[int, ...]
    center: np.ndarray
    scale: float
    boundary_edges: tuple[int, ...]


def _in_domain(lv, i, j, nx, ny, cells) -> bool:
    if i < 0 or j < 0 or i >= (nx << lv) or j >= (ny << lv):
        return False
    return (i >> lv, j >> lv) in cells


def build_structured_mesh(spec: DomainSpec, divisions: int, order: str = Q4,
                          max_level: int = DEFAULT_MAX_LEVEL) -> QuadMesh:
    """Uniform level-0 mesh with ``divisions`` elements per side (per unit
    square arm for the L-shape)."""
    order = parse_order(order)
    if divisions < 1:
        raise ValueError("divisions must be >= 1")
    _, _, _, _, cells = spec.grid(divisions)
    leaves = {(0, i, j) for (i, j) in cells}
    return _assemble(spec, order, divisions, max_level, leaves)


def uniform_refine(mesh: QuadMesh) -> QuadMesh:
    return refine_elements(mesh, range(mesh.n_elements))


def refine_elements(mesh: QuadMesh, marked) -> QuadMesh:
    """Split marked elements 1 -> 4 and restore 2:1 balance by closure.

    Elements already at ``mesh.max_level`` are left unchanged; their ids are
    listed in ``skipped`` on the returned mesh.
    """
    marked = sorted({int(e) for e in marked})
    if not marked:
        raise ValueError("no elements marked for refinement")
    leaves = set(mesh.leaves)
    _, _, nx, ny, cells = mesh.domain.grid(mesh.divisions)
    skipped = []
    stack = []

    def split(leaf):
        lv, i, j = leaf
        leaves.discard(leaf)
        kids = [(lv + 1, 2 * i + a, 2 * j + b) for b in (0, 1) for a in (0, 1)]
        leaves.update(kids)
        stack.extend(kids)

    for e in marked:
        leaf = mesh.leaves[e]
        if leaf[0] >= mesh.max_level:
            skipped.append(e)
            continue
        split(leaf)
    while stack:
        leaf = stack.pop()
        if leaf not in leaves:
            continue
        lv, i, j = leaf
        for dx, dy in EDGE_DIRS:
            ni, nj = i + dx, j + dy
            if not _in_domain(lv, ni, nj, nx, ny, cells):
                continue
            for k in range(2, lv + 1):
                anc = (lv - k, ni >> k, nj >> k)
                if anc in leaves:
                    split(anc)
                    stack.append(leaf)
                    break
    notes = ()
    if skipped:
        msg = f"{len(skipped)} element(s) at refinement level cap {mesh.max_level} skipped"
        log.warning(msg)
        notes = (msg,)
    return _assemble(mesh.domain, mesh.order, mesh.divisions, mesh.max_level,
                     leaves, tuple(skipped), notes)


def _resolve(raw: dict) -> dict:
    """Substitute constrained masters until every master is free."""
    out = {}

    def expand(n, depth=0):
        if n in out:
            return out[n]
        if n not in raw:
            return {n: 1.0}
        if depth > 64:
            raise RuntimeError("cyclic hanging-node constraints")
        acc: dict[int, float] = {}
        for m, c in zip(*raw[n]):
            for mm, cc in expand(m, depth + 1).items():
                acc[mm] = acc.get(mm, 0.0) + c * cc
        out[n] = acc
        return acc

    for n in sorted(raw):
        expand(n)
    return {n: (tuple(sorted(d)), tuple(d[k] for k in sorted(d))) for n, d in out.items()}


def _assemble(spec, order, n, max_level, leaves, skipped=(), notes=()) -> QuadMesh:
    origin, h0, nx, ny, cells = spec.grid(n)
    lattice = 1 << (max_level + 1)
    unit = h0 / lattice
    # sort leaves by lattice origin (row-major) for deterministic numbering
    def key(leaf):
        lv, i, j = leaf
        sz = lattice >> lv
        return (j * sz, i * sz)

    ordered = sorted(leaves, key=key)
    leafset = set(ordered)
    node_id: dict[tuple[int, int], int] = {}
    nn = order_nodes(order)
    conn = np.empty((len(ordered), nn), dtype=np.int64)
    levels = np.empty(len(ordered), dtype=np.int64)
    eorig = np.empty((len(ordered), 2))
    esize = np.empty(len(ordered))
    corners_of = []

    def nid(k):
        v = node_id.get(k)
        if v is None:
            v = node_id[k] = len(node_id)
        return v

    for e, (lv, i, j) in enumerate(ordered):
        sz = lattice >> lv
        hs = sz >> 1
        ox, oy = i * sz, j * sz
        keys = [(ox, oy), (ox + sz, oy), (ox + sz, oy + sz), (ox, oy + sz),
                (ox + hs, oy), (ox + sz, oy + hs), (ox + hs, oy + sz), (ox, oy + hs)][:nn]
        conn[e] = [nid(k) for k in keys]
        corners_of.append(keys[:4])
        levels[e] = lv
        eorig[e] = origin + np.array([ox, oy]) * unit
        esize[e] = sz * unit

    raw_fe: dict[int, tuple] = {}
    raw_vx: dict[int, tuple] = {}
    bedges = []
    for e, (lv, i, j) in enumerate(ordered):
        for d, (dx, dy) in enumerate(EDGE_DIRS):
            ni, nj = i + dx, j + dy
            if not _in_domain(lv, ni, nj, nx, ny, cells):
                a, b, _ = EDGES[d]
                ka, kb = corners_of[e][a], corners_of[e][b]
                pmid = origin + 0.5 * (np.array(ka) + np.array(kb)) * unit
                side = spec.side_name(d, pmid)
                bedges.append(BoundaryEdge(e, d, side, spec.tag(side)))
                continue
            if (lv, ni, nj) in leafset or lv == 0:
                continue
            coarse = (lv - 1, ni >> 1, nj >> 1)
            if coarse not in leafset:
                continue  # neighbour is same level (refined) or finer
            csz = lattice >> (lv - 1)
            cox, coy = coarse[1] * csz, coarse[2] * csz
            ck = [(cox, coy), (cox + csz, coy), (cox + csz, coy + csz), (cox, coy + csz)]
            od = (d + 2) % 4
            ca, cb, _ = EDGES[od]
            A, B = ck[ca], ck[cb]
            M = ((A[0] + B[0]) // 2, (A[1] + B[1]) // 2)
            ida, idb = node_id[A], node_id[B]
            raw_vx[node_id[M]] = ((ida, idb), (0.5, 0.5))
            span = max(abs(B[0] - A[0]), abs(B[1] - A[1]))
            a, b, m = EDGES[d]
            fine_keys = [corners_of[e][a], corners_of[e][b]]
            if order == Q8:
                fine_keys.append(((fine_keys[0][0] + fine_keys[1][0]) // 2,
                                  (fine_keys[0][1] + fine_keys[1][1]) // 2))
            for k in fine_keys:
                if k in (A, B) or (order == Q8 and k == M):
                    continue
                t = -1.0 + 2.0 * max(abs(k[0] - A[0]), abs(k[1] - A[1])) / span
                if order == Q4:
                    raw_fe[node_id[k]] = ((ida, idb), (0.5 * (1 - t), 0.5 * (1 + t)))
                else:
                    idm = node_id[M]
                    raw_fe[node_id[k]] = ((ida, idm, idb),
                                          (0.5 * t * (t - 1), 1 - t * t, 0.5 * t * (t + 1)))

    keys = sorted(node_id, key=node_id.get)
    params = origin + np.array(keys, dtype=float) * unit
    nodes = spec.to_physical(params)
    constraints = _resolve(raw_fe)
    vconstraints = _resolve(raw_vx)

    # partition-of-unity table: element -> contributing patch vertices
    corner_ids = np.unique(conn[:, :4])
    pverts = np.array([v for v in corner_ids if v not in vconstraints], dtype=np.int64)
    pindex = {int(v): k for k, v in enumerate(pverts)}
    rows = []
    for e in range(len(ordered)):
        acc: dict[int, np.ndarray] = {}
        for c in range(4):
            v = int(conn[e, c])
            masters, coefs = vconstraints.get(v, ((v,), (1.0,)))
            for m, w in zip(masters, coefs):
                acc.setdefault(pindex[m], np.zeros(4))[c] += w
        rows.append(sorted(acc.items()))
    kmax = max(len(r) for r in rows)
    ep = -np.ones((len(ordered), kmax), dtype=np.int64)
    ew = np.zeros((len(ordered), kmax, 4))
    for e, r in enumerate(rows):
        for s, (k, w) in enumerate(r):
            ep[e, s] = k
            ew[e, s] = w

    mesh = QuadMesh(spec, order, n, max_level, tuple(ordered), nodes, params, conn,
                    levels, eorig, esize, tuple(bedges), constraints, vconstraints,
                    pverts, ep, ew, tuple(skipped), tuple(notes))
    dets = mesh.jacobian_dets(3)
    if not np.all(dets > 0):
        raise ValueError("non-positive Jacobian determinant in mesh")
    return mesh


def patch_of_vertex(mesh: QuadMesh, vertex: int) -> Patch:
    """Patch (support of the vertex partition-of-unity function) of a vertex.

    Hanging vertices carry no patch of their own; their elements belong to
    the patches of the constraining vertices.
    """
    vertex = int(vertex)
    hits = np.nonzero(mesh.patch_vertices == vertex)[0]
    if len(hits) == 0:
        if vertex in mesh.vertex_constraints:
            raise ValueError(f"node {vertex} is a hanging vertex")
        raise ValueError(f"node {vertex} is not a vertex (corner) node")
    k = int(hits[0])
    members = mesh.patch_members(k)
    cents = mesh.centroids()[members]
    center = cents.mean(axis=0)
    corners = mesh.nodes[mesh.elements[members, :4]].reshape(-1, 2)
    scale = float(np.abs(corners - center).max())
    mset = set(members.tolist())
    bidx = tuple(i for i, be in enumerate(mesh.boundary_edges) if be.element in mset)
    return Patch(vertex, k, tuple(int(e) for e in members), center, scale, bidx)


def patch_frames(mesh: QuadMesh):
    """Centers and scales of all patches, vectorised."""
    npatch = len(mesh.patch_vertices)
    cents = mesh.centroids()
    ne, kmax = mesh.elem_patches.shape
    sel = mesh.elem_patches >= 0
    pe = np.repeat(np.arange(ne), kmax).reshape(ne, kmax)[sel]
    pj = mesh.elem_patches[sel]
    cnt = np.bincount(pj, minlength=npatch).astype(float)
    center = np.stack([np.bincount(pj, cents[pe, d], minlength=npatch) for d in range(2)], 1)
    center /= cnt[:, None]
    corners = mesh.nodes[mesh.elements[pe, :4]]
    ext = np.abs(corners - center[pj][:, None, :]).max(axis=(1, 2))
    scale = np.zeros(npatch)
    np.maximum.at(scale, pj, ext)
    return center, scale, pe, pj
