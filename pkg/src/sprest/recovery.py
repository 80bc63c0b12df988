"""Equilibrated patch displacement recovery and the conjoint blended fields.

Each vertex patch gets a displacement polynomial one degree above the element
basis, fitted to the FE displacements by continuous least squares subject to
equilibrium (and essential) constraints. The patch polynomials are blended
with the bilinear vertex functions into a continuous displacement field, and
their stresses are blended into a continuous stress field.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from sprest.fem import FEField, LoadCase, Material, physical_gradients, shape_values
from sprest.geometry import EDGES, REF_NODES, QuadMesh, patch_frames
from sprest.quadrature import PointSet, edge_points, edge_ref_points, element_points, gauss_1d

log = logging.getLogger(__name__)

FIT_ORDER = 5
EDGE_ORDER = 5
RANK_TOL = 1e-10
CHUNK = 4000


def monomial_exponents(degree: int) -> list[tuple[int, int]]:
    """Exponents (i, j) of x^i y^j with i + j <= degree, by increasing degree."""
    return [(i, d - i) for d in range(degree + 1) for i in range(d, -1, -1)]


def _monomials(xi: np.ndarray, exps, dx: int = 0, dy: int = 0) -> np.ndarray:
    out = np.zeros(xi.shape[:-1] + (len(exps),))
    for m, (i, j) in enumerate(exps):
        if i < dx or j < dy:
            continue
        c = math.perm(i, dx) * math.perm(j, dy)
        out[..., m] = c * xi[..., 0] ** (i - dx) * xi[..., 1] ** (j - dy)
    return out


@dataclass
class PolyValues:
    """Displacement, gradient and second derivatives of patch polynomials."""

    u: np.ndarray      # (..., 2)
    grad: np.ndarray   # (..., 2, 2), grad[c, d] = d u_c / d x_d
    hess: np.ndarray   # (..., 2, 3), second derivatives xx, xy, yy

    def strain(self) -> np.ndarray:
        g = self.grad
        return np.stack([g[..., 0, 0], g[..., 1, 1], g[..., 0, 1] + g[..., 1, 0]], -1)

    def stress(self, D: np.ndarray) -> np.ndarray:
        return self.strain() @ D.T

    def div_stress(self, D: np.ndarray) -> np.ndarray:
        h = self.hess
        dxe = np.stack([h[..., 0, 0], h[..., 1, 1], h[..., 0, 1] + h[..., 1, 0]], -1)
        dye = np.stack([h[..., 0, 1], h[..., 1, 2], h[..., 0, 2] + h[..., 1, 1]], -1)
        dxs, dys = dxe @ D.T, dye @ D.T
        return np.stack([dxs[..., 0] + dys[..., 2], dxs[..., 2] + dys[..., 1]], -1)


def _basis_tables(xi, scale, exps):
    """Monomial values and scaled physical derivatives; scale broadcasts over points."""
    s = np.asarray(scale, float)[..., None]
    M = _monomials(xi, exps)
    Mx = _monomials(xi, exps, 1, 0) / s
    My = _monomials(xi, exps, 0, 1) / s
    Mxx = _monomials(xi, exps, 2, 0) / s**2
    Mxy = _monomials(xi, exps, 1, 1) / s**2
    Myy = _monomials(xi, exps, 0, 2) / s**2
    return M, Mx, My, Mxx, Mxy, Myy


def poly_values(xi, scale, exps, coef) -> PolyValues:
    """Evaluate polynomials with coefficients ``coef`` (..., 2, nb) at normalized points."""
    M, Mx, My, Mxx, Mxy, Myy = _basis_tables(xi, scale, exps)
    u = np.einsum("pm,pcm->pc", M, coef)
    grad = np.stack([np.einsum("pm,pcm->pc", Mx, coef),
                     np.einsum("pm,pcm->pc", My, coef)], -1)
    hess = np.stack([np.einsum("pm,pcm->pc", T, coef) for T in (Mxx, Mxy, Myy)], -1)
    return PolyValues(u, grad, hess)


def _operators(xi, scale, exps, D):
    """Linear maps from the coefficient vector [a_x, a_y] to u, sigma and div(sigma).

    Returns arrays of shape (np, 2, 2nb), (np, 3, 2nb) and (np, 2, 2nb).
    """
    M, Mx, My, Mxx, Mxy, Myy = _basis_tables(xi, scale, exps)
    npt, nb = M.shape
    Z = np.zeros_like(M)

    def pair(a, b):
        return np.concatenate([a, b], axis=-1)

    U = np.stack([pair(M, Z), pair(Z, M)], 1)
    E = np.stack([pair(Mx, Z), pair(Z, My), pair(My, Mx)], 1)
    Ex = np.stack([pair(Mxx, Z), pair(Z, Mxy), pair(Mxy, Mxx)], 1)
    Ey = np.stack([pair(Mxy, Z), pair(Z, Myy), pair(Myy, Mxy)], 1)
    S = np.einsum("ij,pjk->pik", D, E)
    Sx = np.einsum("ij,pjk->pik", D, Ex)
    Sy = np.einsum("ij,pjk->pik", D, Ey)
    V = np.stack([Sx[:, 0] + Sy[:, 2], Sx[:, 2] + Sy[:, 1]], 1)
    return U, S, V


def _traction_op(S, n):
    return np.stack([n[:, 0, None] * S[:, 0] + n[:, 1, None] * S[:, 2],
                     n[:, 0, None] * S[:, 2] + n[:, 1, None] * S[:, 1]], 1)


@dataclass(frozen=True)
class PatchPolynomial:
    """Recovered displacement polynomial of one vertex patch.

    ``coef[c]`` holds the coefficients of component c over the monomials
    ``exponents`` in the normalized coordinates ``(x - center) / scale``.
    """

    index: int
    vertex: int
    center: np.ndarray
    scale: float
    degree: int
    exponents: tuple[tuple[int, int], ...]
    coef: np.ndarray
    active: tuple[str, ...] = ()
    dropped: tuple[str, ...] = ()
    truncated: int = 0
    fallback: bool = False
    max_violation: float = 0.0

    def values(self, x: np.ndarray) -> PolyValues:
        x = np.atleast_2d(np.asarray(x, float))
        xi = (x - self.center) / self.scale
        coef = np.broadcast_to(self.coef, (len(x),) + self.coef.shape)
        return poly_values(xi, np.full(len(x), self.scale), self.exponents, coef)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.values(x).u


@dataclass(frozen=True, eq=False)
class RecoveredValues:
    """Recovered quantities at a point set."""

    u: np.ndarray            # blended displacement u*_u
    sigma_u: np.ndarray      # D L u*_u
    sigma: np.ndarray        # continuous stress (blend of patch stresses)
    sigma_disc: np.ndarray   # D L(N^v) u*_i part, sigma_u = sigma + sigma_disc
    div_sigma: np.ndarray    # divergence of the continuous stress
    blend_div: np.ndarray    # sum N^v_i div(D L u*_i)
    grad_term: np.ndarray    # sum grad(N^v_i) . (D L u*_i)


@dataclass(frozen=True, eq=False)
class RecoveredField:
    field: FEField
    exponents: tuple[tuple[int, int], ...]
    coef: np.ndarray         # (npatch, 2, nb)
    center: np.ndarray       # (npatch, 2)
    scale: np.ndarray        # (npatch,)
    records: dict = field(default_factory=dict)
    n_fallback: int = 0
    n_truncated: int = 0

    @property
    def mesh(self) -> QuadMesh:
        return self.field.mesh

    @property
    def material(self) -> Material:
        return self.field.material

    @property
    def load(self) -> LoadCase:
        return self.field.load

    def patch_polynomial(self, k: int) -> PatchPolynomial:
        rec = self.records.get(int(k), {})
        return PatchPolynomial(int(k), int(self.mesh.patch_vertices[k]), self.center[k],
                               float(self.scale[k]), self.mesh.degree + 1, self.exponents,
                               self.coef[k], **rec)

    def evaluate(self, ps: PointSet) -> RecoveredValues:
        mesh = self.mesh
        D = self.material.D
        _, _, Nv, dNv = shape_values(mesh.order, ps.ref)
        dNvx = physical_gradients(dNv, ps.jinv)
        npt = len(ps)
        u = np.zeros((npt, 2))
        sig = np.zeros((npt, 3))
        disc_eps = np.zeros((npt, 3))
        bdiv = np.zeros((npt, 2))
        gterm = np.zeros((npt, 2))
        slots = mesh.elem_patches[ps.elem]
        weights = mesh.elem_patch_weights[ps.elem]
        for s in range(slots.shape[1]):
            k = slots[:, s]
            on = k >= 0
            if not on.any():
                continue
            kk = k[on]
            W = weights[on, s]
            phi = np.einsum("pc,pc->p", W, Nv[on])
            dphi = np.einsum("pc,pcd->pd", W, dNvx[on])
            xi = (ps.x[on] - self.center[kk]) / self.scale[kk, None]
            pv = poly_values(xi, self.scale[kk], self.exponents, self.coef[kk])
            sj = pv.stress(D)
            u[on] += phi[:, None] * pv.u
            sig[on] += phi[:, None] * sj
            bdiv[on] += phi[:, None] * pv.div_stress(D)
            gterm[on] += np.stack([dphi[:, 0] * sj[:, 0] + dphi[:, 1] * sj[:, 2],
                                   dphi[:, 0] * sj[:, 2] + dphi[:, 1] * sj[:, 1]], 1)
            disc_eps[on] += np.stack([dphi[:, 0] * pv.u[:, 0], dphi[:, 1] * pv.u[:, 1],
                                      dphi[:, 1] * pv.u[:, 0] + dphi[:, 0] * pv.u[:, 1]], 1)
        disc = disc_eps @ D.T
        return RecoveredValues(u, sig + disc, sig, disc, bdiv + gterm, bdiv, gterm)

    def displacement_at(self, ps: PointSet) -> np.ndarray:
        return self.evaluate(ps).u

    def stress_at(self, ps: PointSet) -> np.ndarray:
        return self.evaluate(ps).sigma

    def stress_u_at(self, ps: PointSet) -> np.ndarray:
        return self.evaluate(ps).sigma_u

    def s_at(self, ps: PointSet, values: RecoveredValues | None = None) -> np.ndarray:
        v = values if values is not None else self.evaluate(ps)
        return -v.div_sigma - self.load.b(ps.x)

    def r_at(self, ps: PointSet, values: RecoveredValues | None = None) -> np.ndarray:
        """Boundary default on Neumann edges; tangential traction on symmetry edges.

        Points on other edges get zero.
        """
        if ps.normal is None or ps.edge is None:
            raise ValueError("r requires an edge point set")
        v = values if values is not None else self.evaluate(ps)
        n = ps.normal
        tn = np.stack([v.sigma[:, 0] * n[:, 0] + v.sigma[:, 2] * n[:, 1],
                       v.sigma[:, 2] * n[:, 0] + v.sigma[:, 1] * n[:, 1]], 1)
        bes = self.mesh.boundary_edges
        tags = np.array([bes[i].tag for i in ps.edge])
        sides = np.array([bes[i].side for i in ps.edge])
        out = np.zeros_like(tn)
        neu = tags == "neumann"
        if neu.any():
            out[neu] = tn[neu] - self.load.t(ps.x[neu], n[neu], sides[neu])
        sym = np.char.startswith(tags.astype(str), "symmetry")
        if sym.any():
            tau = np.stack([-n[sym, 1], n[sym, 0]], 1)
            out[sym] = np.einsum("pi,pi->p", tn[sym], tau)[:, None] * tau
        return out


# -- patch fitting ---------------------------------------------------------------

@dataclass
class _Segment:
    side: str
    tag: str
    edges: list


def _patch_segments(mesh: QuadMesh, members_slots) -> list[_Segment]:
    """Boundary edges on which the patch's partition-of-unity function is nonzero."""
    by_elem: dict[int, list[int]] = {}
    for i, be in enumerate(mesh.boundary_edges):
        by_elem.setdefault(be.element, []).append(i)
    segs: dict[str, _Segment] = {}
    for e, slot in members_slots:
        for i in by_elem.get(e, ()):
            be = mesh.boundary_edges[i]
            a, b, _ = EDGES[be.local_edge]
            W = mesh.elem_patch_weights[e, slot]
            if W[a] == 0 and W[b] == 0:
                continue
            segs.setdefault(be.side, _Segment(be.side, be.tag, [])).edges.append(i)
    return [segs[k] for k in sorted(segs)]


class _PatchData:
    """Quadrature data shared by all patch fits of one FE field."""

    def __init__(self, field: FEField):
        mesh = field.mesh
        self.mesh = mesh
        self.field = field
        self.D = field.material.D
        self.p = mesh.degree
        self.exps = tuple(monomial_exponents(self.p + 1))
        self.low = tuple(monomial_exponents(self.p - 1))
        self.ps = element_points(mesh, FIT_ORDER)
        self.nq = len(self.ps) // mesh.n_elements
        self.uh = field.displacement_at(self.ps)
        self.b = field.load.b(self.ps.x)
        self.center, self.scale, self.pe, self.pj = patch_frames(mesh)
        ne, kmax = mesh.elem_patches.shape
        sel = mesh.elem_patches >= 0
        self.ps_slot = np.tile(np.arange(kmax), (ne, 1))[sel]
        self.eps = edge_points(mesh, EDGE_ORDER) if mesh.boundary_edges else None


def _pair_blocks(data: _PatchData, pairs: np.ndarray):
    """Normalized points, weights and FE values of (element, patch) pairs."""
    e = data.pe[pairs]
    k = data.pj[pairs]
    idx = e[:, None] * data.nq + np.arange(data.nq)
    x = data.ps.x[idx]
    xi = (x - data.center[k][:, None]) / data.scale[k][:, None, None]
    return k, idx, xi


def _interior_moments(data: _PatchData, pairs: np.ndarray, npatch: int):
    """Gram matrices, LS right-hand sides and internal-equilibrium moments."""
    nb = len(data.exps)
    nl = len(data.low)
    G = np.zeros((npatch, nb, nb))
    F = np.zeros((npatch, 2, nb))
    C = np.zeros((npatch, 2 * nl, 2 * nb))
    d = np.zeros((npatch, 2 * nl))
    area = np.zeros(npatch)
    for lo in range(0, len(pairs), CHUNK):
        chunk = pairs[lo:lo + CHUNK]
        k, idx, xi = _pair_blocks(data, chunk)
        w = data.ps.weight[idx]
        npair, nq = w.shape
        flat = xi.reshape(-1, 2)
        sc = np.repeat(data.scale[k], nq)
        M = _monomials(flat, data.exps).reshape(npair, nq, nb)
        Q = _monomials(flat, data.low).reshape(npair, nq, nl)
        _, _, V = _operators(flat, sc, data.exps, data.D)
        V = V.reshape(npair, nq, 2, 2 * nb)
        np.add.at(G, k, np.einsum("pq,pqi,pqj->pij", w, M, M))
        np.add.at(F, k, np.einsum("pq,pqi,pqc->pci", w, M, data.uh[idx]))
        cm = np.einsum("pq,pqm,pqcj->pcmj", w, Q, V).reshape(npair, 2 * nl, 2 * nb)
        dm = -np.einsum("pq,pqm,pqc->pcm", w, Q, data.b[idx]).reshape(npair, 2 * nl)
        np.add.at(C, k, cm)
        np.add.at(d, k, dm)
        np.add.at(area, k, w.sum(axis=1))
    return G, F, C, d, area


def _normalize_rows(C, d):
    nrm = np.linalg.norm(C, axis=-1)
    nrm = np.where(nrm > 0, nrm, 1.0)
    return C / nrm[..., None], d / nrm


def _segment_rows(data: _PatchData, k: int, seg: _Segment):
    """Constraint rows (C, d, labels) contributed by one boundary segment."""
    mesh, D, p = data.mesh, data.D, data.p
    load = data.field.load
    dom = mesh.domain
    c, h = data.center[k], data.scale[k]
    axis = dom.side_axis(seg.side)
    es = data.eps
    sel = np.isin(es.edge, seg.edges)
    x, n, wts = es.x[sel], es.normal[sel], es.weight[sel]
    run = mesh.param_of(es.elem[sel], es.ref[sel])[:, axis]
    # segment range from the edge end points
    ends = []
    for i in seg.edges:
        be = mesh.boundary_edges[i]
        ends.append(mesh.param_of(np.array([be.element, be.element]),
                                  edge_ref_points(be.local_edge, np.array([-1.0, 1.0])))[:, axis])
    ends = np.concatenate(ends)
    lo_, hi_ = ends.min(), ends.max()
    tau = (2 * run - lo_ - hi_) / (hi_ - lo_)
    rows, rhs, labels = [], [], []
    straight = dom.is_straight(seg.side)

    def colloc_points(npts):
        g, _ = gauss_1d(npts)
        along = 0.5 * (lo_ + hi_) + 0.5 * (hi_ - lo_) * g
        ppar = dom.boundary_point(seg.side, along)
        xc = dom.to_physical(ppar)
        tang = dom.jacobian(ppar)[:, :, axis]
        nc = np.stack([tang[:, 1], -tang[:, 0]], 1) / np.linalg.norm(tang, axis=1)[:, None]
        near = np.argmin(np.linalg.norm(xc[:, None] - x[None], axis=2), axis=1)
        flip = np.einsum("pi,pi->p", nc, n[near]) < 0
        nc[flip] *= -1
        return xc, nc

    def moments(op, target, name, degree):
        L = np.polynomial.legendre.legvander(tau, degree)  # (np, degree+1)
        for m in range(degree + 1):
            for comp in range(op.shape[1]):
                rows.append(np.einsum("p,p,pj->j", wts, L[:, m], op[:, comp]))
                rhs.append(float(np.sum(wts * L[:, m] * target[:, comp])))
                labels.append(f"{name}:{seg.side}:{'xy'[comp] if op.shape[1] > 1 else 't'}:{m}")

    if seg.tag == "neumann":
        if straight:
            _, S, _ = _operators((x - c) / h, np.full(len(x), h), data.exps, D)
            T = _traction_op(S, n)
            sides = np.full(len(x), seg.side)
            moments(T, load.t(x, n, sides), "traction", p)
        else:
            xc, nc = colloc_points(p + 1)
            _, S, _ = _operators((xc - c) / h, np.full(len(xc), h), data.exps, D)
            T = _traction_op(S, nc)
            tv = load.t(xc, nc, np.full(len(xc), seg.side))
            for q in range(len(xc)):
                for comp in range(2):
                    rows.append(T[q, comp])
                    rhs.append(float(tv[q, comp]))
                    labels.append(f"traction-point:{seg.side}:{'xy'[comp]}:{q}")
    elif seg.tag.startswith("symmetry"):
        xc, nc = colloc_points(p + 2)
        U, _, _ = _operators((xc - c) / h, np.full(len(xc), h), data.exps, D)
        for q in range(len(xc)):
            rows.append(nc[q, 0] * U[q, 0] + nc[q, 1] * U[q, 1])
            rhs.append(0.0)
            labels.append(f"normal-disp:{seg.side}:{q}")
    elif seg.tag == "dirichlet":
        xc, _ = colloc_points(p + 2)
        U, _, _ = _operators((xc - c) / h, np.full(len(xc), h), data.exps, D)
        g = np.asarray(load.dirichlet(xc), float)
        for q in range(len(xc)):
            for comp in range(2):
                rows.append(U[q, comp])
                rhs.append(float(g[q, comp]))
                labels.append(f"dirichlet:{seg.side}:{'xy'[comp]}:{q}")
    if not rows:
        return np.zeros((0, 2 * len(data.exps))), np.zeros(0), []
    return np.array(rows), np.array(rhs), labels


def _truncate_basis(G):
    """Number of trailing monomials to drop so the Gram matrix has full rank."""
    nb = G.shape[0]
    for drop in range(nb):
        m = nb - drop
        ev = np.linalg.eigvalsh(G[:m, :m])
        if ev[0] > 1e-12 * ev[-1]:
            return drop
    return nb - 1


def _solve_constrained(G, F, C, d, labels):
    """Minimize the LS functional subject to C a = d after dropping redundant rows."""
    nb = G.shape[0]
    drop = _truncate_basis(G)
    keep_cols = np.r_[np.arange(nb - drop), nb + np.arange(nb - drop)]
    Gf = np.zeros((2 * nb, 2 * nb))
    Gf[:nb, :nb] = G
    Gf[nb:, nb:] = G
    f = np.concatenate([F[0], F[1]])
    Gr, fr = Gf[np.ix_(keep_cols, keep_cols)], f[keep_cols]
    Cr = C[:, keep_cols] if len(C) else np.zeros((0, len(keep_cols)))
    active = list(range(len(Cr)))
    if len(Cr):
        _, R, piv = sla.qr(Cr.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1e-300))) if len(diag) else 0
        active = sorted(piv[:rank].tolist())
    dropped = [labels[i] for i in range(len(Cr)) if i not in set(active)]
    Ca, da = Cr[active], d[active]
    nc = len(active)
    n = len(keep_cols)
    K = np.zeros((n + nc, n + nc))
    K[:n, :n] = Gr
    K[:n, n:] = Ca.T
    K[n:, :n] = Ca
    rhs = np.concatenate([fr, da])
    fallback = False
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite solution")
        a_r = sol[:n]
    except np.linalg.LinAlgError:
        fallback = True
        a_r = np.linalg.lstsq(Gr, fr, rcond=None)[0]
    a = np.zeros(2 * nb)
    a[keep_cols] = a_r
    viol = float(np.abs(C @ a - d).max()) if len(C) else 0.0
    return (a.reshape(2, nb), [labels[i] for i in active], dropped, drop, fallback, viol)


def fit_patch(field: FEField, k: int, data: _PatchData | None = None) -> PatchPolynomial:
    """Constrained least-squares fit of one patch (index into ``mesh.patch_vertices``)."""
    data = data or _PatchData(field)
    sel = np.nonzero(data.pj == k)[0]
    if len(sel) == 0:
        raise ValueError(f"patch {k} has no elements")
    G, F, C, d, area = _interior_moments(data, sel, k + 1)
    G, F, C, d = G[k] / area[k], F[k] / area[k], C[k], d[k]
    labels = [f"equilibrium:{'xy'[c]}:{m}" for c in range(2) for m in range(len(data.low))]
    members = list(zip(data.pe[sel].tolist(), data.ps_slot[sel].tolist()))
    for seg in _patch_segments(data.mesh, members):
        Cs, ds, ls = _segment_rows(data, k, seg)
        if len(ls):
            C = np.vstack([C, Cs])
            d = np.concatenate([d, ds])
            labels += ls
    C, d = _normalize_rows(C, d)
    a, active, dropped, trunc, fb, viol = _solve_constrained(G, F, C, d, labels)
    if fb:
        log.warning("patch %d: constrained system singular, unconstrained fit used", k)
    return PatchPolynomial(k, int(data.mesh.patch_vertices[k]), data.center[k],
                           float(data.scale[k]), data.p + 1, data.exps, a, tuple(active),
                           tuple(dropped), trunc, fb, viol)


def recover(field: FEField) -> RecoveredField:
    """Fit every vertex patch and return the blended recovered field."""
    data = _PatchData(field)
    mesh = data.mesh
    npatch = len(mesh.patch_vertices)
    nb = len(data.exps)
    G, F, C, d, area = _interior_moments(data, np.arange(len(data.pe)), npatch)
    G /= area[:, None, None]
    F /= area[:, None, None]
    C, d = _normalize_rows(C, d)

    boundary = np.zeros(npatch, dtype=bool)
    if mesh.boundary_edges:
        be_elem = np.array([be.element for be in mesh.boundary_edges])
        be_edge = np.array([be.local_edge for be in mesh.boundary_edges])
        # a pair touches the boundary if its PU weight is nonzero on a boundary edge
        has = np.zeros(mesh.n_elements, dtype=bool)
        has[be_elem] = True
        cand = np.nonzero(has[data.pe])[0]
        ends = np.array([EDGES[i][:2] for i in range(4)])
        for pos in cand:
            e, slot = data.pe[pos], data.ps_slot[pos]
            W = mesh.elem_patch_weights[e, slot]
            for le in be_edge[be_elem == e]:
                if W[ends[le]].any():
                    boundary[data.pj[pos]] = True

    # Gram conditioning check decides which interior patches can be batch-solved
    ev = np.linalg.eigvalsh(G)
    healthy = ev[:, 0] > 1e-12 * ev[:, -1]
    batch = np.nonzero(~boundary & healthy)[0]
    coef = np.zeros((npatch, 2, nb))
    records: dict = {}
    if len(batch):
        nc = C.shape[1]
        n = 2 * nb
        K = np.zeros((len(batch), n + nc, n + nc))
        K[:, :nb, :nb] = G[batch]
        K[:, nb:n, nb:n] = G[batch]
        K[:, :n, n:] = np.transpose(C[batch], (0, 2, 1))
        K[:, n:, :n] = C[batch]
        rhs = np.concatenate([F[batch, 0], F[batch, 1], d[batch]], axis=1)
        sol = np.linalg.solve(K, rhs[..., None])[..., 0]
        coef[batch] = sol[:, :n].reshape(-1, 2, nb)
    loop = np.nonzero(boundary | ~healthy)[0]
    n_fb = n_tr = 0
    for k in loop:
        pp = fit_patch(field, int(k), data)
        coef[k] = pp.coef
        records[int(k)] = dict(active=pp.active, dropped=pp.dropped, truncated=pp.truncated,
                               fallback=pp.fallback, max_violation=pp.max_violation)
        n_fb += pp.fallback
        n_tr += pp.truncated > 0
    labels = tuple(f"equilibrium:{'xy'[c]}:{m}" for c in range(2) for m in range(len(data.low)))
    for k in batch:
        records[int(k)] = dict(active=labels)
    return RecoveredField(field, data.exps, coef, data.center, data.scale, records, n_fb, n_tr)


# -- point evaluation helpers -------------------------------------------------------

def _single_points(mesh: QuadMesh, element: int, ref) -> PointSet:
    ref = np.atleast_2d(np.asarray(ref, float))
    elem = np.full(len(ref), int(element))
    x, jac = mesh.map(elem, ref)
    return PointSet(elem, ref, x, jac, np.linalg.inv(jac), np.ones(len(ref)), mesh.n_elements)


def conjoint_displacement(rec: RecoveredField, element: int, ref) -> np.ndarray:
    return rec.evaluate(_single_points(rec.mesh, element, ref)).u


def conjoint_stress_split(rec: RecoveredField, element: int, ref):
    """(sigma_u, continuous part, discontinuous part) at reference points."""
    v = rec.evaluate(_single_points(rec.mesh, element, ref))
    return v.sigma_u, v.sigma, v.sigma_disc


def internal_default_s(rec: RecoveredField, element: int, ref) -> np.ndarray:
    return rec.s_at(_single_points(rec.mesh, element, ref))


def boundary_default_r(rec: RecoveredField, edge: int, tau) -> np.ndarray:
    """r at running coordinates ``tau`` in [-1, 1] along boundary edge ``edge``."""
    mesh = rec.mesh
    be = mesh.boundary_edges[edge]
    tau = np.atleast_1d(np.asarray(tau, float))
    ref = edge_ref_points(be.local_edge, tau)
    elem = np.full(len(tau), be.element)
    x, jac = mesh.map(elem, ref)
    a, b, _ = EDGES[be.local_edge]
    t = np.einsum("pij,j->pi", jac, REF_NODES[b] - REF_NODES[a])
    n = np.stack([t[:, 1], -t[:, 0]], 1) / np.linalg.norm(t, axis=1)[:, None]
    ps = PointSet(elem, ref, x, jac, np.linalg.inv(jac), np.ones(len(tau)), mesh.n_elements,
                  n, np.full(len(tau), int(edge)))
    return rec.r_at(ps)
