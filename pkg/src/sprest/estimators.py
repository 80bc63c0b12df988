"""Error estimates of the FE and recovered solutions, exact errors and effectivities."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import spearmanr

from sprest.benchmarks import AnalyticSolution
from sprest.fem import (FEField, _global_dofs, assemble_load, build_constraints,
                        physical_gradients, shape_values, strain_matrix)
from sprest.quadrature import DEFAULT_ERROR_ORDER, PointSet, edge_points, element_points
from sprest.recovery import RecoveredField

# column order of the per-mesh CSV row; the first eleven are fixed
CSV_COLUMNS = (
    "mesh_index", "ndof", "zz2", "E1", "E2", "E3", "EUB", "exact_e2", "exact_estar2",
    "theta_zz", "theta_E3",
    "theta_E1", "theta_E2", "theta_EUB", "theta_E3_sqrt", "n_elements", "e_es_L2", "s_L2",
    "r_L2", "energy_fe2", "energy_rec2", "exact_u2", "exact_eu2",
)

SINGULAR_STABILITY = 1e-6
MAX_SINGULAR_DEPTH = 48


@dataclass
class ErrorReport:
    """Global and per-element error quantities on one mesh."""

    mesh_index: int
    ndof: int
    n_elements: int
    zz2: float
    E1: float
    E2: float
    E3: float
    EUB: float
    e_es_L2: float
    s_L2: float
    r_L2: float
    energy_fe2: float
    energy_rec2: float
    zz2_elem: np.ndarray
    E2_elem: np.ndarray
    E3_elem: np.ndarray
    exact_e2: float | None = None
    exact_estar2: float | None = None
    exact_eu2: float | None = None
    exact_u2: float | None = None
    exact_e2_elem: np.ndarray | None = None
    exact_estar2_elem: np.ndarray | None = None
    singular_depth: int = 0
    notes: list = field(default_factory=list)

    def _theta(self, value, sqrt=False):
        if self.exact_estar2 is None or self.exact_estar2 <= 0:
            return None
        r = value / self.exact_estar2
        return math.sqrt(abs(r)) if sqrt else r

    @property
    def theta_zz(self):
        if self.exact_e2 is None or self.exact_e2 <= 0:
            return None
        return math.sqrt(self.zz2 / self.exact_e2)

    @property
    def theta(self) -> dict:
        """Effectivities: estimates over the exact recovered error (both squared)."""
        return {"zz": self.theta_zz, "E1": self._theta(self.E1), "E2": self._theta(self.E2),
                "E3": self._theta(self.E3), "EUB": self._theta(self.EUB),
                "E3_sqrt": self._theta(self.E3, sqrt=True)}

    def csv_row(self) -> dict:
        th = self.theta
        return {
            "mesh_index": self.mesh_index, "ndof": self.ndof, "zz2": self.zz2,
            "E1": self.E1, "E2": self.E2, "E3": self.E3, "EUB": self.EUB,
            "exact_e2": self.exact_e2, "exact_estar2": self.exact_estar2,
            "theta_zz": th["zz"], "theta_E3": th["E3"], "theta_E1": th["E1"],
            "theta_E2": th["E2"], "theta_EUB": th["EUB"], "theta_E3_sqrt": th["E3_sqrt"],
            "n_elements": self.n_elements, "e_es_L2": self.e_es_L2, "s_L2": self.s_L2,
            "r_L2": self.r_L2, "energy_fe2": self.energy_fe2, "energy_rec2": self.energy_rec2,
            "exact_u2": self.exact_u2, "exact_eu2": self.exact_eu2,
        }

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if not isinstance(v, np.ndarray)}
        for k in ("zz2_elem", "E2_elem", "E3_elem", "exact_e2_elem", "exact_estar2_elem"):
            v = getattr(self, k)
            d[k] = None if v is None else [float(x) for x in v]
        d["theta"] = self.theta
        return json.dumps(d, indent=1, sort_keys=True)


def _check_same_mesh(field: FEField, rec: RecoveredField):
    if rec.field.mesh is not field.mesh:
        raise ValueError("FE field and recovered field live on different meshes")


def _edge_order(field: FEField) -> int:
    return field.mesh.degree + 3


def _residual_edges(mesh):
    return [i for i, be in enumerate(mesh.boundary_edges)
            if be.tag == "neumann" or be.tag.startswith("symmetry")]


def _energy(ps: PointSet, a: np.ndarray, S: np.ndarray, b: np.ndarray | None = None):
    b = a if b is None else b
    vals = np.einsum("pi,ij,pj->p", a, S, b) * ps.weight
    per = ps.per_element(vals)
    return math.fsum(per), per


def estimated_error_field_e_es(field: FEField, rec: RecoveredField,
                               order: int = DEFAULT_ERROR_ORDER):
    """Return (callable PointSet -> u*_u - u^h, its L2 norm)."""
    _check_same_mesh(field, rec)

    def e_es(ps: PointSet) -> np.ndarray:
        return rec.displacement_at(ps) - field.displacement_at(ps)

    ps = element_points(field.mesh, order)
    d = e_es(ps)
    return e_es, math.sqrt(ps.integrate(np.einsum("pc,pc->p", d, d) * ps.weight))


def zz_estimate(field: FEField, rec: RecoveredField, order: int = DEFAULT_ERROR_ORDER):
    """Energy norm squared of (continuous recovered stress - FE stress)."""
    _check_same_mesh(field, rec)
    ps = element_points(field.mesh, order)
    diff = rec.stress_at(ps) - field.stress_at(ps)
    return _energy(ps, diff, field.material.S)


def _indicator_terms(field: FEField, rec: RecoveredField, order: int = DEFAULT_ERROR_ORDER):
    """Per-element signed and absolute integrals of s.e_es and r.e_es."""
    mesh = field.mesh
    ps = element_points(mesh, order)
    v = rec.evaluate(ps)
    e = v.u - field.displacement_at(ps)
    s = rec.s_at(ps, v)
    se = np.einsum("pc,pc->p", s, e) * ps.weight
    out = {
        "int": ps.per_element(se), "int_abs": ps.per_element(np.abs(se)),
        "e_L2": math.sqrt(ps.integrate(np.einsum("pc,pc->p", e, e) * ps.weight)),
        "s_L2": math.sqrt(ps.integrate(np.einsum("pc,pc->p", s, s) * ps.weight)),
        "bnd": np.zeros(mesh.n_elements), "bnd_abs": np.zeros(mesh.n_elements), "r_L2": 0.0,
        "values": v, "points": ps, "e": e,
    }
    edges = _residual_edges(mesh)
    if edges:
        es = edge_points(mesh, _edge_order(field), edges=edges)
        ve = rec.evaluate(es)
        r = rec.r_at(es, ve)
        ee = ve.u - field.displacement_at(es)
        re = np.einsum("pc,pc->p", r, ee) * es.weight
        out["bnd"] = es.per_element(re)
        out["bnd_abs"] = es.per_element(np.abs(re))
        out["r_L2"] = math.sqrt(es.integrate(np.einsum("pc,pc->p", r, r) * es.weight))
    return out


def indicator_E1(field: FEField, rec: RecoveredField) -> float:
    t = _indicator_terms(field, rec)
    return -math.fsum(np.concatenate([t["int"], t["bnd"]]))


def indicator_E2(field: FEField, rec: RecoveredField):
    t = _indicator_terms(field, rec)
    per = np.abs(t["int"]) + np.abs(t["bnd"])
    return math.fsum(per), per


def indicator_E3(field: FEField, rec: RecoveredField):
    t = _indicator_terms(field, rec)
    per = t["int_abs"] + t["bnd_abs"]
    return math.fsum(per), per


def upper_bound_EUB(field: FEField, rec: RecoveredField) -> float:
    t = _indicator_terms(field, rec)
    return t["e_L2"] * t["s_L2"]


def _stable_singular_points(mesh, analytic: AnalyticSolution, fn, order):
    """Graded quadrature near the singular point, deepened until the value settles."""
    if analytic.singular_point is None:
        ps = element_points(mesh, order)
        return ps, fn(ps), 0
    prev = None
    depth = 0
    while True:
        ps = element_points(mesh, order, analytic.singular_point, depth)
        val = fn(ps)
        if prev is not None and abs(val - prev) <= SINGULAR_STABILITY * max(abs(val), 1e-300):
            return ps, val, depth
        if depth >= MAX_SINGULAR_DEPTH:
            return ps, val, -depth
        prev = val
        depth += 2 if depth else 4


def exact_errors(field: FEField, rec: RecoveredField | None, analytic: AnalyticSolution,
                 order: int = DEFAULT_ERROR_ORDER) -> dict:
    """Exact energy errors of the FE and recovered stresses against the closed form."""
    mesh = field.mesh
    S = field.material.S

    def e2_of(ps):
        return _energy(ps, analytic.stress(ps.x) - field.stress_at(ps), S)[0]

    ps, _, depth = _stable_singular_points(mesh, analytic, e2_of, order)
    sig = analytic.stress(ps.x)
    e2, e2_el = _energy(ps, sig - field.stress_at(ps), S)
    u2, _ = _energy(ps, sig, S)
    out = {"e2": e2, "e2_elem": e2_el, "u2": u2, "depth": depth}
    if rec is not None:
        v = rec.evaluate(ps)
        out["estar2"], out["estar2_elem"] = _energy(ps, sig - v.sigma, S)
        out["eu2"], _ = _energy(ps, sig - v.sigma_u, S)
    return out


def estimate(field: FEField, rec: RecoveredField, analytic: AnalyticSolution | None = None,
             mesh_index: int = 0, order: int = DEFAULT_ERROR_ORDER) -> ErrorReport:
    """All estimators (and exact errors when an analytic solution is given)."""
    _check_same_mesh(field, rec)
    S = field.material.S
    t = _indicator_terms(field, rec, order)
    ps, v = t["points"], t["values"]
    sh = field.stress_at(ps)
    zz2, zz_el = _energy(ps, v.sigma - sh, S)
    efe2, _ = _energy(ps, sh, S)
    erec2, _ = _energy(ps, v.sigma, S)
    E1 = -math.fsum(np.concatenate([t["int"], t["bnd"]]))
    E2_el = np.abs(t["int"]) + np.abs(t["bnd"])
    E3_el = t["int_abs"] + t["bnd_abs"]
    rep = ErrorReport(
        mesh_index=mesh_index, ndof=field.ndof, n_elements=field.mesh.n_elements,
        zz2=zz2, E1=E1, E2=math.fsum(E2_el), E3=math.fsum(E3_el),
        EUB=t["e_L2"] * t["s_L2"], e_es_L2=t["e_L2"], s_L2=t["s_L2"], r_L2=t["r_L2"],
        energy_fe2=efe2, energy_rec2=erec2, zz2_elem=zz_el, E2_elem=E2_el, E3_elem=E3_el)
    if rec.n_fallback:
        rep.notes.append(f"{rec.n_fallback} patch(es) used the unconstrained fallback fit")
    if analytic is not None:
        ex = exact_errors(field, rec, analytic, order)
        rep.exact_e2, rep.exact_estar2 = ex["e2"], ex["estar2"]
        rep.exact_eu2, rep.exact_u2 = ex["eu2"], ex["u2"]
        rep.exact_e2_elem, rep.exact_estar2_elem = ex["e2_elem"], ex["estar2_elem"]
        rep.singular_depth = ex["depth"]
        if ex["depth"] < 0:
            rep.notes.append("singular quadrature did not settle to the requested tolerance")
    return rep


def bound_check_eq11(field: FEField, rec: RecoveredField, analytic: AnalyticSolution,
                     order: int = DEFAULT_ERROR_ORDER) -> dict:
    """Check ||e||^2 <= a(s*_e, s*_e) - 2 int e.s - 2 int e.r with the exact error e.

    Also returns the completing-the-square term a(sigma(e) - s*_e, sigma(e) - s*_e),
    which should equal rhs - lhs.
    """
    mesh = field.mesh
    S = field.material.S
    ps = element_points(mesh, order, analytic.singular_point,
                        8 if analytic.singular_point is not None else 0)
    v = rec.evaluate(ps)
    sh = field.stress_at(ps)
    sig = analytic.stress(ps.x)
    e = analytic.displacement(ps.x) - field.displacement_at(ps)
    s_star_e = v.sigma - sh
    lhs, _ = _energy(ps, sig - sh, S)
    a_star, _ = _energy(ps, s_star_e, S)
    es_int = ps.integrate(np.einsum("pc,pc->p", e, rec.s_at(ps, v)) * ps.weight)
    er_int = 0.0
    edges = _residual_edges(mesh)
    if edges:
        es = edge_points(mesh, order, edges=edges)
        ee = analytic.displacement(es.x) - field.displacement_at(es)
        er_int = es.integrate(np.einsum("pc,pc->p", ee, rec.r_at(es)) * es.weight)
    rhs = a_star - 2 * es_int - 2 * er_int
    square, _ = _energy(ps, (sig - sh) - s_star_e, S)
    return {"lhs": lhs, "rhs": rhs, "satisfied": bool(lhs <= rhs), "square": square}


def residual_identity(field: FEField, rec: RecoveredField, order: int = DEFAULT_ERROR_ORDER):
    """Per test function: a(sigma*, sigma(v)) - l(v) - int v.s - int v.r.

    Test functions are the basis of the constrained FE space (hanging nodes
    eliminated, essential dofs removed). Returns (residual, |l(v)|).
    """
    mesh = field.mesh
    load = field.load
    dofs = _global_dofs(mesh)
    ps = element_points(mesh, order)
    v = rec.evaluate(ps)
    N, dN, _, _ = shape_values(mesh.order, ps.ref)
    B = strain_matrix(physical_gradients(dN, ps.jinv))
    ndof = 2 * mesh.n_nodes
    g = np.zeros(ndof)
    inner = np.einsum("pki,pk,p->pi", B, v.sigma, ps.weight)
    s = rec.s_at(ps, v) * ps.weight[:, None]
    inner -= (N[:, :, None] * s[:, None, :]).reshape(len(ps), -1)
    np.add.at(g, dofs[ps.elem].ravel(), inner.ravel())
    edges = _residual_edges(mesh)
    if edges:
        es = edge_points(mesh, order, edges=edges)
        Ne, _, _, _ = shape_values(mesh.order, es.ref)
        rw = rec.r_at(es) * es.weight[:, None]
        np.add.at(g, dofs[es.elem].ravel(),
                  -(Ne[:, :, None] * rw[:, None, :]).reshape(len(es), -1).ravel())
    f = assemble_load(mesh, load, order)
    cm = build_constraints(mesh, load)
    T = sp.csr_matrix(cm.T)
    return T.T @ (g - f), np.abs(T.T @ f)


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    return float(spearmanr(a, b).statistic)


__all__ = ["ErrorReport", "CSV_COLUMNS", "estimate", "estimated_error_field_e_es",
           "zz_estimate", "indicator_E1", "indicator_E2", "indicator_E3", "upper_bound_EUB",
           "exact_errors", "bound_check_eq11", "residual_identity", "spearman"]
