"""Closed-form benchmark problems and their consistency oracles."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from sprest.fem import LoadCase, Material, traction_from_stress
from sprest.geometry import DomainSpec, QuadMesh, build_structured_mesh

# eigenvalue and mode coefficient of the mode-I field at a 3*pi/2 reentrant corner
LSHAPE_LAMBDA = 0.544483736782464
LSHAPE_Q = 0.543075578836737

BENCHMARKS = ("square4", "pipe", "lshape")


@dataclass(frozen=True, eq=False)
class AnalyticSolution:
    """Exact displacement/stress fields of a benchmark plus its BC plan.

    Fields take physical points of shape (n, 2). ``traction(x, n, sides)``
    gives the prescribed traction on Neumann sides.
    """

    name: str
    domain: DomainSpec
    material: Material
    displacement: Callable[[np.ndarray], np.ndarray]
    stress: Callable[[np.ndarray], np.ndarray]
    body_force: Callable[[np.ndarray], np.ndarray]
    traction: Callable
    pins: tuple = ()
    singular_point: tuple[float, float] | None = None
    singular_exponent: float | None = None
    notes: dict = field(default_factory=dict)

    def load_case(self) -> LoadCase:
        return LoadCase(body_force=self.body_force, traction=self.traction,
                        dirichlet=self.displacement, pins=self.pins)

    def mesh(self, divisions: int, order: str = "Q4", **kw) -> QuadMesh:
        return build_structured_mesh(self.domain, divisions, order, **kw)

    def replace(self, **changes) -> AnalyticSolution:
        return dataclasses.replace(self, **changes)


# -- square with a 4th order polynomial field ---------------------------------

def square_4th_order(material: Material | None = None, size: float = 2.0) -> AnalyticSolution:
    mat = material or Material(1000.0, 0.3, "strain")
    D = mat.D
    E, nu = mat.young, mat.poisson

    def disp(x):
        X, Y = x[:, 0], x[:, 1]
        ux = X**4 + 5 * X**3 * Y - 3 * X**2 * Y**2 + X**3
        uy = Y**4 - 6 * Y**2 * X**2 + 3 * Y * X**3 + 2 * Y
        return np.stack([ux, uy], 1)

    def stress(x):
        X, Y = x[:, 0], x[:, 1]
        exx = 4 * X**3 + 15 * X**2 * Y - 6 * X * Y**2 + 3 * X**2
        eyy = 4 * Y**3 - 12 * Y * X**2 + 3 * X**3 + 2
        gxy = 5 * X**3 + 3 * X**2 * Y - 12 * X * Y**2
        return np.stack([exx, eyy, gxy], 1) @ D.T

    # body force as printed with the figure; the x**2 term of b_x carries a
    # minus sign (the only variant that balances the stress field)
    def body(x):
        X, Y = x[:, 0], x[:, 1]
        c = 3 * E / (2 * (1 + nu) * (2 * nu - 1))
        bx = -c * (-9 * X**2 - 12 * X * Y + 4 * Y**2 - 4 * X
                   + nu * (4 * X**2 + 20 * X * Y - 4 * Y**2 + 4 * X))
        by = c * (4 * Y**2 - 3 * X**2 + 2 * X * Y + nu * (8 * X**2 - 12 * X * Y))
        return np.stack([bx, by], 1)

    def traction(x, n, sides=None):
        return traction_from_stress(stress(x), n)

    origin = np.zeros((1, 2))
    far = np.array([[size, 0.0]])
    pins = ((tuple(origin[0]), 0, float(disp(origin)[0, 0])),
            (tuple(origin[0]), 1, float(disp(origin)[0, 1])),
            (tuple(far[0]), 1, float(disp(far)[0, 1])))
    return AnalyticSolution("square4", DomainSpec.square(size), mat, disp, stress, body,
                            traction, pins)


def _poly_eval(terms: dict, x: np.ndarray, dx: int = 0, dy: int = 0) -> np.ndarray:
    """Evaluate sum c * X**i * Y**j (or a partial derivative of it)."""
    out = np.zeros(len(x))
    for (i, j), c in terms.items():
        if i < dx or j < dy:
            continue
        fi = math.perm(i, dx)
        fj = math.perm(j, dy)
        out += c * fi * fj * x[:, 0] ** (i - dx) * x[:, 1] ** (j - dy)
    return out


def polynomial_solution(ux: dict, uy: dict, material: Material | None = None,
                        size: float = 2.0, name: str = "polynomial") -> AnalyticSolution:
    """Manufactured polynomial displacement on the square with consistent b and t.

    ``ux``/``uy`` map exponent pairs (i, j) to coefficients of X**i * Y**j.
    All sides carry the exact traction; three pins take the exact values.
    """
    mat = material or Material(1000.0, 0.3, "strain")
    D = mat.D
    ux, uy = dict(ux), dict(uy)

    def disp(x):
        return np.stack([_poly_eval(ux, x), _poly_eval(uy, x)], 1)

    def strain_d(x, dx=0, dy=0):
        return np.stack([_poly_eval(ux, x, 1 + dx, dy), _poly_eval(uy, x, dx, 1 + dy),
                         _poly_eval(ux, x, dx, 1 + dy) + _poly_eval(uy, x, 1 + dx, dy)], 1)

    def stress(x):
        return strain_d(x) @ D.T

    def body(x):
        sx = strain_d(x, 1, 0) @ D.T
        sy = strain_d(x, 0, 1) @ D.T
        return -np.stack([sx[:, 0] + sy[:, 2], sx[:, 2] + sy[:, 1]], 1)

    def traction(x, n, sides=None):
        return traction_from_stress(stress(x), n)

    origin = np.zeros((1, 2))
    far = np.array([[size, 0.0]])
    pins = (((0.0, 0.0), 0, float(disp(origin)[0, 0])),
            ((0.0, 0.0), 1, float(disp(origin)[0, 1])),
            ((size, 0.0), 1, float(disp(far)[0, 1])))
    return AnalyticSolution(name, DomainSpec.square(size), mat, disp, stress, body,
                            traction, pins)


# -- thick pipe under internal pressure ----------------------------------------

def pipe_internal_pressure(a: float = 5.0, b: float = 20.0, pressure: float = 1.0,
                           material: Material | None = None) -> AnalyticSolution:
    mat = material or Material(1000.0, 0.3, "strain")
    E, nu = mat.young, mat.poisson
    c2 = (b / a) ** 2

    def ur(r):
        return pressure * (1 + nu) / (E * (c2 - 1)) * (r * (1 - 2 * nu) + b * b / r)

    def sr(r):
        return pressure / (c2 - 1) * (1 - b * b / (r * r))

    def st(r):
        return pressure / (c2 - 1) * (1 + b * b / (r * r))

    def disp(x):
        r = np.hypot(x[:, 0], x[:, 1])
        return x * (ur(r) / r)[:, None]

    def stress(x):
        r = np.hypot(x[:, 0], x[:, 1])
        c, s = x[:, 0] / r, x[:, 1] / r
        rr, tt = sr(r), st(r)
        return np.stack([rr * c * c + tt * s * s, rr * s * s + tt * c * c, (rr - tt) * s * c], 1)

    def body(x):
        return np.zeros_like(x)

    def traction(x, n, sides):
        sides = np.broadcast_to(np.asarray(sides), (len(x),))
        r = np.hypot(x[:, 0], x[:, 1])
        out = np.zeros_like(x)
        inner = sides == "inner"
        out[inner] = pressure * x[inner] / r[inner, None]
        return out

    sol = AnalyticSolution("pipe", DomainSpec.annulus(a, b), mat, disp, stress, body, traction)
    sol.notes.update(radial_displacement=ur, radial_stress=sr, hoop_stress=st,
                     a=a, b=b, pressure=pressure)
    return sol


# -- L-shape with the mode-I reentrant corner field ----------------------------

def _lshape_angular(lam, q, kappa, variant):
    """Angular factors f(phi) of the displacement and their derivatives."""
    A = kappa - q * (lam + 1)
    Bc = kappa + q * (lam + 1)

    def f(phi):
        fx = A * np.cos(lam * phi) - lam * np.cos((lam - 2) * phi)
        if variant == "sin":
            fy = Bc * np.sin(lam * phi) + lam * np.sin((lam - 2) * phi)
        else:
            fy = Bc * np.sin(lam * phi) + lam * np.cos((lam - 2) * phi)
        return fx, fy

    def df(phi):
        dfx = -A * lam * np.sin(lam * phi) + lam * (lam - 2) * np.sin((lam - 2) * phi)
        if variant == "sin":
            dfy = Bc * lam * np.cos(lam * phi) + lam * (lam - 2) * np.cos((lam - 2) * phi)
        else:
            dfy = Bc * lam * np.cos(lam * phi) - lam * (lam - 2) * np.sin((lam - 2) * phi)
        return dfx, dfy

    return f, df


def lshape_mode1(material: Material | None = None, size: float = 1.0,
                 variant: str = "sin") -> AnalyticSolution:
    """Mode-I field around the reentrant corner at the origin.

    The field is written in a frame whose x axis bisects the material wedge
    (global direction pi/4); the notch faces sit at phi = +-3*pi/4.
    """
    mat = material or Material(1000.0, 0.3, "strain")
    lam, q = LSHAPE_LAMBDA, LSHAPE_Q
    G, kappa = mat.shear_modulus, mat.kolosov
    D = mat.D
    f, df = _lshape_angular(lam, q, kappa, variant)
    alpha = 0.25 * np.pi
    ca, sa = np.cos(alpha), np.sin(alpha)
    R = np.array([[ca, -sa], [sa, ca]])

    def local(x):
        xl = x @ R  # R^T x
        r = np.hypot(xl[:, 0], xl[:, 1])
        phi = np.arctan2(xl[:, 1], xl[:, 0])
        return r, phi

    def disp(x):
        r, phi = local(x)
        fx, fy = f(phi)
        ul = (r**lam / (2 * G))[:, None] * np.stack([fx, fy], 1)
        return ul @ R.T

    def grad_local(x):
        r, phi = local(x)
        r = np.maximum(r, 1e-300)
        fx, fy = f(phi)
        dfx, dfy = df(phi)
        c, s = np.cos(phi), np.sin(phi)
        dr = lam * r ** (lam - 1) / (2 * G)
        dp = r ** (lam - 1) / (2 * G)  # (1/r) * r**lam / 2G
        g = np.empty((len(x), 2, 2))
        for k, (fk, dfk) in enumerate(((fx, dfx), (fy, dfy))):
            g[:, k, 0] = c * dr * fk - s * dp * dfk
            g[:, k, 1] = s * dr * fk + c * dp * dfk
        return g

    def stress(x):
        g = grad_local(x)
        eps = np.stack([g[:, 0, 0], g[:, 1, 1], g[:, 0, 1] + g[:, 1, 0]], 1)
        sl = eps @ D.T
        T = np.empty((len(x), 2, 2))
        T[:, 0, 0], T[:, 1, 1] = sl[:, 0], sl[:, 1]
        T[:, 0, 1] = T[:, 1, 0] = sl[:, 2]
        Tg = R @ T @ R.T
        return np.stack([Tg[:, 0, 0], Tg[:, 1, 1], Tg[:, 0, 1]], 1)

    def body(x):
        return np.zeros_like(x)

    def traction(x, n, sides):
        sides = np.broadcast_to(np.asarray(sides), (len(x),))
        out = traction_from_stress(stress(x), n)
        out[np.isin(sides, ("notch-a", "notch-b"))] = 0.0
        return out

    o = np.zeros((1, 2))
    p = np.array([[size, 0.0]])
    pins = ((tuple(o[0]), 0, 0.0), (tuple(o[0]), 1, 0.0),
            (tuple(p[0]), 1, float(disp(p)[0, 1])))
    sol = AnalyticSolution("lshape", DomainSpec.lshape(size), mat, disp, stress, body,
                           traction, pins, singular_point=(0.0, 0.0),
                           singular_exponent=lam)
    sol.notes.update(variant=variant, frame_angle=alpha)
    return sol


def get_benchmark(name: str) -> AnalyticSolution:
    if name == "square4":
        return square_4th_order()
    if name == "pipe":
        return pipe_internal_pressure()
    if name == "lshape":
        return lshape_mode1()
    raise KeyError(f"unknown benchmark {name!r}; expected one of {', '.join(BENCHMARKS)}")


# -- consistency oracle ---------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


@dataclass
class ConsistencyReport:
    benchmark: str
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        return [f"{self.benchmark:8s} {c.name:28s} {c.value:10.3e} <= {c.tolerance:.1e}  "
                f"{'PASS' if c.passed else 'FAIL'}" for c in self.checks]


def _interior_samples(sol: AnalyticSolution, n: int = 20, margin: float = 0.05):
    dom = sol.domain
    t = (np.arange(n) + 0.5) / n
    if dom.kind == "annulus":
        P = np.array([[a, b] for b in t for a in t])
        P = margin + (1 - 2 * margin) * P
        return dom.to_physical(P)
    if dom.kind == "square":
        s = dom.size
        return np.array([[a, b] for b in t for a in t]) * s * (1 - 2 * margin) + margin * s
    s = dom.size
    g = -s + 2 * s * (margin + (1 - 2 * margin) * t)
    pts = np.array([[a, b] for b in g for a in g])
    keep = ~((pts[:, 0] < 0) & (pts[:, 1] < 0))
    pts = pts[keep]
    if sol.singular_point is not None:
        pts = pts[np.linalg.norm(pts - np.asarray(sol.singular_point), axis=1) > 0.1 * s]
    return pts


def _side_samples(sol: AnalyticSolution, side: str, n: int = 10):
    dom = sol.domain
    t = (np.arange(n) + 0.5) / n
    if dom.kind == "annulus":
        run = t
    elif dom.kind == "square":
        run = t * dom.size
    elif side in ("notch-a", "notch-b"):
        run = -dom.size * t
    elif side in ("bottom", "left"):
        run = t * dom.size
    else:
        run = -dom.size + 2 * dom.size * t
    p = dom.boundary_point(side, run)
    x = dom.to_physical(p)
    tangent = dom.jacobian(p)[:, :, dom.side_axis(side)]
    tangent /= np.linalg.norm(tangent, axis=1)[:, None]
    n_ = np.stack([tangent[:, 1], -tangent[:, 0]], 1)
    # orient outward: away from an interior reference point
    ref = _interior_samples(sol, 4).mean(axis=0)
    flip = np.einsum("pi,pi->p", n_, x - ref) < 0
    n_[flip] *= -1
    return x, n_


SIDES = {"square": ("bottom", "right", "top", "left"),
         "annulus": ("bottom", "outer", "left", "inner"),
         "lshape": ("bottom", "right", "top", "left", "notch-a", "notch-b")}


def _d(f, x, step):
    """Fourth-order central difference of f along the vector ``step``."""
    return (-f(x + 2 * step) + 8 * f(x + step) - 8 * f(x - step) + f(x - 2 * step)) / (
        12 * np.linalg.norm(step, axis=-1)[..., None])


def verify_consistency(sol: AnalyticSolution, rtol: float = 1e-6) -> ConsistencyReport:
    """Finite-difference checks of the closed-form fields.

    (i) -div(sigma) = b at interior points, (ii) strains of u equal S sigma,
    (iii) sigma n = t on Neumann sides (tangential part on symmetry sides).
    """
    checks = []
    x = _interior_samples(sol)
    L = max(np.ptp(x[:, 0]), np.ptp(x[:, 1]))
    h = np.full(len(x), 1e-3 * L)
    if sol.singular_point is not None:
        h = np.minimum(h, 1e-3 * np.linalg.norm(x - np.asarray(sol.singular_point), axis=1))
    ex = np.stack([h, 0 * h], 1)
    ey = np.stack([0 * h, h], 1)
    sig = sol.stress(x)
    dsx, dsy = _d(sol.stress, x, ex), _d(sol.stress, x, ey)
    div = np.stack([dsx[:, 0] + dsy[:, 2], dsx[:, 2] + dsy[:, 1]], 1)
    b = sol.body_force(x)
    scale = max(np.abs(b).max(), np.abs(sig).max() / L)
    checks.append(Check("equilibrium -div(sigma)=b", float(np.abs(-div - b).max() / scale), rtol))

    dux, duy = _d(sol.displacement, x, ex), _d(sol.displacement, x, ey)
    eps = np.stack([dux[:, 0], duy[:, 1], duy[:, 0] + dux[:, 1]], 1)
    eps_s = sig @ sol.material.S.T
    checks.append(Check("compatibility eps(u)=S sigma",
                        float(np.abs(eps - eps_s).max() / np.abs(eps_s).max()), rtol))

    worst = 0.0
    for side in SIDES[sol.domain.kind]:
        tag = sol.domain.tag(side)
        xs, ns = _side_samples(sol, side)
        tn = traction_from_stress(sol.stress(xs), ns)
        if tag == "neumann":
            gap = tn - sol.traction(xs, ns, np.full(len(xs), side))
        elif tag.startswith("symmetry"):
            tau = np.stack([-ns[:, 1], ns[:, 0]], 1)
            gap = np.einsum("pi,pi->p", tn, tau)[:, None]
            un = np.einsum("pi,pi->p", sol.displacement(xs), ns)
            worst = max(worst, float(np.abs(un).max() / np.abs(sol.displacement(x)).max()))
        else:
            continue
        worst = max(worst, float(np.abs(gap).max() / np.abs(sig).max()))
    checks.append(Check("boundary sigma.n = t", worst, rtol))

    if sol.name == "pipe":
        r = np.hypot(x[:, 0], x[:, 1])
        sr, st = sol.notes["radial_stress"], sol.notes["hoop_stress"]
        dr = 1e-3 * r
        dsr = (-sr(r + 2 * dr) + 8 * sr(r + dr) - 8 * sr(r - dr) + sr(r - 2 * dr)) / (12 * dr)
        res = dsr + (sr(r) - st(r)) / r
        checks.append(Check("polar equilibrium", float(np.abs(res).max() * r.max()
                                                        / np.abs(sig).max()), 1e-8))
    return ConsistencyReport(sol.name, checks)
