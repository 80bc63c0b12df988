import math

import numpy as np
import pytest

from sprest.benchmarks import get_benchmark
from sprest.fem import (LoadCase, Material, NumericalError, assemble_and_solve, assemble_load,
                        assemble_stiffness, build_constraints, elasticity_matrix,
                        energy_inner_product, fe_stress, shape_values)
from sprest.geometry import REF_NODES, DomainSpec, build_structured_mesh, refine_elements
from sprest.quadrature import element_points

ALL_DIRICHLET = dict(left="dirichlet", right="dirichlet", top="dirichlet",
                     bottom="dirichlet")


def dirichlet_square(divisions, order, hanging=False):
    m = build_structured_mesh(DomainSpec.square().with_tags(**ALL_DIRICHLET), divisions, order)
    if hanging:
        m = refine_elements(refine_elements(m, [0, 3]), [1])
    return m


# -- material ---------------------------------------------------------------------

@pytest.mark.parametrize("plane", ["strain", "stress"])
def test_D_decoupled_when_nu_zero(plane):
    D = elasticity_matrix(Material(1000.0, 0.0, plane))
    assert np.allclose(D, np.diag([1000.0, 1000.0, 500.0]), atol=1e-12)


def test_D_plane_strain_closed_form():
    E, nu = 1000.0, 0.3
    D = Material(E, nu, "strain").D
    c = E / ((1 + nu) * (1 - 2 * nu))
    assert math.isclose(D[0, 0], c * (1 - nu), rel_tol=1e-14)
    assert math.isclose(D[0, 1], c * nu, rel_tol=1e-14)
    assert math.isclose(D[2, 2], E / (2 * (1 + nu)), rel_tol=1e-14)


@pytest.mark.parametrize("plane", ["strain", "stress"])
def test_D_times_S_is_identity(plane):
    m = Material(210.0, 0.29, plane)
    assert np.allclose(m.D @ m.S, np.eye(3), atol=1e-12)


def test_material_validation():
    with pytest.raises(ValueError):
        Material(-1.0)
    with pytest.raises(ValueError):
        Material(1.0, 0.5)
    with pytest.raises(ValueError):
        Material(1.0, 0.3, "axisymmetric")


# -- shape functions --------------------------------------------------------------

def test_q4_center_values():
    N, _, _, _ = shape_values("Q4", [0.0, 0.0])
    assert np.allclose(N, 0.25)


@pytest.mark.parametrize("order", ["Q4", "Q8"])
def test_partition_of_unity(order, rng):
    ref = rng.uniform(-1, 1, (200, 2))
    N, dN, Nv, dNv = shape_values(order, ref)
    assert np.abs(N.sum(1) - 1).max() < 1e-14
    assert np.abs(Nv.sum(1) - 1).max() < 1e-14
    assert np.abs(dN.sum(1)).max() < 1e-13
    assert np.abs(dNv.sum(1)).max() < 1e-13


@pytest.mark.parametrize("order", ["Q4", "Q8"])
def test_kronecker_property(order):
    nn = 4 if order == "Q4" else 8
    N, _, _, _ = shape_values(order, REF_NODES[:nn])
    assert np.allclose(N, np.eye(nn), atol=1e-14)


@pytest.mark.parametrize("order", ["Q4", "Q8"])
def test_shape_derivatives_match_finite_differences(order, rng):
    ref = rng.uniform(-0.9, 0.9, (20, 2))
    h = 1e-6
    _, dN, _, dNv = shape_values(order, ref)
    for axis in (0, 1):
        step = np.zeros(2)
        step[axis] = h
        Np, _, Nvp, _ = shape_values(order, ref + step)
        Nm, _, Nvm, _ = shape_values(order, ref - step)
        assert np.abs((Np - Nm) / (2 * h) - dN[..., axis]).max() < 1e-7
        assert np.abs((Nvp - Nvm) / (2 * h) - dNv[..., axis]).max() < 1e-7


# -- solver -----------------------------------------------------------------------

@pytest.mark.parametrize("order", ["Q4", "Q8"])
def test_rigid_translation_has_no_energy(order):
    mat = Material(1000.0, 0.3)
    m = dirichlet_square(3, order)
    load = LoadCase(dirichlet=lambda x: np.tile([0.3, -0.7], (len(x), 1)))
    fe = assemble_and_solve(m, mat, load)
    assert fe.strain_energy() <= 1e-12 * mat.young
    assert np.allclose(fe.u.reshape(-1, 2), [0.3, -0.7], atol=1e-12)


@pytest.mark.parametrize("order", ["Q4", "Q8"])
@pytest.mark.parametrize("hanging", [False, True])
def test_patch_test_linear_field(order, hanging):
    mat = Material(1000.0, 0.25, "stress")
    eps = 1e-3

    def exact(x):
        return np.stack([eps * x[:, 0], -mat.poisson * eps * x[:, 1]], 1)

    m = dirichlet_square(3, order, hanging)
    fe = assemble_and_solve(m, mat, LoadCase(dirichlet=exact))
    assert np.abs(fe.u.reshape(-1, 2) - exact(m.nodes)).max() <= 1e-10
    # uniaxial stress state everywhere
    sig = np.array([fe_stress(fe, e, [0.3, -0.2]) for e in range(m.n_elements)])
    assert np.allclose(sig, [mat.young * eps, 0.0, 0.0], atol=1e-10 * mat.young)


def test_zero_field_zero_stress():
    mat = Material()
    m = dirichlet_square(2, "Q8")
    fe = assemble_and_solve(m, mat, LoadCase(dirichlet=lambda x: np.zeros_like(x)))
    assert np.all(fe_stress(fe, 1, [[0.1, 0.2], [0.5, -0.5]]) == 0)


def test_q4_center_stress_is_corner_average(rng):
    mat = Material()
    m = build_structured_mesh(DomainSpec.square(), 1, "Q4")
    sol = get_benchmark("square4")
    fe = assemble_and_solve(m, mat, sol.load_case())
    fe = type(fe)(fe.mesh, fe.material, fe.load, rng.normal(size=fe.u.shape), fe.ndof, 0.0)
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    assert np.allclose(fe_stress(fe, 0, [0.0, 0.0]), fe_stress(fe, 0, corners).mean(0),
                       atol=1e-12)


def test_singular_problem_raises():
    sol = get_benchmark("square4")
    load = LoadCase(body_force=sol.body_force, traction=sol.traction)
    with pytest.raises(NumericalError, match="rotation|translation"):
        assemble_and_solve(sol.mesh(2, "Q4"), sol.material, load)


@pytest.mark.parametrize("name,order", [("square4", "Q4"), ("pipe", "Q8"), ("lshape", "Q4")])
def test_galerkin_orthogonality(name, order):
    sol = get_benchmark(name)
    m = refine_elements(sol.mesh(3, order), [0, 4])
    load = sol.load_case()
    fe = assemble_and_solve(m, sol.material, load)
    K = assemble_stiffness(m, sol.material)
    f = assemble_load(m, load)
    T = build_constraints(m, load).T
    r = T.T @ (K @ fe.u - f)
    assert np.abs(r).max() <= 1e-9 * max(np.abs(T.T @ f).max(), 1e-30)


@pytest.mark.parametrize("order", ["Q4", "Q8"])
def test_work_identity(order):
    sol = get_benchmark("square4")
    m = sol.mesh(4, order)
    load = sol.load_case()
    fe = assemble_and_solve(m, sol.material, load)
    # pins sit where the exact displacement vanishes, so reactions do no work
    assert all(v == 0 for _, _, v in sol.pins)
    lu = float(assemble_load(m, load) @ fe.u)
    assert math.isclose(fe.strain_energy(), lu, rel_tol=1e-9)


def test_pipe_q8_energy_within_one_percent():
    sol = get_benchmark("pipe")
    m = sol.mesh(4, "Q8")
    fe = assemble_and_solve(m, sol.material, sol.load_case())
    ps = element_points(m, 10)
    exact, _ = energy_inner_product(m, lambda p: sol.stress(p.x), lambda p: sol.stress(p.x),
                                    material=sol.material, points=ps)
    assert abs(math.sqrt(fe.strain_energy()) / math.sqrt(exact) - 1) < 0.01


def test_energy_inner_product_spd_and_bilinear(rng):
    mat = Material()
    m = build_structured_mesh(DomainSpec.annulus(), 2, "Q8")
    sol = get_benchmark("pipe")
    fe = assemble_and_solve(m, mat, sol.load_case())
    for _ in range(100):
        u = rng.normal(size=fe.u.shape)
        f = type(fe)(m, mat, fe.load, u, fe.ndof, 0.0)
        assert energy_inner_product(m, f.stress_at, f.stress_at, material=mat)[0] >= 0
    a = type(fe)(m, mat, fe.load, rng.normal(size=fe.u.shape), fe.ndof, 0.0)
    b = type(fe)(m, mat, fe.load, rng.normal(size=fe.u.shape), fe.ndof, 0.0)
    ab, per = energy_inner_product(m, a.stress_at, b.stress_at, material=mat)
    a2b, _ = energy_inner_product(m, lambda p: 2 * a.stress_at(p), b.stress_at, material=mat)
    assert math.isclose(a2b, 2 * ab, rel_tol=1e-12)
    assert math.isclose(per.sum(), ab, rel_tol=1e-12, abs_tol=1e-14)
    with pytest.raises(ValueError):
        energy_inner_product(m, a.stress_at, b.stress_at)


def _exact_energy_error(sol, fe):
    ps = element_points(fe.mesh, 5)
    d = sol.stress(ps.x) - fe.stress_at(ps)
    return math.sqrt(ps.integrate(np.einsum("pi,ij,pj->p", d, sol.material.S, d) * ps.weight))


@pytest.mark.parametrize("order,rate", [("Q4", 0.5), ("Q8", 1.0)])
def test_convergence_rate_square(order, rate):
    sol = get_benchmark("square4")
    dof, err = [], []
    for d in (4, 8, 16):
        fe = assemble_and_solve(sol.mesh(d, order), sol.material, sol.load_case())
        dof.append(fe.ndof)
        err.append(_exact_energy_error(sol, fe))
    slope = np.polyfit(np.log(dof), np.log(err), 1)[0]
    assert abs(slope + rate) < 0.1


def test_ndof_excludes_hanging_nodes():
    sol = get_benchmark("square4")
    m = refine_elements(sol.mesh(2, "Q4"), [0])
    fe = assemble_and_solve(m, sol.material, sol.load_case())
    assert fe.ndof == 2 * (m.n_nodes - 2)


def test_single_point_pin_leaves_rotation_free():
    sol = get_benchmark("square4")
    load = LoadCase(body_force=sol.body_force, traction=sol.traction,
                    pins=(((0.0, 0.0), 0, 0.0), ((0.0, 0.0), 1, 0.0)))
    with pytest.raises(NumericalError, match="1 unconstrained"):
        assemble_and_solve(sol.mesh(2, "Q4"), sol.material, load)
