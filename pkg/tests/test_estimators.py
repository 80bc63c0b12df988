import json
import math

import numpy as np
import pytest

from conftest import manufactured_solved, sequence, solved
from sprest.benchmarks import get_benchmark
from sprest.estimators import (CSV_COLUMNS, bound_check_eq11, estimate,
                               estimated_error_field_e_es, exact_errors, indicator_E1,
                               indicator_E2, indicator_E3, spearman, upper_bound_EUB,
                               zz_estimate)
from sprest.fem import assemble_and_solve
from sprest.quadrature import element_points, node_points
from sprest.recovery import recover

SMOOTH = [("square4", "Q4"), ("square4", "Q8"), ("pipe", "Q4"), ("pipe", "Q8")]


# -- manufactured fields in the FE space ------------------------------------------

@pytest.mark.parametrize("order", ["Q4", "Q8"])
def test_in_space_estimators_vanish(order):
    sol, fe, rec = manufactured_solved("in_space", order)
    rep = estimate(fe, rec, sol)
    scale = rep.energy_fe2
    _, e_l2 = estimated_error_field_e_es(fe, rec)
    u_scale = np.abs(fe.u).max()
    assert e_l2 <= 1e-9 * u_scale
    assert rep.zz2 <= 1e-16 * scale
    assert abs(rep.E1) <= 1e-14 * scale
    assert rep.E3 <= 1e-14 * scale
    assert rep.EUB <= 1e-14 * scale
    assert rep.exact_e2 <= 1e-14 * scale
    b = bound_check_eq11(fe, rec, sol)
    assert abs(b["lhs"]) <= 1e-14 * scale and abs(b["rhs"]) <= 1e-14 * scale


def test_mesh_mismatch_raises():
    _, fe, _ = solved("square4", "Q4", 2)
    _, _, rec = solved("square4", "Q4", 4)
    with pytest.raises(ValueError):
        estimated_error_field_e_es(fe, rec)
    with pytest.raises(ValueError):
        zz_estimate(fe, rec)


# -- e_es ---------------------------------------------------------------------------

def test_e_es_decreases_on_square():
    norms = [estimated_error_field_e_es(fe, rec)[1] for _, fe, rec, _ in
             sequence("square4", "Q4")]
    assert norms[0] > norms[1] > norms[2]


def test_e_es_at_vertex_is_patch_value_minus_fe():
    _, fe, rec = solved("square4", "Q4", 4, hanging=True)
    e_es, _ = estimated_error_field_e_es(fe, rec)
    mesh = fe.mesh
    diff = e_es(node_points(mesh))
    uh = fe.u.reshape(-1, 2)
    for k, v in enumerate(mesh.patch_vertices):
        expected = rec.patch_polynomial(k)(mesh.nodes[v][None])[0] - uh[v]
        assert np.allclose(diff[v], expected, atol=1e-13)


# -- ZZ estimate ----------------------------------------------------------------------

def test_zz_additivity():
    _, fe, rec = solved("pipe", "Q8", 2, hanging=True)
    tot, per = zz_estimate(fe, rec)
    assert len(per) == fe.mesh.n_elements
    assert math.isclose(tot, math.fsum(per), rel_tol=1e-12)


def test_zz_effectivity_finest_square_q4():
    rep = sequence("square4", "Q4")[-1][3]
    assert 0.8 <= rep.theta_zz <= 1.2


# -- E1, E2, E3 -----------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="E1 under-estimates the recovered error by more "
                   "than a factor of 4 on the coarse square meshes (theta 0.12 to 0.19)")
def test_E1_within_factor_four_on_square():
    for *_, rep in sequence("square4", "Q4"):
        assert 0.25 <= rep.E1 / rep.exact_estar2 <= 4


def test_E1_sign_is_not_clamped():
    # the pipe Q8 recovery is equilibrated up to a defect whose work is negative
    reps = [rep for *_, rep in sequence("pipe", "Q8")]
    assert any(r.E1 < 0 for r in reps)
    for r in reps:
        assert r.E2 * (1 + 1e-12) >= abs(r.E1)


def test_single_element_E2_equals_abs_E1():
    sol = get_benchmark("square4")
    fe = assemble_and_solve(sol.mesh(1, "Q4"), sol.material, sol.load_case())
    rec = recover(fe)
    E2, per = indicator_E2(fe, rec)
    assert len(per) == 1
    assert math.isclose(E2, abs(indicator_E1(fe, rec)), rel_tol=1e-12)


@pytest.mark.parametrize("name,order", SMOOTH + [("lshape", "Q4"), ("lshape", "Q8")])
@pytest.mark.parametrize("hanging", [False, True])
def test_estimator_chain(name, order, hanging):
    _, fe, rec = solved(name, order, 4, hanging)
    rep = estimate(fe, rec)
    slack = 1e-12 * max(rep.E3, 1e-300)
    assert rep.E3 + slack >= rep.E2
    assert rep.E2 + slack >= abs(rep.E1)
    assert np.all(rep.E3_elem + 1e-12 * rep.E3 >= rep.E2_elem)
    assert math.isclose(rep.E3, math.fsum(rep.E3_elem), rel_tol=1e-12)
    assert math.isclose(rep.E2, math.fsum(rep.E2_elem), rel_tol=1e-12)
    assert len(rep.zz2_elem) == len(rep.E3_elem) == fe.mesh.n_elements


def test_standalone_indicators_match_report():
    _, fe, rec = solved("pipe", "Q4", 4, hanging=True)
    rep = estimate(fe, rec)
    assert math.isclose(indicator_E1(fe, rec), rep.E1, rel_tol=1e-12)
    assert math.isclose(indicator_E2(fe, rec)[0], rep.E2, rel_tol=1e-12)
    assert math.isclose(indicator_E3(fe, rec)[0], rep.E3, rel_tol=1e-12)
    assert math.isclose(upper_bound_EUB(fe, rec), rep.EUB, rel_tol=1e-12)


@pytest.mark.xfail(strict=True, reason="theta(E2) is 0.11 on the coarsest pipe Q4 mesh; "
                   "the recovered error there is dominated by the curved boundary")
def test_pipe_q4_E2_effectivity():
    for *_, rep in sequence("pipe", "Q4"):
        assert 0.3 <= rep.theta["E2"] <= 3


@pytest.mark.xfail(strict=True, reason="theta(E3) grows like 1/h because the recovered "
                   "error is superconvergent while E3 is not (3.27 on the finest mesh)")
def test_square_q4_E3_effectivity_finest():
    rep = sequence("square4", "Q4")[-1][3]
    assert 0.7 <= rep.theta["E3"] <= 1.4


# -- upper bound ----------------------------------------------------------------------

def test_EUB_quadruples_under_doubled_load():
    sol = get_benchmark("pipe")
    mesh = sol.mesh(4, "Q4")
    vals = []
    for factor in (1.0, 2.0):
        fe = assemble_and_solve(mesh, sol.material, sol.load_case().scaled(factor))
        vals.append(upper_bound_EUB(fe, recover(fe)))
    assert math.isclose(vals[1], 4 * vals[0], rel_tol=1e-9)


def test_EUB_bounds_exact_recovered_error_on_square():
    for *_, rep in sequence("square4", "Q4"):
        assert rep.EUB >= rep.exact_estar2


# -- exact errors ---------------------------------------------------------------------

def test_exact_per_element_sums():
    _, fe, rec = solved("pipe", "Q8", 2, hanging=True)
    ex = exact_errors(fe, rec, get_benchmark("pipe"))
    assert math.isclose(ex["e2"], math.fsum(ex["e2_elem"]), rel_tol=1e-12)
    assert math.isclose(ex["estar2"], math.fsum(ex["estar2_elem"]), rel_tol=1e-12)


def test_exact_error_without_recovery():
    _, fe, _ = solved("square4", "Q4", 4)
    ex = exact_errors(fe, None, get_benchmark("square4"))
    assert "estar2" not in ex and ex["e2"] > 0


def test_pipe_q8_exact_error_rate():
    e2 = [rep.exact_e2 for *_, rep in sequence("pipe", "Q8")]
    for a, b in zip(e2, e2[1:]):
        # 2^(2p) = 16 for quadratic elements, loosened for the pre-asymptotic coarse mesh
        assert 8 <= a / b <= 32


def test_exact_energy_quadrature_stable():
    sol = get_benchmark("pipe")
    mesh = sol.mesh(2, "Q8")
    vals = []
    for order in (10, 12):
        ps = element_points(mesh, order)
        s = sol.stress(ps.x)
        vals.append(ps.integrate(np.einsum("pi,ij,pj->p", s, sol.material.S, s) * ps.weight))
    assert math.isclose(vals[0], vals[1], rel_tol=1e-8)


# -- error bound -----------------------------------------------------------------------

@pytest.mark.parametrize("i", [0, 1, 2])
def test_bound_check_on_square(i):
    _, fe, rec, _ = sequence("square4", "Q4")[i]
    b = bound_check_eq11(fe, rec, get_benchmark("square4"))
    assert b["satisfied"]
    assert abs((b["rhs"] - b["lhs"]) - b["square"]) <= 1e-8 * abs(b["rhs"])


# -- reporting ------------------------------------------------------------------------

def test_report_csv_and_json():
    rep = sequence("square4", "Q4")[0][3]
    row = rep.csv_row()
    assert tuple(row) == CSV_COLUMNS
    assert row["theta_E3"] == rep.E3 / rep.exact_estar2
    assert math.isclose(row["theta_E3_sqrt"] ** 2, row["theta_E3"], rel_tol=1e-12)
    d = json.loads(rep.to_json())
    assert len(d["E3_elem"]) == rep.n_elements
    assert d["theta"]["E3"] == row["theta_E3"]


def test_report_without_exact_has_no_theta():
    _, fe, rec = solved("square4", "Q4", 2)
    rep = estimate(fe, rec)
    assert rep.exact_e2 is None
    assert all(v is None for v in rep.theta.values())


def test_spearman():
    a = np.arange(10.0)
    assert spearman(a, a ** 3) == pytest.approx(1.0)
    assert spearman(a, -a) == pytest.approx(-1.0)
