import warnings

import numpy as np
import pytest
import sympy as sp

from cylmag.beta import BetaParams, beta_closed_form, closed_form_initial_data, solve_beta_ivp
from cylmag.errors import AxisPoint, GaugeInconsistency, InvalidParams, MissingBetaSolution
from cylmag.fields import (
    AuxFunctions,
    Domain,
    FieldConfiguration,
    Leading,
    catalog_system,
    curl_mismatch,
    field_from_aux,
    gauge_for_field,
    s_from_aux,
    w3_library,
)
from cylmag.geometry import CylPoint
from cylmag.symbolic import R_SYM, PHI_SYM, ZC_SYM, T_SYM

ORIGIN_R1 = CylPoint(np.array([1.0]), np.array([0.0]), np.array([0.0]))


@pytest.fixture
def points(rng):
    return Domain().sample(50, rng)


@pytest.mark.parametrize("name", ["system_i", "system_ii", "system_iii", "system_iii_base_ii"])
def test_field_matches_auxiliary_functions(name, points, request):
    system = request.getfixturevalue(name)
    got = system.field.B(points).as_array()
    want = field_from_aux(system.aux, points).as_array()
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", ["system_i", "system_ii"])
def test_first_order_coefficients_match_auxiliary_functions(name, points, request):
    system = request.getfixturevalue(name)
    s1, s2 = s_from_aux(system.aux, points)
    assert np.allclose(system.x1.s(points).as_array(), s1.as_array(), atol=1e-12)
    assert np.allclose(system.x2_full.s(points).as_array(), s2.as_array(), atol=1e-12)


@pytest.mark.parametrize("name", ["system_i", "system_ii", "system_iii", "system_iii_base_ii", "uniform"])
def test_catalog_gauge_curl(name, rng, request):
    system = request.getfixturevalue(name)
    pts = system.domain.sample_cart(40, rng)
    assert curl_mismatch(system.field.B_cart, system.gauge.A_cart, pts) < 1e-8


def test_system_i_values_at_reference_point(system_i):
    # hand-evaluated at r = 1, phi = 0 with the default parameters
    assert system_i.field.W(ORIGIN_R1)[0] == pytest.approx(-0.16, abs=1e-15)
    assert system_i.x1.m(ORIGIN_R1)[0] == pytest.approx(-0.6275, abs=1e-15)
    assert system_i.gauge.A(ORIGIN_R1).as_tuple() == pytest.approx((0.0, 0.35, 0.0), abs=1e-15)


def test_system_i_has_no_quantum_correction(system_i, points):
    assert np.array_equal(system_i.field.W(points, hbar=0.0), system_i.field.W(points, hbar=2.0))


def test_system_ii_quantum_correction(system_ii, points):
    sol = beta_closed_form(BetaParams(-8.0, -0.5))
    b = sol(points.phi)
    r = points.r
    expected = (-8.0 * b**4 + 6.0 * b**2) / (32 * r**2 * b**6)
    for hbar in (0.5, 1.0, 2.0):
        diff = system_ii.field.W(points, hbar) - system_ii.field.W(points, 0.0)
        assert np.allclose(diff, hbar**2 * expected, rtol=1e-12, atol=1e-14)
    off = system_ii.with_hbar_correction(False)
    assert np.array_equal(off.field.W(points, 1.0), off.field.W(points, 0.0))


def test_system_ii_numeric_beta_agrees_with_closed(points):
    p = BetaParams(-8.0, -0.5)
    sol = solve_beta_ivp(p.f1, closed_form_initial_data(p, 0.0), span=2 * np.pi)
    numeric = catalog_system("SYSTEM_II", {"beta1": sol.params.beta1, "beta2": sol.params.beta2}, beta=sol)
    closed = catalog_system("SYSTEM_II", beta="closed")
    assert np.allclose(numeric.field.B(points).as_array(), closed.field.B(points).as_array(), atol=1e-7)


def test_integral_leading_terms(system_i, system_iii):
    assert system_i.x1.leading is Leading.PPHI_SQUARED
    assert system_i.x2.leading is Leading.NONE
    assert system_i.x2_full.leading is Leading.PZ_SQUARED
    assert system_iii.x2.leading is Leading.PZ_SQUARED


def test_system_iii_adds_w3(system_iii, points):
    base = catalog_system("SYSTEM_I", {"sigma0": 0.0})
    extra = system_iii.field.W(points) - base.field.W(points)
    assert np.allclose(extra, points.Z**2 / 2, atol=1e-13)
    assert np.allclose(system_iii.x2.m(points), points.Z**2, atol=1e-13)


def test_regauged_system_keeps_field(system_i, points):
    chi = R_SYM**2 * sp.sin(PHI_SYM) + ZC_SYM**3
    moved = system_i.regauged(chi)
    assert np.allclose(moved.field.B(points).as_array(), system_i.field.B(points).as_array(), atol=1e-13)
    dA = moved.gauge.A(points).as_array() - system_i.gauge.A(points).as_array()
    r, phi, z = points
    grad = np.stack([2 * r * np.sin(phi), r**2 * np.cos(phi), 3 * z**2], axis=-1)
    assert np.allclose(dA, grad, atol=1e-13)


def test_missing_beta():
    with pytest.raises(MissingBetaSolution):
        catalog_system("SYSTEM_II")
    with pytest.raises(MissingBetaSolution):
        catalog_system("SYSTEM_III", base="II")


@pytest.mark.parametrize("kwargs", [
    {"system_id": "SYSTEM_I", "params": {"rho2": 0.0}},
    {"system_id": "SYSTEM_I", "params": {"nonsense": 1.0}},
    {"system_id": "SYSTEM_I", "params": {"W0": float("nan")}},
    {"system_id": "SYSTEM_III", "params": {"sigma0": 1.0}},
    {"system_id": "SYSTEM_III", "params": {"tau1": 0.3}, "base": "II", "beta": "closed"},
    {"system_id": "SYSTEM_III", "base": "IV"},
    {"system_id": "SYSTEM_II", "params": {"f1": -6.0}, "beta": beta_closed_form(BetaParams(-8.0, -0.5))},
    {"system_id": "SYSTEM_II", "params": {"beta1": -0.4}, "beta": beta_closed_form(BetaParams(-8.0, -0.5))},
    {"system_id": "SYSTEM_II", "beta": "open"},
])
def test_invalid_catalog_requests(kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(InvalidParams):
            catalog_system(**kwargs)


def test_zero_usually_nonzero_param_warns():
    with pytest.warns(UserWarning, match="W0"):
        catalog_system("SYSTEM_I", {"W0": 0.0})


@pytest.mark.parametrize("kind, t, value", [
    ("ZERO", 1.5, 0.0),
    ("HARMONIC", 2.0, 2.0),
    ("LINEAR", 3.0, 3.0),
])
def test_w3_library(kind, t, value):
    assert float(w3_library(kind)(np.array(t))) == pytest.approx(value)


def test_harmonic_frequency():
    d = w3_library("HARMONIC", omega=3.0).derivatives(np.array([1.0]), 2)
    assert [float(v[0]) for v in d] == pytest.approx([4.5, 9.0, 9.0])


def test_domain_sampling_bounds(rng):
    dom = Domain(r_min=1.0, r_max=2.0, z_min=0.0, z_max=0.5)
    at = dom.sample(500, rng)
    assert at.r.min() >= 1.0 and at.r.max() <= 2.0
    assert at.Z.min() >= 0.0 and at.Z.max() <= 0.5
    xyz = dom.sample_cart(10, rng)
    assert xyz.shape == (10, 3)


def test_quadrature_gauge_for_auxiliary_field(rng):
    aux = AuxFunctions.from_exprs(psi=sp.sin(T_SYM), rho=T_SYM**2, mu=T_SYM / 3, sigma=T_SYM, tau=sp.cos(T_SYM) + 2)
    field = FieldConfiguration.from_aux(aux)
    dom = Domain(r_min=0.8, r_max=1.5, phi_min=0.2, phi_max=1.2, z_min=-0.5, z_max=0.5)
    gauge = gauge_for_field(field, dom, r0=1.0, phi0=0.5, check_points=3)
    assert not gauge.closed_form
    pts = dom.sample_cart(3, rng)
    assert curl_mismatch(field.B_cart, gauge.A_cart, pts) < 1e-8


def test_non_closed_field_rejected():
    field = FieldConfiguration(lambda at: (0 * at.r, 0 * at.r, at.r * at.Z))
    dom = Domain(r_min=0.8, r_max=1.5, phi_min=0.2, phi_max=1.2, z_min=0.2, z_max=0.5)
    with pytest.raises(GaugeInconsistency):
        gauge_for_field(field, dom, r0=1.0, check_points=2)


def test_catalog_gauge_is_returned(system_i):
    assert gauge_for_field(system_i.field) is system_i.gauge


def test_axis_points_rejected(system_i):
    with pytest.raises(AxisPoint):
        system_i.field.B(CylPoint(np.array([0.0]), np.array([0.0]), np.array([0.0])))
