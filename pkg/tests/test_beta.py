import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cylmag.beta import (
    BetaKind,
    BetaParams,
    beta_closed_form,
    beta_residual1,
    beta_residual3,
    closed_form_initial_data,
    first_integrals,
    solve_beta_ivp,
)
from cylmag.errors import BetaVanishing, DomainError, InvalidParams

PARAMS = BetaParams(f1=-8.0, beta1=-0.5)


@pytest.fixture(scope="module")
def closed():
    return beta_closed_form(PARAMS)


def test_constant_state_is_a_solution():
    assert beta_residual3((2.0, 0.0, 0.0, 0.0), -3.0) == 0.0


def test_inconsistent_state_residual():
    # beta = 1, beta' = 0, f1 = 0 with beta1 = beta2 = 0 leaves 4 beta^6 = 4
    assert beta_residual1((1.0, 0.0), BetaParams(f1=0.0)) == pytest.approx(4.0)


def test_first_integrals_of_constant_state():
    b1, b2 = first_integrals((1.0, 0.0, 0.0), -4.0)
    assert (b1, b2) == pytest.approx((1.0, -4.0))


def test_first_integrals_reject_zero():
    with pytest.raises(ZeroDivisionError):
        first_integrals((0.0, 1.0, 0.0), -4.0)


def test_constant_initial_data_stays_constant():
    sol = solve_beta_ivp(-4.0, (1.0, 0.0, 0.0), span=3.0)
    phi = np.linspace(0, 3, 31)
    assert np.allclose(sol(phi), 1.0, atol=1e-14)
    assert sol.params.beta1 == pytest.approx(1.0)


def test_closed_form_residuals_two_periods(closed):
    phi = np.linspace(0, 2 * np.pi, 2001)
    state = closed.state(phi, 3)
    assert np.max(np.abs(beta_residual3(state, PARAMS.f1))) < 1e-10
    assert np.max(np.abs(beta_residual1(state, PARAMS))) < 1e-10


def test_closed_form_carries_its_constants(closed):
    phi = np.linspace(0, 2 * np.pi, 101)
    b1, b2 = first_integrals(closed.state(phi, 2), PARAMS.f1)
    assert np.allclose(b1, PARAMS.beta1, atol=1e-12)
    assert np.allclose(b2, 0.0, atol=1e-12)


def test_closed_form_period(closed):
    phi = np.linspace(0, np.pi, 17)
    assert np.allclose(closed(phi), closed(phi + np.pi), atol=1e-14)


@pytest.mark.parametrize("params", [
    BetaParams(f1=-8.0, beta1=-0.5, beta2=0.1),
    BetaParams(f1=1.0, beta1=-0.001),
    BetaParams(f1=-8.0, beta1=-1.5),
    BetaParams(f1=-8.0, beta1=0.5),
])
def test_closed_form_validity_window(params):
    with pytest.raises(InvalidParams):
        beta_closed_form(params)


def test_ivp_matches_closed_form(closed):
    init = closed_form_initial_data(PARAMS, 0.0)
    sol = solve_beta_ivp(PARAMS.f1, init, span=2 * np.pi)
    assert sol.kind is BetaKind.NUMERIC
    phi = np.linspace(0, 2 * np.pi, 801)
    assert np.max(np.abs(sol(phi) - closed(phi))) < 1e-8
    b1, b2 = first_integrals(sol.state(phi, 2), PARAMS.f1)
    assert np.max(np.abs(b1 - sol.params.beta1)) < 1e-8
    assert np.max(np.abs(b2 - sol.params.beta2)) < 1e-8


def test_ivp_backwards(closed):
    init = closed_form_initial_data(PARAMS, 1.0)
    sol = solve_beta_ivp(PARAMS.f1, init, phi_start=1.0, span=-1.0)
    assert sol.domain == pytest.approx((0.0, 1.0))
    assert sol(0.3) == pytest.approx(float(closed(0.3)), abs=1e-8)


def test_numeric_higher_derivatives_match_closed_form(closed):
    sol = solve_beta_ivp(PARAMS.f1, closed_form_initial_data(PARAMS, 0.0), span=np.pi)
    phi = np.linspace(0.1, 3.0, 9)
    got, want = sol.derivatives(phi, 4), closed.derivatives(phi, 4)
    for k in range(5):
        assert np.allclose(got[k], want[k], atol=1e-6 * 10**k)


def test_domain_wraps_and_rejects():
    sol = solve_beta_ivp(-4.0, (1.0, 0.0, 0.0), span=1.0)
    assert sol(2 * np.pi + 0.5) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        sol(3.0)


def test_vanishing_beta_reports_partial_solution():
    with pytest.raises(BetaVanishing) as info:
        solve_beta_ivp(-8.0, (0.5, -1.0, -10.0), span=5.0)
    sol = info.value.solution
    lo, hi = sol.domain
    assert hi < 5.0
    assert float(sol(hi)) == pytest.approx(1e-4, rel=1e-3)


def test_ivp_requires_positive_beta():
    with pytest.raises(InvalidParams):
        solve_beta_ivp(-8.0, (-1.0, 0.0, 0.0))


@settings(max_examples=30, deadline=None)
@given(phi=st.floats(0, 2 * np.pi), beta1=st.floats(-0.95, -0.05))
def test_closed_form_solves_ode_property(phi, beta1):
    p = BetaParams(f1=-8.0, beta1=beta1)
    state = beta_closed_form(p).state(np.array([phi]), 3)
    scale = max(1.0, max(abs(float(s[0])) for s in state)) ** 3
    assert abs(beta_residual3(state, p.f1)[0]) < 1e-10 * scale
