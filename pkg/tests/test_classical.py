import numpy as np
import pytest
import sympy as sp

from cylmag.classical import (
    Observable,
    PhaseState,
    TrajectoryRecord,
    coefficient_observable,
    finite_difference_gradient,
    hamiltonian_observable,
    integral_observable,
    integrate_trajectory,
    lorentz_acceleration,
    poisson_bracket,
    relative_bracket,
    velocity_derivative,
)
from cylmag.errors import AxisApproach, AxisPoint
from cylmag.fields import catalog_system
from cylmag.symbolic import R_SYM, PHI_SYM, ZC_SYM

SYSTEMS = ["system_i", "system_ii", "system_iii", "system_iii_base_ii", "uniform", "free"]
AT_R1 = PhaseState([[1.0, 0.0, 0.0]], [[0.0, 0.0, 0.0]])


def observables(system):
    return {
        "H": hamiltonian_observable(system),
        "X1": integral_observable(system, "X1"),
        "X2": integral_observable(system, "X2"),
    }


@pytest.fixture
def states(rng):
    def make(system, n=200):
        return PhaseState.sample(system.domain, n, rng)
    return make


def test_uniform_field_hamiltonian(uniform):
    # A = (0, b/2, 0) at (1, 0, 0) so H = b^2 / 8
    assert hamiltonian_observable(uniform).value(AT_R1)[0] == pytest.approx(0.8**2 / 8, abs=1e-15)


def test_system_i_reference_values(system_i):
    # hand-evaluated: L^A = 0.35, X1 = 0.1225 + 0.105 + 0.175 - 0.6275
    assert hamiltonian_observable(system_i).value(AT_R1)[0] == pytest.approx(-0.09875, abs=1e-15)
    assert integral_observable(system_i, "X1").value(AT_R1)[0] == pytest.approx(-0.225, abs=1e-14)
    assert integral_observable(system_i, "X1", direct=False).value(AT_R1)[0] == pytest.approx(-0.225, abs=1e-14)


@pytest.mark.parametrize("name", SYSTEMS)
@pytest.mark.parametrize("pair", [("H", "X1"), ("H", "X2"), ("X1", "X2")])
def test_brackets_vanish(name, pair, states, request):
    system = request.getfixturevalue(name)
    obs = observables(system)
    rel = relative_bracket(obs[pair[0]], obs[pair[1]], states(system))
    assert np.max(rel) < 1e-8


@pytest.mark.parametrize("name", ["system_i", "system_ii", "uniform"])
def test_full_second_order_x2_is_also_an_integral(name, states, request):
    system = request.getfixturevalue(name)
    H = hamiltonian_observable(system)
    rel = relative_bracket(H, integral_observable(system, "X2_FULL"), states(system))
    assert np.max(rel) < 1e-8


def test_bracket_detects_wrong_integral(system_i, states):
    wrong = catalog_system("SYSTEM_I", {"rho1": 1.2})
    H = hamiltonian_observable(system_i)
    rel = relative_bracket(H, integral_observable(wrong, "X1"), states(system_i))
    assert np.max(rel) > 1e-3


def coordinate(k):
    def fn(q, p):
        y = np.concatenate([q, p], axis=1)
        grad = np.zeros_like(y)
        grad[:, k] = 1.0
        return y[:, k], grad[:, :3], grad[:, 3:]
    return Observable(f"y{k}", fn)


def test_canonical_bracket(free, states):
    s = states(free, 10)
    pick = coordinate
    assert np.allclose(poisson_bracket(pick(0), pick(3), s), 1.0)
    assert np.allclose(poisson_bracket(pick(3), pick(0), s), -1.0)
    assert np.allclose(poisson_bracket(pick(0), pick(4), s), 0.0)


@pytest.mark.parametrize("which", ["X1", "X2_FULL"])
def test_direct_and_assembled_x1_agree(system_i, states, which):
    s = states(system_i)
    direct = integral_observable(system_i, which)
    assembled = coefficient_observable(system_i, system_i.integral(which))
    assert np.allclose(direct.value(s), assembled.value(s), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", ["system_i", "system_ii", "system_iii"])
def test_gradients_match_finite_differences(name, states, request):
    system = request.getfixturevalue(name)
    s = states(system, 20)
    for obs in observables(system).values():
        dq, dp = obs.gradient(s)
        fq, fp = finite_difference_gradient(obs, s)
        scale = max(1.0, np.max(np.abs(obs.value(s))))
        assert np.allclose(dq, fq, atol=1e-7 * scale) and np.allclose(dp, fp, atol=1e-7 * scale), obs


@pytest.mark.parametrize("name", ["system_i", "system_ii", "system_iii"])
def test_hamilton_flow_is_lorentz_force(name, states, request):
    system = request.getfixturevalue(name)
    s = states(system, 50)
    v = s.p + system.gauge.A_cart(s.q)
    assert np.allclose(velocity_derivative(system, s), lorentz_acceleration(system, s.q, v), atol=1e-12)


def test_uniform_field_helix(uniform):
    # b = 0.8, v0 = (0, 0.4, 0.3): circle of radius 0.5 about (1, 0) with angular rate b
    b = 0.8
    rec = integrate_trajectory(uniform, PhaseState([[1.5, 0.0, 0.0]], [[0.0, -0.2, 0.3]]), t_end=10.0)
    c = 1.0 + 0.5 * np.exp(1j * (b * rec.t))
    assert np.allclose(rec.q[:, 0], c.real, atol=1e-8)
    assert np.allclose(rec.q[:, 1], c.imag, atol=1e-8)
    assert np.allclose(rec.q[:, 2], 0.3 * rec.t, atol=1e-8)


def test_gauge_change_preserves_positions(system_i):
    chi = (R_SYM * sp.cos(PHI_SYM)) ** 2 / 3 + ZC_SYM**2
    moved = system_i.regauged(chi)
    q0 = np.array([[1.2, 0.3, 0.1]])
    p0 = np.array([[0.2, -0.3, 0.5]])
    # same initial velocity: p' = p - grad chi
    x, y, z = q0[0]
    grad = np.array([[2 * x / 3, 0.0, 2 * z]])
    a = integrate_trajectory(system_i, PhaseState(q0, p0), t_end=5.0)
    b = integrate_trajectory(moved, PhaseState(q0, p0 - grad), t_end=5.0)
    assert np.allclose(a.q, b.q, atol=1e-8)


def test_system_iii_longitudinal_motion_decouples(system_iii):
    rec = integrate_trajectory(system_iii, PhaseState([[1.2, 0.3, 0.4]], [[0.2, -0.3, 0.5]]), t_end=10.0)
    assert np.allclose(rec.q[:, 2], 0.4 * np.cos(rec.t) + 0.5 * np.sin(rec.t), atol=1e-8)


@pytest.mark.parametrize("name", ["system_i", "system_ii", "system_iii"])
def test_invariants_conserved(name, request):
    system = request.getfixturevalue(name)
    init = PhaseState([[1.2, 0.3, 0.1]], [[0.2, -0.3, 0.5]])
    rec = integrate_trajectory(system, init, t_end=5.0)
    assert rec.status == "ok"
    assert max(rec.max_drift().values()) < 1e-8


def test_drift_normalisation():
    rec = TrajectoryRecord(np.arange(3.0), None, None, np.array([0.5, 0.6, 0.4]), np.array([10.0, 10.0, 11.0]),
                           np.zeros(3))
    assert rec.drift("H") == pytest.approx([0.0, 0.1, 0.1])
    assert rec.drift("X1") == pytest.approx([0.0, 0.0, 0.1])


def test_axis_approach_raises_with_record(free):
    with pytest.raises(AxisApproach) as info:
        integrate_trajectory(free, PhaseState([[1.0, 0.0, 0.0]], [[-1.0, 0.0, 0.0]]), t_end=5.0)
    rec = info.value.record
    assert rec.status == "axis_approach"
    assert rec.t[-1] == pytest.approx(0.99, abs=1e-9)


def test_axis_approach_can_be_reported(free):
    rec = integrate_trajectory(free, PhaseState([[1.0, 0.0, 0.0]], [[-1.0, 0.0, 0.0]]), t_end=5.0,
                               raise_on_axis=False)
    assert rec.status == "axis_approach"
    assert np.hypot(*rec.q[-1, :2]) == pytest.approx(1e-2, abs=1e-9)


def test_start_on_axis_rejected(free):
    with pytest.raises(AxisPoint):
        integrate_trajectory(free, PhaseState([[1e-3, 0.0, 0.0]], [[1.0, 0.0, 0.0]]))


def test_phase_state_round_trip():
    s = PhaseState.from_vector(np.arange(6.0))
    assert np.array_equal(s.as_vector(), np.arange(6.0))
    assert len(s) == 1
