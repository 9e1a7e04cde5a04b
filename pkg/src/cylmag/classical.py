"""Classical Hamiltonian flow and Poisson brackets in the catalog fields.

States are canonical Cartesian pairs ``(q, p)``; the covariant momentum is
``p + A(q)``.  Units follow the charge convention ``e = -1``, ``m = 1``, so
the Hamiltonian is ``H = |p + A|^2 / 2 + W`` and the Lorentz force reads
``dv/dt = -v x B - grad W``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from . import geometry as geo
from .errors import AxisApproach, StepFailure
from .fields import Domain, IntegralCoefficients, Leading, SystemSpec
from .symbolic import X, Y, Z

PX, PY, PZ = sp.symbols("p_x p_y p_z", real=True)
PHASE = (X, Y, Z, PX, PY, PZ)


@dataclass(frozen=True)
class PhaseState:
    """A batch of canonical states; ``q`` and ``p`` have shape ``(n, 3)``."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.atleast_2d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "p", np.atleast_2d(np.asarray(self.p, dtype=float)))

    @property
    def position(self) -> geo.CartPoint:
        return geo.CartPoint.from_array(self.q)

    def __len__(self):
        return len(self.q)

    def as_vector(self) -> np.ndarray:
        """Flatten a single state to ``(x, y, z, px, py, pz)``."""
        return np.concatenate([self.q[0], self.p[0]])

    @classmethod
    def from_vector(cls, y) -> "PhaseState":
        y = np.asarray(y, dtype=float)
        return cls(y[..., :3], y[..., 3:])

    @classmethod
    def sample(cls, domain: Domain, n: int, rng: np.random.Generator, p_max: float = 2.0) -> "PhaseState":
        return cls(domain.sample_cart(n, rng), rng.uniform(-p_max, p_max, (n, 3)))


class Observable:
    """Phase-space function with value and gradient oracles.

    ``fn(q, p)`` returns ``(value, dq, dp)`` for ``(n, 3)`` inputs.
    """

    def __init__(self, name: str, fn: Callable):
        self.name = name
        self._fn = fn

    def evaluate(self, state: PhaseState):
        return self._fn(state.q, state.p)

    def value(self, state: PhaseState) -> np.ndarray:
        return self.evaluate(state)[0]

    def gradient(self, state: PhaseState):
        _, dq, dp = self.evaluate(state)
        return dq, dp

    def __repr__(self):
        return f"Observable({self.name})"


def finite_difference_gradient(obs: Observable, state: PhaseState, rel_step: float = 1e-5):
    """4th-order central-difference gradient with step ``rel_step * max(1, |coordinate|)``."""
    y = np.concatenate([state.q, state.p], axis=1)
    grad = np.zeros_like(y)
    for j in range(6):
        h = rel_step * np.maximum(1.0, np.abs(y[:, j]))
        acc = 0.0
        for k, w in ((1, 8.0), (2, -1.0)):
            up, dn = y.copy(), y.copy()
            up[:, j] += k * h
            dn[:, j] -= k * h
            acc = acc + w * (obs.value(PhaseState.from_vector(up)) - obs.value(PhaseState.from_vector(dn)))
        grad[:, j] = acc / (12 * h)
    return grad[:, :3], grad[:, 3:]


def _gauge_jets(system: SystemSpec, q):
    A = system.gauge.cart_jets(q, 1)
    vals = np.stack([a.value for a in A], axis=-1)
    # jac[:, i, k] = d_i A_k
    jac = np.stack([np.stack([a[geo_unit(i)] for a in A], axis=-1) for i in range(3)], axis=1)
    return vals, jac


def geo_unit(i):
    return tuple(1 if j == i else 0 for j in range(3))


def hamiltonian_observable(system: SystemSpec) -> Observable:
    """Classical ``H = |p + A|^2 / 2 + W`` (the hbar^2 part of W is dropped)."""

    def fn(q, p):
        A, jac = _gauge_jets(system, q)
        Wj = system.field.W_jet(q, 1, hbar=0.0)
        v = p + A
        value = 0.5 * np.sum(v**2, axis=1) + Wj.value
        dW = np.stack([Wj[geo_unit(i)] for i in range(3)], axis=-1)
        dq = np.einsum("nik,nk->ni", jac, v) + dW
        return value, dq, v

    return Observable("H", fn)


def coefficient_observable(system: SystemSpec, coeffs: IntegralCoefficients, name: str = "X") -> Observable:
    """``leading(p^A) + s . p^A + m`` assembled from integral coefficients."""

    def fn(q, p):
        A, jac = _gauge_jets(system, q)
        P = p + A
        s = coeffs.s_cart_jets(q, 1)
        mj = coeffs.m_jet(q, 1, hbar=0.0)
        svals = np.stack([c.value for c in s], axis=-1)
        sjac = np.stack([np.stack([c[geo_unit(i)] for c in s], axis=-1) for i in range(3)], axis=1)
        value = np.sum(svals * P, axis=1) + mj.value
        dP = svals.copy()
        dq_explicit = np.einsum("nik,nk->ni", sjac, P) + np.stack([mj[geo_unit(i)] for i in range(3)], axis=-1)
        x, y = q[:, 0], q[:, 1]
        if coeffs.leading is Leading.PPHI_SQUARED:
            lz = x * P[:, 1] - y * P[:, 0]
            value = value + lz**2
            dP[:, 0] += -2 * lz * y
            dP[:, 1] += 2 * lz * x
            dq_explicit[:, 0] += 2 * lz * P[:, 1]
            dq_explicit[:, 1] += -2 * lz * P[:, 0]
        elif coeffs.leading is Leading.PZ_SQUARED:
            value = value + P[:, 2] ** 2
            dP[:, 2] += 2 * P[:, 2]
        dq = dq_explicit + np.einsum("nik,nk->ni", jac, dP)
        return value, dq, dP

    return Observable(name, fn)


class SymbolicObservable(Observable):
    """Observable from a sympy expression in ``(x, y, z, p_x, p_y, p_z)``."""

    def __init__(self, name: str, expr, params: dict | None = None):
        params = params or {}
        syms = tuple(sorted(params, key=lambda s: s.name))
        compiled = _lambdify_with_gradient(sp.sympify(expr), syms)
        pvals = [params[s] for s in syms]

        def fn(q, p):
            out = compiled(q[:, 0], q[:, 1], q[:, 2], p[:, 0], p[:, 1], p[:, 2], *pvals)
            n = len(q)
            out = [np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in out]
            return out[0], np.stack(out[1:4], axis=-1), np.stack(out[4:7], axis=-1)

        super().__init__(name, fn)
        self.expr = expr


@lru_cache(maxsize=None)
def _lambdify_with_gradient(expr, params):
    exprs = [expr] + [sp.diff(expr, v) for v in PHASE]
    return sp.lambdify(PHASE + params, exprs, modules="numpy", cse=True)


def system_i_x1_expression():
    """Cartesian X1 of SYSTEM_I written out directly, with its parameter symbols."""
    rho1, rho2, psi1, psi2, W0 = sp.symbols("rho1 rho2 psi1 psi2 W0", real=True)
    r2 = X**2 + Y**2
    # A = A_phi dphi with A_phi = rho1 r^2 / 2 - 3 rho2 r^4 / 2
    ax = -Y * (rho1 / 2 - 3 * rho2 * r2 / 2)
    ay = X * (rho1 / 2 - 3 * rho2 * r2 / 2)
    pax, pay = PX + ax, PY + ay
    lz = X * pay - Y * pax
    expr = (lz**2 + (3 * rho2 * r2**2 - rho1 * r2 + W0) * lz - psi2 * pax + psi1 * pay
            + (2 * rho2 * r2 - rho1) * (psi1 * X + psi2 * Y)
            + sp.Rational(1, 4) * (3 * rho2 * r2**2 - rho1 * r2 + 2 * W0) * (3 * rho2 * r2 - rho1) * r2)
    return expr, (rho1, rho2, psi1, psi2, W0)


def integral_observable(system: SystemSpec, which: str = "X1", direct: bool = True) -> Observable:
    """Classical integral ``X1``, ``X2`` or ``X2_FULL``.

    For X1 of the SYSTEM_I family the explicit Cartesian formula is used when
    ``direct`` is set (and the system is in its catalog gauge); otherwise the
    integral is assembled from the cylindrical coefficients.
    """
    which = which.upper()
    coeffs = system.integral(which)
    key = system.symbolic.key
    if direct and which == "X1" and key in ("SYSTEM_I", "SYSTEM_III/I"):
        expr, syms = system_i_x1_expression()
        return SymbolicObservable("X1", expr, {s: system.params[s.name] for s in syms})
    return coefficient_observable(system, coeffs, which)


def poisson_bracket(f: Observable, g: Observable, state: PhaseState, with_scale: bool = False):
    """``{f, g} = sum_j df/dx_j dg/dp_j - df/dp_j dg/dx_j``.

    With ``with_scale`` also returns ``|grad f| |grad g|``, which bounds the
    bracket and serves as the normaliser of a relative residual.
    """
    fq, fp = f.gradient(state)
    gq, gp = g.gradient(state)
    bracket = np.sum(fq * gp - fp * gq, axis=1)
    if with_scale:
        norm = lambda a, b: np.sqrt(np.sum(a**2, axis=1) + np.sum(b**2, axis=1))  # noqa: E731
        return bracket, norm(fq, fp) * norm(gq, gp)
    return bracket


def relative_bracket(f: Observable, g: Observable, state: PhaseState) -> np.ndarray:
    """``|{f, g}| / (|grad f| |grad g|)`` (0 where a gradient vanishes)."""
    bracket, scale = poisson_bracket(f, g, state, with_scale=True)
    return np.divide(np.abs(bracket), scale, out=np.abs(bracket), where=scale > 0)


def equations_of_motion(system: SystemSpec) -> Callable:
    """Hamilton's equations as a map ``state -> (qdot, pdot)``."""
    H = hamiltonian_observable(system)

    def rhs(state: PhaseState):
        dq, dp = H.gradient(state)
        return dp, -dq

    return rhs


def lorentz_acceleration(system: SystemSpec, q, v) -> np.ndarray:
    """``-v x B - grad W`` for unit negative charge (independent check of the flow)."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    B = system.field.B_cart(q)
    Wj = system.field.W_jet(q, 1, hbar=0.0)
    dW = np.stack([Wj[geo_unit(i)] for i in range(3)], axis=-1)
    return -np.cross(v, B) - dW


def velocity_derivative(system: SystemSpec, state: PhaseState) -> np.ndarray:
    """dv/dt of ``v = p + A(q)`` along Hamilton's flow."""
    qdot, pdot = equations_of_motion(system)(state)
    _, jac = _gauge_jets(system, state.q)
    return pdot + np.einsum("nik,ni->nk", jac, qdot)


@dataclass
class TrajectoryRecord:
    """Sampled trajectory with the conserved quantities along it."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    H: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    status: str = "ok"
    message: str = ""
    rtol: float = 1e-10
    atol: float = 1e-12
    nfev: int = 0
    extra: dict = field(default_factory=dict)

    def drift(self, name: str) -> np.ndarray:
        """``|Q(t) - Q(0)| / max(1, |Q(0)|)``."""
        values = getattr(self, name)
        return np.abs(values - values[0]) / max(1.0, abs(values[0]))

    def max_drift(self) -> dict:
        return {k: float(np.max(self.drift(k))) for k in ("H", "X1", "X2")}


def _first_axis_crossing(dense, knots, r_stop: float, per_step: int = 32):
    radius = lambda t: float(np.hypot(*dense(t)[:2]) - r_stop)  # noqa: E731
    for a, b in zip(knots[:-1], knots[1:]):
        grid = np.linspace(a, b, per_step + 1)
        r = np.hypot(*dense(grid)[:2]) - r_stop
        # refine every local minimum of the sampled radius
        for k in range(len(grid)):
            if (k > 0 and r[k] > r[k - 1]) or (k + 1 < len(grid) and r[k] > r[k + 1]):
                continue
            lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
            opt = minimize_scalar(radius, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
            t_min = float(opt.x) if opt.fun < r[k] else float(grid[k])
            if radius(t_min) < 0:
                return float(brentq(radius, lo, t_min)) if radius(lo) > 0 else float(lo)
    return None


def integrate_trajectory(system: SystemSpec, initial: PhaseState, t_end: float = 10.0, n_out: int = 201,
                         rtol: float = 1e-10, atol: float = 1e-12, method: str = "DOP853",
                         r_stop: float = 1e-2, raise_on_axis: bool = True) -> TrajectoryRecord:
    """Integrate Hamilton's equations from a single state.

    Integration stops if the trajectory comes within ``r_stop`` of the axis;
    this raises :class:`AxisApproach` (carrying the partial record as
    ``.record``) unless ``raise_on_axis`` is false, in which case the record
    is returned with ``status = "axis_approach"``.
    """
    y0 = initial.as_vector()
    geo.check_off_axis(np.hypot(y0[0], y0[1]), r_stop)
    H = hamiltonian_observable(system)
    X1 = integral_observable(system, "X1")
    X2 = integral_observable(system, "X2")

    def rhs(_, y):
        dq, dp = H.gradient(PhaseState(y[:3], y[3:]))
        return np.concatenate([dp[0], -dq[0]])

    def axis(_, y):
        return np.hypot(y[0], y[1]) - r_stop

    axis.terminal = True
    axis.direction = -1
    t_eval = np.linspace(0.0, t_end, n_out)
    sol = solve_ivp(rhs, (0.0, t_end), y0, method=method, rtol=rtol, atol=atol, t_eval=t_eval, events=axis,
                    dense_output=True)
    if sol.status == -1:
        raise StepFailure(sol.message)
    t_hit = float(sol.t_events[0][0]) if sol.status == 1 else None
    # long steps can jump over the axis without a sign change of the event; scan the interpolant
    t_scan = _first_axis_crossing(sol.sol, sol.sol.ts, r_stop)
    if t_scan is not None and (t_hit is None or t_scan < t_hit):
        t_hit = t_scan
    ts, ys = sol.t, sol.y.T
    status, message = "ok", ""
    if t_hit is not None:
        keep = ts < t_hit
        ts = np.append(ts[keep], t_hit)
        ys = np.vstack([ys[keep], sol.sol(t_hit)])
        status, message = "axis_approach", f"trajectory reached r = {r_stop:g} at t = {t_hit:.6g}"
    states = PhaseState(ys[:, :3], ys[:, 3:])
    record = TrajectoryRecord(ts, states.q, states.p, H.value(states), X1.value(states), X2.value(states),
                              status, message, rtol, atol, int(sol.nfev))
    if status == "axis_approach" and raise_on_axis:
        err = AxisApproach(message)
        err.record = record
        raise err
    return record
