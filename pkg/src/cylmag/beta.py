"""The angular profile beta(phi) of the non-separable rank-2 system.

beta solves the autonomous third-order ODE

    beta' (7 beta beta'' + 4 beta'^2 + 12 beta^2 + f1) + beta^2 beta''' = 0,

which integrates twice to

    4 beta^4 beta'^2 + 4 beta^6 - 4 b1 beta^2 + f1 beta^4 = b2

with integration constants b1, b2.  This module provides residuals of both
forms, the two first integrals, the closed-form solution available for
b2 = 0, and a numeric initial-value solver.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp

from .errors import BetaVanishing, DomainError, InvalidParams, StepFailure
from .symbolic import T_SYM, CompiledBundle

TWO_PI = 2.0 * np.pi
BETA_MIN = 1e-4


@dataclass(frozen=True)
class BetaParams:
    f1: float
    beta1: float = 0.0
    beta2: float = 0.0
    phi0: float = 0.0


class BetaKind(enum.Enum):
    CLOSED_FORM = "closed_form"
    NUMERIC = "numeric"


def beta_residual3(state, f1):
    """Residual of the third-order ODE for ``state = (b, b', b'', b''')``."""
    b, db, ddb, dddb = (np.asarray(s, dtype=float) for s in state)
    return db * (7 * b * ddb + 4 * db**2 + 12 * b**2 + f1) + b**2 * dddb


def beta_residual1(state, params: BetaParams):
    """Residual of the first-order reduced form for ``state = (b, b')``."""
    b, db = (np.asarray(s, dtype=float) for s in state[:2])
    return 4 * b**4 * db**2 + 4 * b**6 - 4 * params.beta1 * b**2 + params.f1 * b**4 - params.beta2


def first_integrals(state, f1):
    """Integration constants ``(beta1, beta2)`` carried by ``state = (b, b', b'')``."""
    b, db, ddb = (np.asarray(s, dtype=float) for s in state[:3])
    if np.any(b == 0):
        raise ZeroDivisionError("first integrals are undefined where beta = 0")
    beta1 = (4 * b**2 * db**2 + 2 * b**3 * ddb + 6 * b**4 + f1 * b**2) / 2
    beta2 = 4 * b**4 * db**2 + 4 * b**6 - 4 * beta1 * b**2 + f1 * b**4
    return beta1, beta2


def third_derivative(b, db, ddb, f1):
    """beta''' solved from the third-order ODE."""
    return -db * (7 * b * ddb + 4 * db**2 + 12 * b**2 + f1) / b**2


@lru_cache(maxsize=None)
def _higher_derivatives(n: int):
    # beta^(k) for k = 3..n as functions of (b, b', b'', f1) via the ODE
    b0, b1, b2, f1 = sp.symbols("b0 b1 b2 f1", real=True)
    d3 = -b1 * (7 * b0 * b2 + 4 * b1**2 + 12 * b0**2 + f1) / b0**2
    exprs = [d3]
    while len(exprs) < n - 2:
        e = exprs[-1]
        exprs.append(sp.together(sp.diff(e, b0) * b1 + sp.diff(e, b1) * b2 + sp.diff(e, b2) * d3))
    return sp.lambdify((b0, b1, b2, f1), exprs, modules="numpy", cse=True)


@lru_cache(maxsize=None)
def _closed_form_bundle(order: int) -> CompiledBundle:
    f1, beta1, phi0 = sp.symbols("f1 beta1 phi0", real=True)
    expr = sp.sqrt((sp.sqrt(64 * beta1 + f1**2) * sp.sin(2 * (T_SYM - phi0)) - f1) / 8)
    return CompiledBundle({"beta": expr}, (T_SYM,), (f1, beta1, phi0), order)


class BetaSolution:
    """A solution beta(phi) with derivative oracle.

    Implements the one-variable oracle protocol used throughout the package:
    ``derivatives(phi, n)`` returns ``[beta, beta', ..., beta^(n)]``.
    """

    def __init__(self, kind: BetaKind, params: BetaParams, domain=None, dense=None):
        self.kind = kind
        self.params = params
        self.domain = domain
        self._dense = dense

    @property
    def f1(self) -> float:
        return self.params.f1

    def wrap(self, phi) -> np.ndarray:
        """Shift angles by multiples of 2 pi into the solution domain."""
        phi = np.asarray(phi, dtype=float)
        if self.domain is None:
            return phi
        lo, hi = self.domain
        shifted = lo + np.mod(phi - lo, TWO_PI)
        if np.any(shifted > hi + 1e-12):
            raise DomainError(f"angle outside beta domain [{lo:.6g}, {hi:.6g}] (mod 2 pi)")
        return np.minimum(shifted, hi)

    def derivatives(self, phi, n: int = 3) -> list:
        phi = self.wrap(phi)
        if self.kind is BetaKind.CLOSED_FORM:
            p = self.params
            order = max(n, 4)
            jet = _closed_form_bundle(order)([phi], (p.f1, p.beta1, p.phi0))["beta"]
            return [jet[(k,)].reshape(phi.shape) for k in range(n + 1)]
        y = self._dense(phi.reshape(-1))
        b, db, ddb = y[0], y[1], y[2]
        out = [b, db, ddb]
        if n >= 3:
            out.extend(np.asarray(v) for v in _higher_derivatives(n)(b, db, ddb, self.f1))
        return [np.broadcast_to(v, b.shape).reshape(phi.shape) for v in out[: n + 1]]

    def __call__(self, phi):
        return self.derivatives(phi, 0)[0]

    def branch(self, phi) -> np.ndarray:
        """Sign of beta' (the branch of the square root 2 beta^2 |beta'|)."""
        return np.sign(self.derivatives(phi, 1)[1])

    def state(self, phi, n: int = 3):
        return tuple(self.derivatives(phi, n))

    def __repr__(self):
        return f"BetaSolution(kind={self.kind.value}, params={self.params}, domain={self.domain})"


def beta_closed_form(params: BetaParams) -> BetaSolution:
    """Closed-form solution for ``beta2 = 0, f1 < 0, -f1^2/64 < beta1 < 0``."""
    p = params
    if p.beta2 != 0.0:
        raise InvalidParams("closed-form beta requires beta2 = 0")
    if not p.f1 < 0:
        raise InvalidParams("closed-form beta requires f1 < 0")
    if not (-p.f1**2 / 64 < p.beta1 < 0):
        raise InvalidParams("closed-form beta requires -f1^2/64 < beta1 < 0")
    return BetaSolution(BetaKind.CLOSED_FORM, p)


def solve_beta_ivp(f1: float, initial, phi_start: float = 0.0, span: float = np.pi,
                   rtol: float = 1e-10, atol: float = 1e-12, beta_min: float = BETA_MIN,
                   method: str = "DOP853") -> BetaSolution:
    """Integrate the third-order ODE from ``initial = (b, b', b'')`` at ``phi_start``.

    ``span`` may be negative.  The constants ``beta1, beta2`` of the returned
    solution are read off the initial data.
    """
    b0, db0, ddb0 = (float(v) for v in initial)
    if not b0 > 0:
        raise InvalidParams("initial beta must be positive")
    beta1, beta2 = (float(v) for v in first_integrals((b0, db0, ddb0), f1))
    params = BetaParams(f1=f1, beta1=beta1, beta2=beta2, phi0=phi_start)

    def rhs(_, y):
        b, db, ddb = y
        return [db, ddb, third_derivative(b, db, ddb, f1)]

    def vanishing(_, y):
        return y[0] - beta_min

    vanishing.terminal = True
    vanishing.direction = -1
    phi_end = phi_start + span
    sol = solve_ivp(rhs, (phi_start, phi_end), [b0, db0, ddb0], method=method, rtol=rtol,
                    atol=atol, dense_output=True, events=vanishing)
    if sol.status == -1:
        raise StepFailure(sol.message)
    reached = float(sol.t[-1])
    solution = BetaSolution(BetaKind.NUMERIC, params, domain=tuple(sorted((phi_start, reached))),
                            dense=sol.sol)
    if sol.status == 1:
        raise BetaVanishing(f"beta fell below {beta_min:g} at phi = {reached:.6g}", solution)
    return solution


def closed_form_initial_data(params: BetaParams, phi: float):
    """``(b, b', b'')`` of the closed-form solution at ``phi``, for seeding the IVP."""
    d = beta_closed_form(params).derivatives(np.array([phi]), 2)
    return tuple(float(v[0]) for v in d)
