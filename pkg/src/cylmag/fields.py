"""Auxiliary-function parametrisation, gauge potentials and the system catalog.

Each catalog system is stored as a :class:`SymbolicSystem`: sympy
expressions, in cylindrical coordinates, for the gauge potential, the
magnetic 2-form, the scalar potential and the coefficients of both
integrals.  Numerical oracles (values and exact partial derivatives, in
either chart) are compiled from these expressions on demand.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
import sympy as sp
from scipy.integrate import quad

from . import geometry as geo
from .beta import BetaParams, BetaSolution, beta_closed_form
from .errors import GaugeInconsistency, InvalidParams, MissingBetaSolution
from .geometry import Chart, CylPoint
from .jets import Jet
from .symbolic import (CART, CYL, PHI_SYM, R_SYM, T_SYM, X, Y, Z, ZC_SYM, Opaque,
                       compile_bundle, cyl_to_cart_subs)

HBAR, CORR = sp.symbols("hbar corr", real=True)
BETA = Opaque("beta")
W3 = Opaque("w3")


# ---------------------------------------------------------------------------
# one-variable functions
# ---------------------------------------------------------------------------

class ScalarFunction1D:
    """A function of one variable with a derivative oracle.

    Subclasses implement ``derivatives(t, n)`` returning the list
    ``[f(t), f'(t), ..., f^(n)(t)]``.
    """

    def derivatives(self, t, n: int = 3) -> list:
        raise NotImplementedError

    def __call__(self, t):
        return self.derivatives(t, 0)[0]


class ExprFunction1D(ScalarFunction1D):
    """Closed-form function given as a sympy expression in ``t``.

    The expression may contain parameters (given numerically in ``params``)
    and opaque functions (oracles in ``funcs``).
    """

    def __init__(self, expr, params: Mapping[sp.Symbol, float] | None = None,
                 funcs: Mapping[str, ScalarFunction1D] | None = None, name: str = "f"):
        self.expr = sp.sympify(expr)
        self.params = dict(params or {})
        self.funcs = dict(funcs or {})
        self.name = name
        self._syms = tuple(sorted(self.params, key=lambda s: s.name))

    def derivatives(self, t, n: int = 3) -> list:
        t = np.asarray(t, dtype=float)
        order = max(n, 4)
        bundle = compile_bundle(("f1d",), ((self.name, self.expr),), (T_SYM,), self._syms, order)
        jet = bundle([t.reshape(-1)], [self.params[s] for s in self._syms], self.funcs)[self.name]
        return [jet[(k,)].reshape(t.shape) for k in range(n + 1)]

    def __repr__(self):
        return f"ExprFunction1D({self.expr})"


def constant_function(c: float) -> ExprFunction1D:
    return ExprFunction1D(sp.Float(c), name="const")


class W3Kind(enum.Enum):
    ZERO = "ZERO"
    HARMONIC = "HARMONIC"
    LINEAR = "LINEAR"


def w3_library(name, omega: float = 1.0, g: float = 1.0) -> ExprFunction1D:
    """Free longitudinal potential W3(z): zero, harmonic omega^2 z^2 / 2, or linear g z."""
    kind = W3Kind(name.upper() if isinstance(name, str) else name.value)
    if kind is W3Kind.ZERO:
        return ExprFunction1D(sp.Integer(0), name="w3_zero")
    if kind is W3Kind.HARMONIC:
        return ExprFunction1D(sp.Float(omega) ** 2 * T_SYM**2 / 2, name="w3_harmonic")
    return ExprFunction1D(sp.Float(g) * T_SYM, name="w3_linear")


@dataclass(frozen=True)
class AuxFunctions:
    """The five one-variable functions psi(phi), rho(r), mu(Z), sigma(r), tau(phi)."""

    psi: ScalarFunction1D
    rho: ScalarFunction1D
    mu: ScalarFunction1D
    sigma: ScalarFunction1D
    tau: ScalarFunction1D

    @classmethod
    def zero(cls) -> "AuxFunctions":
        z = constant_function(0.0)
        return cls(z, z, z, z, z)

    @classmethod
    def from_exprs(cls, psi=0, rho=0, mu=0, sigma=0, tau=0, params=None, funcs=None) -> "AuxFunctions":
        """Build from sympy expressions in ``t`` (see :data:`cylmag.symbolic.T_SYM`)."""
        mk = lambda e, n: ExprFunction1D(e, params, funcs, name=n)
        return cls(mk(psi, "psi"), mk(rho, "rho"), mk(mu, "mu"), mk(sigma, "sigma"), mk(tau, "tau"))


def s_from_aux(aux: AuxFunctions, at: CylPoint, r_min: float = geo.R_MIN):
    """First-order coefficients ``(s1, s2)`` of both integrals, cylindrical vectors."""
    r, phi, z = (np.asarray(c, dtype=float) for c in at)
    geo.check_off_axis(r, r_min)
    psi, dpsi = aux.psi.derivatives(phi, 1)
    rho = aux.rho(r)
    mu = aux.mu(z)
    sigma = aux.sigma(r)
    tau = aux.tau(phi)
    zero = np.zeros(np.broadcast(r, phi, z).shape)
    s1 = geo.vector(Chart.CYL, dpsi + zero, -psi / r - r**2 * mu + rho, tau + zero)
    s2 = geo.vector(Chart.CYL, zero, mu + zero, -tau / r**2 + sigma)
    return s1, s2


def field_from_aux(aux: AuxFunctions, at: CylPoint, r_min: float = geo.R_MIN) -> geo.Components:
    """Magnetic 2-form (B^r, B^phi, B^Z) determined by the auxiliary functions."""
    r, phi, z = (np.asarray(c, dtype=float) for c in at)
    geo.check_off_axis(r, r_min)
    psi, _, ddpsi = aux.psi.derivatives(phi, 2)
    _, drho = aux.rho.derivatives(r, 1)
    mu, dmu = aux.mu.derivatives(z, 1)
    _, dsigma = aux.sigma.derivatives(r, 1)
    tau, dtau = aux.tau.derivatives(phi, 1)
    br = -(r**2) / 2 * dmu + dtau / (2 * r**2)
    bphi = tau / r**3 + dsigma / 2
    bz = -psi / (2 * r**2) + r * mu - drho / 2 - ddpsi / (2 * r**2)
    return geo.two_form(Chart.CYL, br, bphi, bz)


# ---------------------------------------------------------------------------
# symbolic systems
# ---------------------------------------------------------------------------

class Leading(enum.Enum):
    PPHI_SQUARED = "pphi_squared"
    PZ_SQUARED = "pz_squared"
    NONE = "none"


@dataclass(frozen=True)
class SymbolicIntegral:
    leading: Leading
    s: tuple  # cylindrical vector components (s^r, s^phi, s^Z)
    m_cl: sp.Expr
    m_q: sp.Expr = sp.Integer(0)  # multiplies corr * hbar^2


@dataclass(frozen=True)
class SymbolicSystem:
    """Closed-form description of a system in cylindrical coordinates."""

    key: str
    params: tuple  # parameter symbols, in schema order
    A: tuple  # covector (A_r, A_phi, A_Z)
    B: tuple  # 2-form (B^r, B^phi, B^Z)
    W_cl: sp.Expr
    W_q: sp.Expr  # multiplies corr * hbar^2
    integrals: tuple  # ((name, SymbolicIntegral), ...)
    aux: tuple | None = None  # (psi, rho, mu, sigma, tau) as expressions in t

    def integral(self, name) -> SymbolicIntegral:
        return dict(self.integrals)[name]

    @property
    def all_params(self) -> tuple:
        return self.params + (HBAR, CORR)

    def expressions(self, group: str, chart: Chart) -> tuple:
        """Named expressions for ``group`` in the requested chart."""
        if group == "A":
            comps = self.A if chart is Chart.CYL else _cov_to_cart(self.A)
            names = ("A_r", "A_phi", "A_Z") if chart is Chart.CYL else ("A_x", "A_y", "A_z")
        elif group == "B":
            comps = self.B if chart is Chart.CYL else _two_form_to_cart(self.B)
            names = ("B_r", "B_phi", "B_Z") if chart is Chart.CYL else ("B_x", "B_y", "B_z")
        elif group == "W":
            comps, names = (self.W_cl + CORR * HBAR**2 * self.W_q,), ("W",)
        elif group.endswith(".s"):
            s = self.integral(group[:-2]).s
            comps = s if chart is Chart.CYL else _vec_to_cart(s)
            names = ("s_r", "s_phi", "s_Z") if chart is Chart.CYL else ("s_x", "s_y", "s_z")
        elif group.endswith(".m"):
            it = self.integral(group[:-2])
            comps, names = (it.m_cl + CORR * HBAR**2 * it.m_q,), ("m",)
        else:
            raise KeyError(group)
        if chart is Chart.CART:
            subs = cyl_to_cart_subs()
            comps = tuple(sp.sympify(c).subs(subs) for c in comps)
        return tuple(zip(names, comps))

    def regauged(self, chi) -> "SymbolicSystem":
        """Same physics with ``A -> A + d chi`` (``chi`` in cylindrical symbols)."""
        chi = sp.sympify(chi)
        A = tuple(a + sp.diff(chi, v) for a, v in zip(self.A, CYL))
        return replace(self, key=f"{self.key}+gauge[{sp.srepr(chi)}]", A=A)


def _cos_sin():
    r = R_SYM
    return sp.cos(PHI_SYM), sp.sin(PHI_SYM), r


def _cov_to_cart(a):
    c, s, r = _cos_sin()
    return (c * a[0] - s / r * a[1], s * a[0] + c / r * a[1], a[2])


def _vec_to_cart(v):
    c, s, r = _cos_sin()
    return (c * v[0] - r * s * v[1], s * v[0] + r * c * v[1], v[2])


def _two_form_to_cart(b):
    c, s, r = _cos_sin()
    return (c / r * b[0] - s * b[1], s / r * b[0] + c * b[1], b[2] / r)


def _s_from_aux_exprs(aux):
    psi, rho, mu, sigma, tau = aux
    at_phi = lambda e: sp.sympify(e).subs(T_SYM, PHI_SYM)
    at_r = lambda e: sp.sympify(e).subs(T_SYM, R_SYM)
    at_z = lambda e: sp.sympify(e).subs(T_SYM, ZC_SYM)
    s1 = (sp.diff(at_phi(psi), PHI_SYM), -at_phi(psi) / R_SYM - R_SYM**2 * at_z(mu) + at_r(rho), at_phi(tau))
    s2 = (sp.Integer(0), at_z(mu), -at_phi(tau) / R_SYM**2 + at_r(sigma))
    return s1, s2


# ---------------------------------------------------------------------------
# parameter schemas and templates
# ---------------------------------------------------------------------------

class SystemId(enum.Enum):
    SYSTEM_I = "SYSTEM_I"
    SYSTEM_II = "SYSTEM_II"
    SYSTEM_III = "SYSTEM_III"


@dataclass(frozen=True)
class ParamInfo:
    name: str
    default: float
    description: str
    usually_nonzero: bool = False


SCHEMAS = {
    "SYSTEM_I": (
        ParamInfo("rho1", 1.0, "constant part of the axial field B^z", True),
        ParamInfo("rho2", 0.1, "coefficient of the r^2 part of B^z (must be nonzero)", True),
        ParamInfo("psi1", 0.5, "coefficient of x in the linear part of W", True),
        ParamInfo("psi2", 0.5, "coefficient of y in the linear part of W", True),
        ParamInfo("W0", 1.0, "coefficient of the r^2 part of W", True),
        ParamInfo("sigma0", 1.0, "p_z coefficient of the unreduced second-order X2 = p_z^2 + sigma0 p_z"),
    ),
    "SYSTEM_II": (
        ParamInfo("f1", -8.0, "parameter of the beta ODE"),
        ParamInfo("beta1", -0.5, "first integration constant of the beta ODE"),
        ParamInfo("beta2", 0.0, "second integration constant of the beta ODE"),
        ParamInfo("tau0", 0.0, "constant part of tau(phi)"),
        ParamInfo("tau1", 0.3, "strength of the non-axial field components", True),
        ParamInfo("W0", 1.0, "coefficient of 1/(r^2 beta^2) in W", True),
        ParamInfo("rho0", 0.0, "offset psi = beta + rho0"),
        ParamInfo("phi0", 0.0, "phase of the closed-form beta"),
        ParamInfo("sigma0", 0.0, "p_z coefficient of the unreduced second-order X2"),
    ),
}
SCHEMAS["SYSTEM_III/I"] = tuple(p for p in SCHEMAS["SYSTEM_I"] if p.name != "sigma0")
SCHEMAS["SYSTEM_III/II"] = tuple(p for p in SCHEMAS["SYSTEM_II"] if p.name not in ("tau0", "tau1", "sigma0"))

DESCRIPTIONS = {
    "SYSTEM_I": "rank-2, no quantum correction: axial field rho1 - 6 rho2 r^2, X2 reduces to p_z",
    "SYSTEM_II": "rank-2 with hbar^2-corrected potential, field built from a solution beta(phi), X2 reduces to p_z",
    "SYSTEM_III": "rank-1: planar part of SYSTEM_I or SYSTEM_II (tau0 = tau1 = 0) plus free W3(z); "
                  "X2 = (p_z^A)^2 + 2 W3(z) stays second order",
}


def _syms(names):
    return {n: sp.Symbol(n, real=True) for n in names}


def _template_system_i(with_w3: bool) -> SymbolicSystem:
    p = _syms(["rho1", "rho2", "psi1", "psi2", "W0", "sigma0"])
    rho1, rho2, psi1, psi2, W0 = (p[k] for k in ("rho1", "rho2", "psi1", "psi2", "W0"))
    sigma0 = sp.Integer(0) if with_w3 else p["sigma0"]
    r, phi = R_SYM, PHI_SYM
    t = T_SYM
    aux = (-psi1 * sp.cos(t) - psi2 * sp.sin(t), 3 * rho2 * t**4 - rho1 * t**2 + W0,
           sp.Integer(0), sigma0, sp.Integer(0))
    A = (sp.Integer(0), rho1 * r**2 / 2 - 3 * rho2 * r**4 / 2, sp.Integer(0))
    B = (sp.Integer(0), sp.Integer(0), rho1 * r - 6 * rho2 * r**3)
    x, y = r * sp.cos(phi), r * sp.sin(phi)
    W = -2 * rho2 * (psi1 * x + psi2 * y) - rho2**2 * r**6 + rho2 * rho1 / 2 * r**4 - rho2 * W0 * r**2
    m1 = ((2 * rho2 * r**2 - rho1) * (psi1 * x + psi2 * y)
          + sp.Rational(1, 4) * (3 * rho2 * r**4 - rho1 * r**2 + 2 * W0) * (3 * rho2 * r**2 - rho1) * r**2)
    s1, s2 = _s_from_aux_exprs(aux)
    x1 = SymbolicIntegral(Leading.PPHI_SQUARED, s1, m1)
    if with_w3:
        w3 = W3(ZC_SYM)
        x2 = SymbolicIntegral(Leading.PZ_SQUARED, (0, 0, 0), 2 * w3)
        return SymbolicSystem("SYSTEM_III/I", tuple(p[i.name] for i in SCHEMAS["SYSTEM_III/I"]), A, B,
                              W + w3, sp.Integer(0), (("x1", x1), ("x2", x2), ("x2_full", x2)), aux)
    x2 = SymbolicIntegral(Leading.NONE, (0, 0, 1), -A[2])
    x2_full = SymbolicIntegral(Leading.PZ_SQUARED, s2, A[2] ** 2 - sigma0 * A[2])
    return SymbolicSystem("SYSTEM_I", tuple(p[i.name] for i in SCHEMAS["SYSTEM_I"]), A, B, W, sp.Integer(0),
                          (("x1", x1), ("x2", x2), ("x2_full", x2_full)), aux)


def _template_system_ii(with_w3: bool) -> SymbolicSystem:
    names = [i.name for i in SCHEMAS["SYSTEM_II"]]
    p = _syms(names)
    f1, beta1, beta2, W0, rho0 = (p[k] for k in ("f1", "beta1", "beta2", "W0", "rho0"))
    if with_w3:
        tau0 = tau1 = sigma0 = sp.Integer(0)
    else:
        tau0, tau1, sigma0 = p["tau0"], p["tau1"], p["sigma0"]
    r, phi, t = R_SYM, PHI_SYM, T_SYM
    b, db = BETA(phi), BETA(phi, 1)
    # the radical sqrt(4 b1 b^2 + b2 - 4 b^6 - f1 b^4) on the branch of beta' is 2 b^2 beta'
    radical = 2 * b**2 * db
    A = (sp.Integer(0), -(2 * beta1 * b**2 + beta2) / (4 * r * b**5), tau1 / (2 * r**2 * b**2))
    B = (-tau1 * radical / (2 * r**2 * b**5), tau1 / (r**3 * b**2), (2 * beta1 * b**2 + beta2) / (4 * r**2 * b**5))
    W_cl = W0 / (r**2 * b**2) - (4 * tau1**2 + beta2) / (32 * r**4 * b**4)
    W_q = (f1 * b**4 - 12 * beta1 * b**2 - 5 * beta2) / (32 * r**2 * b**6)
    aux = (BETA(t) + rho0, rho0 / t, sp.Integer(0), tau0 / t**2 + sigma0, tau0 + tau1 / BETA(t) ** 2)
    s1, s2 = _s_from_aux_exprs(aux)
    m1_cl = 2 * W0 / b**2 - (4 * b**2 * tau0 * tau1 + 2 * beta1 * b**2 + 4 * tau1**2 + beta2) / (8 * b**4 * r**2)
    # no 1/r^2 factor: this is 2 r^2 times the correction of W
    m1_q = (f1 * b**4 - 12 * beta1 * b**2 - 5 * beta2) / (16 * b**6)
    x1 = SymbolicIntegral(Leading.PPHI_SQUARED, s1, m1_cl, m1_q)
    params = tuple(p[i.name] for i in SCHEMAS["SYSTEM_III/II" if with_w3 else "SYSTEM_II"])
    if with_w3:
        w3 = W3(ZC_SYM)
        x2 = SymbolicIntegral(Leading.PZ_SQUARED, (0, 0, 0), 2 * w3)
        return SymbolicSystem("SYSTEM_III/II", params, A, B, W_cl + w3, W_q,
                              (("x1", x1), ("x2", x2), ("x2_full", x2)), aux)
    x2 = SymbolicIntegral(Leading.NONE, (0, 0, 1), -A[2])
    x2_full = SymbolicIntegral(Leading.PZ_SQUARED, s2, A[2] ** 2 - sigma0 * A[2])
    return SymbolicSystem("SYSTEM_II", params, A, B, W_cl, W_q,
                          (("x1", x1), ("x2", x2), ("x2_full", x2_full)), aux)


def _template_free() -> SymbolicSystem:
    zero = sp.Integer(0)
    x1 = SymbolicIntegral(Leading.PPHI_SQUARED, (0, 0, 0), zero)
    x2 = SymbolicIntegral(Leading.NONE, (0, 0, 1), zero)
    x2_full = SymbolicIntegral(Leading.PZ_SQUARED, (0, 0, 0), zero)
    return SymbolicSystem("FREE", (), (zero,) * 3, (zero,) * 3, zero, zero,
                          (("x1", x1), ("x2", x2), ("x2_full", x2_full)), (zero,) * 5)


def _template_uniform() -> SymbolicSystem:
    b = sp.Symbol("b", real=True)
    r = R_SYM
    zero = sp.Integer(0)
    A = (zero, b * r**2 / 2, zero)
    aux = (zero, zero, b, zero, zero)
    s1, s2 = _s_from_aux_exprs(aux)
    # X1 = p_phi^2 and X2 = p_z^2 + b p_phi, written in covariant momenta
    x1 = SymbolicIntegral(Leading.PPHI_SQUARED, s1, b**2 * r**4 / 4)
    x2 = SymbolicIntegral(Leading.NONE, (0, 0, 1), zero)
    x2_full = SymbolicIntegral(Leading.PZ_SQUARED, s2, -(b**2) * r**2 / 2)
    return SymbolicSystem("UNIFORM", (b,), A, (zero, zero, b * r), zero, zero,
                          (("x1", x1), ("x2", x2), ("x2_full", x2_full)), aux)


_TEMPLATES = {}


def template(key: str) -> SymbolicSystem:
    if key not in _TEMPLATES:
        builders = {
            "SYSTEM_I": lambda: _template_system_i(False),
            "SYSTEM_III/I": lambda: _template_system_i(True),
            "SYSTEM_II": lambda: _template_system_ii(False),
            "SYSTEM_III/II": lambda: _template_system_ii(True),
            "FREE": _template_free,
            "UNIFORM": _template_uniform,
        }
        _TEMPLATES[key] = builders[key]()
    return _TEMPLATES[key]


# ---------------------------------------------------------------------------
# numeric views
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """Sampling box in cylindrical coordinates (the axis is always excluded)."""

    r_min: float = 0.5
    r_max: float = 3.0
    phi_min: float = 0.0
    phi_max: float = 2 * np.pi
    z_min: float = -2.0
    z_max: float = 2.0

    def sample(self, n: int, rng: np.random.Generator) -> CylPoint:
        return CylPoint(rng.uniform(self.r_min, self.r_max, n),
                        rng.uniform(self.phi_min, self.phi_max, n),
                        rng.uniform(self.z_min, self.z_max, n))

    def sample_cart(self, n: int, rng: np.random.Generator) -> np.ndarray:
        c = self.sample(n, rng)
        return np.stack([c.r * np.cos(c.phi), c.r * np.sin(c.phi), c.Z], axis=-1)


class _Evaluator:
    """Evaluates groups of a :class:`SymbolicSystem` with fixed parameter values."""

    def __init__(self, tmpl: SymbolicSystem, values: Mapping[str, float], funcs: Mapping[str, ScalarFunction1D],
                 corr: float, r_min: float):
        self.tmpl = tmpl
        self.values = dict(values)
        self.funcs = dict(funcs)
        self.corr = corr
        self.r_min = r_min

    def _pvals(self, hbar):
        return [self.values[s.name] for s in self.tmpl.params] + [float(hbar), self.corr]

    def cart(self, group: str, points, order: int = 0, hbar: float = 0.0) -> list:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        geo.check_off_axis(np.hypot(pts[:, 0], pts[:, 1]), self.r_min)
        items = self.tmpl.expressions(group, Chart.CART)
        bundle = compile_bundle((self.tmpl.key, group, "cart"), items, CART, self.tmpl.all_params, order)
        out = bundle([pts[:, 0], pts[:, 1], pts[:, 2]], self._pvals(hbar), self.funcs)
        return [out[name] for name, _ in items]

    def cyl(self, group: str, at: CylPoint, order: int = 0, hbar: float = 0.0) -> list:
        r, phi, z = np.broadcast_arrays(*(np.atleast_1d(np.asarray(c, dtype=float)) for c in at))
        geo.check_off_axis(r, self.r_min)
        items = self.tmpl.expressions(group, Chart.CYL)
        bundle = compile_bundle((self.tmpl.key, group, "cyl"), items, CYL, self.tmpl.all_params, order)
        out = bundle([r.ravel(), phi.ravel(), z.ravel()], self._pvals(hbar), self.funcs)
        return [out[name] for name, _ in items]


def _shape_like(at: CylPoint):
    return np.broadcast(*(np.asarray(c) for c in at)).shape


class GaugePotential:
    """Vector potential A with exact partials, in both charts."""

    def __init__(self, evaluator: _Evaluator | None = None, cyl_fn: Callable | None = None):
        self._ev = evaluator
        self._cyl_fn = cyl_fn

    @property
    def closed_form(self) -> bool:
        return self._ev is not None

    def A(self, at: CylPoint) -> geo.Components:
        if self._ev is None:
            return geo.covector(Chart.CYL, *self._cyl_fn(at))
        shape = _shape_like(at)
        jets = self._ev.cyl("A", at, 0)
        return geo.covector(Chart.CYL, *(j.value.reshape(shape) for j in jets))

    def A_partials(self, at: CylPoint, order: int = 2) -> list:
        """Jets of (A_r, A_phi, A_Z) in (r, phi, Z)."""
        return self._ev.cyl("A", at, order)

    def cart_jets(self, points, order: int = 2) -> list:
        """Jets of (A_x, A_y, A_z) in (x, y, z)."""
        return self._ev.cart("A", points, order)

    def A_cart(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self._ev is not None:
            return np.stack([j.value for j in self.cart_jets(pts, 0)], axis=-1)
        cyl = geo.cart_to_cyl(geo.CartPoint.from_array(pts))
        return geo.covector_cyl_to_cart(self.A(cyl), cyl).as_array()


class FieldConfiguration:
    """Magnetic 2-form and scalar potential of a system."""

    def __init__(self, B_fn: Callable, W_fn: Callable | None = None, hbar_correction: bool = False,
                 evaluator: _Evaluator | None = None, gauge: GaugePotential | None = None):
        self._B_fn = B_fn
        self._W_fn = W_fn
        self.hbar_correction = hbar_correction
        self._ev = evaluator
        self.closed_form_gauge = gauge

    @classmethod
    def from_aux(cls, aux: AuxFunctions, W_fn: Callable | None = None) -> "FieldConfiguration":
        return cls(lambda at: field_from_aux(aux, at).as_tuple(), W_fn)

    def B(self, at: CylPoint) -> geo.Components:
        return geo.two_form(Chart.CYL, *self._B_fn(at))

    def B_cart(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self._ev is not None:
            return np.stack([j.value for j in self._ev.cart("B", pts, 0)], axis=-1)
        cyl = geo.cart_to_cyl(geo.CartPoint.from_array(pts))
        return geo.two_form_cyl_to_cart(self.B(cyl), cyl).as_array()

    def W(self, at: CylPoint, hbar: float = 1.0):
        """Scalar potential; the hbar^2 part is present only with the correction flag."""
        if self._ev is None:
            return self._W_fn(at)
        return self._ev.cyl("W", at, 0, hbar)[0].value.reshape(_shape_like(at))

    def W_partials(self, at: CylPoint, order: int = 2, hbar: float = 1.0) -> Jet:
        """Jet of W in (r, phi, Z)."""
        return self._ev.cyl("W", at, order, hbar)[0]

    def W_jet(self, points, order: int = 2, hbar: float = 1.0) -> Jet:
        """Jet of W in (x, y, z)."""
        return self._ev.cart("W", points, order, hbar)[0]


class IntegralCoefficients:
    """Leading term selector plus the s and m coefficients of one integral."""

    def __init__(self, leading: Leading, evaluator: _Evaluator, name: str):
        self.leading = leading
        self._ev = evaluator
        self.name = name

    def s(self, at: CylPoint) -> geo.Components:
        shape = _shape_like(at)
        return geo.vector(Chart.CYL, *(j.value.reshape(shape) for j in self._ev.cyl(self.name + ".s", at, 0)))

    def s_partials(self, at: CylPoint, order: int = 2) -> list:
        return self._ev.cyl(self.name + ".s", at, order)

    def s_cart_jets(self, points, order: int = 2) -> list:
        return self._ev.cart(self.name + ".s", points, order)

    def m(self, at: CylPoint, hbar: float = 1.0):
        return self._ev.cyl(self.name + ".m", at, 0, hbar)[0].value.reshape(_shape_like(at))

    def m_jet(self, points, order: int = 1, hbar: float = 1.0) -> Jet:
        return self._ev.cart(self.name + ".m", points, order, hbar)[0]


@dataclass(frozen=True)
class SystemSpec:
    """A fully assembled system: fields, gauge, both integrals and auxiliary data."""

    id: SystemId | str
    params: dict
    hbar_correction: bool
    field: FieldConfiguration
    gauge: GaugePotential
    x1: IntegralCoefficients
    x2: IntegralCoefficients
    x2_full: IntegralCoefficients
    aux: AuxFunctions | None
    domain: Domain
    symbolic: SymbolicSystem = field(repr=False)
    funcs: dict = field(default_factory=dict, repr=False)
    base: str | None = None

    @property
    def name(self) -> str:
        return self.id.value if isinstance(self.id, SystemId) else str(self.id)

    def with_hbar_correction(self, flag: bool) -> "SystemSpec":
        return build_system(self.symbolic, self.params, flag, self.funcs, self.domain, self.id, self.base)

    def regauged(self, chi) -> "SystemSpec":
        """Copy of the system with A replaced by A + d chi."""
        return build_system(self.symbolic.regauged(chi), self.params, self.hbar_correction, self.funcs,
                            self.domain, self.id, self.base)

    def integral(self, which: str) -> IntegralCoefficients:
        return {"X1": self.x1, "X2": self.x2, "X2_FULL": self.x2_full}[which.upper()]


def build_system(tmpl: SymbolicSystem, params: Mapping[str, float], hbar_correction: bool = True,
                 funcs: Mapping[str, ScalarFunction1D] | None = None, domain: Domain | None = None,
                 system_id=None, base=None, r_min: float = geo.R_MIN) -> SystemSpec:
    """Wire numeric oracles around a symbolic system description."""
    funcs = dict(funcs or {})
    values = {s.name: float(params[s.name]) for s in tmpl.params}
    ev = _Evaluator(tmpl, values, funcs, 1.0 if hbar_correction else 0.0, r_min)
    gauge = GaugePotential(ev)

    def B_fn(at):
        shape = _shape_like(at)
        return tuple(j.value.reshape(shape) for j in ev.cyl("B", at, 0))

    fieldcfg = FieldConfiguration(B_fn, hbar_correction=hbar_correction, evaluator=ev, gauge=gauge)
    integrals = dict(tmpl.integrals)
    aux = None
    if tmpl.aux is not None:
        aux_params = {s: values[s.name] for s in tmpl.params}
        aux = AuxFunctions(*(ExprFunction1D(e, {s: v for s, v in aux_params.items() if s in sp.sympify(e).free_symbols},
                                            funcs, name=f"{tmpl.key}:{n}")
                             for e, n in zip(tmpl.aux, ("psi", "rho", "mu", "sigma", "tau"))))
    return SystemSpec(
        id=system_id if system_id is not None else tmpl.key,
        params=dict(values),
        hbar_correction=hbar_correction,
        field=fieldcfg,
        gauge=gauge,
        x1=IntegralCoefficients(integrals["x1"].leading, ev, "x1"),
        x2=IntegralCoefficients(integrals["x2"].leading, ev, "x2"),
        x2_full=IntegralCoefficients(integrals["x2_full"].leading, ev, "x2_full"),
        aux=aux,
        domain=domain or Domain(),
        symbolic=tmpl,
        funcs=funcs,
        base=base,
    )


def _resolve_params(schema, params: Mapping[str, float]) -> dict:
    known = {p.name for p in schema}
    unknown = set(params) - known
    if unknown:
        raise InvalidParams(f"unknown parameters: {sorted(unknown)}")
    values = {}
    for p in schema:
        v = float(params.get(p.name, p.default))
        if not np.isfinite(v):
            raise InvalidParams(f"parameter {p.name} must be finite")
        if p.usually_nonzero and v == 0.0:
            warnings.warn(f"{p.name} = 0 may degenerate the system", stacklevel=3)
        values[p.name] = v
    return values


def _resolve_beta(values: dict, beta) -> BetaSolution:
    if beta is None:
        raise MissingBetaSolution("SYSTEM_II needs a beta solution (a BetaSolution or 'closed')")
    if isinstance(beta, str):
        if beta != "closed":
            raise InvalidParams(f"unknown beta mode {beta!r}")
        return beta_closed_form(BetaParams(values["f1"], values["beta1"], values["beta2"], values["phi0"]))
    if not isinstance(beta, BetaSolution):
        raise InvalidParams("beta must be a BetaSolution or 'closed'")
    if beta.f1 != values["f1"]:
        raise InvalidParams(f"beta solution has f1 = {beta.f1}, system has f1 = {values['f1']}")
    for k in ("beta1", "beta2"):
        have, want = getattr(beta.params, k), values[k]
        if abs(have - want) > 1e-8 * max(1.0, abs(have)):
            raise InvalidParams(f"{k} = {want} inconsistent with the beta solution ({have})")
    return beta


def catalog_system(system_id, params: Mapping[str, float] | None = None, hbar_correction: bool = True,
                   beta=None, w3: ScalarFunction1D | None = None, base: str = "I",
                   domain: Domain | None = None) -> SystemSpec:
    """Build a catalog system.

    Parameters
    ----------
    system_id : SystemId or str
    params : parameter overrides; unspecified parameters take schema defaults
    hbar_correction : include the hbar^2 part of W and m1
    beta : for SYSTEM_II (and SYSTEM_III on base II): a :class:`BetaSolution`,
        or ``"closed"`` for the closed-form solution built from the parameters
    w3 : for SYSTEM_III, the free potential W3(z) (default harmonic, omega = 1)
    base : for SYSTEM_III, ``"I"`` or ``"II"`` selects the planar part
    """
    sid = SystemId(system_id.value if isinstance(system_id, SystemId) else str(system_id).upper())
    params = dict(params or {})
    if sid is SystemId.SYSTEM_III:
        base = str(base).upper()
        if base not in ("I", "II"):
            raise InvalidParams("SYSTEM_III base must be 'I' or 'II'")
        key = f"SYSTEM_III/{base}"
        forced = {"I": ("sigma0",), "II": ("tau0", "tau1", "sigma0")}[base]
        for k in forced:
            if params.pop(k, 0.0) != 0.0:
                raise InvalidParams(f"SYSTEM_III on base {base} requires {k} = 0")
    else:
        key = sid.value
        base = None
    if key in ("SYSTEM_I", "SYSTEM_III/I") and float(params.get("rho2", 0.1)) == 0.0:
        raise InvalidParams("rho2 must be nonzero (W vanishes identically at rho2 = 0)")
    values = _resolve_params(SCHEMAS[key], params)
    funcs = {}
    dom = domain or Domain()
    if key in ("SYSTEM_II", "SYSTEM_III/II"):
        sol = _resolve_beta(values, beta)
        funcs["beta"] = sol
        if sol.domain is not None and domain is None:
            dom = replace(dom, phi_min=sol.domain[0], phi_max=sol.domain[1])
    if sid is SystemId.SYSTEM_III:
        funcs["w3"] = w3 if w3 is not None else w3_library("HARMONIC", omega=1.0)
    return build_system(template(key), values, hbar_correction, funcs, dom, sid, base)


def free_particle_system(domain: Domain | None = None) -> SystemSpec:
    """No fields: X1 = L_z^2, X2 = p_z."""
    return build_system(template("FREE"), {}, False, domain=domain, system_id="FREE")


def uniform_field_system(b: float = 1.0, domain: Domain | None = None) -> SystemSpec:
    """Uniform axial field ``b`` in the symmetric gauge ``A_phi = b r^2 / 2``."""
    return build_system(template("UNIFORM"), {"b": b}, False, domain=domain, system_id="UNIFORM")


# ---------------------------------------------------------------------------
# gauge construction
# ---------------------------------------------------------------------------

def curl_mismatch(B_cart: Callable, A_cart: Callable, points, h: float = 1e-3) -> float:
    """max |curl A - B| / max(1, |B|) over the points, curl by finite differences."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    curl = geo.cartesian_curl(A_cart, pts, h)
    B = B_cart(pts)
    return float(np.max(np.abs(curl - B) / np.maximum(1.0, np.abs(B))))


def _quadrature_gauge(field: FieldConfiguration, r0: float, phi0: float) -> GaugePotential:
    def B(r, phi, z):
        return field._B_fn(CylPoint(np.array([r]), np.array([phi]), np.array([z])))

    def one(r, phi, z):
        a_phi = quad(lambda s: float(B(s, phi, z)[2][0]), r0, r, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        a_z = -quad(lambda s: float(B(s, phi, z)[1][0]), r0, r, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        a_z += quad(lambda p: float(B(r0, p, z)[0][0]), phi0, phi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        return a_phi, a_z

    def cyl_fn(at):
        r, phi, z = np.broadcast_arrays(*(np.atleast_1d(np.asarray(c, dtype=float)) for c in at))
        vals = np.array([one(a, b, c) for a, b, c in zip(r.ravel(), phi.ravel(), z.ravel())])
        return np.zeros(r.shape), vals[:, 0].reshape(r.shape), vals[:, 1].reshape(r.shape)

    return GaugePotential(cyl_fn=cyl_fn)


def gauge_for_field(field: FieldConfiguration, domain: Domain | None = None, r0: float = 0.0,
                    phi0: float = 0.0, check_points: int = 6, tol: float = 1e-8, seed: int = 0) -> GaugePotential:
    """A potential with A_r = 0 whose exterior derivative is the field.

    Catalog fields carry closed-form primitives.  Otherwise A_phi is the radial
    integral of B^Z from ``r0``, and A_Z combines the radial integral of
    -B^phi with the angular integral of B^r at ``r0``.  The result is checked
    against the field by a finite-difference curl; a mismatch means the field
    is not closed and raises :class:`GaugeInconsistency`.
    """
    domain = domain or Domain()
    if field.closed_form_gauge is not None:
        gauge = field.closed_form_gauge
    else:
        gauge = _quadrature_gauge(field, r0, phi0)
    pts = domain.sample_cart(check_points, np.random.default_rng(seed))
    err = curl_mismatch(field.B_cart, gauge.A_cart, pts)
    if not err < tol:
        raise GaugeInconsistency(f"curl of the constructed potential misses B by {err:.3g}")
    return gauge
