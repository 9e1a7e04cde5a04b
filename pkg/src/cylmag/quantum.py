"""Quantum operators as exact linear differential operators.

A :class:`DiffOperator` stores one coefficient per multi-index; each
coefficient is a lazy oracle returning a derivative :class:`~cylmag.jets.Jet`
at a batch of points.  Composition uses the Leibniz rule on these jets, so
commutators are formed exactly at the coefficient level and only then
evaluated on polynomial-times-Gaussian probes with exact derivatives.

Momenta are ``p = -i hbar grad`` and the covariant momenta are
``P_j = p_j + A_j``.  First-order terms are symmetrised,
``(s.P + P.s) / 2 = s.p - (i hbar / 2) div s + s.A`` in Cartesian coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import comb
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateFit, OrderOverflow
from .fields import Domain, Leading, SystemSpec
from .jets import Jet, add_index, multi_indices, unit_index

MAX_ORDER = 4
ZERO = (0, 0, 0)
E = tuple(unit_index(i) for i in range(3))


def _pkey(points: np.ndarray):
    return points.shape, points.tobytes()


class Coefficient:
    """Lazy coefficient oracle ``(points, order) -> Jet`` with a per-point-set memo."""

    __slots__ = ("_fn", "_memo", "const")

    def __init__(self, fn: Callable | None = None, const: complex | None = None):
        self._fn = fn
        self._memo = {}
        self.const = const

    @classmethod
    def constant(cls, c) -> "Coefficient":
        return cls(const=complex(c))

    def jet(self, points: np.ndarray, order: int) -> Jet:
        if self.const is not None:
            return Jet.constant(self.const, len(points), order)
        key = _pkey(points)
        hit = self._memo.get(key)
        if hit is None or hit.order < order:
            hit = self._fn(points, order)
            self._memo[key] = hit
        return hit.truncate(order)

    def values(self, points: np.ndarray) -> np.ndarray:
        return self.jet(points, 0).value

    @staticmethod
    def combine(terms: Sequence[tuple]) -> "Coefficient":
        """Sum of ``weight * coefficient`` terms."""
        if all(c.const is not None for _, c in terms):
            return Coefficient.constant(sum(w * c.const for w, c in terms))

        def fn(points, order):
            acc = None
            for w, c in terms:
                j = c.jet(points, order) * w
                acc = j if acc is None else acc + j
            return acc

        return Coefficient(fn)


class DiffOperator:
    """``sum_alpha c_alpha(x) d^alpha`` with complex coefficient oracles, order <= 4."""

    def __init__(self, coeffs: Mapping[tuple, Coefficient] | None = None):
        self.coeffs = {tuple(a): c for a, c in (coeffs or {}).items()}
        if self.order > MAX_ORDER:
            raise OrderOverflow(f"operator order {self.order} exceeds {MAX_ORDER}")

    @property
    def order(self) -> int:
        return max((sum(a) for a in self.coeffs), default=0)

    @classmethod
    def multiplication(cls, coeff: Coefficient) -> "DiffOperator":
        return cls({ZERO: coeff})

    @classmethod
    def derivative(cls, alpha, factor: complex = 1.0) -> "DiffOperator":
        return cls({tuple(alpha): Coefficient.constant(factor)})

    def coefficient_values(self, points, order: int = 0) -> dict:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return {a: c.jet(pts, order) for a, c in self.coeffs.items()}

    def apply(self, probe: "TestFunction", points) -> np.ndarray:
        """``(L psi)(x)`` at each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts), dtype=complex)
        for a, c in self.coeffs.items():
            if c.const is not None:
                if c.const != 0:
                    out += c.const * probe.partial(a, pts)
            else:
                out += c.values(pts) * probe.partial(a, pts)
        return out

    def _merge(self, other: "DiffOperator", sign: float) -> "DiffOperator":
        out = dict(self.coeffs)
        for a, c in other.coeffs.items():
            if a in out:
                out[a] = Coefficient.combine([(1.0, out[a]), (sign, c)])
            else:
                out[a] = c if sign == 1.0 else Coefficient.combine([(sign, c)])
        return DiffOperator(out)

    def __add__(self, other):
        return self._merge(other, 1.0)

    def __sub__(self, other):
        return self._merge(other, -1.0)

    def __neg__(self):
        return self.scaled(-1.0)

    def scaled(self, factor: complex) -> "DiffOperator":
        return DiffOperator({a: Coefficient.combine([(factor, c)]) for a, c in self.coeffs.items()})

    def __repr__(self):
        return f"DiffOperator(order={self.order}, terms={sorted(self.coeffs, key=lambda a: (sum(a), a))})"


def _sub_indices(alpha):
    return product(*(range(a + 1) for a in alpha))


def compose(a: DiffOperator, b: DiffOperator, max_order: int = MAX_ORDER) -> DiffOperator:
    """Exact composition ``a o b`` by the Leibniz rule.

    The coefficient of ``d^(alpha - gamma + beta)`` collects
    ``C(alpha, gamma) a_alpha d^gamma b_beta`` over ``gamma <= alpha``.
    """
    if a.order + b.order > max_order:
        raise OrderOverflow(f"composition of orders {a.order} and {b.order} exceeds {max_order}")
    terms: dict = {}
    for alpha, ca in a.coeffs.items():
        for beta, cb in b.coeffs.items():
            for gamma in _sub_indices(alpha):
                if sum(gamma) and cb.const is not None:
                    continue
                weight = 1
                for x, g in zip(alpha, gamma):
                    weight *= comb(x, g)
                delta = add_index(tuple(x - g for x, g in zip(alpha, gamma)), beta)
                terms.setdefault(delta, []).append((weight, ca, tuple(gamma), cb))

    def make(items):
        if all(ca.const is not None and cb.const is not None for _, ca, _, cb in items):
            return Coefficient.constant(sum(w * ca.const * cb.const for w, ca, _, cb in items))

        def fn(points, order):
            acc = None
            for w, ca, gamma, cb in items:
                bj = cb.jet(points, order + sum(gamma)).diff(gamma)
                j = ca.jet(points, order) * bj
                if w != 1:
                    j = j * w
                acc = j if acc is None else acc + j
            return acc

        return Coefficient(fn)

    return DiffOperator({d: make(items) for d, items in terms.items()})


def commutator(a: DiffOperator, b: DiffOperator) -> DiffOperator:
    """``[a, b] = a o b - b o a`` (both operands of order at most 2)."""
    if a.order > 2 or b.order > 2:
        raise OrderOverflow("commutators are supported for operators of order <= 2")
    return compose(a, b) - compose(b, a)


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

class TestFunction:
    """``P(x - c) exp(-sum (x_i - c_i)^2 / (2 w_i^2))`` with a complex polynomial ``P``.

    The family is closed under differentiation: with ``u = x - c``,
    ``d_i (P G) = (d_i P - u_i P / w_i^2) G``.
    """

    __test__ = False  # not a pytest class

    def __init__(self, poly: Mapping[tuple, complex], center, widths):
        self.poly = {tuple(e): complex(c) for e, c in poly.items() if c != 0}
        self.center = np.asarray(center, dtype=float)
        self.widths = np.asarray(widths, dtype=float)
        if np.any(self.widths <= 0):
            raise ValueError("Gaussian widths must be positive")
        self._derivs = {ZERO: self}

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.poly), default=0)

    def _d(self, axis: int) -> "TestFunction":
        out: dict = {}
        inv = 1.0 / self.widths[axis] ** 2
        for e, c in self.poly.items():
            if e[axis]:
                k = tuple(v - (1 if i == axis else 0) for i, v in enumerate(e))
                out[k] = out.get(k, 0) + c * e[axis]
            k = tuple(v + (1 if i == axis else 0) for i, v in enumerate(e))
            out[k] = out.get(k, 0) - c * inv
        return TestFunction(out, self.center, self.widths)

    def derivative(self, alpha) -> "TestFunction":
        alpha = tuple(alpha)
        if alpha not in self._derivs:
            axis = next(i for i, a in enumerate(alpha) if a)
            prev = tuple(a - (1 if i == axis else 0) for i, a in enumerate(alpha))
            self._derivs[alpha] = self.derivative(prev)._d(axis)
        return self._derivs[alpha]

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u = pts - self.center
        gauss = np.exp(-0.5 * np.sum((u / self.widths) ** 2, axis=1))
        val = np.zeros(len(pts), dtype=complex)
        for e, c in self.poly.items():
            val += c * u[:, 0] ** e[0] * u[:, 1] ** e[1] * u[:, 2] ** e[2]
        return val * gauss

    def partial(self, alpha, points) -> np.ndarray:
        return self.derivative(alpha)(points)

    @classmethod
    def gaussian(cls, center, widths=(1.0, 1.0, 1.0)) -> "TestFunction":
        return cls({ZERO: 1.0}, center, widths)

    @classmethod
    def random(cls, rng: np.random.Generator, center, degree: int = 3,
               width_range=(0.7, 1.5)) -> "TestFunction":
        poly = {e: complex(rng.normal(), rng.normal()) for e in multi_indices(degree, 3)}
        return cls(poly, center, rng.uniform(*width_range, 3))


def random_probes(n: int, rng: np.random.Generator, domain: Domain | None = None, degree: int = 3):
    domain = domain or Domain()
    centers = domain.sample_cart(n, rng)
    return [TestFunction.random(rng, c, degree) for c in centers]


# ---------------------------------------------------------------------------
# operators of a system
# ---------------------------------------------------------------------------

class _SystemJets:
    """Memoised coefficient jets of one system at one value of hbar."""

    def __init__(self, system: SystemSpec, hbar: float):
        self.system = system
        self.hbar = float(hbar)
        self._memo = {}

    def get(self, group: str, points, order: int) -> list:
        key = (group, _pkey(points))
        hit = self._memo.get(key)
        if hit is None or hit[0].order < order:
            ev = self.system.gauge._ev
            hit = ev.cart(group, points, order, self.hbar)
            self._memo[key] = hit
        return [j.truncate(order) for j in hit]


def _coef(fn) -> Coefficient:
    return Coefficient(fn)


def _coordinate(axis: int) -> Coefficient:
    return Coefficient(lambda pts, n: Jet.coordinate(pts, axis, n))


def covariant_momentum(system: SystemSpec, axis: int, hbar: float, jets: _SystemJets | None = None) -> DiffOperator:
    """``P_axis = -i hbar d_axis + A_axis``."""
    jets = jets or _SystemJets(system, hbar)
    return DiffOperator({E[axis]: Coefficient.constant(-1j * hbar),
                         ZERO: _coef(lambda pts, n: jets.get("A", pts, n)[axis])})


def angular_momentum(system: SystemSpec, hbar: float, jets: _SystemJets | None = None) -> DiffOperator:
    """``L_z^A = x P_y - y P_x``."""
    jets = jets or _SystemJets(system, hbar)
    x, y = _coordinate(0), _coordinate(1)

    def zeroth(pts, n):
        A = jets.get("A", pts, n)
        return x.jet(pts, n) * A[1] - y.jet(pts, n) * A[0]

    return DiffOperator({
        E[1]: Coefficient.combine([(-1j * hbar, x)]),
        E[0]: Coefficient.combine([(1j * hbar, y)]),
        ZERO: _coef(zeroth),
    })


def build_hamiltonian(system: SystemSpec, hbar: float) -> DiffOperator:
    """``-hbar^2/2 Laplacian - i hbar A.grad - (i hbar/2) div A + |A|^2/2 + W``.

    W carries its hbar^2 part exactly when the system's correction flag is set.
    """
    jets = _SystemJets(system, hbar)
    coeffs = {add_index(E[i], E[i]): Coefficient.constant(-(hbar**2) / 2) for i in range(3)}
    for i in range(3):
        coeffs[E[i]] = _coef(lambda pts, n, i=i: jets.get("A", pts, n)[i] * (-1j * hbar))

    def zeroth(pts, n):
        A = jets.get("A", pts, n + 1)
        div = A[0].diff(E[0]) + A[1].diff(E[1]) + A[2].diff(E[2])
        kinetic = (A[0] * A[0] + A[1] * A[1] + A[2] * A[2]).truncate(n) * 0.5
        return div * (-0.5j * hbar) + kinetic + jets.get("W", pts, n)[0]

    coeffs[ZERO] = _coef(zeroth)
    return DiffOperator(coeffs)


def build_hamiltonian_from_momenta(system: SystemSpec, hbar: float) -> DiffOperator:
    """``sum_j P_j o P_j / 2 + W`` built by composition (cross-check of the expanded form)."""
    jets = _SystemJets(system, hbar)
    out = DiffOperator.multiplication(_coef(lambda pts, n: jets.get("W", pts, n)[0]))
    for axis in range(3):
        P = covariant_momentum(system, axis, hbar, jets)
        out = out + compose(P, P).scaled(0.5)
    return out


def first_order_part(system: SystemSpec, name: str, hbar: float, jets: _SystemJets | None = None) -> DiffOperator:
    """Symmetrised ``(s.P + P.s)/2 + m`` of one integral, in Cartesian form."""
    jets = jets or _SystemJets(system, hbar)
    coeffs = {}
    for i in range(3):
        coeffs[E[i]] = _coef(lambda pts, n, i=i: jets.get(name + ".s", pts, n)[i] * (-1j * hbar))

    def zeroth(pts, n):
        s = jets.get(name + ".s", pts, n + 1)
        A = jets.get("A", pts, n)
        div = s[0].diff(E[0]) + s[1].diff(E[1]) + s[2].diff(E[2])
        sA = s[0].truncate(n) * A[0] + s[1].truncate(n) * A[1] + s[2].truncate(n) * A[2]
        return div * (-0.5j * hbar) + sA + jets.get(name + ".m", pts, n)[0]

    coeffs[ZERO] = _coef(zeroth)
    return DiffOperator(coeffs)


def build_integral(system: SystemSpec, which: str, hbar: float) -> DiffOperator:
    """Operator of ``X1``, ``X2`` or ``X2_FULL``.

    The leading term is the composition square of ``L_z^A`` or ``P_z``; the
    first-order part is symmetrised and ``m`` carries its hbar^2 part only
    when the correction flag is set.
    """
    name = which.lower()
    coeffs = system.integral(which)
    jets = _SystemJets(system, hbar)
    out = first_order_part(system, name, hbar, jets)
    if coeffs.leading is Leading.PPHI_SQUARED:
        L = angular_momentum(system, hbar, jets)
        out = compose(L, L) + out
    elif coeffs.leading is Leading.PZ_SQUARED:
        P = covariant_momentum(system, 2, hbar, jets)
        out = compose(P, P) + out
    return out


def system_operator(system: SystemSpec, name: str, hbar: float) -> DiffOperator:
    if name.upper() == "H":
        return build_hamiltonian(system, hbar)
    return build_integral(system, name, hbar)


PAIRS = (("H", "X1"), ("H", "X2"), ("X1", "X2"))


def parse_pair(pair) -> tuple:
    if isinstance(pair, str):
        pair = tuple(p.strip() for p in pair.replace("[", "").replace("]", "").split(","))
    if len(pair) != 2:
        raise ValueError(f"a pair needs two operator names, got {pair!r}")
    return tuple(p.upper() for p in pair)


@dataclass
class CommutatorReport:
    """Pointwise values of ``[a, b] psi`` for every probe and point."""

    pair: tuple
    hbar: float
    residuals: np.ndarray  # (n_probes, n_points) complex
    scale: np.ndarray  # (n_probes,) max of |a(b psi)|, |b(a psi)| over points

    @property
    def relative(self) -> np.ndarray:
        return np.abs(self.residuals) / self.scale[:, None]

    @property
    def max_relative(self) -> float:
        return float(np.max(self.relative))

    @property
    def mean_relative(self) -> float:
        return float(np.mean(self.relative))

    def summary(self) -> dict:
        return {"pair": "[" + ",".join(self.pair) + "]", "hbar": self.hbar,
                "max_relative": self.max_relative, "mean_relative": self.mean_relative,
                "probes": int(self.residuals.shape[0]), "points": int(self.residuals.shape[1])}


def operator_commutator_residual(a: DiffOperator, b: DiffOperator, probes, points,
                                 pair=("a", "b"), hbar: float = float("nan")) -> CommutatorReport:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    comm = commutator(a, b)
    ab, ba = compose(a, b), compose(b, a)
    res, scale = [], []
    for probe in probes:
        res.append(comm.apply(probe, pts))
        scale.append(max(np.max(np.abs(ab.apply(probe, pts))), np.max(np.abs(ba.apply(probe, pts)))))
    scale = np.asarray(scale)
    if np.any(scale <= 0):
        scale = np.where(scale > 0, scale, 1.0)
    return CommutatorReport(tuple(pair), hbar, np.array(res), scale)


def commutator_residual(system: SystemSpec, pair, hbar: float, probes, points) -> CommutatorReport:
    """Relative residuals of ``[a, b] psi`` for a pair such as ``("H", "X1")``."""
    names = parse_pair(pair)
    a, b = (system_operator(system, n, hbar) for n in names)
    return operator_commutator_residual(a, b, probes, points, names, hbar)


def zeroth_order_deficit(a: DiffOperator, b: DiffOperator, points) -> np.ndarray:
    """Zeroth-order coefficient of ``[a, b]`` at the points."""
    comm = commutator(a, b)
    c = comm.coeffs.get(ZERO)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.zeros(len(pts), dtype=complex) if c is None else c.values(pts)


MIN_SPAN = 4.0


@dataclass
class ScalingFit:
    exponent: float
    hbar_values: np.ndarray
    residuals: np.ndarray
    intercept: float


def fit_power_law(hbar_values, residuals, floor: float = 1e-9) -> ScalingFit:
    """Least-squares slope of ``log residual`` against ``log hbar``."""
    h = np.asarray(hbar_values, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if len(np.unique(h)) < 4 or np.max(h) / np.min(h) < MIN_SPAN:
        raise ValueError(f"need at least 4 distinct hbar values spanning a factor {MIN_SPAN:g}")
    if np.any(r <= floor):
        raise DegenerateFit(f"residuals at noise floor (min {np.min(r):.3g} <= {floor:g})")
    slope, intercept = np.polyfit(np.log(h), np.log(r), 1)
    return ScalingFit(float(slope), h, r, float(intercept))


def hbar_scaling_fit(system: SystemSpec, pair=("H", "X1"), hbar_values=(0.25, 0.5, 1.0, 2.0), points=None,
                     floor: float = 1e-9, seed: int = 0) -> ScalingFit:
    """Power law of the commutator's zeroth-order coefficient in hbar.

    The coefficient is divided by hbar (the commutator itself carries an
    overall ``i hbar``), so a deficit of the form ``hbar^2 x (function)`` in
    the potential shows up as exponent 2.  Pass the system with the
    correction switched off to measure that deficit.
    """
    names = parse_pair(pair)
    if points is None:
        points = system.domain.sample_cart(50, np.random.default_rng(seed))
    residuals = []
    for h in hbar_values:
        a, b = (system_operator(system, n, h) for n in names)
        residuals.append(np.max(np.abs(zeroth_order_deficit(a, b, points))) / h)
    return fit_power_law(hbar_values, residuals, floor)
