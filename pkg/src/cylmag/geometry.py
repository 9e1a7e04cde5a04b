"""Cartesian and cylindrical charts.

Points and component triples are vectorised: every field may be a float or
an array, and arrays broadcast.  Component triples carry a chart tag and a
tensor kind so the transforms can refuse data in the wrong chart.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AxisPoint, ChartMismatch

R_MIN = 1e-6
TWO_PI = 2.0 * np.pi


class Chart(enum.Enum):
    CART = "cartesian"
    CYL = "cylindrical"


class Kind(enum.Enum):
    COVECTOR = "covector"
    VECTOR = "vector"
    TWO_FORM = "two_form"


class CartPoint(NamedTuple):
    x: np.ndarray | float
    y: np.ndarray | float
    z: np.ndarray | float

    def as_array(self) -> np.ndarray:
        """Stack into an ``(n, 3)`` array."""
        return np.stack(np.broadcast_arrays(*map(np.atleast_1d, self)), axis=-1).astype(float)

    @classmethod
    def from_array(cls, pts) -> "CartPoint":
        pts = np.asarray(pts, dtype=float)
        return cls(pts[..., 0], pts[..., 1], pts[..., 2])


class CylPoint(NamedTuple):
    r: np.ndarray | float
    phi: np.ndarray | float
    Z: np.ndarray | float

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(*map(np.atleast_1d, self)), axis=-1).astype(float)


@dataclass(frozen=True)
class Components:
    """Three components of a covector, vector or 2-form in a given chart."""

    chart: Chart
    kind: Kind
    c1: np.ndarray | float
    c2: np.ndarray | float
    c3: np.ndarray | float

    def as_tuple(self):
        return (self.c1, self.c2, self.c3)

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(*map(np.atleast_1d, self.as_tuple())), axis=-1)


def covector(chart, c1, c2, c3) -> Components:
    return Components(chart, Kind.COVECTOR, c1, c2, c3)


def vector(chart, c1, c2, c3) -> Components:
    return Components(chart, Kind.VECTOR, c1, c2, c3)


def two_form(chart, c1, c2, c3) -> Components:
    return Components(chart, Kind.TWO_FORM, c1, c2, c3)


def check_off_axis(r, r_min: float = R_MIN) -> None:
    if np.any(np.asarray(r) < r_min):
        raise AxisPoint(f"point within r < {r_min:g} of the axis")


def cart_to_cyl(p: CartPoint, r_min: float = R_MIN) -> CylPoint:
    """Cartesian to cylindrical; the angle is normalised to ``[0, 2 pi)``."""
    x, y, z = (np.asarray(c, dtype=float) for c in p)
    r = np.hypot(x, y)
    check_off_axis(r, r_min)
    phi = np.mod(np.arctan2(y, x), TWO_PI)
    # mod can round a tiny negative angle up to exactly 2 pi
    phi = np.where(phi >= TWO_PI, 0.0, phi)
    if phi.ndim == 0:
        return CylPoint(float(r), float(phi), float(z))
    return CylPoint(r, phi, z)


def cyl_to_cart(p: CylPoint, r_min: float = R_MIN) -> CartPoint:
    r, phi, z = (np.asarray(c, dtype=float) for c in p)
    check_off_axis(r, r_min)
    x, y = r * np.cos(phi), r * np.sin(phi)
    if x.ndim == 0:
        return CartPoint(float(x), float(y), float(z))
    return CartPoint(x, y, z)


def _expect(c: Components, chart: Chart, kind: Kind) -> None:
    if c.chart is not chart or c.kind is not kind:
        raise ChartMismatch(f"expected {kind.value} in {chart.value} chart, got {c.kind.value} in {c.chart.value}")


def _trig(at: CylPoint, r_min: float):
    r = np.asarray(at.r, dtype=float)
    check_off_axis(r, r_min)
    phi = np.asarray(at.phi, dtype=float)
    return r, np.cos(phi), np.sin(phi)


def covector_cyl_to_cart(a: Components, at: CylPoint, r_min: float = R_MIN) -> Components:
    """1-form components (A_r, A_phi, A_Z) to (A_x, A_y, A_z)."""
    _expect(a, Chart.CYL, Kind.COVECTOR)
    r, c, s = _trig(at, r_min)
    ar, aphi, az = a.as_tuple()
    return covector(Chart.CART, c * ar - s / r * aphi, s * ar + c / r * aphi, az)


def covector_cart_to_cyl(a: Components, at: CylPoint, r_min: float = R_MIN) -> Components:
    _expect(a, Chart.CART, Kind.COVECTOR)
    r, c, s = _trig(at, r_min)
    ax, ay, az = a.as_tuple()
    return covector(Chart.CYL, c * ax + s * ay, r * (-s * ax + c * ay), az)


def vector_cyl_to_cart(v: Components, at: CylPoint, r_min: float = R_MIN) -> Components:
    """Vector components (s^r, s^phi, s^Z) to Cartesian; dual to the covector map."""
    _expect(v, Chart.CYL, Kind.VECTOR)
    r, c, s = _trig(at, r_min)
    vr, vphi, vz = v.as_tuple()
    return vector(Chart.CART, c * vr - r * s * vphi, s * vr + r * c * vphi, vz)


def vector_cart_to_cyl(v: Components, at: CylPoint, r_min: float = R_MIN) -> Components:
    _expect(v, Chart.CART, Kind.VECTOR)
    r, c, s = _trig(at, r_min)
    vx, vy, vz = v.as_tuple()
    return vector(Chart.CYL, c * vx + s * vy, (-s * vx + c * vy) / r, vz)


def two_form_cyl_to_cart(b: Components, at: CylPoint, r_min: float = R_MIN) -> Components:
    """2-form components (B^r, B^phi, B^Z) on (dphi^dZ, dZ^dr, dr^dphi) to Cartesian."""
    _expect(b, Chart.CYL, Kind.TWO_FORM)
    r, c, s = _trig(at, r_min)
    br, bphi, bz = b.as_tuple()
    return two_form(Chart.CART, c / r * br - s * bphi, s / r * br + c * bphi, np.asarray(bz) / r)


def pairing(a: Components, v: Components):
    """Contraction A_i v^i of a covector with a vector in the same chart."""
    if a.kind is not Kind.COVECTOR or v.kind is not Kind.VECTOR or a.chart is not v.chart:
        raise ChartMismatch("pairing needs a covector and a vector in one chart")
    return sum(np.asarray(p) * np.asarray(q) for p, q in zip(a.as_tuple(), v.as_tuple()))


def cartesian_curl(field, point: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Curl of a Cartesian covector field by 6th-order central differences.

    ``field`` maps an ``(n, 3)`` array to an ``(n, 3)`` array of (A_x, A_y, A_z).
    """
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    weights = ((1, 3.0 / 4.0), (2, -3.0 / 20.0), (3, 1.0 / 60.0))

    def partial(axis):
        step = h * np.maximum(1.0, np.abs(pts[:, axis]))[:, None]
        e = np.zeros(3)
        e[axis] = 1.0
        acc = 0.0
        for k, w in weights:
            acc = acc + w * (field(pts + k * step * e) - field(pts - k * step * e))
        return acc / step

    jac = [partial(i) for i in range(3)]  # jac[i][:, k] = d_i A_k
    return np.stack([
        jac[1][:, 2] - jac[2][:, 1],
        jac[2][:, 0] - jac[0][:, 2],
        jac[0][:, 1] - jac[1][:, 0],
    ], axis=-1)
