"""Residuals of the reduced determining equations.

For the cylindrical-type integrals the second-order parts are fixed by five
one-variable functions psi(phi), rho(r), mu(Z), sigma(r), tau(phi).  What
remains of the determining equations is

* two algebraic-differential conditions on the auxiliary functions alone,
* three conditions on the mixed second partials of W,
* a linear system ``M (W_r, W_phi, W_Z)^T = (0, -hbar^2 (psi''' + psi') / (4 r^3), 0)^T``.

The functions here evaluate each of these as ``LHS - RHS`` at a batch of
points, together with a scale (largest individual term) for forming
relative residuals.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry as geo
from .fields import AuxFunctions, FieldConfiguration, SystemSpec
from .geometry import CylPoint

RANK_RTOL = 1e-10


def _coords(at: CylPoint, r_min: float):
    r, phi, z = np.broadcast_arrays(*(np.atleast_1d(np.asarray(c, dtype=float)) for c in at))
    geo.check_off_axis(r, r_min)
    return r, phi, z


@dataclass
class _AuxValues:
    psi: list
    rho: list
    mu: list
    sigma: list
    tau: list


def _aux_values(aux: AuxFunctions, r, phi, z) -> _AuxValues:
    return _AuxValues(aux.psi.derivatives(phi, 3), aux.rho.derivatives(r, 2), aux.mu.derivatives(z, 2),
                      aux.sigma.derivatives(r, 1), aux.tau.derivatives(phi, 2))


def _max_abs(*terms):
    return np.max(np.abs(np.stack(np.broadcast_arrays(*terms))), axis=0)


def reduced_a_residuals(aux: AuxFunctions, at: CylPoint, r_min: float = geo.R_MIN):
    """The two conditions on the auxiliary functions alone.

    Returns
    -------
    (res1, res2), (scale1, scale2)
        ``res1 = psi' (r^3 sigma' + 2 tau) - tau' (r rho - psi)`` and
        ``res2 = mu psi' + r^3 sigma mu'``, with the largest term of each.
    """
    r, phi, z = _coords(at, r_min)
    a = _aux_values(aux, r, phi, z)
    psi, dpsi = a.psi[0], a.psi[1]
    t1 = dpsi * (r**3 * a.sigma[1] + 2 * a.tau[0])
    t2 = a.tau[1] * (r * a.rho[0] - psi)
    u1 = a.mu[0] * dpsi
    u2 = r**3 * a.sigma[0] * a.mu[1]
    return (t1 - t2, u1 + u2), (_max_abs(t1, t2), _max_abs(u1, u2))


# ---------------------------------------------------------------------------
# partials of W
# ---------------------------------------------------------------------------

_NEEDED = {"r": (1, 0, 0), "phi": (0, 1, 0), "Z": (0, 0, 1),
           "rphi": (1, 1, 0), "phiZ": (0, 1, 1), "rZ": (1, 0, 1)}


def _fd_partials(W: Callable, r, phi, z, rel_step: float = 2e-3) -> dict:
    # 4th-order central differences; steps scale with the coordinate magnitude
    x = [r, phi, z]
    h = [rel_step * np.maximum(1.0, np.abs(c)) for c in x]

    def shifted(offsets):
        args = [c + o * hh for c, o, hh in zip(x, offsets, h)]
        return np.asarray(W(CylPoint(*args)), dtype=float)

    def d1(i):
        e = [0, 0, 0]
        out = 0.0
        for k, w in ((1, 8.0), (2, -1.0)):
            e[i] = k
            plus = shifted(e)
            e[i] = -k
            out = out + w * (plus - shifted(e))
        return out / (12 * h[i])

    def d2(i, j):
        weights = ((1, 8.0), (2, -1.0))
        out = 0.0
        for ki, wi in weights:
            for kj, wj in weights:
                for si in (1, -1):
                    for sj in (1, -1):
                        e = [0, 0, 0]
                        e[i], e[j] = si * ki, sj * kj
                        out = out + si * sj * wi * wj * shifted(e)
        return out / (144 * h[i] * h[j])

    return {"r": d1(0), "phi": d1(1), "Z": d1(2), "rphi": d2(0, 1), "phiZ": d2(1, 2), "rZ": d2(0, 2)}


FD_STEPS = (1e-3, 5e-4, 2.5e-4, 1.25e-4)


def _adaptive_fd_partials(W: Callable, r, phi, z, steps=FD_STEPS) -> dict:
    # per point, keep the estimate that agrees best with the next smaller step
    ests = [_fd_partials(W, r, phi, z, h) for h in steps]
    out = {}
    for key in ests[0]:
        stack = np.stack([e[key] for e in ests])
        gaps = np.abs(np.diff(stack, axis=0))
        best = np.argmin(gaps, axis=0)
        out[key] = np.take_along_axis(stack[1:], best[None], axis=0)[0]
    return out


def potential_partials(W, at: CylPoint, hbar: float = 1.0, r_min: float = geo.R_MIN) -> dict:
    """First partials and the mixed second partials of W in (r, phi, Z).

    ``W`` is a :class:`FieldConfiguration` (exact partials) or a callable
    ``W(CylPoint) -> array`` (finite-difference fallback).
    """
    r, phi, z = _coords(at, r_min)
    if isinstance(W, FieldConfiguration):
        jet = W.W_partials(CylPoint(r, phi, z), 2, hbar)
        return {k: jet[a].reshape(r.shape) for k, a in _NEEDED.items()}
    return _adaptive_fd_partials(W, r, phi, z)


def reduced_b_residuals(aux: AuxFunctions, W, at: CylPoint, hbar: float = 1.0, r_min: float = geo.R_MIN):
    """The three conditions on the mixed partials W_rphi, W_phiZ, W_rZ.

    Returns
    -------
    (res_rphi, res_phiZ, res_rZ), (scales)
    """
    r, phi, z = _coords(at, r_min)
    a = _aux_values(aux, r, phi, z)
    d = potential_partials(W, CylPoint(r, phi, z), hbar, r_min)
    psi, dpsi, ddpsi, dddpsi = a.psi
    rho, drho, ddrho = a.rho
    mu, dmu, ddmu = a.mu
    sigma, dsigma = a.sigma
    tau, dtau, ddtau = a.tau

    src = [
        dpsi * (r**3 * (ddrho - mu) - r**2 * drho + r * rho - 3 * ddpsi - 4 * psi),
        dtau * (r**3 * dsigma + 2 * tau),
        -2 * r**4 * tau * dmu,
        -dddpsi * (psi - r * rho),
    ]
    rhs1 = -2 / r * d["phi"] + sum(src) / (4 * r**5)
    res1 = d["rphi"] - rhs1
    scale1 = _max_abs(d["rphi"], 2 / r * d["phi"], *(s / (4 * r**5) for s in src))

    src2 = [r**2 * ddmu * (tau - r**2 * sigma), ddtau * mu]
    res2 = d["phiZ"] + sum(src2) / (4 * r**2)
    scale2 = _max_abs(d["phiZ"], *(s / (4 * r**2) for s in src2))

    src3 = [r * dmu * (r**2 * drho + psi - 2 * r**3 * mu), 2 * mu * dtau]
    res3 = d["rZ"] - sum(src3) / (4 * r**3)
    scale3 = _max_abs(d["rZ"], *(s / (4 * r**3) for s in src3))
    return (res1, res2, res3), (scale1, scale2, scale3)


def matrix_M(aux: AuxFunctions, at: CylPoint, r_min: float = geo.R_MIN) -> np.ndarray:
    """The coefficient matrix M, shape ``(n, 3, 3)``."""
    r, phi, z = _coords(at, r_min)
    psi, dpsi = aux.psi.derivatives(phi, 1)
    rho = aux.rho(r)
    mu = aux.mu(z)
    sigma = aux.sigma(r)
    tau = aux.tau(phi)
    zero = np.zeros_like(r)
    rows = [
        [zero, r**2 * mu, r**2 * sigma - tau],
        [dpsi + zero, rho - r**2 * mu - psi / r, tau + zero],
        [zero, 4 * r**7 * mu, -4 * r**5 * tau],
    ]
    return np.moveaxis(np.array([[np.broadcast_to(c, r.shape) for c in row] for row in rows]), (0, 1), (-2, -1))


def matrix_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Numerical rank of each 3x3 block: singular values above ``rtol * sigma_max``."""
    sv = np.linalg.svd(M, compute_uv=False)
    top = sv[..., :1]
    return np.where(top[..., 0] > 0, np.sum(sv > rtol * top, axis=-1), 0)


def matrix_equation_residual(aux: AuxFunctions, W, hbar: float, at: CylPoint, r_min: float = geo.R_MIN):
    """``M (W_r, W_phi, W_Z)^T - RHS`` and the rank of M at each point.

    Returns
    -------
    residual : array ``(n, 3)``
    rank : int array ``(n,)``
    scale : array ``(n, 3)`` of the largest term in each row
    """
    r, phi, z = _coords(at, r_min)
    M = matrix_M(aux, CylPoint(r, phi, z), r_min)
    d = potential_partials(W, CylPoint(r, phi, z), hbar, r_min)
    grad = np.stack([d["r"], d["phi"], d["Z"]], axis=-1)
    _, dpsi, _, dddpsi = aux.psi.derivatives(phi, 3)
    rhs = np.zeros_like(grad)
    rhs[:, 1] = -(hbar**2) * (dddpsi + dpsi) / (4 * r**3)
    terms = M * grad[:, None, :]
    residual = terms.sum(axis=-1) - rhs
    scale = np.maximum(np.max(np.abs(terms), axis=-1), np.abs(rhs))
    return residual, matrix_rank(M), scale


@dataclass
class ReducedResiduals:
    """All reduced-equation residuals at a batch of points."""

    resA1: np.ndarray
    resA2: np.ndarray
    resB: tuple
    resM: np.ndarray
    rankM: np.ndarray
    scaleA: tuple
    scaleB: tuple
    scaleM: np.ndarray

    def max_abs(self) -> dict:
        return {
            "A1": float(np.max(np.abs(self.resA1))),
            "A2": float(np.max(np.abs(self.resA2))),
            "B_rphi": float(np.max(np.abs(self.resB[0]))),
            "B_phiZ": float(np.max(np.abs(self.resB[1]))),
            "B_rZ": float(np.max(np.abs(self.resB[2]))),
            "M1": float(np.max(np.abs(self.resM[:, 0]))),
            "M2": float(np.max(np.abs(self.resM[:, 1]))),
            "M3": float(np.max(np.abs(self.resM[:, 2]))),
        }

    def mean_abs(self) -> dict:
        cols = {"A1": self.resA1, "A2": self.resA2, "B_rphi": self.resB[0], "B_phiZ": self.resB[1],
                "B_rZ": self.resB[2], "M1": self.resM[:, 0], "M2": self.resM[:, 1], "M3": self.resM[:, 2]}
        return {k: float(np.mean(np.abs(v))) for k, v in cols.items()}

    def relative_max(self) -> dict:
        """Largest ``|residual| / max(1, scale)`` per equation."""
        rel = lambda res, sc: float(np.max(np.abs(res) / np.maximum(1.0, sc)))  # noqa: E731
        return {
            "A1": rel(self.resA1, self.scaleA[0]), "A2": rel(self.resA2, self.scaleA[1]),
            "B_rphi": rel(self.resB[0], self.scaleB[0]), "B_phiZ": rel(self.resB[1], self.scaleB[1]),
            "B_rZ": rel(self.resB[2], self.scaleB[2]),
            "M1": rel(self.resM[:, 0], self.scaleM[:, 0]), "M2": rel(self.resM[:, 1], self.scaleM[:, 1]),
            "M3": rel(self.resM[:, 2], self.scaleM[:, 2]),
        }

    def rank_histogram(self) -> dict:
        values, counts = np.unique(self.rankM, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


def reduced_residuals(aux: AuxFunctions, W, at: CylPoint, hbar: float = 1.0,
                      r_min: float = geo.R_MIN) -> ReducedResiduals:
    (a1, a2), sa = reduced_a_residuals(aux, at, r_min)
    resB, sb = reduced_b_residuals(aux, W, at, hbar, r_min)
    resM, rank, sm = matrix_equation_residual(aux, W, hbar, at, r_min)
    return ReducedResiduals(a1, a2, resB, resM, rank, sa, sb, sm)


def system_residuals(system: SystemSpec, at: CylPoint, hbar: float = 1.0, finite_difference: bool = False) -> ReducedResiduals:
    """Reduced residuals of a catalog system (exact W partials unless ``finite_difference``)."""
    W = system.field
    if finite_difference:
        W = lambda p: system.field.W(p, hbar)  # noqa: E731
    return reduced_residuals(system.aux, W, at, hbar)
