"""Compile sympy expressions into batched derivative jets.

Expressions may contain *opaque* univariate functions (for instance the
angular profile beta(phi) or a free potential W3(z)) that are only known
through a derivative oracle at run time.  Differentiation goes through
sympy; the opaque applications are then replaced by plain symbols whose
values are supplied by the oracle when the compiled code is evaluated.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .jets import Jet, multi_indices

X, Y, Z = sp.symbols("x y z", real=True)
R_SYM, PHI_SYM, ZC_SYM = sp.symbols("r phi Z", real=True)
T_SYM = sp.Symbol("t", real=True)
CART = (X, Y, Z)
CYL = (R_SYM, PHI_SYM, ZC_SYM)

_MAX_DEPTH = 10
_REGISTRY: dict = {}


class Opaque:
    """Univariate function known only through a derivative oracle.

    ``Opaque("beta")(arg)`` builds a sympy application whose derivatives
    are the applications of ``beta_1``, ``beta_2``, ... so that the chain
    rule produces closed-form expressions in the unknown derivatives.
    """

    def __init__(self, name: str):
        self.name = name
        if name not in _REGISTRY:
            classes = [type(f"{name}_{k}", (sp.Function,), {"nargs": 1}) for k in range(_MAX_DEPTH + 1)]
            for k, cls in enumerate(classes):
                cls._opaque = (name, k)
                if k < _MAX_DEPTH:
                    cls.fdiff = (lambda nxt: lambda self, argindex=1: nxt(self.args[0]))(classes[k + 1])
            _REGISTRY[name] = classes
        self.classes = _REGISTRY[name]

    def __call__(self, arg, k: int = 0):
        return self.classes[k](arg)


def _opaque_applications(exprs) -> list:
    found = set()
    for e in exprs:
        for f in sp.sympify(e).atoms(sp.Function):
            if hasattr(type(f), "_opaque"):
                found.add(f)
    return sorted(found, key=sp.default_sort_key)


def _broadcast(value, shape):
    arr = np.asarray(value)
    if arr.shape == shape:
        return arr
    return np.broadcast_to(arr, shape).copy()


class CompiledBundle:
    """Named expressions compiled together with all partials up to ``order``.

    Parameters
    ----------
    exprs : mapping of name -> sympy expression
    variables : the differentiation variables (e.g. ``CART``)
    params : symbols whose values are supplied at evaluation time
    order : maximal total derivative order
    """

    def __init__(self, exprs: Mapping[str, sp.Expr], variables: Sequence[sp.Symbol],
                 params: Sequence[sp.Symbol], order: int):
        self.names = tuple(exprs)
        self.variables = tuple(variables)
        self.params = tuple(params)
        self.order = order
        self.dim = len(variables)
        self.indices = multi_indices(order, self.dim)

        flat = []
        for name in self.names:
            derivs = {}
            base = sp.sympify(exprs[name])
            for alpha in self.indices:
                if sum(alpha) == 0:
                    derivs[alpha] = base
                    continue
                axis = next(i for i, a in enumerate(alpha) if a)
                prev = tuple(a - (1 if i == axis else 0) for i, a in enumerate(alpha))
                derivs[alpha] = sp.diff(derivs[prev], self.variables[axis])
            flat.extend(derivs[a] for a in self.indices)

        apps = _opaque_applications(flat)
        self._slots = []  # (opaque name, derivative k, index into self._args)
        args, arg_index, subs = [], {}, {}
        for i, app in enumerate(apps):
            name, k = type(app)._opaque
            arg = app.args[0]
            key = (name, arg)
            if key not in arg_index:
                arg_index[key] = len(args)
                args.append((name, arg))
            sym = sp.Dummy(f"{name}{k}_{i}")
            subs[app] = sym
            self._slots.append((name, k, arg_index[key], sym))
        if subs:
            flat = [sp.sympify(e).xreplace(subs) for e in flat]
        self._args = args
        self._arg_fns = [sp.lambdify(self.variables + self.params, a, modules="numpy") for _, a in args]
        slot_syms = tuple(s[3] for s in self._slots)
        self._fn = sp.lambdify(self.variables + self.params + slot_syms, flat, modules="numpy", cse=True)

    def __call__(self, coords: Sequence[np.ndarray], params: Mapping[str, float] | Sequence[float],
                 funcs: Mapping[str, object] | None = None) -> dict:
        """Evaluate; returns ``{name: Jet}``."""
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast(*coords).shape
        if isinstance(params, Mapping):
            pvals = [params[p.name] for p in self.params]
        else:
            pvals = list(params)
        extra = []
        if self._slots:
            if funcs is None:
                raise KeyError("opaque function oracles required")
            cache = {}
            for name, k, ai, _ in self._slots:
                if ai not in cache:
                    argval = _broadcast(self._arg_fns[ai](*coords, *pvals), shape)
                    need = max(kk for nn, kk, aa, _ in self._slots if aa == ai)
                    cache[ai] = funcs[name].derivatives(argval, need)
                extra.append(cache[ai][k])
        raw = self._fn(*coords, *pvals, *extra)
        out = {}
        n = len(self.indices)
        for j, name in enumerate(self.names):
            block = raw[j * n:(j + 1) * n]
            data = {a: _broadcast(v, shape).astype(float, copy=False).reshape(-1) for a, v in zip(self.indices, block)}
            out[name] = Jet(data, self.order, self.dim)
        return out


@lru_cache(maxsize=None)
def compile_bundle(key, exprs_items: tuple, variables: tuple, params: tuple, order: int) -> CompiledBundle:
    """Cached :class:`CompiledBundle` constructor (``key`` only labels the cache entry)."""
    return CompiledBundle(dict(exprs_items), variables, params, order)


def cyl_to_cart_subs() -> dict:
    return {R_SYM: sp.sqrt(X**2 + Y**2), PHI_SYM: sp.atan2(Y, X), ZC_SYM: Z}
