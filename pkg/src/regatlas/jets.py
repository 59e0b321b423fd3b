"""Truncated-Taylor jet arithmetic in one and two dimensions.

Jets store raw derivative values (f, f', f'', ...), not Taylor coefficients;
conversion helpers are provided.  Compositions use chain-rule term tables with
integer weights, built once by formal recursive differentiation, so composing
polynomial jets is exact in floating point whenever the inputs are.

All operations accept trailing batch axes: a ``Jet1D`` with ``coeffs`` of
shape ``(order+1, n)`` is a batch of n jets and every operation broadcasts
over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import JetError

MAX_ORDER = 8

_BASE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Triangular index maps for 2D jets
# ---------------------------------------------------------------------------

def tri_indices(order):
    """(i, j) pairs with i + j <= order, by total degree then descending i."""
    out = []
    for d in range(order + 1):
        for i in range(d, -1, -1):
            out.append((i, d - i))
    return out


_TRI_LIST = {q: tri_indices(q) for q in range(MAX_ORDER + 2)}
_TRI_POS = {q: {ij: k for k, ij in enumerate(_TRI_LIST[q])} for q in _TRI_LIST}


def tri_size(order):
    return (order + 1) * (order + 2) // 2


# ---------------------------------------------------------------------------
# Chain-rule term tables (formal differentiation, integer coefficients)
# ---------------------------------------------------------------------------
#
# A term is (coeff, outer_key, factors) representing
#     coeff * D^{outer_key} outer (inner) * prod_f D^{f} inner_component.
# Tables are built by differentiating term lists and merging like terms, so
# every coefficient is the integer the chain rule dictates.

def _merge(terms):
    out = {}
    for c, m, fs in terms:
        key = (m, tuple(sorted(fs)))
        out[key] = out.get(key, 0) + c
    return [(c, m, fs) for (m, fs), c in out.items() if c != 0]


def _diff_terms(terms, chain_keys, bump):
    """One formal derivative: chain rule on the outer + product rule on factors.

    chain_keys: list of (new_outer_key, new_factor) pairs for the outer slot.
    bump: function factor -> differentiated factor.
    """
    new = []
    for c, m, fs in terms:
        for nm, nf in chain_keys(m):
            new.append((c, nm, tuple(sorted(fs + (nf,)))))
        for f in set(fs):
            mu = fs.count(f)
            lst = list(fs)
            lst.remove(f)
            lst.append(bump(f))
            new.append((c * mu, m, tuple(sorted(lst))))
    return _merge(new)


def _build_fdb_1o1i(max_order):
    """1D outer, 1D inner: tables[k] lists (c, m, parts) for d^k (f o g)."""
    levels = [[(1, 0, ())]]
    for _ in range(max_order):
        levels.append(_diff_terms(
            levels[-1],
            chain_keys=lambda m: [(m + 1, 1)],
            bump=lambda f: f + 1,
        ))
    return levels


def _build_fdb_2o_grid(max_order, inner_x_keys, inner_y_keys, bump_x, bump_y):
    """Outer has 2 arguments; build tables for every (r1, r2), r1+r2 <= max."""
    tables = {(0, 0): [(1, (0, 0), ())]}
    for r1 in range(max_order):
        tables[(r1 + 1, 0)] = _diff_terms(
            tables[(r1, 0)],
            chain_keys=lambda ab: [((ab[0] + 1, ab[1]), k) for k in inner_x_keys[0]]
            + [((ab[0], ab[1] + 1), k) for k in inner_x_keys[1]],
            bump=bump_x,
        )
    for r1 in range(max_order + 1):
        r2 = 0
        while r1 + r2 < max_order:
            tables[(r1, r2 + 1)] = _diff_terms(
                tables[(r1, r2)],
                chain_keys=lambda ab: [((ab[0] + 1, ab[1]), k) for k in inner_y_keys[0]]
                + [((ab[0], ab[1] + 1), k) for k in inner_y_keys[1]],
                bump=bump_y,
            )
            r2 += 1
    return tables


class _Tables:
    """Lazily built, then cached.  Call warm() before concurrent use."""

    def __init__(self):
        self.fdb_1o1i = None          # 1D outer, 1D inner
        self.fdb_2o2i = None          # 2D outer, 2D inner (map o map per comp)
        self.fdb_2o1i = None          # 2D outer, curve inner
        self.fdb_1o2i = None          # 1D outer, 2D scalar inner
        self.max_order = 0

    def warm(self, order=MAX_ORDER):
        if order > MAX_ORDER:
            raise JetError(f"order {order} exceeds MAX_ORDER={MAX_ORDER}")
        if order <= self.max_order:
            return
        self.fdb_1o1i = _build_fdb_1o1i(order)
        # inner components keyed by (comp, s1, s2); comp 0/1 selects x/y output
        self.fdb_2o2i = _build_fdb_2o_grid(
            order,
            inner_x_keys=([(0, 1, 0)], [(1, 1, 0)]),
            inner_y_keys=([(0, 0, 1)], [(1, 0, 1)]),
            bump_x=lambda f: (f[0], f[1] + 1, f[2]),
            bump_y=lambda f: (f[0], f[1], f[2] + 1),
        )
        # curve inner: factors (comp, s) = d^s/dt^s of component
        curve = {(0, 0): [(1, (0, 0), ())]}
        for k in range(order):
            curve_level = _diff_terms(
                curve[(k, 0)],
                chain_keys=lambda ab: [((ab[0] + 1, ab[1]), (0, 1)),
                                       ((ab[0], ab[1] + 1), (1, 1))],
                bump=lambda f: (f[0], f[1] + 1),
            )
            curve[(k + 1, 0)] = curve_level
        self.fdb_2o1i = [curve[(k, 0)] for k in range(order + 1)]
        # 1D outer with 2D scalar inner: factors (s1, s2)
        tab = {(0, 0): [(1, 0, ())]}
        for r1 in range(order):
            tab[(r1 + 1, 0)] = _diff_terms(
                tab[(r1, 0)], chain_keys=lambda m: [(m + 1, (1, 0))],
                bump=lambda f: (f[0] + 1, f[1]))
        for r1 in range(order + 1):
            r2 = 0
            while r1 + r2 < order:
                tab[(r1, r2 + 1)] = _diff_terms(
                    tab[(r1, r2)], chain_keys=lambda m: [(m + 1, (0, 1))],
                    bump=lambda f: (f[0], f[1] + 1))
                r2 += 1
        self.fdb_1o2i = tab
        self.max_order = order


_TABLES = _Tables()
_TABLES.warm(MAX_ORDER)


def warm_tables(order=MAX_ORDER):
    _TABLES.warm(order)


# ---------------------------------------------------------------------------
# Jet1D
# ---------------------------------------------------------------------------

class Jet1D:
    """Derivative values f(x0), f'(x0), ..., f^(order)(x0); batched over
    trailing axes of ``coeffs``."""

    __slots__ = ("x0", "coeffs")

    def __init__(self, x0, coeffs):
        self.x0 = np.asarray(x0, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape[0] < 1:
            raise JetError("empty jet")

    @property
    def order(self):
        return self.coeffs.shape[0] - 1

    @property
    def value(self):
        return self.coeffs[0]

    def check_finite(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise JetError("non-finite jet entries")
        return self

    @classmethod
    def identity(cls, x0, order, batch=None):
        x0 = np.asarray(x0, dtype=float)
        batch = x0.shape if batch is None else batch
        x0 = np.broadcast_to(x0, batch).copy()
        c = np.zeros((order + 1,) + batch)
        c[0] = x0
        if order >= 1:
            c[1] = 1.0
        return cls(x0, c)

    @classmethod
    def constant(cls, value, x0, order):
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        return cls(x0, c)

    @classmethod
    def from_poly(cls, poly, x0, order):
        """poly: ascending coefficients a_k of sum a_k x^k (exact jets)."""
        x0 = float(x0)
        poly = np.asarray(poly, dtype=float)
        c = np.empty(order + 1)
        for k in range(order + 1):
            # k-th derivative of the polynomial at x0
            acc = 0.0
            for i in range(len(poly) - 1, k - 1, -1):
                acc = acc * x0 + poly[i] * math.perm(i, k)
            c[k] = acc
        return cls(x0, c)

    def to_taylor(self):
        fact = np.array([math.factorial(k) for k in range(self.order + 1)])
        return self.coeffs / fact.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))

    def eval(self, x):
        """Taylor evaluation of the jet polynomial at x."""
        dx = np.asarray(x, dtype=float) - self.x0
        t = self.to_taylor()
        out = np.zeros(np.broadcast(dx, t[0]).shape)
        for k in range(self.order, -1, -1):
            out = out * dx + t[k]
        return out

    def truncate(self, order):
        if order > self.order:
            raise JetError("cannot raise jet order by truncation")
        return Jet1D(self.x0, self.coeffs[: order + 1])


def _check_match(outer_base, inner_value, scale=1.0):
    if not np.allclose(outer_base, inner_value, atol=_BASE_TOL * (1.0 + abs(scale)), rtol=1e-12):
        raise JetError("outer jet base point does not match inner jet value")


def jet_compose_1d(outer: Jet1D, inner: Jet1D) -> Jet1D:
    """Jet of outer o inner at inner.x0 (orders must agree)."""
    if outer.order != inner.order:
        raise JetError("jet order mismatch in composition")
    _check_match(outer.x0, inner.value, np.max(np.abs(outer.x0)) if outer.x0.size else 1.0)
    order = outer.order
    batch = np.broadcast(outer.coeffs[0], inner.coeffs[0]).shape
    out = np.zeros((order + 1,) + batch)
    out[0] = outer.coeffs[0]
    for k in range(1, order + 1):
        acc = np.zeros(batch)
        for c, m, parts in _TABLES.fdb_1o1i[k]:
            term = c * outer.coeffs[m]
            for p in parts:
                term = term * inner.coeffs[p]
            acc = acc + term
        out[k] = acc
    return Jet1D(inner.x0, out)


def jet_add(a: Jet1D, b: Jet1D) -> Jet1D:
    return Jet1D(a.x0, a.coeffs + b.coeffs)


def jet_scale(a: Jet1D, s) -> Jet1D:
    return Jet1D(a.x0, a.coeffs * s)


def jet_product(a: Jet1D, b: Jet1D) -> Jet1D:
    if a.order != b.order:
        raise JetError("jet order mismatch in product")
    order = a.order
    batch = np.broadcast(a.coeffs[0], b.coeffs[0]).shape
    out = np.zeros((order + 1,) + batch)
    for k in range(order + 1):
        acc = np.zeros(batch)
        for i in range(k + 1):
            acc = acc + math.comb(k, i) * a.coeffs[i] * b.coeffs[k - i]
        out[k] = acc
    return Jet1D(a.x0, out)


def jet_quotient(a: Jet1D, b: Jet1D) -> Jet1D:
    """q with q*b == a to truncation order; requires b.value != 0."""
    if a.order != b.order:
        raise JetError("jet order mismatch in quotient")
    if np.any(np.abs(b.value) == 0.0):
        raise JetError("quotient by jet with zero constant term")
    order = a.order
    batch = np.broadcast(a.coeffs[0], b.coeffs[0]).shape
    q = np.zeros((order + 1,) + batch)
    for k in range(order + 1):
        acc = a.coeffs[k] + np.zeros(batch)
        for i in range(k):
            acc = acc - math.comb(k, i) * q[i] * b.coeffs[k - i]
        q[k] = acc / b.coeffs[0]
    return Jet1D(a.x0, q)


def jet_invert_1d(f: Jet1D) -> Jet1D:
    """Jet of the compositional inverse g at f(x0); requires f'(x0) != 0."""
    if f.order < 1 or np.any(np.abs(f.coeffs[1]) == 0.0):
        raise JetError("non-invertible jet: vanishing first derivative")
    order = f.order
    batch = f.coeffs.shape[1:]
    g = np.zeros((order + 1,) + batch)
    g[0] = f.x0
    g[1] = 1.0 / f.coeffs[1]
    gj = Jet1D(f.value, g)
    for k in range(2, order + 1):
        comp = jet_compose_1d(f, gj)
        gj.coeffs[k] = gj.coeffs[k] - comp.coeffs[k] / f.coeffs[1]
    return gj


def jet1_sqrt(u0, order):
    """Jet of sqrt at u0 > 0."""
    u0 = float(u0)
    if u0 <= 0:
        raise JetError("sqrt jet requires positive base value")
    c = np.empty(order + 1)
    c[0] = math.sqrt(u0)
    for k in range(1, order + 1):
        # d^k sqrt(u) = (1/2)(1/2-1)...(1/2-k+1) u^{1/2-k}
        coef = 1.0
        for i in range(k):
            coef *= (0.5 - i)
        c[k] = coef * u0 ** (0.5 - k)
    return Jet1D(u0, c)


# ---------------------------------------------------------------------------
# Scalar and map jets in 2D
# ---------------------------------------------------------------------------

class SJet2:
    """Scalar-valued 2D jet: coeffs[k] = d^{i+j} h / dx^i dy^j at base,
    with (i, j) enumerated by tri_indices(order)."""

    __slots__ = ("base", "coeffs")

    def __init__(self, base, coeffs):
        self.base = np.asarray(base, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)

    @property
    def order(self):
        n = self.coeffs.shape[0]
        q = int((math.isqrt(8 * n + 1) - 3) // 2)
        if tri_size(q) != n:
            raise JetError("coefficient array is not triangular")
        return q

    @property
    def value(self):
        return self.coeffs[0]

    def part(self, i, j):
        return self.coeffs[_TRI_POS[self.order][(i, j)]]

    @classmethod
    def constant(cls, value, base, order, batch=()):
        value = np.asarray(value, dtype=float)
        c = np.zeros((tri_size(order),) + np.broadcast(value, np.zeros(batch)).shape)
        c[0] = value
        return cls(base, c)

    @classmethod
    def coordinate(cls, base, which, order, batch=()):
        """Jet of the coordinate function x (which=0) or y (which=1)."""
        base = np.asarray(base, dtype=float)
        c = np.zeros((tri_size(order),) + batch)
        c[0] = base[..., which]
        key = (1, 0) if which == 0 else (0, 1)
        c[_TRI_POS[order][key]] = 1.0
        return cls(base, c)

    def truncate(self, order):
        if order > self.order:
            raise JetError("cannot raise jet order by truncation")
        return SJet2(self.base, self.coeffs[: tri_size(order)])

    def partial(self, dx, dy):
        """Jet of the (dx, dy) partial derivative (order drops by dx+dy)."""
        q = self.order - dx - dy
        if q < 0:
            raise JetError("partial exceeds jet order")
        pos = _TRI_POS[self.order]
        rows = [pos[(i + dx, j + dy)] for (i, j) in _TRI_LIST[q]]
        return SJet2(self.base, self.coeffs[rows])

    def check_finite(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise JetError("non-finite jet entries")
        return self


def s_add(a: SJet2, b: SJet2) -> SJet2:
    return SJet2(a.base, a.coeffs + b.coeffs)


def s_sub(a: SJet2, b: SJet2) -> SJet2:
    return SJet2(a.base, a.coeffs - b.coeffs)


def s_scale(a: SJet2, s) -> SJet2:
    return SJet2(a.base, a.coeffs * s)


def s_product(a: SJet2, b: SJet2) -> SJet2:
    if a.order != b.order:
        raise JetError("jet order mismatch in product")
    q = a.order
    pos = _TRI_POS[q]
    batch = np.broadcast(a.coeffs[0], b.coeffs[0]).shape
    out = np.zeros((tri_size(q),) + batch)
    for k, (i, j) in enumerate(_TRI_LIST[q]):
        acc = np.zeros(batch)
        for p in range(i + 1):
            for r in range(j + 1):
                acc = acc + (math.comb(i, p) * math.comb(j, r)
                             * a.coeffs[pos[(p, r)]] * b.coeffs[pos[(i - p, j - r)]])
        out[k] = acc
    return SJet2(a.base, out)


def s_quotient(a: SJet2, b: SJet2) -> SJet2:
    if a.order != b.order:
        raise JetError("jet order mismatch in quotient")
    if np.any(np.abs(b.value) == 0.0):
        raise JetError("quotient by scalar jet with zero value")
    q = a.order
    pos = _TRI_POS[q]
    batch = np.broadcast(a.coeffs[0], b.coeffs[0]).shape
    out = np.zeros((tri_size(q),) + batch)
    for k, (i, j) in enumerate(_TRI_LIST[q]):
        acc = a.coeffs[k] + np.zeros(batch)
        for p in range(i + 1):
            for r in range(j + 1):
                if (p, r) == (i, j):
                    continue
                acc = acc - (math.comb(i, p) * math.comb(j, r)
                             * out[pos[(p, r)]] * b.coeffs[pos[(i - p, j - r)]])
        out[k] = acc / b.coeffs[0]
    return SJet2(a.base, out)


class Jet2D:
    """Jet of a planar map: two scalar components sharing a base point.

    coeffs has shape (2, tri_size(order), *batch); base has shape (*batch, 2).
    """

    __slots__ = ("base", "coeffs")

    def __init__(self, base, coeffs):
        self.base = np.asarray(base, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape[0] != 2:
            raise JetError("Jet2D needs exactly two components")

    @property
    def order(self):
        n = self.coeffs.shape[1]
        q = int((math.isqrt(8 * n + 1) - 3) // 2)
        if tri_size(q) != n:
            raise JetError("coefficient array is not triangular")
        return q

    @property
    def value(self):
        return np.moveaxis(self.coeffs[:, 0], 0, -1)

    def comp(self, c) -> SJet2:
        return SJet2(self.base, self.coeffs[c])

    def part(self, c, i, j):
        return self.coeffs[c, _TRI_POS[self.order][(i, j)]]

    def linear(self):
        """Linear part as (..., 2, 2) matrices."""
        pos = _TRI_POS[self.order]
        a = self.coeffs[:, [pos[(1, 0)], pos[(0, 1)]]]
        return np.moveaxis(a, (0, 1), (-2, -1))

    def det(self):
        m = self.linear()
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]

    def truncate(self, order):
        if order > self.order:
            raise JetError("cannot raise jet order by truncation")
        return Jet2D(self.base, self.coeffs[:, : tri_size(order)])

    def check_finite(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise JetError("non-finite jet entries")
        return self

    @classmethod
    def from_components(cls, fx: SJet2, fy: SJet2):
        return cls(fx.base, np.stack([fx.coeffs, fy.coeffs]))

    @classmethod
    def identity(cls, base, order, batch=()):
        base = np.broadcast_to(np.asarray(base, dtype=float), batch + (2,))
        return cls.from_components(
            SJet2.coordinate(base, 0, order, batch),
            SJet2.coordinate(base, 1, order, batch),
        )

    @classmethod
    def affine(cls, mat, offset, base, order, batch=()):
        """Jet of q -> mat @ q + offset at base (batched over base)."""
        base = np.asarray(base, dtype=float)
        mat = np.asarray(mat, dtype=float)
        offset = np.asarray(offset, dtype=float)
        val = base @ mat.T + offset
        q = order
        c = np.zeros((2, tri_size(q)) + batch)
        pos = _TRI_POS[q]
        for comp in range(2):
            c[comp, 0] = val[..., comp]
            if q >= 1:
                c[comp, pos[(1, 0)]] = mat[comp, 0]
                c[comp, pos[(0, 1)]] = mat[comp, 1]
        return cls(base, c)


def _compose_terms_2o(outer_coeffs, outer_order, factor_lookup, table, out_order, batch):
    """Evaluate a 2-argument-outer chain-rule table."""
    pos = _TRI_POS[outer_order]
    out = np.zeros((tri_size(out_order),) + batch)
    for k, (i, j) in enumerate(_TRI_LIST[out_order]):
        acc = np.zeros(batch)
        for c, (al, be), factors in table[(i, j)]:
            term = c * outer_coeffs[pos[(al, be)]]
            for f in factors:
                term = term * factor_lookup(f)
            acc = acc + term
        out[k] = acc
    return out


def sj_compose(outer: SJet2, inner: Jet2D) -> SJet2:
    """Jet of scalar outer composed with planar-map inner."""
    if outer.order != inner.order:
        raise JetError("jet order mismatch in composition")
    _check_match(outer.base, inner.value, float(np.max(np.abs(outer.base))) if outer.base.size else 1.0)
    q = outer.order
    ipos = _TRI_POS[q]
    batch = np.broadcast(outer.coeffs[0], inner.coeffs[0, 0]).shape

    def lookup(f):
        comp, s1, s2 = f
        return inner.coeffs[comp, ipos[(s1, s2)]]

    out = _compose_terms_2o(outer.coeffs, q, lookup, _TABLES.fdb_2o2i, q, batch)
    return SJet2(inner.base, out)


def jet_compose_2d(outer: Jet2D, inner: Jet2D) -> Jet2D:
    """Jet of the composed planar map outer o inner."""
    return Jet2D.from_components(
        sj_compose(outer.comp(0), inner),
        sj_compose(outer.comp(1), inner),
    )


def sj_compose_curve(outer: SJet2, x: Jet1D, y: Jet1D) -> Jet1D:
    """Jet in t of outer(x(t), y(t))."""
    if x.order != y.order:
        raise JetError("curve jets must share an order")
    q = min(outer.order, x.order)
    pos = _TRI_POS[outer.order]
    _check_match(outer.base[..., 0], x.value)
    _check_match(outer.base[..., 1], y.value)
    batch = np.broadcast(outer.coeffs[0], x.coeffs[0]).shape
    out = np.zeros((q + 1,) + batch)
    for k in range(q + 1):
        acc = np.zeros(batch)
        for c, (al, be), factors in _TABLES.fdb_2o1i[k]:
            if al + be > outer.order:
                continue
            term = c * outer.coeffs[pos[(al, be)]]
            for comp, s in factors:
                term = term * (x.coeffs[s] if comp == 0 else y.coeffs[s])
            acc = acc + term
        out[k] = acc
    return Jet1D(x.x0, out)


def jet2_compose_curve(outer: Jet2D, x: Jet1D, y: Jet1D):
    return (sj_compose_curve(outer.comp(0), x, y),
            sj_compose_curve(outer.comp(1), x, y))


def sj_apply_1d(outer: Jet1D, inner: SJet2) -> SJet2:
    """Jet of g(u(x, y)) for 1D outer g and scalar 2D inner u."""
    if outer.order != inner.order:
        raise JetError("jet order mismatch in composition")
    _check_match(outer.x0, inner.value)
    q = inner.order
    ipos = _TRI_POS[q]
    batch = np.broadcast(outer.coeffs[0], inner.coeffs[0]).shape
    out = np.zeros((tri_size(q),) + batch)
    for k, (i, j) in enumerate(_TRI_LIST[q]):
        acc = np.zeros(batch)
        for c, m, factors in _TABLES.fdb_1o2i[(i, j)]:
            term = c * outer.coeffs[m]
            for (s1, s2) in factors:
                term = term * inner.coeffs[ipos[(s1, s2)]]
            acc = acc + term
        out[k] = acc
    return SJet2(inner.base, out)


def jet_invert_2d(F: Jet2D) -> Jet2D:
    """Jet of the inverse map at F's value; requires invertible linear part."""
    A = F.linear()
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    if np.any(np.abs(det) == 0.0):
        raise JetError("non-invertible jet: singular linear part")
    q = F.order
    batch = F.coeffs.shape[2:]
    inv = np.empty(batch + (2, 2))
    inv[..., 0, 0] = A[..., 1, 1] / det
    inv[..., 0, 1] = -A[..., 0, 1] / det
    inv[..., 1, 0] = -A[..., 1, 0] / det
    inv[..., 1, 1] = A[..., 0, 0] / det
    pos = _TRI_POS[q]
    c = np.zeros((2, tri_size(q)) + batch)
    base_pt = F.base if F.base.shape[-1:] == (2,) else np.asarray(F.base)
    for comp in range(2):
        c[comp, 0] = np.moveaxis(base_pt, -1, 0)[comp]
        c[comp, pos[(1, 0)]] = inv[..., comp, 0]
        c[comp, pos[(0, 1)]] = inv[..., comp, 1]
    G = Jet2D(F.value, c)
    for d in range(2, q + 1):
        comp_full = jet_compose_2d(F, G)
        for (i, j) in _TRI_LIST[q]:
            if i + j != d:
                continue
            k = pos[(i, j)]
            resid = comp_full.coeffs[:, k]          # target is 0 at order >= 2
            corr = np.einsum('...ab,b...->a...', inv, resid)
            G.coeffs[:, k] -= corr
    return G


# ---------------------------------------------------------------------------
# C^r norms on grids and composition-norm reports
# ---------------------------------------------------------------------------

@dataclass
class CrNorm:
    """Grid sup of all derivatives of DF up to order r-1 (partials 1..r)."""
    r: int
    value: float


def grid_points(rect, n):
    (x0, x1), (y0, y1) = rect
    nx = ny = n if np.isscalar(n) else None
    if nx is None:
        nx, ny = n
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=-1)


def cr_norm(jet_fn, rect, r, grid=64):
    """jet_fn(points, order) -> Jet2D batch; sup of |partials| orders 1..r."""
    pts = grid_points(rect, grid)
    J = jet_fn(pts, r)
    pos = _TRI_POS[r]
    vals = [np.abs(J.coeffs[:, pos[(i, j)]])
            for (i, j) in _TRI_LIST[r] if 1 <= i + j <= r]
    return CrNorm(r, float(np.max(np.stack(vals))))


def composition_norm_report(F_jet_fn, G_jet_fn, r, rect, grid=16):
    """Measured ||F o G||_r against the bound r^r ||F||_r ||G||_r^r."""
    pts = grid_points(rect, grid)
    JG = G_jet_fn(pts, r)
    JF = F_jet_fn(JG.value, r)
    JC = jet_compose_2d(JF, JG)
    pos = _TRI_POS[r]
    sup = lambda J: float(max(  # noqa: E731
        np.max(np.abs(J.coeffs[:, pos[(i, j)]]))
        for (i, j) in _TRI_LIST[r] if 1 <= i + j <= r))
    measured = sup(JC)
    nF = cr_norm(F_jet_fn, [[JG.value[:, 0].min(), JG.value[:, 0].max()],
                            [JG.value[:, 1].min(), JG.value[:, 1].max()]], r, grid)
    nG = cr_norm(G_jet_fn, rect, r, grid)
    bound = (r ** r) * nF.value * nG.value ** r
    return {
        "r": r,
        "measured": measured,
        "norm_F": nF.value,
        "norm_G": nG.value,
        "bound": bound,
        "slack": bound - measured,
    }


def cocycle_norm_report(jet1_fns, mu, r, n_max, interval, grid=64):
    """||Df^n||_{C^{r-1}} against C mu^{r(n-1)}, C fitted at n = 1.

    jet1_fns: callables m -> (x-array, order) -> Jet1D batch of f_m at x.
    """
    xs = np.linspace(interval[0], interval[1], grid)
    cur = Jet1D.identity(xs, r)
    sups = []
    for n in range(1, n_max + 1):
        f = jet1_fns(n - 1)(cur.value, r)
        cur = jet_compose_1d(f, cur)
        sups.append(float(np.max(np.abs(cur.coeffs[1:]))))
    C = sups[0]
    bounds = [C * mu ** (r * (n - 1)) for n in range(1, n_max + 1)]
    return {
        "r": r, "mu": mu, "C_fitted": C,
        "measured": sups, "bound": bounds,
        "slack": [b - m for b, m in zip(bounds, sups)],
    }


def skew_contraction_report(skew_jet_fns, mu, lam, r, n_max, rect, grid=12,
                            contract_base=None):
    """||De^n||_{C^{r-1}} against C mu^{r(n-1)} lam^{n-1}, C fitted at n = 1.

    skew_jet_fns: m -> (points, order) -> Jet2D of the skew map F_m.
    The norm is measured over the subset of `rect` whose forward x-orbit
    stays inside: when the base expands at rate `contract_base` > 1, base
    x-coordinates are pre-scaled by contract_base^{-(n-1)} so the uniform
    hypothesis on e_m applies along the whole composition.
    """
    pts0 = grid_points(rect, grid)
    pos = _TRI_POS[r]
    sups = []
    for n in range(1, n_max + 1):
        pts = np.array(pts0)
        if contract_base is not None and contract_base > 1.0:
            pts[:, 0] *= contract_base ** (-(n - 1))
        cur = Jet2D.identity(pts, r, batch=(pts.shape[0],))
        for m in range(n):
            F = skew_jet_fns(m)(cur.value, r)
            cur = jet_compose_2d(F, cur)
        e = cur.coeffs[1]
        vals = [np.max(np.abs(e[pos[(i, j)]]))
                for (i, j) in _TRI_LIST[r] if 1 <= i + j <= r]
        sups.append(float(max(vals)))
    rates = [mu ** (r * (n - 1)) * lam ** (n - 1) for n in range(1, n_max + 1)]
    C1 = sups[0]
    C_uniform = float(max(s / rt for s, rt in zip(sups, rates)))
    tail = np.array(sups[max(1, n_max // 2):])
    tail_ratio = float(np.max(tail[1:] / tail[:-1])) if len(tail) > 1 else float("nan")
    return {
        "r": r, "mu": mu, "lam": lam,
        "C_at_1": C1, "C_uniform": C_uniform,
        "measured": sups, "bound": [C1 * rt for rt in rates],
        "slack": [C1 * rt - s for rt, s in zip(rates, sups)],
        "uniform_slack": [C_uniform * rt - s for rt, s in zip(rates, sups)],
        "rate_bound": mu ** r * lam, "rate_tail": tail_ratio,
    }


def check_composition_norm_bounds(F_jet_fn, G_jet_fn, r, rect, grid=16):
    """Margin report for the composition-norm inequality on a map pair."""
    return composition_norm_report(F_jet_fn, G_jet_fn, r, rect, grid)
