"""Horizontal graph transform, vertical direction-field transform, invariant
sequences, rectification charts, skew-form verification, and C^r
convergence-rate checks.

Graphs are sampled jets on a uniform grid with piecewise-Hermite
interpolation built from the node jets; fields are sampled triangular jets
on a rectangle grid with Taylor evaluation off the nearest node.  Boxes are
small in every intended use, so interpolation residuals sit far below the
1e-8 working tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FoldError, PremiseViolation, JetError
from .jets import (Jet1D, Jet2D, SJet2, jet_compose_1d, jet_invert_1d,
                   jet_compose_2d, jet_invert_2d, sj_compose, sj_compose_curve,
                   tri_indices, tri_size, _TRI_POS)

_TOL = 1e-9


# ---------------------------------------------------------------------------
# Sampled function representations
# ---------------------------------------------------------------------------

class GridFn1D:
    """g: [lo, hi] -> R sampled as derivative jets at uniform nodes.

    Interpolation between adjacent nodes is two-point Hermite of degree
    2*order + 1; outside the interval the boundary node's Taylor polynomial
    extends the function (extension by jet).
    """

    def __init__(self, lo, hi, jets, ext="jet"):
        self.lo, self.hi = float(lo), float(hi)
        self.jets = np.asarray(jets, dtype=float)     # (order+1, n)
        self.n = self.jets.shape[1]
        if self.n < 2:
            raise ValueError("need at least 2 nodes")
        self.h = (self.hi - self.lo) / (self.n - 1)
        self.order = self.jets.shape[0] - 1
        self.ext = ext            # "jet": boundary Taylor; "zero": vanish
        self._coeffs = None

    @classmethod
    def zero(cls, lo, hi, n, order, ext="jet"):
        return cls(lo, hi, np.zeros((order + 1, n)), ext=ext)

    @classmethod
    def from_callable(cls, fn_jets, lo, hi, n, order, ext="jet"):
        """fn_jets(x_array, order) -> (order+1, n) derivative values."""
        xs = np.linspace(lo, hi, n)
        return cls(lo, hi, fn_jets(xs, order), ext=ext)

    @property
    def nodes(self):
        return np.linspace(self.lo, self.hi, self.n)

    def _hermite_coeffs(self):
        """Per-cell polynomial coefficients in the scaled variable u in [0,1]."""
        if self._coeffs is not None:
            return self._coeffs
        q = self.order
        deg = 2 * q + 1
        hp = self.h ** np.arange(q + 1)
        fact = np.array([math.factorial(j) for j in range(q + 1)])
        gl = self.jets[:, :-1] * hp[:, None]          # h^j g_L^{(j)}
        gr = self.jets[:, 1:] * hp[:, None]
        a = np.zeros((deg + 1, self.n - 1))
        a[: q + 1] = gl / fact[:, None]
        # solve for the upper coefficients from the right-node conditions
        Msys = np.zeros((q + 1, q + 1))
        for j in range(q + 1):
            for col, i in enumerate(range(q + 1, deg + 1)):
                Msys[j, col] = math.perm(i, j)
        rhs = np.array(gr)
        for j in range(q + 1):
            for i in range(j, q + 1):
                rhs[j] -= math.perm(i, j) * a[i]
        a[q + 1:] = np.linalg.solve(Msys, rhs)
        self._coeffs = a
        return a

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.floor((x - self.lo) / self.h).astype(int), 0, self.n - 2)
        u = (x - (self.lo + k * self.h)) / self.h
        return k, u

    def derivs(self, x, upto):
        """Derivatives 0..upto of the interpolant at x (vectorized)."""
        x = np.asarray(x, dtype=float)
        a = self._hermite_coeffs()
        k, u = self._locate(x)
        sel = a[:, k]                                  # (deg+1, npts)
        deg = sel.shape[0] - 1
        out = np.zeros((upto + 1,) + x.shape)
        for j in range(upto + 1):
            acc = np.zeros(x.shape)
            for i in range(deg, j - 1, -1):
                acc = acc * u + math.perm(i, j) * sel[i]
            out[j] = acc / self.h ** j
        if self.ext == "zero":
            outside = (x < self.lo) | (x > self.hi)
            if np.any(outside):
                out[:, outside] = 0.0
        return out

    def __call__(self, x):
        return self.derivs(x, 0)[0]

    def jet_at(self, x, order):
        d = self.derivs(x, order)
        return Jet1D(np.asarray(x, dtype=float), d)

    def sup_deriv(self, j):
        """Grid sup of |g^(j)| (node values; j <= stored order)."""
        return float(np.max(np.abs(self.jets[j])))

    def sup_range(self, j_lo, j_hi):
        return float(np.max(np.abs(self.jets[j_lo:j_hi + 1])))

    def center_align(self):
        """Subtract the value/slope at x = 0 (legal for center-aligned uses)."""
        d0 = self.derivs(np.zeros(1), 1)
        jets = np.array(self.jets)
        jets[0] -= d0[0][0] + d0[1][0] * self.nodes
        jets[1] -= d0[1][0]
        return GridFn1D(self.lo, self.hi, jets)

    def to_csv(self, path):
        rows = np.vstack([self.nodes] + [self.jets[j] for j in range(self.order + 1)]).T
        header = "x," + ",".join(f"g{j}" for j in range(self.order + 1))
        np.savetxt(path, rows, delimiter=",", header=header, comments="")


def star_distance(g1: GridFn1D, g2: GridFn1D, refine=2):
    """sup over x != 0 of |g1 - g2| / |x| plus the slope gap at 0."""
    lo = max(g1.lo, g2.lo)
    hi = min(g1.hi, g2.hi)
    n = refine * max(g1.n, g2.n)
    xs = np.linspace(lo, hi, n)
    xs = xs[np.abs(xs) > 1e-12]
    vals = np.abs(g1(xs) - g2(xs)) / np.abs(xs)
    d0 = abs(g1.derivs(np.zeros(1), 1)[1][0] - g2.derivs(np.zeros(1), 1)[1][0])
    return float(max(np.max(vals, initial=0.0), d0))


def interpolation_residual(g: GridFn1D, fn):
    """Error of the interpolant against fn on a 2x finer grid, relative to
    sup|g| + 1."""
    xs = np.linspace(g.lo, g.hi, 2 * g.n - 1)
    err = np.max(np.abs(g(xs) - fn(xs)))
    return float(err / (np.max(np.abs(g.jets[0])) + 1.0))


class GridFn2D:
    """xi: rectangle -> R sampled as triangular jets at grid nodes, evaluated
    by the Taylor polynomial of the nearest node."""

    def __init__(self, rect, jets, ext="jet"):
        (self.x0, self.x1), (self.y0, self.y1) = rect
        self.ext = ext            # "jet": nearest-node Taylor; "zero": vanish
        self.jets = np.asarray(jets, dtype=float)   # (ncoef, nx, ny)
        self.nx, self.ny = self.jets.shape[1], self.jets.shape[2]
        q = int((math.isqrt(8 * self.jets.shape[0] + 1) - 3) // 2)
        if tri_size(q) != self.jets.shape[0]:
            raise JetError("field jets are not triangular")
        self.order = q
        self.hx = (self.x1 - self.x0) / (self.nx - 1)
        self.hy = (self.y1 - self.y0) / (self.ny - 1)

    @classmethod
    def zero(cls, rect, nx, ny, order, ext="jet"):
        return cls(rect, np.zeros((tri_size(order), nx, ny)), ext=ext)

    @property
    def rect(self):
        return [[self.x0, self.x1], [self.y0, self.y1]]

    def node_points(self):
        xs = np.linspace(self.x0, self.x1, self.nx)
        ys = np.linspace(self.y0, self.y1, self.ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=-1)

    def _nearest(self, pts):
        pts = np.asarray(pts, dtype=float)
        i = np.clip(np.rint((pts[..., 0] - self.x0) / self.hx).astype(int), 0, self.nx - 1)
        j = np.clip(np.rint((pts[..., 1] - self.y0) / self.hy).astype(int), 0, self.ny - 1)
        dx = pts[..., 0] - (self.x0 + i * self.hx)
        dy = pts[..., 1] - (self.y0 + j * self.hy)
        return i, j, dx, dy

    def jet_at(self, pts, order):
        """Taylor-shifted jet of the nearest node polynomial (order <= stored)."""
        if order > self.order:
            raise JetError("requested order exceeds stored field order")
        i, j, dx, dy = self._nearest(pts)
        node = self.jets[:, i, j]                    # (ncoef, ...)
        q = self.order
        pos = _TRI_POS[q]
        out = np.zeros((tri_size(order),) + dx.shape)
        for k, (a, b) in enumerate(tri_indices(order)):
            acc = np.zeros(dx.shape)
            for (p, r) in tri_indices(q):
                if p >= a and r >= b:
                    acc = acc + (node[pos[(p, r)]]
                                 * dx ** (p - a) * dy ** (r - b)
                                 / (math.factorial(p - a) * math.factorial(r - b)))
            out[k] = acc
        if self.ext == "zero":
            p2 = np.asarray(pts, dtype=float)
            outside = ((p2[..., 0] < self.x0) | (p2[..., 0] > self.x1)
                       | (p2[..., 1] < self.y0) | (p2[..., 1] > self.y1))
            if np.any(outside):
                out[:, outside] = 0.0
        return SJet2(np.asarray(pts, dtype=float), out)

    def __call__(self, pts):
        return self.jet_at(pts, 0).coeffs[0]

    def sup_norm(self):
        return float(np.max(np.abs(self.jets[0])))

    def sup_partials(self, j_lo, j_hi):
        pos = _TRI_POS[self.order]
        vals = [np.max(np.abs(self.jets[pos[(a, b)]]))
                for (a, b) in tri_indices(self.order) if j_lo <= a + b <= j_hi]
        return float(max(vals)) if vals else 0.0

    def to_csv(self, path):
        pts = self.node_points()
        rows = np.column_stack([pts] + [self.jets[k].ravel()
                                        for k in range(self.jets.shape[0])])
        header = "x,y," + ",".join(
            f"d{a}{b}" for (a, b) in tri_indices(self.order))
        np.savetxt(path, rows, delimiter=",", header=header, comments="")


def field_distance(f1: GridFn2D, f2: GridFn2D):
    return float(np.max(np.abs(f1.jets[0] - f2.jets[0])))


# ---------------------------------------------------------------------------
# Almost-linear sequences
# ---------------------------------------------------------------------------

class AffineChartMap:
    """q -> mat q + off with exact jets; doubles as the frozen linear model."""

    def __init__(self, mat, off=None):
        self.mat = np.asarray(mat, dtype=float)
        self.off = np.zeros(2) if off is None else np.asarray(off, dtype=float)
        self._inv = np.linalg.inv(self.mat)

    def __call__(self, pts):
        return np.asarray(pts, dtype=float) @ self.mat.T + self.off

    def jet(self, pts, order):
        pts = np.asarray(pts, dtype=float)
        return Jet2D.affine(self.mat, self.off, pts, order, batch=pts.shape[:-1])

    def inverse(self, pts):
        return (np.asarray(pts, dtype=float) - self.off) @ self._inv.T

    def inverse_jet(self, pts, order):
        pts = np.asarray(pts, dtype=float)
        return Jet2D.affine(self._inv, -self._inv @ self.off, pts, order,
                            batch=pts.shape[:-1])


@dataclass
class AlmostLinearSeq:
    """Window of near-diagonal maps m -> F_m plus an exterior rule.

    exterior: ("linear", 2x2 matrix) freezes indices outside the window to
    that linear model; ("wrap",) reuses the window cyclically (a single-map
    window then means plain iteration of one transform).
    """
    maps: dict
    lo: int
    hi: int
    exterior: tuple = ("wrap",)

    def __post_init__(self):
        if self.exterior[0] == "linear":
            self._ext = AffineChartMap(self.exterior[1])
        else:
            self._ext = None

    def map_at(self, m):
        if m in self.maps:
            return self.maps[m]
        if self._ext is not None:
            return self._ext
        span = self.hi - self.lo + 1
        return self.maps[self.lo + (m - self.lo) % span]

    def indices(self):
        return range(self.lo, self.hi + 1)

    def fit_hypotheses(self, rect, r, grid=9, eta_floor=1e-9):
        """Measured (mu_-, mu_+, lam, eta, C) for the almost-linear hypotheses
        plus the margins of the two transform conditions."""
        xs = np.linspace(rect[0][0], rect[0][1], grid)
        ys = np.linspace(rect[1][0], rect[1][1], grid)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        a_list, b_list, dev_list, cr_list, off_list = [], [], [], [], []
        for m in self.indices():
            F = self.map_at(m)
            J0 = F.jet(np.zeros(2), 1).linear()
            a_list.append(abs(J0[0, 0]))
            b_list.append(abs(J0[1, 1]))
            off_list.append(max(abs(J0[0, 1]), abs(J0[1, 0])))
            J = F.jet(pts, r)
            D = J.linear()
            dev_list.append(float(np.max(np.abs(D - J0))))
            pos = _TRI_POS[r]
            cr_list.append(float(max(
                np.max(np.abs(J.coeffs[:, pos[(i, j)]]))
                for (i, j) in tri_indices(r) if 1 <= i + j <= r)))
        eta = max(2.2 * max(dev_list), eta_floor)
        mu_minus = min(a_list) - eta
        mu_plus = max(a_list) + eta
        lam = max(b_list) + eta
        C = max(cr_list)
        out = {
            "mu_minus": mu_minus, "mu_plus": mu_plus, "lam": lam, "eta": eta,
            "C": C, "diag_offset": max(off_list), "deviation": max(dev_list),
            "a": a_list, "b": b_list,
        }
        out["for_cond"] = 1.0 - lam / mu_minus ** r
        out["back_cond"] = 1.0 - lam * mu_plus ** (r - 1)
        out["dominated"] = 1.0 - lam / mu_minus
        return out


# ---------------------------------------------------------------------------
# Horizontal graph transform
# ---------------------------------------------------------------------------

def _solve_first_component(F, g: GridFn1D, targets, span):
    """u-values with F_x(u, g(u)) = target, via inverse-interp seeding and
    Newton; raises FoldError if the projection is not monotone on the span.
    The span expands automatically when the projection image is too small
    (strongly contracting first components)."""
    span = [float(span[0]), float(span[1])]
    for attempt in range(14):
        us = np.linspace(span[0], span[1], max(129, 4 * g.n))
        curves = np.stack([us, g(us)], axis=-1)
        J = F.jet(curves, 1)
        phi = J.coeffs[0, 0]
        gp = g.derivs(us, 1)[1]
        dphi = J.part(0, 1, 0) + J.part(0, 0, 1) * gp
        sign = np.sign(dphi)
        if np.any(sign == 0) or np.max(sign) != np.min(sign):
            k = int(np.argmin(np.abs(dphi)))
            raise FoldError(f"graph folds near u = {us[k]:.6g}",
                            location=float(us[k]))
        lo_cov, hi_cov = (phi[0], phi[-1]) if sign[0] > 0 else (phi[-1], phi[0])
        if np.min(targets) >= lo_cov and np.max(targets) <= hi_cov:
            break
        span = [2.0 * span[0], 2.0 * span[1]]
    else:
        raise FoldError("projection does not cover the requested interval")
    order = np.argsort(phi)
    u = np.interp(targets, phi[order], us[order])
    for _ in range(60):
        pts = np.stack([u, g(u)], axis=-1)
        J = F.jet(pts, 1)
        val = J.coeffs[0, 0] - targets
        der = J.part(0, 1, 0) + J.part(0, 0, 1) * g.derivs(u, 1)[1]
        step = val / der
        u = u - step
        if np.max(np.abs(step)) < 1e-14 * (1.0 + np.max(np.abs(u))):
            break
    return u


def graph_transform(F, g: GridFn1D, out_interval=None, n_nodes=None,
                    order=None, span_factor=4.0):
    """Push the horizontal graph of g forward by F: the returned graph
    satisfies Gamma_out = F(Gamma_g) over out_interval."""
    out_interval = (g.lo, g.hi) if out_interval is None else out_interval
    n_nodes = g.n if n_nodes is None else n_nodes
    order = g.order if order is None else order
    targets = np.linspace(out_interval[0], out_interval[1], n_nodes)
    w = max(abs(g.lo), abs(g.hi), abs(out_interval[0]), abs(out_interval[1]))
    span = (-span_factor * w, span_factor * w)
    u = _solve_first_component(F, g, targets, span)
    gj = g.jet_at(u, order)
    uj = Jet1D.identity(u, order)
    J = F.jet(np.stack([u, gj.coeffs[0]], axis=-1), order)
    X = sj_compose_curve(J.comp(0), uj, gj)
    Y = sj_compose_curve(J.comp(1), uj, gj)
    X.coeffs[0] = targets            # root solve already enforces this
    u_of_x = jet_invert_1d(X)
    out = jet_compose_1d(Y, u_of_x)
    return GridFn1D(out_interval[0], out_interval[1], out.coeffs, ext=g.ext)


def invariant_graphs(seq: AlmostLinearSeq, interval, n_nodes, order,
                     omega=0.1, tol=1e-12, max_sweeps=200, min_sweeps=2,
                     ext="jet"):
    """Fixed-point sweeps of the forward graph transform over the window.

    Returns the invariant graphs plus diagnostics: sweep distances, measured
    contraction, invariance residuals, and the C^{r-2} bound on g''.
    ext="zero" is the right extension when the exterior model is linear: the
    true invariant graphs vanish outside the window of nonlinearity.
    """
    state = {m: GridFn1D.zero(interval[0], interval[1], n_nodes, order, ext=ext)
             for m in seq.indices()}
    zero = GridFn1D.zero(interval[0], interval[1], n_nodes, order, ext=ext)
    dists = []
    for sweep in range(max_sweeps):
        prev = dict(state)
        d = 0.0
        for m in seq.indices():
            src = state[m - 1] if m - 1 >= seq.lo else (
                zero if seq.exterior[0] == "linear" else state[seq.hi])
            new = graph_transform(seq.map_at(m - 1), src,
                                  out_interval=interval, n_nodes=n_nodes,
                                  order=order)
            d = max(d, star_distance(new, prev[m]))
            state[m] = new
        dists.append(d)
        if sweep >= min_sweeps - 1 and d < tol:
            break
        if sweep == 4 and len(dists) >= 5 and dists[-1] > dists[0] and dists[-1] > tol:
            raise PremiseViolation("no contraction observed in 5 sweeps",
                                   {"sweep_distances": dists})
    contraction = [dists[i + 1] / dists[i] for i in range(len(dists) - 1)
                   if dists[i] > 10 * tol]
    # invariance residual: F_m(graph_m) against graph_{m+1}
    resid = 0.0
    for m in seq.indices():
        if m + 1 > seq.hi and seq.exterior[0] == "linear":
            continue
        tgt = state[m + 1] if m + 1 <= seq.hi else state[seq.lo]
        xs = np.linspace(interval[0], interval[1], 2 * n_nodes)
        img = seq.map_at(m)(np.stack([xs, state[m](xs)], axis=-1))
        inside = (img[:, 0] >= interval[0]) & (img[:, 0] <= interval[1])
        if np.any(inside):
            resid = max(resid, float(np.max(np.abs(
                img[inside, 1] - tgt(img[inside, 0])))))
    sup_slope = max(state[m].sup_deriv(1) for m in seq.indices())
    if sup_slope > omega:
        raise PremiseViolation(
            f"invariant graphs leave the omega-horizontal class: {sup_slope} > {omega}",
            {"sup_slope": sup_slope})
    g2 = max(state[m].sup_range(2, min(order, max(2, order))) for m in seq.indices()) \
        if order >= 2 else 0.0
    return state, {
        "sweeps": len(dists),
        "sweep_distances": dists,
        "contraction": contraction,
        "invariance_residual": resid,
        "sup_slope": sup_slope,
        "second_derivative_bound": g2,
        "tol": tol,
    }


# ---------------------------------------------------------------------------
# Vertical direction-field transform
# ---------------------------------------------------------------------------

def field_transform(F, xi: GridFn2D, out_rect=None, nx=None, ny=None,
                    order=None):
    # output inherits the input's extension convention
    """Pull the vertical direction field back by DF^{-1}: the new field at p
    spans DF_p^{-1} (xi(F(p)), 1), renormalized to (u, 1) form."""
    out_rect = xi.rect if out_rect is None else out_rect
    nx = xi.nx if nx is None else nx
    ny = xi.ny if ny is None else ny
    order = xi.order if order is None else order
    tmp = GridFn2D.zero(out_rect, nx, ny, 0)
    pts = tmp.node_points()
    J = F.jet(pts, order + 1)
    w = J.value
    xi_w = sj_compose(xi.jet_at(w, order), J.truncate(order))
    a11 = J.comp(0).partial(1, 0)
    a12 = J.comp(0).partial(0, 1)
    a21 = J.comp(1).partial(1, 0)
    a22 = J.comp(1).partial(0, 1)
    num = SJet2(pts, _smul(a22, xi_w) - a12.coeffs)
    den = SJet2(pts, a11.coeffs - _smul(a21, xi_w))
    if np.any(np.abs(den.coeffs[0]) < 1e-14):
        raise PremiseViolation("direction field turns horizontal (zero pivot)")
    from .jets import s_quotient
    with np.errstate(over="ignore", invalid="ignore"):
        new = s_quotient(num, den)
    if not np.all(np.isfinite(new.coeffs)):
        raise PremiseViolation(
            "field transform produced non-finite jets (derivative data "
            "diverges; check lam * mu_+^{order} < 1)")
    jets = new.coeffs.reshape((new.coeffs.shape[0], nx, ny))
    return GridFn2D(out_rect, jets, ext=xi.ext)


def _smul(a: SJet2, b: SJet2):
    from .jets import s_product
    return s_product(a, b).coeffs


def invariant_fields(seq: AlmostLinearSeq, rect, nx, ny, order,
                     omega=0.1, tol=1e-12, max_sweeps=200, min_sweeps=2,
                     ext="jet"):
    """Backward fixed-point sweeps of the field transform over the window."""
    state = {m: GridFn2D.zero(rect, nx, ny, order, ext=ext) for m in seq.indices()}
    zero = GridFn2D.zero(rect, nx, ny, order, ext=ext)
    dists = []
    for sweep in range(max_sweeps):
        prev = dict(state)
        d = 0.0
        for m in reversed(list(seq.indices())):
            src = state[m + 1] if m + 1 <= seq.hi else (
                zero if seq.exterior[0] == "linear" else state[seq.lo])
            new = field_transform(seq.map_at(m), src, out_rect=rect,
                                  nx=nx, ny=ny, order=order)
            d = max(d, field_distance(new, prev[m]))
            state[m] = new
        dists.append(d)
        if sweep >= min_sweeps - 1 and d < tol:
            break
        if sweep == 4 and len(dists) >= 5 and dists[-1] > dists[0] and dists[-1] > tol:
            raise PremiseViolation("no contraction observed in 5 sweeps",
                                   {"sweep_distances": dists})
    contraction = [dists[i + 1] / dists[i] for i in range(len(dists) - 1)
                   if dists[i] > 10 * tol]
    resid = 0.0
    for m in seq.indices():
        src = state[m + 1] if m + 1 <= seq.hi else (
            zero if seq.exterior[0] == "linear" else state[seq.lo])
        back = field_transform(seq.map_at(m), src, out_rect=rect,
                               nx=nx, ny=ny, order=order)
        resid = max(resid, field_distance(back, state[m]))
    sup_xi = max(state[m].sup_norm() for m in seq.indices())
    if sup_xi > omega:
        raise PremiseViolation(
            f"invariant fields leave the omega-vertical class: {sup_xi} > {omega}",
            {"sup_norm": sup_xi})
    dxi = max(state[m].sup_partials(1, max(1, order)) for m in seq.indices())
    return state, {
        "sweeps": len(dists),
        "sweep_distances": dists,
        "contraction": contraction,
        "invariance_residual": resid,
        "sup_norm": sup_xi,
        "derivative_bound": dxi,
        "tol": tol,
    }


# ---------------------------------------------------------------------------
# Rectification
# ---------------------------------------------------------------------------

class RectChart:
    """Psi = H o V: V(x, y) = (x, y - g(x)) flattens the graph to the axis,
    and H flattens the transformed direction field to genuine vertical by
    sliding each point to its leaf root.

    The leaf through (x, y) solves dX/dt = xi~(X, t); H(x, y) = (X(0), y),
    so DPsi maps the field directions exactly to (0, 1) up to the ODE
    integration error.
    """

    def __init__(self, g: GridFn1D, xi: GridFn2D, order, rk_steps=16):
        self.g = g
        self.xi = xi
        self.order = order
        self.rk_steps = rk_steps
        self.xi_tilde = self._build_xi_tilde()

    # -- construction ------------------------------------------------------

    def _build_xi_tilde(self):
        """Field after V: xi~(z) = xi(V^{-1} z) / (1 - g'(x) xi(V^{-1} z))."""
        from .jets import s_product, s_quotient
        q = self.order
        nx, ny = self.xi.nx, self.xi.ny
        tmp = GridFn2D.zero(self.xi.rect, nx, ny, 0)
        pts = tmp.node_points()
        x = pts[:, 0]
        gj = self.g.jet_at(x, q + 1)
        # V^{-1}(x, y) = (x, y + g(x)) as a map jet
        pos = _TRI_POS[q]
        c = np.zeros((2, tri_size(q), pts.shape[0]))
        c[0, 0] = x
        c[0, pos[(1, 0)]] = 1.0
        c[1, 0] = pts[:, 1] + gj.coeffs[0]
        c[1, pos[(0, 1)]] = 1.0
        for i in range(1, q + 1):
            c[1, pos[(i, 0)]] = gj.coeffs[i]
        Vinv = Jet2D(pts, c)
        xi_w = sj_compose(self.xi.jet_at(Vinv.value, q), Vinv)
        gp = np.zeros((tri_size(q), pts.shape[0]))
        for i in range(0, q + 1):
            gp[pos[(i, 0)]] = gj.coeffs[i + 1]
        gp_jet = SJet2(pts, gp)
        one = SJet2.constant(1.0, pts, q, batch=(pts.shape[0],))
        den = SJet2(pts, one.coeffs - s_product(gp_jet, xi_w).coeffs)
        new = s_quotient(xi_w, den)
        return GridFn2D(self.xi.rect, new.coeffs.reshape((-1, nx, ny)))

    # -- leaf integration ----------------------------------------------------

    def _leaf_values(self, x, y0, y1):
        """Integrate dX/dt = xi~(X, t) from t = y0 to t = y1 (arrays)."""
        x = np.array(x, dtype=float)
        t = np.array(y0, dtype=float)
        dt = (np.asarray(y1, dtype=float) - t) / self.rk_steps
        for _ in range(self.rk_steps):
            k1 = self.xi_tilde(np.stack([x, t], axis=-1))
            k2 = self.xi_tilde(np.stack([x + 0.5 * dt * k1, t + 0.5 * dt], axis=-1))
            k3 = self.xi_tilde(np.stack([x + 0.5 * dt * k2, t + 0.5 * dt], axis=-1))
            k4 = self.xi_tilde(np.stack([x + dt * k3, t + dt], axis=-1))
            x = x + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            t = t + dt
        return x

    def _leaf_xjet(self, xjet: Jet1D, y0, y1):
        """Same integration with a Jet1D-valued state (variational jets)."""
        q = xjet.order
        t = np.array(y0, dtype=float)
        dt = (np.asarray(y1, dtype=float) - t) / self.rk_steps

        def rhs(J, tt):
            pts = np.stack([J.coeffs[0], tt], axis=-1)
            sx = self.xi_tilde.jet_at(pts, q)
            tj = Jet1D.constant(tt, 0.0, q)
            return sj_compose_curve(sx, J, tj).coeffs

        x = xjet.coeffs
        for _ in range(self.rk_steps):
            J1 = Jet1D(xjet.x0, x)
            k1 = rhs(J1, t)
            k2 = rhs(Jet1D(xjet.x0, x + 0.5 * dt * k1), t + 0.5 * dt)
            k3 = rhs(Jet1D(xjet.x0, x + 0.5 * dt * k2), t + 0.5 * dt)
            k4 = rhs(Jet1D(xjet.x0, x + dt * k3), t + dt)
            x = x + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            t = t + dt
        return Jet1D(xjet.x0, x)

    def _h_jet(self, pts, order):
        """2D jet of H(x, y) = (phi(x, y), y) at pts: pure-x partials by
        variational integration, y-partials by d_y phi = -xi~ d_x phi."""
        from .jets import s_product
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        q = order
        base_jet = Jet1D.identity(x, q)
        phi_x = self._leaf_xjet(base_jet, y, np.zeros_like(y))
        pos = _TRI_POS[q]
        phi = np.zeros((tri_size(q),) + x.shape)
        for i in range(q + 1):
            phi[pos[(i, 0)]] = phi_x.coeffs[i]
        xi_jet = self.xi_tilde.jet_at(pts, q)
        # fill mixed partials level by level in the y-order
        for j in range(1, q + 1):
            # jet of w := -xi~ * d_x phi using entries with y-order < j
            for i in range(0, q + 1 - j):
                acc = np.zeros(x.shape)
                for p in range(i + 1):
                    for r in range(j):
                        if p + r > q:
                            continue
                        dphi_key = (i - p + 1, j - 1 - r)
                        if dphi_key[0] + dphi_key[1] > q:
                            continue
                        acc = acc + (math.comb(i, p) * math.comb(j - 1, r)
                                     * xi_jet.coeffs[pos[(p, r)]]
                                     * phi[pos[dphi_key]])
                phi[pos[(i, j)]] = -acc
        c = np.zeros((2, tri_size(q)) + x.shape)
        c[0] = phi
        c[1, 0] = y
        if q >= 1:
            c[1, pos[(0, 1)]] = 1.0
        return Jet2D(pts, c)

    # -- public chart interface ---------------------------------------------

    def forward(self, pts):
        pts = np.asarray(pts, dtype=float)
        x = pts[..., 0]
        yv = pts[..., 1] - self.g(x)
        phi = self._leaf_values(x, yv, np.zeros_like(yv))
        return np.stack([phi, yv], axis=-1)

    def inverse(self, pts):
        pts = np.asarray(pts, dtype=float)
        xb, y = pts[..., 0], pts[..., 1]
        x = self._leaf_values(xb, np.zeros_like(y), y)
        return np.stack([x, y + self.g(x)], axis=-1)

    def _v_jet(self, pts, order):
        pts = np.asarray(pts, dtype=float)
        x = pts[..., 0]
        gj = self.g.jet_at(x, order)
        pos = _TRI_POS[order]
        c = np.zeros((2, tri_size(order)) + x.shape)
        c[0, 0] = x
        c[0, pos[(1, 0)]] = 1.0
        c[1, 0] = pts[..., 1] - gj.coeffs[0]
        c[1, pos[(0, 1)]] = 1.0
        for i in range(1, order + 1):
            c[1, pos[(i, 0)]] = -gj.coeffs[i]
        return Jet2D(pts, c)

    def jet(self, pts, order):
        V = self._v_jet(pts, order)
        H = self._h_jet(V.value, order)
        return jet_compose_2d(H, V)

    def inverse_jet(self, pts, order):
        pts = np.asarray(pts, dtype=float)
        pv = np.stack([self._leaf_values(pts[..., 0], np.zeros_like(pts[..., 1]),
                                         pts[..., 1]), pts[..., 1]], axis=-1)
        Hj = self._h_jet(pv, order)
        Hinv = jet_invert_2d(Hj)
        # V^{-1} jet at pv
        x = pv[..., 0]
        gj = self.g.jet_at(x, order)
        pos = _TRI_POS[order]
        c = np.zeros((2, tri_size(order)) + x.shape)
        c[0, 0] = x
        c[0, pos[(1, 0)]] = 1.0
        c[1, 0] = pv[..., 1] + gj.coeffs[0]
        c[1, pos[(0, 1)]] = 1.0
        for i in range(1, order + 1):
            c[1, pos[(i, 0)]] = gj.coeffs[i]
        Vinv = Jet2D(pv, c)
        return jet_compose_2d(Vinv, Hinv)

    # -- verification ---------------------------------------------------------

    def graph_residual(self, n=128):
        xs = np.linspace(self.g.lo, self.g.hi, n)
        img = self.forward(np.stack([xs, self.g(xs)], axis=-1))
        return float(max(np.max(np.abs(img[:, 0] - xs)),
                         np.max(np.abs(img[:, 1]))))

    def field_angle_residual(self, n=24, inset=0.15, region=None):
        """Largest angle between DPsi(field direction) and genuine vertical."""
        if region is not None:
            (ax0, ax1), (ay0, ay1) = region
        else:
            wx = inset * (self.xi.x1 - self.xi.x0)
            wy = inset * (self.xi.y1 - self.xi.y0)
            ax0, ax1 = self.xi.x0 + wx, self.xi.x1 - wx
            ay0, ay1 = self.xi.y0 + wy, self.xi.y1 - wy
        xs = np.linspace(ax0, ax1, n)
        ys = np.linspace(ay0, ay1, n)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        D = self.jet(pts, 1).linear()
        u = self.xi(pts)
        vec = np.stack([u, np.ones_like(u)], axis=-1)
        img = np.einsum("nij,nj->ni", D, vec)
        return float(np.max(np.abs(img[:, 0]) / np.linalg.norm(img, axis=-1)))


def rectify(g: GridFn1D, xi: GridFn2D, order, omega=0.5, rk_steps=16,
            check=True, graph_tol=1e-10, angle_tol=1e-8, check_region=None):
    """Rectifying chart for a center-aligned graph and a vertical field.

    Requires ||g'|| < omega and ||xi|| < omega < 1/2; verifies that the chart
    flattens the graph to the axis and the field to genuine vertical.  The
    angle residual scales with the field-grid resolution, so unit-scale boxes
    need finer grids than the shrunken chart boxes of an atlas build.
    """
    if omega >= 0.5:
        omega = 0.5 - 1e-12
    if g.sup_deriv(1) > omega or xi.sup_norm() > omega:
        raise PremiseViolation(
            "rectification bound violated",
            {"sup_slope": g.sup_deriv(1), "sup_field": xi.sup_norm(),
             "omega": omega})
    chart = RectChart(g, xi, order, rk_steps=rk_steps)
    if check:
        gr = chart.graph_residual()
        fr = chart.field_angle_residual(region=check_region)
        if gr > graph_tol:
            raise PremiseViolation("rectified graph residual too large",
                                   {"residual": gr})
        if fr > angle_tol:
            raise PremiseViolation("rectified field angle too large",
                                   {"angle": fr})
    return chart


# ---------------------------------------------------------------------------
# Skew form and decay rates
# ---------------------------------------------------------------------------

def compose_chart_jets(psi_out, F, psi_in, pts, order):
    """Jet of psi_out o F o psi_in^{-1} at pts."""
    J1 = psi_in.inverse_jet(pts, order)
    J2 = F.jet(J1.value, order)
    J3 = psi_out.jet(J2.value, order)
    return jet_compose_2d(J3, jet_compose_2d(J2, J1))


def skew_form_check(psi_m, psi_m1, F_m, rect, r, grid=12,
                    y_samples=(1e-4, 1e-3, 1e-2, 1e-1)):
    """Residual report: y-independence of the first component of the
    conjugated map, and the fitted K in |d_x^{r-1} e(x, y)| < K |y|."""
    xs = np.linspace(rect[0][0], rect[0][1], grid)
    ys = np.linspace(rect[1][0], rect[1][1], grid)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    J = compose_chart_jets(psi_m1, F_m, psi_m, pts, r)
    resid = float(np.max(np.abs(J.part(0, 0, 1))))
    # K fit on |y| slices that stay inside the rectangle
    ymax = rect[1][1]
    K = 0.0
    slices = []
    for ya in y_samples:
        y = ya * ymax
        pts = np.stack([xs, np.full_like(xs, y)], axis=-1)
        J = compose_chart_jets(psi_m1, F_m, psi_m, pts, r)
        val = float(np.max(np.abs(J.part(1, r - 1, 0))))
        slices.append((y, val))
        K = max(K, val / y)
    return {"skew_residual": resid, "K_fitted": K, "slices": slices}


def eq_decay_constant(F, rect, r, grid=12):
    """Fitted C with |d_x^s e(x, y)| <= C |y| for 0 <= s <= r on the grid."""
    xs = np.linspace(rect[0][0], rect[0][1], grid)
    ys = np.linspace(rect[1][0], rect[1][1], grid)
    ys = ys[np.abs(ys) > 1e-9]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    J = F.jet(pts, r)
    C = 0.0
    for s in range(r + 1):
        C = max(C, float(np.max(np.abs(J.part(1, s, 0)) / np.abs(pts[:, 1]))))
    return C


def cr_decay_check(seq: AlmostLinearSeq, kind, n_max, interval, r,
                   sigma_minus, sigma_plus, lam, n_nodes=33, order=None,
                   seed_slope=0.05):
    """Iterate one transform n_max times and compare the decay of the
    C^{r-1} data against the stated per-step rate."""
    order = r if order is None else order
    rates = []
    if kind == "graph":
        g = GridFn1D(interval[0], interval[1],
                     np.vstack([seed_slope * np.linspace(interval[0], interval[1], n_nodes),
                                np.full(n_nodes, seed_slope)]
                               + [np.zeros(n_nodes)] * (order - 1)))
        norms = []
        for n in range(n_max):
            g = graph_transform(seq.map_at(n), g, out_interval=interval,
                                n_nodes=n_nodes, order=order)
            norms.append(max(g.sup_range(1, min(order, r)), 1e-300))
        per_step = (sigma_plus / sigma_minus) ** (2 * r - 1) * lam
    else:
        xi = GridFn2D(
            [[interval[0], interval[1]], [interval[0], interval[1]]],
            np.concatenate(
                [np.full((1, n_nodes, n_nodes), seed_slope),
                 np.zeros((tri_size(order) - 1, n_nodes, n_nodes))]))
        norms = []
        for n in range(n_max):
            xi = field_transform(seq.map_at(n), xi, order=order)
            norms.append(max(xi.sup_norm() + xi.sup_partials(1, min(order, r - 1)),
                             1e-300))
        per_step = (sigma_plus ** 3 / sigma_minus) ** (r - 1) * lam
    norms = np.array(norms)
    tail = norms[max(1, n_max // 2):]
    ratios = tail[1:] / np.maximum(tail[:-1], 1e-300)
    measured = float(np.max(ratios)) if len(ratios) else float("nan")
    return {
        "kind": kind,
        "norms": norms,
        "per_step_bound": per_step,
        "measured_tail_rate": measured,
        "ok": bool(measured <= per_step * (1 + 1e-9)) if len(ratios) else True,
    }
