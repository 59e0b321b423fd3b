"""Local invariant manifolds from regular charts: vertical/horizontal curves,
the strong stable manifold as a union of pulled-back pieces, quantitative
Jacobian/derivative bands in the neutral case, and finite-order center-jet
comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PremiseViolation, StitchError
from . import system
from .graph_transform import GridFn1D
from .jets import (Jet1D, jet_compose_1d, jet_invert_1d, jet_product,
                   jet1_sqrt, jet2_compose_curve)
from .qlinearize import ChartAtlas

_GL4 = (np.array([-0.8611363116, -0.3399810436, 0.3399810436, 0.8611363116]),
        np.array([0.3478548451, 0.6521451549, 0.6521451549, 0.3478548451]))


@dataclass
class ManifoldCurve:
    """Arclength-parameterized curve with per-node jets of both coordinates.

    s = 0 sits at the anchor point (the orbit point for chart-axis curves);
    jets are derivative values with respect to arclength.
    """
    s: np.ndarray
    jets_x: np.ndarray       # (order+1, n)
    jets_y: np.ndarray
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self._fx = GridFn1D(self.s[0], self.s[-1], self.jets_x)
        self._fy = GridFn1D(self.s[0], self.s[-1], self.jets_y)

    @property
    def order(self):
        return self.jets_x.shape[0] - 1

    @property
    def points(self):
        return np.stack([self.jets_x[0], self.jets_y[0]], axis=-1)

    def at(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack([self._fx(s), self._fy(s)], axis=-1)

    def tangent(self, s):
        dx = self._fx.derivs(np.atleast_1d(s), 1)[1]
        dy = self._fy.derivs(np.atleast_1d(s), 1)[1]
        t = np.stack([dx, dy], axis=-1)
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    def jet_at_zero(self, order):
        """Arclength jets of both coordinates at s = 0."""
        k = int(np.argmin(np.abs(self.s)))
        lo = min(order, self.order)
        return (Jet1D(0.0, self._fx.derivs(np.zeros(1), lo)[:, 0]),
                Jet1D(0.0, self._fy.derivs(np.zeros(1), lo)[:, 0]))

    def unit_speed_residual(self):
        sp = np.sqrt(self.jets_x[1] ** 2 + self.jets_y[1] ** 2)
        return float(np.max(np.abs(sp - 1.0)))

    def curvature(self, s):
        dx = self._fx.derivs(np.atleast_1d(s), 2)
        dy = self._fy.derivs(np.atleast_1d(s), 2)
        return dx[1] * dy[2] - dy[1] * dx[2]

    def to_csv(self, path):
        s = self.s
        t = self.tangent(s)
        rows = np.column_stack([s, self.jets_x[0], self.jets_y[0],
                                np.arctan2(t[:, 1], t[:, 0]), self.curvature(s)])
        np.savetxt(path, rows, delimiter=",",
                   header="arclength,x,y,tangent_angle,curvature", comments="")


def _arclength_reparam(t_nodes, cx: Jet1D, cy: Jet1D, provenance):
    """Reparameterize a batch of parameter jets by signed arclength from the
    node nearest t = 0 (assumed a node); jets keep the input order."""
    order = cx.order - 1
    # speed jets |c'(t)| of order `order` = cx.order - 1
    dx = Jet1D(t_nodes, cx.coeffs[1:])
    dy = Jet1D(t_nodes, cy.coeffs[1:])
    sq = jet_product(dx, dx).coeffs + jet_product(dy, dy).coeffs
    n = len(t_nodes)
    speed = np.zeros((order + 1, n))
    for k in range(n):
        sj = jet_compose_1d(jet1_sqrt(sq[0, k], order), Jet1D(t_nodes[k], sq[:, k]))
        speed[:, k] = sj.coeffs
    # cumulative arclength by per-interval Gauss-Legendre on the speed value
    gl_x, gl_w = _GL4
    s_nodes = np.zeros(n)
    for k in range(n - 1):
        a, b = t_nodes[k], t_nodes[k + 1]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        tt = mid + half * gl_x
        # evaluate |c'| at the quadrature nodes from the nearest node jet
        vals = np.zeros(4)
        for j, t in enumerate(tt):
            kk = k if abs(t - t_nodes[k]) <= abs(t - t_nodes[k + 1]) else k + 1
            dt = t - t_nodes[kk]
            acc = 0.0
            for q in range(order, -1, -1):
                acc = acc * dt + speed[q, kk] / math.factorial(q)
            vals[j] = acc
        s_nodes[k + 1] = s_nodes[k] + half * float(np.sum(gl_w * vals))
    k0 = int(np.argmin(np.abs(t_nodes)))
    s_nodes = s_nodes - s_nodes[k0]
    # jets of t(s) (s' = speed gives s-jets one order above speed), then of
    # the coordinates with respect to s: no order is lost
    q = cx.order
    jx = np.zeros((q + 1, n))
    jy = np.zeros((q + 1, n))
    for k in range(n):
        s_jet = Jet1D(t_nodes[k], np.concatenate([[s_nodes[k]], speed[:, k]]))
        t_of_s = jet_invert_1d(s_jet)
        jx[:, k] = jet_compose_1d(Jet1D(t_nodes[k], cx.coeffs[:, k]),
                                  t_of_s).coeffs
        jy[:, k] = jet_compose_1d(Jet1D(t_nodes[k], cy.coeffs[:, k]),
                                  t_of_s).coeffs
    return ManifoldCurve(s_nodes, jx, jy, provenance)


def _axis_curve(atlas: ChartAtlas, m, which, n_samples, order, span=1.0):
    lm = atlas.radii[m] * span
    t = np.linspace(-lm, lm, n_samples)
    if which == "vertical":
        pts = np.stack([np.zeros_like(t), t], axis=-1)
        xj = Jet1D.constant(np.zeros_like(t), t, order)
        yj = Jet1D.identity(t, order)
    else:
        pts = np.stack([t, np.zeros_like(t)], axis=-1)
        xj = Jet1D.identity(t, order)
        yj = Jet1D.constant(np.zeros_like(t), t, order)
    J = atlas.phis[m].inverse_jet(pts, order)
    cx, cy = jet2_compose_curve(J, xj, yj)
    return _arclength_reparam(t, cx, cy, [{"chart": m, "kind": which}])


def local_vertical(atlas: ChartAtlas, m, n_samples=129, order=None):
    order = atlas.r if order is None else order
    return _axis_curve(atlas, m, "vertical", n_samples, order)


def local_horizontal(atlas: ChartAtlas, m, n_samples=129, order=None):
    order = atlas.r if order is None else order
    return _axis_curve(atlas, m, "horizontal", n_samples, order)


def tangent_angle_to(curve: ManifoldCurve, direction):
    t = curve.tangent(np.zeros(1))[0]
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return float(abs(t[0] * d[1] - t[1] * d[0]))


# ---------------------------------------------------------------------------
# Strong stable manifold
# ---------------------------------------------------------------------------

def _pullback_curve(atlas: ChartAtlas, curve: ManifoldCurve, steps, order):
    """F^{-steps} of a curve, re-parameterized by arclength."""
    F = atlas.orbit.map
    t = curve.s
    cx = Jet1D(t, np.array(curve.jets_x))
    cy = Jet1D(t, np.array(curve.jets_y))
    for _ in range(steps):
        pts = np.stack([cx.coeffs[0], cy.coeffs[0]], axis=-1)
        J = F.inverse_jet(pts, cx.order)
        cx, cy = jet2_compose_curve(J, cx, cy)
    prov = curve.provenance + [{"pullback_steps": steps}]
    return _arclength_reparam(t, cx, cy, prov)


def strong_stable(atlas: ChartAtlas, n_max, n_samples=257, order=None,
                  mismatch_tol=1e-7):
    """Union of F^{-n}(W^v_loc(p_n)) for n <= n_max, with nesting checks.

    The pieces are nested, so the union is the deepest piece; consecutive
    pieces must agree on their overlap to `mismatch_tol`.
    """
    order = atlas.r if order is None else order
    cond = stable_condition(atlas.params)
    pieces = []
    for n in range(0, n_max + 1):
        if n > atlas.hi:
            break
        base = _axis_curve(atlas, n, "vertical", n_samples, order)
        pieces.append(_pullback_curve(atlas, base, n, order)
                      if n > 0 else base)
    mismatches = []
    for a, b in zip(pieces[:-1], pieces[1:]):
        lo = max(a.s[0], b.s[0])
        hi = min(a.s[-1], b.s[-1])
        ss = np.linspace(lo, hi, 64)
        # arclength origins agree at p_0, orientations may flip
        d1 = np.max(np.linalg.norm(a.at(ss) - b.at(ss), axis=-1))
        d2 = np.max(np.linalg.norm(a.at(ss) - b.at(-ss), axis=-1))
        mm = min(d1, d2)
        mismatches.append(float(mm))
        if mm > mismatch_tol:
            raise StitchError(f"stable-manifold pieces disagree by {mm}")
    curve = pieces[-1]
    curve.provenance.append({"pieces": len(pieces), "mismatches": mismatches})
    return curve, {"condition": cond, "pieces": len(pieces),
                   "mismatches": mismatches}


def stable_condition(params):
    lam, rho, eps = params.lam, params.rho, params.eps
    c1 = (8 * eps * math.log(rho) + 4 * eps * math.log(lam)) \
        - (1 - eps) * math.log(lam)
    c2 = ((1 + eps) * math.log(lam) - (1 - eps) * math.log(rho)) \
        - (1 - eps) * math.log(lam)
    return {"margin_1": c1, "margin_2": c2, "ok": c1 > 0 and c2 > 0}


def contraction_rate_check(atlas: ChartAtlas, curve: ManifoldCurve, n_check,
                           samples=24):
    """Sampled points on the curve approach the orbit at the regular rate:
    (1/n) log |q_n - p_n| < (1 - eps) log lam."""
    p = atlas.params
    F = atlas.orbit.map
    ss = np.linspace(curve.s[0] * 0.9, curve.s[-1] * 0.9, samples)
    ss = ss[np.abs(ss) > 1e-3 * max(abs(curve.s[0]), abs(curve.s[-1]))]
    q = curve.at(ss)
    margins = []
    for n in range(1, n_check + 1):
        q = F(q)
        pn = atlas.orbit.point(min(n, atlas.hi)) if n <= atlas.hi else None
        if pn is None:
            break
        d = np.linalg.norm(q - pn, axis=-1)
        rate = np.log(np.maximum(d, 1e-300)) / n
        margins.append(float((1 - p.eps) * math.log(p.lam) - np.max(rate)))
    return {"margins": margins, "ok": all(mg > 0 for mg in margins[2:])}


def saddle_stable_oracle(F: system.PlanarMap, fixed_point, half_length,
                         n_nodes=201, iterations=60):
    """Independent local stable manifold at a saddle by the inverse graph
    transform in eigencoordinates; returns sampled phase points."""
    q = np.asarray(fixed_point, dtype=float)
    A = F.jet(q, 1).linear()
    ev, V = np.linalg.eig(A)
    ev = np.real(ev)
    V = np.real(V)
    s_idx = int(np.argmin(np.abs(ev)))
    u_idx = 1 - s_idx
    if not (abs(ev[s_idx]) < 1 < abs(ev[u_idx])):
        raise PremiseViolation("fixed point is not a saddle")
    vs = V[:, s_idx] / np.linalg.norm(V[:, s_idx])
    vu = V[:, u_idx] / np.linalg.norm(V[:, u_idx])
    B = np.stack([vs, vu], axis=-1)
    Binv = np.linalg.inv(B)
    xs = np.linspace(-half_length, half_length, n_nodes)
    w = np.zeros_like(xs)
    for _ in range(iterations):
        pts = q + np.outer(xs, vs) + np.outer(w, vu)
        img = F.inverse(pts)
        loc = (img - q) @ Binv.T
        order = np.argsort(loc[:, 0])
        w = np.interp(xs, loc[order, 0], loc[order, 1])
    return q + np.outer(xs, vs) + np.outer(w, vu)


def hausdorff_distance(pts_a, pts_b):
    """Symmetric Hausdorff distance between two sampled curves."""
    d = np.linalg.norm(pts_a[:, None, :] - pts_b[None, :, :], axis=-1)
    return float(max(np.max(np.min(d, axis=1)), np.max(np.min(d, axis=0))))


# ---------------------------------------------------------------------------
# Neutral-case bands
# ---------------------------------------------------------------------------

def jacobian_bounds_check(orb: system.OrbitSegment, params):
    """Jacobian bands in the rho = lam case."""
    if abs(params.rho - params.lam) > 1e-12:
        raise PremiseViolation("jacobian bounds require rho == lam")
    lam, eps, L = params.lam, params.eps, params.L
    ll = math.log(lam)
    out = {"forward": [], "backward": []}
    for n in range(1, params.N + 1):
        J = system.jacobian_of_power(orb, n)
        lo = -3 * math.log(L) + (1 + 3 * eps) * n * ll
        hi = 3 * math.log(L) + (1 - 3 * eps) * n * ll
        out["forward"].append({"n": n, "margin": float(min(J - lo, hi - J))})
    for n in range(1, params.M + 1):
        J = system.jacobian_of_power(orb, -n)
        lo = -3 * math.log(L) - (1 - 3 * eps) * n * ll
        hi = 3 * math.log(L) - (1 + 3 * eps) * n * ll
        out["backward"].append({"n": n, "margin": float(min(J - lo, hi - J))})
    out["pass"] = all(e["margin"] >= -1e-9
                      for e in out["forward"] + out["backward"])
    return out


def derivative_bounds_check(orb: system.OrbitSegment, atlas: ChartAtlas, E,
                            n_max=None):
    """Four displayed bounds on ||DF^{+-n}| restricted to E|| with C, omega
    from the atlas and L from the certificate (rho = lam case)."""
    p = atlas.params
    if abs(p.rho - p.lam) > 1e-12:
        raise PremiseViolation("derivative bounds require rho == lam")
    C, om, L = atlas.C, atlas.omega, p.L
    ll = math.log(p.lam)
    lo_pref = -math.log(C * L ** 2 * (1 + om) ** 2)
    hi_pref = math.log(C * (1 + om) ** 2)
    e0 = np.asarray(E, dtype=float)
    n_fwd = p.N if n_max is None else min(n_max, p.N)
    n_bwd = p.M if n_max is None else min(n_max, p.M)
    out = {"forward": [], "backward": []}
    v = e0 / np.linalg.norm(e0)
    acc = 0.0
    for n in range(1, n_fwd + 1):
        v = orb.A(n - 1) @ v
        nv = np.linalg.norm(v)
        acc += math.log(nv)
        v /= nv
        lo = lo_pref + (1 + 3 * p.eps) * n * ll
        hi = hi_pref - 4 * p.eps * n * ll
        out["forward"].append({"n": n, "margin": float(min(acc - lo, hi - acc))})
    v = e0 / np.linalg.norm(e0)
    acc = 0.0
    for n in range(1, n_bwd + 1):
        v = np.linalg.solve(orb.A(-n), v)
        nv = np.linalg.norm(v)
        acc += math.log(nv)
        v /= nv
        lo = lo_pref + 2 * p.eps * n * ll
        hi = hi_pref - (1 + 3 * p.eps) * n * ll
        out["backward"].append({"n": n, "margin": float(min(acc - lo, hi - acc))})
    out["pass"] = all(e["margin"] >= -1e-9
                      for e in out["forward"] + out["backward"])
    return out


# ---------------------------------------------------------------------------
# Center manifold germ
# ---------------------------------------------------------------------------

def center_curve(atlas: ChartAtlas, n_samples=129, order=None):
    return local_horizontal(atlas, 0, n_samples=n_samples, order=order)


def center_rate_exponent(eps, r):
    """The backward-growth exponent in the center-jet hypothesis."""
    return 1.0 - eps / (1.0 - eps) * (7 + 11 * r + 2 * eps + 66 * r * eps)


def planted_curve(atlas: ChartAtlas, degree, amplitude=1.0, n_samples=129,
                  order=None):
    """Phase curve whose chart image is the graph y = amplitude * x^degree:
    a deliberate violation of the canonical center germ at the given order."""
    order = atlas.r + 1 if order is None else order
    l0 = atlas.radii[0]
    t = np.linspace(-l0, l0, n_samples)
    xj = Jet1D.identity(t, order)
    yc = np.zeros((order + 1, len(t)))
    for k in range(min(degree, order) + 1):
        yc[k] = amplitude * math.perm(degree, k) * t ** (degree - k)
    yj = Jet1D(t, yc)
    J = atlas.phis[0].inverse_jet(np.stack([t, amplitude * t ** degree], axis=-1),
                                  order)
    cx, cy = jet2_compose_curve(J, xj, yj)
    return _arclength_reparam(t, cx, cy, [{"planted_degree": degree}])


def center_hypothesis_check(atlas: ChartAtlas, curve: ManifoldCurve, n_max,
                            samples=9):
    """Backward-growth hypothesis: ||DF^{-n}| tangent|| < lam^{-r_frak n} on
    the arclength window |t| < lam^{11 eps n}."""
    p = atlas.params
    F = atlas.orbit.map
    rfrak = center_rate_exponent(p.eps, atlas.r)
    s_max = min(abs(curve.s[0]), abs(curve.s[-1])) * 0.95
    results = []
    ok = True
    for n in range(1, n_max + 1):
        win = min(p.lam ** (11 * p.eps * n), s_max)
        ss = np.linspace(-win, win, samples)
        pts = curve.at(ss)
        tans = curve.tangent(ss)
        worst = -math.inf
        for z, v in zip(pts, tans):
            cur = np.array(z)
            w = np.array(v)
            acc = 0.0
            for _ in range(n):
                D = F.inverse_jet(cur, 1).linear()
                w = D @ w
                nw = np.linalg.norm(w)
                acc += math.log(nw)
                w /= nw
                cur = F.inverse(cur)
            worst = max(worst, acc)
        margin = -rfrak * n * math.log(p.lam) - worst
        results.append({"n": n, "margin": float(margin),
                        "window": win})
        ok &= margin > 0
    return {"rfrak": rfrak, "per_n": results, "pass": ok}


def center_jet_compare(atlas: ChartAtlas, curve: ManifoldCurve, order,
                       n_max=None, tol=1e-6):
    """Hypothesis check plus the first arclength-jet discrepancy order
    between the candidate curve and the chart's center curve at p_0."""
    p = atlas.params
    cond = 1.0 / (11 * atlas.r + 2) - p.eps
    if cond <= 0:
        raise PremiseViolation("marginal exponent violates the center condition")
    n_max = p.M if n_max is None else min(n_max, p.M)
    if n_max < 1:
        raise PremiseViolation("window too short for any backward check")
    wc = center_curve(atlas, n_samples=len(curve.s), order=order)
    hyp = center_hypothesis_check(atlas, curve, n_max)
    gx, gy = curve.jet_at_zero(order)
    hx, hy = wc.jet_at_zero(order)
    # align orientations at s = 0
    if gx.coeffs[1] * hx.coeffs[1] + gy.coeffs[1] * hy.coeffs[1] < 0:
        sign = np.array([(-1.0) ** k for k in range(len(hx.coeffs))])
        hx = Jet1D(0.0, hx.coeffs * sign)
        hy = Jet1D(0.0, hy.coeffs * sign)
    first = None
    diffs = []
    for k in range(min(order, gx.order, hx.order) + 1):
        d = max(abs(gx.coeffs[k] - hx.coeffs[k]), abs(gy.coeffs[k] - hy.coeffs[k]))
        diffs.append(float(d))
        if first is None and d > tol:
            first = k
    return {"hypothesis": hyp, "first_discrepancy": first, "diffs": diffs,
            "center_condition_margin": cond}
