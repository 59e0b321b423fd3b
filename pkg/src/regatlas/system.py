"""Planar map definitions, orbit generation, and derivative cocycles.

Maps are vectorized: evaluators take point arrays of shape (..., 2) and jet
evaluators return batched Jet2D.  Every map carries an inverse and inverse
jets, either in closed form (Henon, affine) or by Newton + jet inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDirectionError, DomainError
from .jets import Jet2D, jet_invert_2d, tri_indices, tri_size, _TRI_POS

_OVERFLOW = 1e100


def _as_points(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError("points must have trailing dimension 2")
    return p


class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    def __init__(self, x0, x1, y0, y1):
        self.x0, self.x1, self.y0, self.y1 = map(float, (x0, x1, y0, y1))

    def contains(self, p):
        p = _as_points(p)
        return ((p[..., 0] >= self.x0) & (p[..., 0] <= self.x1)
                & (p[..., 1] >= self.y0) & (p[..., 1] <= self.y1))

    def as_list(self):
        return [[self.x0, self.x1], [self.y0, self.y1]]

    def grid(self, n):
        nx, ny = (n, n) if np.isscalar(n) else n
        xs = np.linspace(self.x0, self.x1, nx)
        ys = np.linspace(self.y0, self.y1, ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=-1)

    def __repr__(self):
        return f"Rect({self.x0}, {self.x1}, {self.y0}, {self.y1})"


class Poly2:
    """Polynomial R^2 -> R as {(i, j): coeff}; exact jets of any order."""

    def __init__(self, terms):
        self.terms = {k: float(v) for k, v in terms.items() if v != 0.0}

    def __call__(self, p):
        p = _as_points(p)
        x, y = p[..., 0], p[..., 1]
        out = np.zeros(x.shape)
        for (i, j), c in self.terms.items():
            out = out + c * x ** i * y ** j
        return out

    def partial_value(self, p, dx, dy):
        p = _as_points(p)
        x, y = p[..., 0], p[..., 1]
        out = np.zeros(x.shape)
        for (i, j), c in self.terms.items():
            if i >= dx and j >= dy:
                out = out + (c * math.perm(i, dx) * math.perm(j, dy)
                             * x ** (i - dx) * y ** (j - dy))
        return out


class PlanarMap:
    """A C^{r+1} planar diffeomorphism with jet evaluation and an inverse.

    Parameters
    ----------
    fwd, inv : callables on (..., 2) point arrays
    fwd_jet, inv_jet : callables (points, order) -> Jet2D
    domain : Rect
    order : smoothness order r+1 supported by the jet evaluators
    """

    def __init__(self, fwd, fwd_jet, inv, inv_jet, domain, order, name="map"):
        self.fwd = fwd
        self.fwd_jet = fwd_jet
        self._inv = inv
        self._inv_jet = inv_jet
        self.domain = domain
        self.order = order
        self.name = name

    def __call__(self, p):
        return self.fwd(_as_points(p))

    def jet(self, p, order):
        return self.fwd_jet(_as_points(p), order)

    def inverse(self, p):
        return self._inv(_as_points(p))

    def inverse_jet(self, p, order):
        return self._inv_jet(_as_points(p), order)

    def derivative(self, p):
        return self.jet(p, 1).linear()

    def inverse_derivative(self, p):
        return self.inverse_jet(p, 1).linear()


def polynomial_map(px_terms, py_terms, domain, order=6, name="polynomial",
                   newton_seed=None):
    """Map whose components are polynomials; inverse by Newton iteration."""
    px, py = Poly2(px_terms), Poly2(py_terms)

    def fwd(p):
        return np.stack([px(p), py(p)], axis=-1)

    def fwd_jet(p, q):
        p = _as_points(p)
        idx = tri_indices(q)
        c = np.zeros((2, len(idx)) + p.shape[:-1])
        for k, (i, j) in enumerate(idx):
            c[0, k] = px.partial_value(p, i, j)
            c[1, k] = py.partial_value(p, i, j)
        return Jet2D(p, c)

    def inv(p):
        p = _as_points(p)
        q = np.array(p, copy=True) if newton_seed is None else \
            np.broadcast_to(np.asarray(newton_seed, float), p.shape).copy()
        for _ in range(100):
            J = fwd_jet(q, 1)
            r = np.stack([J.coeffs[0, 0], J.coeffs[1, 0]], axis=-1) - p
            A = J.linear()
            det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
            dx = (A[..., 1, 1] * r[..., 0] - A[..., 0, 1] * r[..., 1]) / det
            dy = (-A[..., 1, 0] * r[..., 0] + A[..., 0, 0] * r[..., 1]) / det
            q = q - np.stack([dx, dy], axis=-1)
            if np.max(np.abs(np.stack([dx, dy]))) < 1e-14:
                break
        return q

    def inv_jet(p, q_order):
        base = inv(p)
        return jet_invert_2d(fwd_jet(base, q_order))

    return PlanarMap(fwd, fwd_jet, inv, inv_jet, domain, order, name)


def henon(a, b, domain=Rect(-4.0, 4.0, -4.0, 4.0)):
    """(x, y) -> (a - x^2 - b*y, x), exact polynomial jets and inverse."""
    if b == 0:
        raise ValueError("henon requires b != 0 (non-invertible otherwise)")
    a, b = float(a), float(b)
    fwd_m = polynomial_map({(0, 0): a, (2, 0): -1.0, (0, 1): -b}, {(1, 0): 1.0},
                           domain, name=f"henon({a},{b})")
    inv_m = polynomial_map({(0, 1): 1.0},
                           {(0, 0): a / b, (0, 2): -1.0 / b, (1, 0): -1.0 / b},
                           domain)
    return PlanarMap(fwd_m.fwd, fwd_m.fwd_jet, inv_m.fwd, inv_m.fwd_jet,
                     domain, order=8, name=fwd_m.name)


def henon_fixed_points(a, b):
    """Solutions of x = a - x^2 - b x (y = x), as an array of points."""
    disc = (1 + b) ** 2 + 4 * a
    if disc < 0:
        return np.zeros((0, 2))
    xs = np.array([(-(1 + b) + math.sqrt(disc)) / 2, (-(1 + b) - math.sqrt(disc)) / 2])
    return np.stack([xs, xs], axis=-1)


def linear_map(matrix, domain=Rect(-10.0, 10.0, -10.0, 10.0)):
    matrix = np.asarray(matrix, dtype=float)
    inv = np.linalg.inv(matrix)

    def mk(mat):
        def fwd(p):
            return _as_points(p) @ mat.T

        def fwd_jet(p, q):
            return Jet2D.affine(mat, np.zeros(2), _as_points(p), q,
                                batch=_as_points(p).shape[:-1])
        return fwd, fwd_jet

    f, fj = mk(matrix)
    g, gj = mk(inv)
    return PlanarMap(f, fj, g, gj, domain, order=8, name="linear")


def perturbed_linear_map(alpha, beta, eps, cubic=None,
                         domain=Rect(-0.5, 0.5, -0.5, 0.5)):
    """diag(alpha, beta) plus eps-scaled cubic terms; fixed point at 0."""
    if cubic is None:
        cubic = ({(3, 0): 1.0, (1, 2): 0.5}, {(2, 1): 1.0, (0, 3): -0.5})
    cx = {(1, 0): alpha}
    cy = {(0, 1): beta}
    for k, v in cubic[0].items():
        cx[k] = cx.get(k, 0.0) + eps * v
    for k, v in cubic[1].items():
        cy[k] = cy.get(k, 0.0) + eps * v
    return polynomial_map(cx, cy, domain, name="perturbed_linear",
                          newton_seed=(0.0, 0.0))


# ---------------------------------------------------------------------------
# Orbits and cocycles
# ---------------------------------------------------------------------------

@dataclass
class OrbitSegment:
    """Points p_m for m in [-M, N] with per-step derivative matrices.

    matrices[k] = D_{p_{k - M}} F for k in [0, M + N - 1]; use `A(m)`.
    """
    map: PlanarMap
    M: int
    N: int
    points: np.ndarray            # (M + N + 1, 2)
    matrices: np.ndarray          # (M + N, 2, 2)
    truncated: bool = False
    requested: tuple = (0, 0)

    def point(self, m):
        return self.points[m + self.M]

    def A(self, m):
        """Derivative matrix at p_m (valid for -M <= m <= N - 1)."""
        return self.matrices[m + self.M]

    @property
    def p0(self):
        return self.point(0)


def orbit(F: PlanarMap, p0, M, N) -> OrbitSegment:
    """Iterate forward N and backward M steps, caching derivatives.

    Stops early (with `truncated=True`) if the orbit leaves the domain or a
    coordinate overflows.
    """
    p0 = _as_points(p0)
    if not bool(F.domain.contains(p0)):
        raise DomainError(f"seed point {p0} outside map domain")
    # fixed points are kept exactly stationary: float drift along an
    # expanding direction would otherwise blow up long windows
    if np.max(np.abs(F(p0) - p0)) < 1e-12:
        pts = np.tile(np.asarray(p0, dtype=float), (M + N + 1, 1))
        mats = F.jet(pts[:-1], 1).linear() if M + N > 0 else np.zeros((0, 2, 2))
        return OrbitSegment(F, M, N, pts, mats, truncated=False,
                            requested=(M, N))
    fwd = [np.array(p0, dtype=float)]
    for _ in range(N):
        nxt = F(fwd[-1])
        if np.any(np.abs(nxt) > _OVERFLOW):
            raise DomainError("orbit overflow during forward iteration")
        if not bool(F.domain.contains(nxt)):
            break
        fwd.append(nxt)
    bwd = [np.array(p0, dtype=float)]
    for _ in range(M):
        prv = F.inverse(bwd[-1])
        if np.any(np.abs(prv) > _OVERFLOW):
            raise DomainError("orbit overflow during backward iteration")
        if not bool(F.domain.contains(prv)):
            break
        bwd.append(prv)
    n_att, m_att = len(fwd) - 1, len(bwd) - 1
    pts = np.array(bwd[::-1] + fwd[1:])
    mats = F.jet(pts[:-1], 1).linear() if len(pts) > 1 else np.zeros((0, 2, 2))
    return OrbitSegment(F, m_att, n_att, pts, mats,
                        truncated=(n_att < N or m_att < M), requested=(M, N))


@dataclass
class Cocycle:
    """2x2 matrices A_m for m in [-M, N-1], optionally with frame metadata."""
    matrices: np.ndarray
    M: int
    frames: np.ndarray | None = None      # (M + N + 1, 2, 2) orthonormal

    def A(self, m):
        return self.matrices[m + self.M]

    @property
    def N(self):
        return self.matrices.shape[0] - self.M


def direction_orbit(orb: OrbitSegment, e0):
    """Unit vectors u_m spanning DF^m(E) at each p_m, m in [-M, N].

    Forward push by A_m, backward pull by A_m^{-1}; continuous normalization.
    """
    e0 = np.asarray(e0, dtype=float)
    n0 = np.linalg.norm(e0)
    if n0 == 0:
        raise DegenerateDirectionError("zero direction")
    u = np.zeros((orb.M + orb.N + 1, 2))
    u[orb.M] = e0 / n0
    for m in range(0, orb.N):
        v = orb.A(m) @ u[m + orb.M]
        nv = np.linalg.norm(v)
        if nv < 1e-300:
            raise DegenerateDirectionError(f"direction collapsed at step {m}")
        u[m + 1 + orb.M] = v / nv
    for m in range(0, -orb.M, -1):
        v = np.linalg.solve(orb.A(m - 1), u[m + orb.M])
        nv = np.linalg.norm(v)
        if nv < 1e-300:
            raise DegenerateDirectionError(f"direction collapsed at step {m - 1}")
        u[m - 1 + orb.M] = v / nv
    return u


def cocycle_in_frame(orb: OrbitSegment, e0, family=None) -> Cocycle:
    """Express the derivative cocycle in orthonormal frames whose second
    basis vector spans the transported direction; matrices come out lower
    triangular with positive diagonal.

    `family` supplies precomputed transported unit directions (needed for
    stability when the transported direction is a covariant contracted one);
    its entries are sign-aligned so that A_m u_m is a positive multiple of
    u_{m+1}.
    """
    if family is not None:
        u = np.array(family, dtype=float)
        for k in range(u.shape[0] - 1):
            if float((orb.matrices[k] @ u[k]) @ u[k + 1]) < 0:
                u[k + 1] = -u[k + 1]
    else:
        u = direction_orbit(orb, e0)
    K = orb.M + orb.N + 1
    # perpendicular vectors, sign chosen per step so a_m > 0
    w = np.zeros((K, 2))
    w[0] = np.array([u[0][1], -u[0][0]])
    frames = np.zeros((K, 2, 2))
    mats = np.zeros((K - 1, 2, 2))
    for k in range(K - 1):
        frames[k] = np.stack([w[k], u[k]], axis=-1)
        A = orb.matrices[k]
        Au = A @ u[k]
        Aw = A @ w[k]
        b = np.linalg.norm(Au)
        w_next = np.array([u[k + 1][1], -u[k + 1][0]])
        a = float(w_next @ Aw)
        if a < 0:
            w_next = -w_next
            a = -a
        if a == 0.0:
            raise DegenerateDirectionError("frame degenerated (a_m = 0)")
        w[k + 1] = w_next
        c = float(u[k + 1] @ Aw)
        mats[k] = np.array([[a, 0.0], [c, b]])
    frames[K - 1] = np.stack([w[K - 1], u[K - 1]], axis=-1)
    return Cocycle(mats, orb.M, frames)


def contracted_direction(orb: OrbitSegment, steps=None):
    """Most-contracted direction at p_0 by power iteration of the inverse
    cocycle: pull a generic direction back from the far future."""
    steps = orb.N if steps is None else min(steps, orb.N)
    v = np.array([1.0, 1.0]) / math.sqrt(2.0)
    for m in range(steps - 1, -1, -1):
        v = np.linalg.solve(orb.A(m), v)
        v /= np.linalg.norm(v)
    return v


def contracted_family(orb: OrbitSegment, seed=(1.0, 1.0)):
    """Transported most-contracted directions u_m over the whole window.

    Built by a single pullback sweep from p_N (power iteration of the
    inverse), which is the numerically stable construction: pushing a
    contracted direction forward loses it to the expanding component after
    a few dozen steps in double precision.  Satisfies A_m u_m parallel to
    u_{m+1} exactly by construction.
    """
    K = orb.M + orb.N + 1
    u = np.zeros((K, 2))
    v = np.asarray(seed, dtype=float)
    v /= np.linalg.norm(v)
    u[K - 1] = v
    for k in range(K - 2, -1, -1):
        v = np.linalg.solve(orb.matrices[k], v)
        v /= np.linalg.norm(v)
        u[k] = v
    return u


def expanding_family(orb: OrbitSegment, seed=(1.0, 1.0)):
    """Transported slow/expanding directions by a forward push sweep from
    p_{-M} (power iteration of the cocycle); the mirror of
    contracted_family, stable because this direction attracts forward."""
    K = orb.M + orb.N + 1
    u = np.zeros((K, 2))
    v = np.asarray(seed, dtype=float)
    v /= np.linalg.norm(v)
    u[0] = v
    for k in range(K - 1):
        v = orb.matrices[k] @ v
        v /= np.linalg.norm(v)
        u[k + 1] = v
    return u


def jacobian_of_power(orb: OrbitSegment, n):
    """log |Jac_{p_0} F^n| for -M <= n <= N from cached matrices."""
    if n >= 0:
        return float(np.sum(np.log(np.abs(np.linalg.det(orb.matrices[orb.M:orb.M + n])))))
    return -float(np.sum(np.log(np.abs(np.linalg.det(orb.matrices[orb.M + n:orb.M])))))


def op_norm_2x2(mats):
    """Largest singular value of (..., 2, 2) matrices, closed form."""
    m = np.asarray(mats, dtype=float)
    e = 0.5 * np.sum(m ** 2, axis=(-2, -1))
    f = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    rad = np.sqrt(np.maximum(e ** 2 - f ** 2, 0.0))
    return np.sqrt(np.maximum(e + rad, 0.0))


def sup_norms(F: PlanarMap, rect=None, grid=64):
    """Grid sups of ||DF|| and ||DF^{-1}|| over a rectangle."""
    rect = F.domain if rect is None else rect
    pts = rect.grid(grid) if isinstance(rect, Rect) else Rect(*rect[0], *rect[1]).grid(grid)
    nf = float(np.max(op_norm_2x2(F.jet(pts, 1).linear())))
    ninv = float(np.max(op_norm_2x2(np.linalg.inv(F.jet(pts, 1).linear()))))
    return nf, ninv
