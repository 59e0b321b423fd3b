"""Derivatives of the projectivized tangent dynamics and direction
classification as regular projective attractors/repellers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDirectionError
from . import system


@dataclass(frozen=True)
class Direction:
    """A line through the origin, represented by its angle mod pi."""
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % math.pi)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        if np.linalg.norm(v) == 0:
            raise DegenerateDirectionError("zero vector has no direction")
        return cls(math.atan2(v[1], v[0]))

    def vector(self):
        v = np.array([math.cos(self.angle), math.sin(self.angle)])
        # snap the float residue of exact axis angles (cos(pi/2) != 0)
        v[np.abs(v) < 1e-15] = 0.0
        n = np.linalg.norm(v)
        return v / n

    def distance(self, other):
        d = abs(self.angle - other.angle) % math.pi
        return min(d, math.pi - d)


def _linear_part(J):
    """Accept a Jet2D, a 2x2 array, or anything array-like."""
    if hasattr(J, "linear"):
        return np.asarray(J.linear(), dtype=float)
    return np.asarray(J, dtype=float)


def projective_derivative(J, E: Direction):
    """|Jac| / ||A restricted to E||^2 = derivative of the angle map."""
    A = _linear_part(J)
    det = abs(float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]))
    if det == 0.0:
        raise DegenerateDirectionError("singular linear part")
    w = A @ E.vector()
    return det / float(w @ w)


def angle_map(J, t):
    """theta(t): angle of A (cos t, sin t); vectorized in t."""
    A = _linear_part(J)
    t = np.asarray(t, dtype=float)
    v = np.stack([np.cos(t), np.sin(t)], axis=-1)
    w = v @ A.T
    return np.arctan2(w[..., 1], w[..., 0])


def projective_second_derivative(J, E: Direction):
    """theta''(t) in closed form: -2 theta'(t) (w . w') / ||w||^2 with
    w = A v(t), w' = A v'(t); vanishes at the singular-direction angles and
    for conformal linear parts."""
    A = _linear_part(J)
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if det == 0.0:
        raise DegenerateDirectionError("singular linear part")
    t = E.angle
    v = np.array([math.cos(t), math.sin(t)])
    vp = np.array([-math.sin(t), math.cos(t)])
    w = A @ v
    wp = A @ vp
    l2 = float(w @ w)
    theta1 = float(det) / l2          # signed first derivative
    return -2.0 * theta1 * float(w @ wp) / l2


def growth_variance(J, samples=256):
    """max_t |d/dt ||A (cos t, sin t)|| | over a uniform angle sample."""
    if samples < 8:
        raise ValueError("growth_variance needs samples >= 8")
    A = _linear_part(J)
    t = np.linspace(0.0, math.pi, samples, endpoint=False)
    v = np.stack([np.cos(t), np.sin(t)], axis=-1)
    vp = np.stack([-np.sin(t), np.cos(t)], axis=-1)
    w = v @ A.T
    wp = vp @ A.T
    l = np.linalg.norm(w, axis=-1)
    return float(np.max(np.abs(np.sum(w * wp, axis=-1) / l)))


def growth_variance_bound(J):
    """(a^2 + b^2)/b with a >= b the singular values (upper bound)."""
    A = _linear_part(J)
    s = np.linalg.svd(A, compute_uv=False)
    return float((s[0] ** 2 + s[1] ** 2) / s[1])


def eccentricity(F, region=None, grid=64):
    """Grid sup of ||D_p F|| ||D_{F(p)} F^{-1}||; always >= 1."""
    region = F.domain if region is None else region
    if not isinstance(region, system.Rect):
        region = system.Rect(region[0][0], region[0][1], region[1][0], region[1][1])
    if (region.x0 < F.domain.x0 - 1e-12 or region.x1 > F.domain.x1 + 1e-12
            or region.y0 < F.domain.y0 - 1e-12 or region.y1 > F.domain.y1 + 1e-12):
        raise ValueError("region outside map domain")
    pts = region.grid(grid)
    D = F.jet(pts, 1).linear()
    return float(np.max(system.op_norm_2x2(D) * system.op_norm_2x2(np.linalg.inv(D))))


# ---------------------------------------------------------------------------
# Classification along orbits
# ---------------------------------------------------------------------------

MODES = ("forward-attractor", "forward-repeller",
         "backward-attractor", "backward-repeller")


@dataclass
class ProjectiveCertificate:
    mode: str
    rho: float
    eps: float
    horizon: int
    log_values: np.ndarray        # log d_P DF^{+-n}(E), n = 0..horizon
    minimal_L: float
    defects: np.ndarray           # per-n one-sided log defects (max of both sides)
    passes: bool = field(default=True)

    def values(self):
        return np.exp(self.log_values)


def step_log_projective(A, v):
    """(log d_P at direction v, image unit vector)."""
    det = abs(float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]))
    w = A @ v
    nw = float(np.linalg.norm(w))
    if nw == 0.0 or det == 0.0:
        raise DegenerateDirectionError("projective step degenerated")
    return math.log(det) - 2.0 * math.log(nw), w / nw


def log_projective_products(orb: system.OrbitSegment, E: Direction, horizon, backward=False):
    """log d_P DF^{+-n}(E) for n = 0..horizon, via per-step products."""
    logs = [0.0]
    v = E.vector()
    if not backward:
        if horizon > orb.N:
            raise ValueError("horizon exceeds forward orbit depth")
        acc = 0.0
        for m in range(horizon):
            step, v = step_log_projective(orb.A(m), v)
            acc += step
            logs.append(acc)
    else:
        if horizon > orb.M:
            raise ValueError("horizon exceeds backward orbit depth")
        acc = 0.0
        for m in range(horizon):
            Ainv = np.linalg.inv(orb.A(-m - 1))
            step, v = step_log_projective(Ainv, v)
            acc += step
            logs.append(acc)
    return np.array(logs)


def minimal_L_for_sandwich(log_vals, log_lo_rates, log_hi_rates):
    """Smallest L >= 1 with log_lo - log L <= log_vals <= log_hi + log L."""
    d_hi = log_vals - log_hi_rates
    d_lo = log_lo_rates - log_vals
    defects = np.maximum(d_hi, d_lo)
    return float(np.exp(max(0.0, float(np.max(defects))))), defects


def classify_projective(orb: system.OrbitSegment, E: Direction, rho, eps,
                        mode, horizon) -> ProjectiveCertificate:
    """Minimal irregularity factor for the chosen projective sandwich,
    inclusive of n = 0."""
    if not (0.0 < rho < 1.0 and 0.0 < eps < 1.0):
        raise ValueError("need 0 < rho, eps < 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    backward = mode.startswith("backward")
    log_vals = log_projective_products(orb, E, horizon, backward=backward)
    n = np.arange(horizon + 1)
    lr = math.log(rho)
    if mode.endswith("attractor"):
        lo = (1.0 + eps) * n * lr
        hi = (1.0 - eps) * n * lr
    else:
        lo = -(1.0 - eps) * n * lr
        hi = -(1.0 + eps) * n * lr
    L, defects = minimal_L_for_sandwich(log_vals, lo, hi)
    return ProjectiveCertificate(mode, rho, eps, horizon, log_vals, L, defects)
