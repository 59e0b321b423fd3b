"""Finite-time regularity certification along orbits.

All derivative products are accumulated in log space; inequalities are
compared as log-margins with absolute tolerance 1e-9.  Four inequalities per
flavor (vertical / horizontal), each two-sided over forward and backward
windows.  n = 1 is the first certified index, matching the inequality sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PremiseViolation
from . import system
from .projective import Direction

LOG_TOL = 1e-9


@dataclass
class RegularityParams:
    lam: float
    rho: float
    eps: float
    L: float = 1.0
    M: int = 0
    N: int = 0
    flavor: str = "vertical"

    def __post_init__(self):
        if not (0 < self.lam < 1 and 0 < self.rho < 1 and 0 < self.eps < 1):
            raise ValueError("lam, rho, eps must lie in (0, 1)")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.flavor not in ("vertical", "horizontal"):
            raise ValueError("flavor must be 'vertical' or 'horizontal'")
        if self.M < 0 or self.N < 0:
            raise ValueError("window depths must be nonnegative")


def reg_chart_condition(lam, rho, eps, r):
    """Margins (positive = satisfied) of the two chart-building inequalities
    on the contraction bases and marginal exponent."""
    c1 = -(((r + 1) - eps * (r + 3)) * math.log(rho) - (1 + eps) * r * math.log(lam))
    c2 = -((1 - eps) * (r + 1) * math.log(lam) - (r + eps * (2 - r)) * math.log(rho))
    return {"reg_cond_1": c1, "reg_cond_2": c2, "ok": c1 > 0 and c2 > 0}


def stable_manifold_condition(lam, rho, eps):
    c1 = -((1 - eps) * math.log(lam) - (8 * eps * math.log(rho) + 4 * eps * math.log(lam)))
    c2 = -((1 - eps) * math.log(lam) - ((1 + eps) * math.log(lam) - (1 - eps) * math.log(rho)))
    return {"stable_cond_1": c1, "stable_cond_2": c2, "ok": c1 > 0 and c2 > 0}


def eps_small_condition(lam, rho, eps):
    c = -((1 - 4 * eps) * math.log(lam) - 6 * eps * math.log(rho))
    return {"eps_small_1": c, "ok": c > 0}


def center_condition(eps, r):
    c = 1.0 / (11 * r + 2) - eps
    return {"center_cond": c, "ok": c > 0}


# ---------------------------------------------------------------------------
# Orbit data: per-step logs along a transported direction
# ---------------------------------------------------------------------------

@dataclass
class OrbitLogs:
    """Per-step log ||A restricted to direction|| and log |det A| along the
    transported direction orbit; prefix sums make every window product O(1).
    """
    M: int
    N: int
    step_b: np.ndarray           # index k = m + M, m in [-M, N-1]
    step_det: np.ndarray
    directions: np.ndarray       # unit vectors at each p_m

    @classmethod
    def from_orbit(cls, orb: system.OrbitSegment, E, depths=None, family=None):
        """family: precomputed transported unit directions over the full
        orbit window (e.g. system.contracted_family); otherwise the direction
        is pushed/pulled from E at p_0."""
        M, N = (orb.M, orb.N) if depths is None else depths
        if M > orb.M or N > orb.N:
            raise PremiseViolation(f"orbit too short for window ({M}, {N})",
                                   {"available": (orb.M, orb.N)})
        if family is not None:
            u = np.asarray(family, dtype=float)
        else:
            e0 = E.vector() if isinstance(E, Direction) else np.asarray(E, dtype=float)
            u = system.direction_orbit(orb, e0)
        u = u[orb.M - M: orb.M + N + 1]
        step_b = np.empty(M + N)
        step_det = np.empty(M + N)
        for k in range(M + N):
            A = orb.A(k - M)
            step_b[k] = math.log(np.linalg.norm(A @ u[k]))
            step_det[k] = math.log(abs(np.linalg.det(A)))
        return cls(M, N, step_b, step_det, u)

    def log_norm_forward(self, n, base=0):
        """log ||DF^n| restricted|| at p_base, 0 <= n <= N - base."""
        k = base + self.M
        return float(np.sum(self.step_b[k:k + n]))

    def log_norm_backward(self, n, base=0):
        """log ||DF^{-n}| restricted|| at p_base (reciprocal of forward steps)."""
        k = base + self.M
        return -float(np.sum(self.step_b[k - n:k]))

    def log_det_forward(self, n, base=0):
        k = base + self.M
        return float(np.sum(self.step_det[k:k + n]))

    def log_det_backward(self, n, base=0):
        k = base + self.M
        return -float(np.sum(self.step_det[k - n:k]))


_INEQ_NAMES = {
    "vertical": ("for_reg_1", "for_reg_2", "back_reg_1", "back_reg_2"),
    "horizontal": ("hor_for_reg_1", "hor_for_reg_2", "hor_back_reg_1", "hor_back_reg_2"),
}


@dataclass
class RegularityCertificate:
    params: RegularityParams
    direction: np.ndarray
    log_margins: dict            # name -> (n_array, margin_at_L array)
    defects: dict                # name -> worst one-sided log defect array
    minimal_L: float
    passes: bool

    def margin_min(self):
        vals = [np.min(v[1]) for v in self.log_margins.values() if len(v[1])]
        return float(min(vals)) if vals else math.inf


def _band_defects(logs, n_idx, base, eps):
    """One-sided log defects of lo = (1+eps) n log(base) <= logs <= hi."""
    lb = math.log(base)
    hi = (1 - eps) * n_idx * lb
    lo = (1 + eps) * n_idx * lb
    return np.maximum(logs - hi, lo - logs)


def certify(orb: system.OrbitSegment, E, params: RegularityParams,
            logs: OrbitLogs | None = None, family=None) -> RegularityCertificate:
    """Evaluate the four applicable regularity inequalities and the minimal
    irregularity factor over the window (params.M, params.N)."""
    data = logs if logs is not None else OrbitLogs.from_orbit(
        orb, E, depths=(params.M, params.N), family=family)
    M, N = params.M, params.N
    nf = np.arange(1, N + 1)
    nb = np.arange(1, M + 1)
    Bf = np.array([data.log_norm_forward(n) for n in nf])
    Bb = np.array([data.log_norm_backward(n) for n in nb])
    Jf = np.array([data.log_det_forward(n) for n in nf])
    Jb = np.array([data.log_det_backward(n) for n in nb])
    if params.flavor == "vertical":
        quantities = {
            "for_reg_1": (nf, Bf, params.lam),
            "for_reg_2": (nf, 2 * Bf - Jf, params.rho),
            "back_reg_1": (nb, -Bb, params.lam),
            "back_reg_2": (nb, Jb - 2 * Bb, params.rho),
        }
    else:
        quantities = {
            "hor_for_reg_1": (nf, Jf - Bf, params.lam),
            "hor_for_reg_2": (nf, Jf - 2 * Bf, params.rho),
            "hor_back_reg_1": (nb, Bb - Jb, params.lam),
            "hor_back_reg_2": (nb, 2 * Bb - Jb, params.rho),
        }
    defects = {}
    margins = {}
    worst = 0.0
    logL = math.log(params.L)
    for name, (n_idx, logs_v, base) in quantities.items():
        d = _band_defects(logs_v, n_idx, base, params.eps)
        defects[name] = d
        margins[name] = (n_idx, logL - d)
        if len(d):
            worst = max(worst, float(np.max(d)))
    minimal_L = math.exp(worst)
    passes = minimal_L <= params.L * math.exp(LOG_TOL)
    return RegularityCertificate(params, data.directions[data.M].copy(),
                                 margins, defects, minimal_L, passes)


def fit_rates(orb: system.OrbitSegment, E, window=None, family=None):
    """Least-squares slopes of log||DF^n|_E|| and the domination ratio.

    Returns (lam_fit, rho_fit, eps_suggested); eps covers the residual
    spread of both fits relative to n * |slope|.
    """
    N = orb.N if window is None else min(window, orb.N)
    if N < 10:
        raise ValueError("need at least 10 forward steps to fit rates")
    data = OrbitLogs.from_orbit(orb, E, depths=(0, N), family=family)
    n = np.arange(1, N + 1)
    B = np.array([data.log_norm_forward(k) for k in n])
    X = np.array([2 * data.log_norm_forward(k) - data.log_det_forward(k) for k in n])
    slope_b = float(np.sum(n * B) / np.sum(n * n))
    slope_x = float(np.sum(n * X) / np.sum(n * n))
    if slope_b >= 0 or slope_x >= 0:
        raise PremiseViolation("fit degenerate: nonnegative contraction slope",
                               {"slope_lam": slope_b, "slope_rho": slope_x})
    res_b = np.max(np.abs(B - slope_b * n) / (np.abs(slope_b) * n))
    res_x = np.max(np.abs(X - slope_x * n) / (np.abs(slope_x) * n))
    eps = float(max(res_b, res_x)) * 1.05 + 1e-6
    return math.exp(slope_b), math.exp(slope_x), min(eps, 0.999)


# ---------------------------------------------------------------------------
# Vertical <-> horizontal equivalences
# ---------------------------------------------------------------------------

def equivalence_constants(params: RegularityParams, theta, khat=1.0,
                          converse=False):
    """(L1, eps1) for the transverse direction, or the converse (L2, eps2)."""
    log_ratio = math.log(params.rho) / math.log(params.lam)
    if converse:
        return khat * params.L ** 3, (1 + 2 * log_ratio) * params.eps
    return khat * params.L ** 3 / theta ** 2, (3 + 2 * log_ratio) * params.eps


def vertical_to_horizontal(orb, cert_v: RegularityCertificate, E_h, theta,
                           khat=None):
    """Forward vertical regularity transfers to any direction at angle > theta.

    Returns the predicted (L1, eps1), the empirical horizontal certificate at
    eps1, and the fitted stand-in khat for the uniform constant.
    """
    if not cert_v.passes:
        raise PremiseViolation("vertical certificate does not pass")
    pv = cert_v.params
    E_h_dir = E_h if isinstance(E_h, Direction) else Direction.from_vector(E_h)
    ang = Direction.from_vector(cert_v.direction).distance(E_h_dir)
    if ang <= theta:
        raise PremiseViolation(f"angle {ang} below threshold {theta}")
    eps1 = equivalence_constants(pv, theta)[1]
    ph = RegularityParams(pv.lam, pv.rho, min(eps1, 0.999), L=pv.L, M=0,
                          N=pv.N, flavor="horizontal")
    cert_h = certify(orb, E_h_dir, ph)
    fitted = max(1.0, cert_h.minimal_L * theta ** 2 / pv.L ** 3) if khat is None else khat
    L1 = equivalence_constants(pv, theta, khat=fitted)[0]
    return {
        "predicted_L1": L1,
        "eps1": eps1,
        "khat": fitted,
        "khat_provenance": "fitted" if khat is None else "given",
        "empirical": cert_h,
        "pass": cert_h.minimal_L <= L1 * (1 + 1e-9),
    }


def horizontal_to_vertical_backward(orb, cert_h: RegularityCertificate, E_v,
                                    theta, khat=None):
    """Backward horizontal regularity transfers to transverse directions."""
    if not cert_h.passes:
        raise PremiseViolation("horizontal certificate does not pass")
    ph = cert_h.params
    E_v_dir = E_v if isinstance(E_v, Direction) else Direction.from_vector(E_v)
    ang = Direction.from_vector(cert_h.direction).distance(E_v_dir)
    if ang <= theta:
        raise PremiseViolation(f"angle {ang} below threshold {theta}")
    eps1 = equivalence_constants(ph, theta)[1]
    pv = RegularityParams(ph.lam, ph.rho, min(eps1, 0.999), L=ph.L, M=ph.M,
                          N=0, flavor="vertical")
    cert_v = certify(orb, E_v_dir, pv)
    fitted = max(1.0, cert_v.minimal_L * theta ** 2 / ph.L ** 3) if khat is None else khat
    L1 = equivalence_constants(ph, theta, khat=fitted)[0]
    return {
        "predicted_L1": L1,
        "eps1": eps1,
        "khat": fitted,
        "khat_provenance": "fitted" if khat is None else "given",
        "empirical": cert_v,
        "pass": cert_v.minimal_L <= L1 * (1 + 1e-9),
    }


def combine_pesin(orb, cert_v_fwd: RegularityCertificate,
                  cert_h_bwd: RegularityCertificate, theta, khat=None,
                  family_v=None, family_h=None):
    """Joint irregularity over the full window from a forward-vertical and a
    backward-horizontal certificate on transverse directions.

    The empirical joint factor is bracketed by ((khat L)^-1 theta^-2,
    khat L^3 theta^-2) at the inflated marginal exponent.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    if not (cert_v_fwd.passes and cert_h_bwd.passes):
        raise PremiseViolation("both input certificates must pass")
    pv, ph = cert_v_fwd.params, cert_h_bwd.params
    L = max(pv.L, ph.L)
    eps_bar = min((3 + 2 * math.log(pv.rho) / math.log(pv.lam)) * pv.eps, 0.999)
    M, N = ph.M, pv.N
    cv = certify(orb, Direction.from_vector(cert_v_fwd.direction),
                 RegularityParams(pv.lam, pv.rho, eps_bar, L=L, M=M, N=N,
                                  flavor="vertical"), family=family_v)
    ch = certify(orb, Direction.from_vector(cert_h_bwd.direction),
                 RegularityParams(pv.lam, pv.rho, eps_bar, L=L, M=M, N=N,
                                  flavor="horizontal"), family=family_h)
    joint = max(cv.minimal_L, ch.minimal_L)
    if khat is None:
        fitted = max(1.0, joint * theta ** 2 / L ** 3, 1.0 / (L * theta ** 2 * joint))
        prov = "fitted"
    else:
        fitted, prov = khat, "given"
    lo = 1.0 / (fitted * L * theta ** 2)
    hi = fitted * L ** 3 / theta ** 2
    return {
        "joint_L": joint,
        "bracket": (lo, hi),
        "eps_bar": eps_bar,
        "khat": fitted,
        "khat_provenance": prov,
        "within": bool(lo <= joint * (1 + 1e-12) and joint <= hi * (1 + 1e-12)),
        "vertical": cv,
        "horizontal": ch,
    }


def irregularity_profile(orb: system.OrbitSegment, E, params: RegularityParams,
                         family=None):
    """Minimal irregularity factor of each shifted base point p_m over the
    remaining window, along the transported direction, with the growth bound
    L^2 * min(lam, rho)^{-2 eps |m|} checked per index."""
    base = certify(orb, E, params, family=family)
    if not base.passes:
        raise PremiseViolation("base certification fails", {"minimal_L": base.minimal_L})
    data = OrbitLogs.from_orbit(orb, E, depths=(params.M, params.N), family=family)
    lam_check = min(params.lam, params.rho)
    out = []
    for m in range(-params.M, params.N + 1):
        Mm, Nm = params.M + m, params.N - m
        nf = np.arange(1, Nm + 1)
        nb = np.arange(1, Mm + 1)
        Bf = np.array([data.log_norm_forward(n, base=m) for n in nf])
        Bb = np.array([data.log_norm_backward(n, base=m) for n in nb])
        Jf = np.array([data.log_det_forward(n, base=m) for n in nf])
        Jb = np.array([data.log_det_backward(n, base=m) for n in nb])
        if params.flavor == "vertical":
            sets = [(nf, Bf, params.lam), (nf, 2 * Bf - Jf, params.rho),
                    (nb, -Bb, params.lam), (nb, Jb - 2 * Bb, params.rho)]
        else:
            sets = [(nf, Jf - Bf, params.lam), (nf, Jf - 2 * Bf, params.rho),
                    (nb, Bb - Jb, params.lam), (nb, 2 * Bb - Jb, params.rho)]
        worst = 0.0
        for n_idx, logs_v, b in sets:
            if len(n_idx):
                worst = max(worst, float(np.max(_band_defects(logs_v, n_idx, b, params.eps))))
        Lm = math.exp(worst)
        bound = base.minimal_L ** 2 * lam_check ** (-2 * params.eps * abs(m))
        out.append({"m": m, "L": Lm, "bound": bound,
                    "ok": Lm <= bound * (1 + 1e-9)})
    return {"base": base, "profile": out,
            "all_ok": all(e["ok"] for e in out)}
