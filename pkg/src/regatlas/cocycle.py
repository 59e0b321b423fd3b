"""Triangular-cocycle machinery: adapted scaling sequences, cone-field
checks, the transverse repelling direction, tilt normalization, and
projective contraction bounds, plus synthetic cocycle generators.

Conventions follow the two triangular forms:

* attractor form: upper triangular [[a, c], [0, b]]; the horizontal
  direction is a projective attractor, certified by a (rho, eps, L)
  sandwich on the products b_0..b_{n-1} / a_0..a_{n-1};
* repeller form: lower triangular [[a, 0], [c, b]]; the vertical direction
  is a projective repeller, certified on a_0..a_{n-1} / b_0..b_{n-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PremiseViolation
from .system import op_norm_2x2

_TOL = 1e-9


@dataclass
class TriangularCocycle:
    matrices: np.ndarray                  # (N, 2, 2)
    kind: str                             # "attractor" (upper) | "repeller" (lower)
    rho: float
    eps: float
    L: float
    C_bound: float | None = None          # uniform bound on ||A_n^{+-1}||

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.kind not in ("attractor", "repeller"):
            raise ValueError("kind must be 'attractor' or 'repeller'")
        lo = self.matrices[:, 1, 0] if self.kind == "attractor" else self.matrices[:, 0, 1]
        if np.max(np.abs(lo), initial=0.0) > 0.0:
            raise ValueError("matrices are not triangular in the stated convention")
        if np.any(self.diag_a() <= 0) or np.any(self.diag_b() <= 0):
            raise ValueError("diagonal entries must be positive")
        norms = np.maximum(op_norm_2x2(self.matrices),
                           op_norm_2x2(np.linalg.inv(self.matrices)))
        measured_C = float(np.max(norms, initial=1.0))
        if self.C_bound is None:
            self.C_bound = measured_C * (1.0 + 1e-12)
        elif measured_C > self.C_bound:
            raise ValueError(f"||A_n^(+-1)|| reaches {measured_C} > C bound {self.C_bound}")

    @property
    def N(self):
        return self.matrices.shape[0]

    def diag_a(self):
        return self.matrices[:, 0, 0]

    def diag_b(self):
        return self.matrices[:, 1, 1]

    def corner(self):
        return self.matrices[:, 0, 1] if self.kind == "attractor" else self.matrices[:, 1, 0]

    def log_ratio_products(self):
        """Cumulative log of (b/a products) for attractor form, (a/b) for
        repeller form; entry n is the n-step product, n = 0..N."""
        la = np.log(self.diag_a())
        lb = np.log(self.diag_b())
        step = (lb - la) if self.kind == "attractor" else (la - lb)
        return np.concatenate([[0.0], np.cumsum(step)])

    def check_certificate(self, strict=True):
        """Verify the projective sandwich the cocycle claims; returns the
        minimal L observed."""
        logs = self.log_ratio_products()
        n = np.arange(self.N + 1)
        lr = math.log(self.rho)
        if self.kind == "attractor":
            lo, hi = (1 + self.eps) * n * lr, (1 - self.eps) * n * lr
        else:
            lo, hi = -(1 - self.eps) * n * lr, -(1 + self.eps) * n * lr
        defect = float(np.max(np.maximum(logs - hi, lo - logs)))
        minimal_L = math.exp(max(0.0, defect))
        if strict and minimal_L > self.L * (1.0 + 1e-9):
            raise PremiseViolation(
                f"projective sandwich fails: needs L >= {minimal_L}, stated {self.L}",
                {"minimal_L": minimal_L})
        return minimal_L


@dataclass
class ScalingSequence:
    """Values sigma_n (or their analogues) over an index range, with the
    per-index sandwich margins recorded."""
    indices: np.ndarray
    values: np.ndarray
    base: float
    rate: float                 # exponent coefficient in the upper bound
    L: float
    lower_margin: np.ndarray = field(default=None)
    upper_margin: np.ndarray = field(default=None)
    strict_lower_one: np.ndarray = field(default=None)

    def check(self):
        """Sandwich L^{-1} <= value <= L * base^{-rate |l|}; also records
        whether the stronger lower bound 1 holds (it does when L = 1)."""
        up = self.L * self.base ** (-self.rate * np.abs(self.indices))
        self.lower_margin = np.log(self.values) + math.log(self.L)
        self.upper_margin = np.log(up) - np.log(self.values)
        self.strict_lower_one = self.values >= 1.0 - _TOL
        if np.min(self.lower_margin) < -_TOL or np.min(self.upper_margin) < -_TOL:
            k = int(np.argmin(np.minimum(self.lower_margin, self.upper_margin)))
            raise PremiseViolation(
                f"scaling sandwich fails at index {self.indices[k]}",
                {"index": int(self.indices[k]),
                 "defect": float(min(self.lower_margin[k], self.upper_margin[k]))})
        return self

    def value_at(self, idx):
        k = int(np.searchsorted(self.indices, idx))
        if k >= len(self.indices) or self.indices[k] != idx:
            raise KeyError(idx)
        return float(self.values[k])


# ---------------------------------------------------------------------------
# Appendix-style adaptation scalings
# ---------------------------------------------------------------------------

def adaptation_scalings(u, lam, eps, delta, L, M=0):
    """Adapted scalings zeta_l for a sequence u_m, m in [-M, N).

    u is given as one array; u[k] corresponds to m = k - M.  Requires
    eps < delta < 1 and the two-sided product bounds with the given L; the
    returned sequence satisfies the exact ratio identities
        zeta_{n+1}/zeta_n = lam^{1-delta}/u_n,
        zeta_{-m+1}/zeta_{-m} = lam^{1+delta}/u_{-m}
    and the sandwich over l in [-M, N].
    """
    if not (0 < eps < delta < 1):
        raise ValueError("need 0 < eps < delta < 1")
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("u must be positive")
    N = len(u) - M
    ll = math.log(lam)
    logs_u = np.log(u)
    # premise: forward products for 1 <= n <= N, backward for 1 <= m <= M
    for n in range(1, N + 1):
        s = float(np.sum(logs_u[M:M + n]))
        lo, hi = -math.log(L) + (1 + eps) * n * ll, math.log(L) + (1 - eps) * n * ll
        if s < lo - _TOL or s > hi + _TOL:
            raise PremiseViolation(
                f"forward product bound violated at n={n}",
                {"n": n, "defect": float(max(lo - s, s - hi))})
    for m in range(1, M + 1):
        s = float(np.sum(logs_u[M - m:M]))
        lo, hi = -math.log(L) + (1 + eps) * m * ll, math.log(L) + (1 - eps) * m * ll
        if s < lo - _TOL or s > hi + _TOL:
            raise PremiseViolation(
                f"backward product bound violated at m={m}",
                {"n": -m, "defect": float(max(lo - s, s - hi))})
    log_zeta = np.zeros(M + N + 1)          # index l + M, l in [-M, N]
    for n in range(N):
        log_zeta[M + n + 1] = log_zeta[M + n] + (1 - delta) * ll - logs_u[M + n]
    for m in range(1, M + 1):
        log_zeta[M - m] = log_zeta[M - m + 1] - (1 + delta) * ll + logs_u[M - m]
    seq = ScalingSequence(np.arange(-M, N + 1), np.exp(log_zeta),
                          base=lam, rate=delta + eps, L=L)
    return seq.check()


# ---------------------------------------------------------------------------
# Attractor-form normalization (upper triangular)
# ---------------------------------------------------------------------------

def dominated_block_diagonalization(c: TriangularCocycle):
    """Scalings sigma_n = rho^{(1-eps)n} / (ratio products) and the
    conjugated cocycle A~_n = S_{n+1} A_n S_n^{-1} with diagonal
    (a_n, rho^{1-eps} a_n) and corner c_n / sigma_n."""
    if c.kind != "attractor":
        raise ValueError("attractor-form cocycle required")
    c.check_certificate()
    logs = c.log_ratio_products()
    n_idx = np.arange(c.N + 1)
    log_sigma = (1 - c.eps) * n_idx * math.log(c.rho) - logs
    sigma = np.exp(log_sigma)
    seq = ScalingSequence(n_idx, sigma, base=c.rho, rate=2 * c.eps, L=c.L).check()
    S = np.zeros((c.N + 1, 2, 2))
    S[:, 0, 0] = 1.0
    S[:, 1, 1] = sigma
    tilde = np.einsum("nij,njk,nkl->nil", S[1:], c.matrices, np.linalg.inv(S[:-1]))
    rho_t = c.rho ** (1 - c.eps)
    expected = np.array(tilde)
    expected[:, 0, 0] = c.diag_a()
    expected[:, 1, 1] = rho_t * c.diag_a()
    expected[:, 0, 1] = c.corner() / sigma[:-1]
    expected[:, 1, 0] = 0.0
    resid = float(np.max(np.abs(tilde - expected)))
    if resid > 1e-10 * max(1.0, float(np.max(np.abs(expected)))):
        raise PremiseViolation("block diagonalization residual too large",
                               {"residual": resid})
    return seq, tilde, {"form_residual": resid, "rho_tilde": rho_t}


def genuine_vertical_cone_width(c: TriangularCocycle):
    rho_t = c.rho ** (1 - c.eps)
    return c.C_bound ** 2 / (rho_t * (1 - rho_t))


def transverse_repelling_direction(c: TriangularCocycle):
    """Finite-horizon transverse direction E^ = (A~_{N-1}...A~_0)^{-1}(vertical),
    cone invariance along its forward orbit, and the two-sided growth
    sandwich relative to the products b_0...b_{n-1}."""
    seq, tilde, info = dominated_block_diagonalization(c)
    omega = genuine_vertical_cone_width(c)
    # pull the vertical back through the normalized cocycle
    v = np.array([0.0, 1.0])
    for n in range(c.N - 1, -1, -1):
        v = np.linalg.solve(tilde[n], v)
        v /= np.linalg.norm(v)
    if v[1] < 0:
        v = -v
    e_hat = v.copy()
    # forward orbit stays in the genuine vertical cone |x/y| < omega
    vs = [v]
    slopes = []
    for n in range(c.N):
        v = tilde[n] @ v
        nv = np.linalg.norm(v)
        v = v / nv
        vs.append(v)
        slopes.append(abs(v[0] / v[1]) if v[1] != 0 else math.inf)
    cone_margins = omega - np.array(slopes)
    if np.min(cone_margins) <= 0:
        raise PremiseViolation("cone invariance failed for transverse direction",
                               {"margins": cone_margins})
    # growth sandwich for the original cocycle along e_hat
    w = e_hat.copy()
    log_growth = 0.0
    log_b = np.cumsum(np.log(c.diag_b()))
    lo_list, hi_list, ratio_list = [], [], []
    lr = math.log(c.rho)
    root = math.sqrt(1 + omega ** 2)
    for n in range(1, c.N + 1):
        w = c.matrices[n - 1] @ w
        nw = np.linalg.norm(w)
        log_growth += math.log(nw)
        w /= nw
        ratio = log_growth - log_b[n - 1]
        lo = -2 * math.log(c.L) + 2 * c.eps * n * lr - math.log(root)
        hi = math.log(c.L) - 2 * c.eps * n * lr + math.log(root)
        lo_list.append(ratio - lo)
        hi_list.append(hi - ratio)
        ratio_list.append(ratio)
    report = {
        "omega": omega,
        "cone_margins": cone_margins,
        "log_growth_ratio": np.array(ratio_list),
        "lower_margin": np.array(lo_list),
        "upper_margin": np.array(hi_list),
        "sandwich_ok": bool(min(np.min(lo_list), np.min(hi_list)) >= -_TOL),
    }
    return e_hat, report


# ---------------------------------------------------------------------------
# Repeller-form normalization (lower triangular)
# ---------------------------------------------------------------------------

def genuine_horizontal_cone_width(c: TriangularCocycle):
    rho_h = c.rho ** (1 + c.eps)
    return rho_h * c.C_bound ** 2 / (1 - rho_h)


def repeller_normalization(c: TriangularCocycle):
    """sigma^_n, the conjugated cocycle A^_n with diagonal (b_n/rho^{1+eps},
    b_n), cone invariance of the genuine horizontal cone, the tilts tau_n of
    the forward images of the horizontal direction, and the diagonalized
    cocycle A<_n = T_{n+1} A^_n T_n^{-1}."""
    if c.kind != "repeller":
        raise ValueError("repeller-form cocycle required")
    c.check_certificate()
    logs = c.log_ratio_products()       # products of a/b
    n_idx = np.arange(c.N + 1)
    log_sh = -logs - (1 + c.eps) * n_idx * math.log(c.rho)
    sigma_hat = np.exp(log_sh)
    seq = ScalingSequence(n_idx, sigma_hat, base=c.rho, rate=2 * c.eps, L=c.L).check()
    S = np.zeros((c.N + 1, 2, 2))
    S[:, 0, 0] = sigma_hat
    S[:, 1, 1] = 1.0
    hat = np.einsum("nij,njk,nkl->nil", S[1:], c.matrices, np.linalg.inv(S[:-1]))
    rho_h = c.rho ** (1 + c.eps)
    expected = np.array(hat)
    expected[:, 0, 0] = c.diag_b() / rho_h
    expected[:, 1, 1] = c.diag_b()
    expected[:, 1, 0] = c.corner() / sigma_hat[:-1]
    expected[:, 0, 1] = 0.0
    resid_hat = float(np.max(np.abs(hat - expected)))
    scale = max(1.0, float(np.max(np.abs(expected))))
    if resid_hat > 1e-10 * scale:
        raise PremiseViolation("repeller normalization residual too large",
                               {"residual": resid_hat})
    # cone invariance on boundary rays of |y/x| < omega^
    omega_h = genuine_horizontal_cone_width(c)
    margins = []
    for n in range(c.N):
        for s in (omega_h, -omega_h):
            img = hat[n] @ np.array([1.0, s])
            margins.append(omega_h - abs(img[1] / img[0]))
    margins = np.array(margins)
    if np.min(margins) <= 0:
        raise PremiseViolation("horizontal cone invariance violated",
                               {"margins": margins})
    # tilts: slope of A^_0^n (horizontal)
    tau = np.zeros(c.N + 1)
    v = np.array([1.0, 0.0])
    for n in range(c.N):
        v = hat[n] @ v
        v /= np.linalg.norm(v)
        tau[n + 1] = v[1] / v[0]
    if np.max(np.abs(tau)) > omega_h + _TOL:
        raise PremiseViolation("tilt exceeds cone width", {"tau": tau})
    T = np.zeros((c.N + 1, 2, 2))
    T[:, 0, 0] = T[:, 1, 1] = 1.0
    T[:, 1, 0] = -tau
    check = np.einsum("nij,njk,nkl->nil", T[1:], hat, np.linalg.inv(T[:-1]))
    diag = np.zeros_like(check)
    diag[:, 0, 0] = c.diag_b() / rho_h
    diag[:, 1, 1] = c.diag_b()
    resid_diag = float(np.max(np.abs(check - diag)))
    conj_resid = float(np.max(np.abs(
        np.einsum("nij,njk->nik", diag, T[:-1]) - np.einsum("nij,njk->nik", T[1:], hat))))
    if resid_diag > 1e-10 * scale:
        raise PremiseViolation("tilt diagonalization residual too large",
                               {"residual": resid_diag})
    report = {"hat_residual": resid_hat, "diag_residual": resid_diag,
              "conjugacy_residual": conj_resid, "cone_margins": margins,
              "omega_hat": omega_h, "rho_hat": rho_h}
    return seq, hat, tau, diag, report


def projective_contraction_bounds(c: TriangularCocycle, t):
    """d_P A_0^n(E^{pi/2 - t}) for t in (0, pi/2]: exact product values, the
    crossover index where the transported direction becomes mostly
    horizontal, and the smallest uniform K making the two-sided bound
        (K L |t|^2)^{-1} rho^{(1+3 eps) n} < d_P < K L |t|^{-2} rho^{(1-eps) n}
    hold for 1 <= n <= N."""
    if not (0 < t <= math.pi / 2):
        raise ValueError("t must lie in (0, pi/2]")
    if c.kind != "repeller":
        raise ValueError("repeller-form cocycle required")
    v = np.array([math.cos(math.pi / 2 - t), math.sin(math.pi / 2 - t)])
    log_dp = [0.0]
    acc = 0.0
    for n in range(c.N):
        A = c.matrices[n]
        det = abs(float(np.linalg.det(A)))
        w = A @ v
        nw = float(np.linalg.norm(w))
        acc += math.log(det) - 2 * math.log(nw)
        log_dp.append(acc)
        v = w / nw
    log_dp = np.array(log_dp)
    rho_h = c.rho ** (1 + c.eps)
    # crossover: tan s_n = rho^^n tan(pi/2 - t) through the diagonalized form
    tan0 = math.tan(math.pi / 2 - t)
    m_cross = 0
    while m_cross < c.N and rho_h ** m_cross * tan0 > 1.0:
        m_cross += 1
    lr = math.log(c.rho)
    n_idx = np.arange(1, c.N + 1)
    logs = log_dp[1:]
    lo_env = (1 + 3 * c.eps) * n_idx * lr - math.log(c.L) - 2 * math.log(1 / t)
    hi_env = (1 - c.eps) * n_idx * lr + math.log(c.L) + 2 * math.log(1 / t)
    K_lo = float(np.max(np.exp(lo_env - logs), initial=1.0))
    K_hi = float(np.max(np.exp(logs - hi_env), initial=1.0))
    K = max(1.0, K_lo, K_hi)
    return {
        "t": t,
        "log_values": log_dp,
        "crossover": m_cross,
        "crossover_comparability": (c.rho ** ((1 + c.eps) * m_cross)) / t,
        "K_fitted": K,
        "K_lower": K_lo,
        "K_upper": K_hi,
    }


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def synthetic_cocycle(N, rho, eps, kind="attractor", seed=0, corner_scale=0.3,
                      diag_spread=0.2):
    """Admissible random triangular cocycle: the per-step log ratio is
    log rho * (1 + eps * u_n) with u_n uniform in (-1, 1), so the projective
    sandwich holds with L = 1 by construction."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=N)
    base = rng.uniform(1.0 - diag_spread, 1.0 + diag_spread, size=N)
    corner = rng.uniform(-corner_scale, corner_scale, size=N)
    mats = np.zeros((N, 2, 2))
    if kind == "attractor":
        a = base
        b = a * rho ** (1.0 + eps * u)
        mats[:, 0, 0] = a
        mats[:, 1, 1] = b
        mats[:, 0, 1] = corner
    else:
        b = base
        a = b * rho ** (-(1.0 + eps * u))
        mats[:, 0, 0] = a
        mats[:, 1, 1] = b
        mats[:, 1, 0] = corner
    return TriangularCocycle(mats, kind, rho, eps, L=1.0 + 1e-9)
