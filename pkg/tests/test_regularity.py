import math

import numpy as np
import pytest

from regatlas import regularity, system
from regatlas.errors import PremiseViolation
from regatlas.projective import Direction
from regatlas.regularity import RegularityParams, certify


def diag_model(lam, rho):
    """F = diag(lam/rho, lam): vertical contraction lam, domination rho."""
    return system.linear_map(np.diag([lam / rho, lam]))


def test_certify_exact_diagonal_vertical():
    lam, rho = 0.1, 0.5
    F = diag_model(lam, rho)
    orb = system.orbit(F, [0.0, 0.0], 20, 20)
    p = RegularityParams(lam, rho, 0.01, L=1.0, M=20, N=20, flavor="vertical")
    cert = certify(orb, Direction(math.pi / 2), p)
    assert cert.minimal_L == pytest.approx(1.0)
    assert cert.passes


def test_certify_exact_diagonal_horizontal():
    lam, rho = 0.1, 0.5
    F = diag_model(lam, rho)
    orb = system.orbit(F, [0.0, 0.0], 20, 20)
    p = RegularityParams(lam, rho, 0.01, L=1.0, M=20, N=20, flavor="horizontal")
    cert = certify(orb, Direction(0.0), p)
    assert cert.minimal_L == pytest.approx(1.0)
    assert cert.passes


def henon_setup(M=0, N=40):
    """Chaotic-regime Henon orbit (b = -0.3 in this sign convention) landed
    on the attractor, with the pullback-transported contracted family."""
    F = system.henon(1.4, -0.3)
    p = np.array([0.1, 0.1])
    for _ in range(2000):
        p = F(p)
    orb = system.orbit(F, p, M, N)
    fam = system.contracted_family(orb)
    return F, orb, fam


def test_certify_henon_matches_bruteforce():
    F, orb, fam = henon_setup(N=40)
    e = fam[orb.M]
    lam_fit, rho_fit, _ = regularity.fit_rates(orb, e, family=fam)
    eps = 0.3
    p = RegularityParams(lam_fit, rho_fit, eps, L=10.0, M=0, N=40)
    cert = certify(orb, e, p, family=fam)
    # brute-force defect maximisation
    logs = regularity.OrbitLogs.from_orbit(orb, Direction.from_vector(e),
                                           depths=(0, 40), family=fam)
    worst = 0.0
    for n in range(1, 41):
        B = logs.log_norm_forward(n)
        X = 2 * B - logs.log_det_forward(n)
        for val, base in ((B, lam_fit), (X, rho_fit)):
            hi = (1 - eps) * n * math.log(base)
            lo = (1 + eps) * n * math.log(base)
            worst = max(worst, val - hi, lo - val)
    assert cert.minimal_L == pytest.approx(math.exp(max(worst, 0.0)), rel=1e-10)
    assert cert.passes


def test_certify_rotation_covariance():
    F, orb, fam = henon_setup(N=30)
    e = fam[orb.M]
    lam_fit, rho_fit, _ = regularity.fit_rates(orb, e, family=fam)
    p = RegularityParams(lam_fit, rho_fit, 0.35, L=50.0, M=0, N=30)
    cert = certify(orb, e, p, family=fam)

    th = 0.73
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])

    class RotOrbit:
        M = orb.M
        N = orb.N
        matrices = np.einsum("ij,njk,kl->nil", R, orb.matrices, R.T)

        def A(self, m):
            return self.matrices[m + self.M]

    cert_rot = certify(RotOrbit(), Direction.from_vector(R @ e), p,
                       family=fam @ R.T)
    for name in cert.defects:
        assert np.allclose(cert.defects[name], cert_rot.defects[name], atol=1e-10)


def test_minimal_L_monotone_in_horizon():
    F, orb, fam = henon_setup(N=40)
    e = fam[orb.M]
    lam_fit, rho_fit, _ = regularity.fit_rates(orb, e, family=fam)
    Ls = []
    for N in (10, 20, 30, 40):
        p = RegularityParams(lam_fit, rho_fit, 0.15, L=100.0, M=0, N=N)
        Ls.append(certify(orb, e, p, family=fam).minimal_L)
    assert all(l2 >= l1 - 1e-12 for l1, l2 in zip(Ls, Ls[1:]))


def test_reg_is_proj_reg_remark():
    # a passing vertical certificate makes the same direction a projective
    # repeller (forward) and attractor (backward) with the same L
    from regatlas import projective
    lam, rho = 0.2, 0.4
    F = diag_model(lam, rho)
    orb = system.orbit(F, [0.0, 0.0], 15, 15)
    p = RegularityParams(lam, rho, 0.05, L=1.0, M=15, N=15, flavor="vertical")
    cert = certify(orb, Direction(math.pi / 2), p)
    fwd = projective.classify_projective(orb, Direction(math.pi / 2), rho, 0.05,
                                         "forward-repeller", 15)
    bwd = projective.classify_projective(orb, Direction(math.pi / 2), rho, 0.05,
                                         "backward-attractor", 15)
    assert fwd.minimal_L <= cert.minimal_L + 1e-9
    assert bwd.minimal_L <= cert.minimal_L + 1e-9


def test_eps1_formula_value():
    p = RegularityParams(0.1, 0.5, 0.01, L=1.0, N=10)
    eps1 = regularity.equivalence_constants(p, 0.5)[1]
    assert eps1 == pytest.approx((3 + 2 * math.log(0.5) / math.log(0.1)) * 0.01)
    assert eps1 == pytest.approx(0.0360206, abs=1e-6)


def test_eps2_converse_formula_value():
    p = RegularityParams(0.1, 0.5, 0.01, L=1.0, N=10)
    L2, eps2 = regularity.equivalence_constants(p, 0.5, khat=1.0, converse=True)
    assert eps2 == pytest.approx((1 + 2 * math.log(0.5) / math.log(0.1)) * 0.01)
    assert eps2 == pytest.approx(0.0160206, abs=1e-6)
    assert L2 == pytest.approx(1.0)


def test_vertical_to_horizontal_diagonal():
    lam, rho = 0.1, 0.5
    F = diag_model(lam, rho)
    orb = system.orbit(F, [0.0, 0.0], 0, 25)
    p = RegularityParams(lam, rho, 0.01, L=1.0, M=0, N=25, flavor="vertical")
    cert = certify(orb, Direction(math.pi / 2), p)
    rep = regularity.vertical_to_horizontal(orb, cert, Direction(0.0), math.pi / 4)
    assert rep["empirical"].minimal_L == pytest.approx(1.0)
    assert rep["pass"]


def test_vertical_to_horizontal_henon_khat_stable():
    F, orb, fam = henon_setup(N=60)
    e = fam[orb.M]
    lam_fit, rho_fit, _ = regularity.fit_rates(orb, e, family=fam)
    theta = 0.5
    E_h = Direction(Direction.from_vector(e).angle + math.pi / 2)
    khats = []
    for N in (30, 60):
        p = RegularityParams(lam_fit, rho_fit, 0.45, L=10.0, M=0, N=N)
        cert = certify(orb, e, p, family=fam)
        assert cert.passes
        rep = regularity.vertical_to_horizontal(orb, cert, E_h, theta)
        assert rep["pass"]
        khats.append(rep["khat"])
    assert max(khats) / min(khats) < 4.0


def test_horizontal_to_vertical_backward_diagonal():
    lam, rho = 0.1, 0.5
    F = diag_model(lam, rho)
    orb = system.orbit(F, [0.0, 0.0], 25, 0)
    p = RegularityParams(lam, rho, 0.01, L=1.0, M=25, N=0, flavor="horizontal")
    cert = certify(orb, Direction(0.0), p)
    rep = regularity.horizontal_to_vertical_backward(orb, cert, Direction(math.pi / 2),
                                                     math.pi / 4)
    assert rep["empirical"].minimal_L == pytest.approx(1.0)
    assert rep["pass"]


def test_combine_pesin_diagonal():
    lam, rho = 0.1, 0.5
    F = diag_model(lam, rho)
    orb = system.orbit(F, [0.0, 0.0], 20, 20)
    pv = RegularityParams(lam, rho, 0.01, L=1.0, M=0, N=20, flavor="vertical")
    ph = RegularityParams(lam, rho, 0.01, L=1.0, M=20, N=0, flavor="horizontal")
    cv = certify(orb, Direction(math.pi / 2), pv)
    ch = certify(orb, Direction(0.0), ph)
    rep = regularity.combine_pesin(orb, cv, ch, math.pi / 2)
    assert rep["joint_L"] == pytest.approx(1.0)
    assert rep["within"]
    assert rep["bracket"][0] <= 1.0 <= rep["bracket"][1]


def test_combine_pesin_theta_scaling():
    # rotated diagonal model, certificate direction pair at mutual angle
    # theta: empirical joint L grows like theta^-2 within 2x per halving
    lam, rho = 0.1, 0.5
    phi = 0.3
    R = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    F = system.linear_map(R @ np.diag([lam / rho, lam]) @ R.T)
    orb = system.orbit(F, [0.0, 0.0], 0, 15)
    E_v = Direction(math.pi / 2 + phi)
    pv = RegularityParams(lam, rho, 0.05, L=1.0, M=0, N=15, flavor="vertical")
    cv = certify(orb, E_v, pv)
    assert cv.passes
    thetas = [0.4, 0.2, 0.1]
    joints = []
    for th in thetas:
        E_h = Direction(E_v.angle - th)
        ph = RegularityParams(lam, rho, 0.05, L=1.0, M=0, N=0,
                              flavor="horizontal")
        chb = certify(orb, E_h, ph)     # empty backward window: passes
        rep = regularity.combine_pesin(orb, cv, chb, th)
        joints.append(rep["joint_L"])
    r1 = joints[1] / joints[0]
    r2 = joints[2] / joints[1]
    assert 2.0 <= r1 <= 8.0 and 2.0 <= r2 <= 8.0   # theta^-2 = 4x within 2x


def test_combine_pesin_henon():
    F, orb, fam = henon_setup(M=25, N=25)
    e = fam[orb.M]
    lam_fit, rho_fit, _ = regularity.fit_rates(orb, e, family=fam)
    pv = RegularityParams(lam_fit, rho_fit, 0.45, L=10.0, M=0, N=25)
    cv = certify(orb, e, pv, family=fam)
    assert cv.passes
    # backward-horizontal regularity lives on the expanding covariant family
    fam_h = system.expanding_family(orb)
    e_h = fam_h[orb.M]
    theta = Direction.from_vector(e).distance(Direction.from_vector(e_h))
    assert theta > 0.1
    ph = RegularityParams(lam_fit, rho_fit, 0.45, L=50.0, M=25, N=0,
                          flavor="horizontal")
    ch = certify(orb, e_h, ph, family=fam_h)
    assert ch.passes
    rep = regularity.combine_pesin(orb, cv, ch, 0.9 * theta,
                                   family_v=fam, family_h=fam_h)
    assert rep["within"]
    assert rep["khat"] >= 1.0


def test_irregularity_profile_diagonal():
    lam, rho = 0.1, 0.5
    F = diag_model(lam, rho)
    orb = system.orbit(F, [0.0, 0.0], 20, 20)
    p = RegularityParams(lam, rho, 0.05, L=1.0, M=20, N=20, flavor="vertical")
    rep = regularity.irregularity_profile(orb, Direction(math.pi / 2), p)
    assert rep["all_ok"]
    assert all(abs(e["L"] - 1.0) < 1e-9 for e in rep["profile"])


def test_irregularity_profile_oscillating_model():
    # u_n = lam^(1 + eps (-1)^n): profile bounded by L^2 lam^(-2 eps |m|)
    lam, rho, eps = 0.3, 0.6, 0.1
    M = N = 50

    class SynthOrbit:
        pass

    orb = SynthOrbit()
    orb.M, orb.N = M, N
    mats = np.zeros((M + N, 2, 2))
    for k in range(M + N):
        m = k - M
        bm = lam ** (1 + eps * (-1) ** m)
        mats[k] = np.diag([bm / rho, bm])
    orb.matrices = mats
    orb.A = lambda m: mats[m + M]
    p = RegularityParams(lam, rho, 2 * eps, L=lam ** (-2 * eps), M=M, N=N)
    rep = regularity.irregularity_profile(orb, Direction(math.pi / 2), p)
    assert rep["all_ok"]


def test_irregularity_profile_henon_slope():
    F, orb, fam = henon_setup(M=20, N=20)
    e = fam[orb.M]
    lam_fit, rho_fit, _ = regularity.fit_rates(orb, e, family=fam)
    p = RegularityParams(lam_fit, rho_fit, 0.45, L=100.0, M=20, N=20)
    rep = regularity.irregularity_profile(orb, e, p, family=fam)
    assert rep["all_ok"]
    # fitted growth rate of log L_m vs |m| stays below -2 eps log(min(lam, rho))
    ms = np.array([x["m"] for x in rep["profile"]])
    Ls = np.array([x["L"] for x in rep["profile"]])
    mask = np.abs(ms) > 5
    slope = np.polyfit(np.abs(ms[mask]), np.log(Ls[mask]), 1)[0]
    assert slope <= -2 * p.eps * math.log(min(lam_fit, rho_fit)) + 1e-9


def test_fit_rates_diagonal_exact():
    lam, rho = 0.15, 0.45
    F = diag_model(lam, rho)
    orb = system.orbit(F, [0.0, 0.0], 0, 30)
    lam_fit, rho_fit, eps_fit = regularity.fit_rates(orb, Direction(math.pi / 2).vector())
    assert lam_fit == pytest.approx(lam, rel=1e-12)
    assert rho_fit == pytest.approx(rho, rel=1e-12)
    assert eps_fit < 1e-4


def test_fit_rates_henon_window_stability():
    F, orb, fam = henon_setup(N=80)
    e = fam[orb.M]
    l1, r1, _ = regularity.fit_rates(orb, e, window=40, family=fam)
    l2, r2, _ = regularity.fit_rates(orb, e, window=80, family=fam)
    assert abs(l1 - l2) / l2 < 0.05
    assert abs(r1 - r2) / r2 < 0.05


def test_certify_requires_window():
    F = diag_model(0.1, 0.5)
    orb = system.orbit(F, [0.0, 0.0], 2, 2)
    p = RegularityParams(0.1, 0.5, 0.01, L=1.0, M=5, N=5)
    with pytest.raises(PremiseViolation):
        certify(orb, Direction(math.pi / 2), p)
