import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regatlas import projective, system
from regatlas.projective import Direction


def rot(t):
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def fd_angle_derivative(A, t, h=1e-6):
    """Centered finite difference of the angle map, wrap-safe."""
    v = lambda s: A @ np.array([math.cos(s), math.sin(s)])  # noqa: E731
    wm, wp = v(t - h), v(t + h)
    dth = math.atan2(wm[0] * wp[1] - wm[1] * wp[0], wm @ wp)
    return dth / (2 * h)


def test_projective_derivative_identity():
    for t in np.linspace(0, math.pi, 7):
        assert projective.projective_derivative(np.eye(2), Direction(t)) == pytest.approx(1.0)


def test_projective_derivative_diagonal():
    got = projective.projective_derivative(np.diag([2.0, 1.0]), Direction(0.0))
    assert got == pytest.approx(0.5)


def test_projective_derivative_matches_fd_on_henon():
    F = system.henon(1.4, 0.3)
    A = F.derivative(np.array([0.3, 0.2]))
    t = 1.0
    got = projective.projective_derivative(A, Direction(t))
    fd = abs(fd_angle_derivative(A, t))
    assert abs(got - fd) / fd < 1e-6


def test_projective_derivative_batch_random_fd():
    rng = np.random.default_rng(7)
    count = 0
    while count < 1000:
        A = rng.uniform(-2, 2, size=(2, 2))
        if abs(np.linalg.det(A)) < 0.1:
            continue
        t = rng.uniform(0, math.pi)
        got = projective.projective_derivative(A, Direction(t))
        fd = abs(fd_angle_derivative(A, t))
        assert abs(got - fd) / fd < 1e-6
        count += 1


def test_second_derivative_conformal_zero():
    A = 1.7 * rot(0.4)
    for t in np.linspace(0, math.pi, 9):
        assert abs(projective.projective_second_derivative(A, Direction(t))) < 1e-14


def test_second_derivative_zero_at_singular_axes():
    # vanishes at t = alpha +- pi/2 with alpha the max-expansion angle (= 0
    # for diag(2,1), so the zero is at pi/2)
    got = projective.projective_second_derivative(np.diag([2.0, 1.0]), Direction(math.pi / 2))
    assert abs(got) < 1e-14
    got = projective.projective_second_derivative(np.diag([2.0, 1.0]), Direction(0.0))
    assert abs(got) < 1e-14


def test_second_derivative_matches_fd():
    A = np.diag([2.0, 1.0])
    t, h = math.pi / 4, 1e-4
    d_plus = fd_angle_derivative(A, t + h / 2, h=1e-7)
    d_minus = fd_angle_derivative(A, t - h / 2, h=1e-7)
    fd2 = (d_plus - d_minus) / h
    got = projective.projective_second_derivative(A, Direction(t))
    assert abs(got - fd2) < 1e-5
    rng = np.random.default_rng(3)
    for _ in range(20):
        A = rng.uniform(-2, 2, size=(2, 2))
        if abs(np.linalg.det(A)) < 0.2:
            continue
        t = rng.uniform(0, math.pi)
        d_plus = fd_angle_derivative(A, t + h / 2, h=1e-7)
        d_minus = fd_angle_derivative(A, t - h / 2, h=1e-7)
        fd2 = (d_plus - d_minus) / h
        got = projective.projective_second_derivative(A, Direction(t))
        assert abs(got - fd2) < 1e-4 * max(1.0, abs(got))


def test_growth_variance_conformal_zero():
    assert projective.growth_variance(2.0 * rot(1.1)) < 1e-12


def test_growth_variance_diagonal_bound():
    A = np.diag([2.0, 1.0])
    gv = projective.growth_variance(A, samples=4096)
    assert gv <= (4.0 + 1.0) / 1.0
    assert gv <= projective.growth_variance_bound(A)
    # exact max of |(a^2-b^2) sin cos / l|: check against dense scan
    t = np.linspace(0, math.pi, 100000)
    l = np.sqrt(4 * np.cos(t) ** 2 + np.sin(t) ** 2)
    dense = np.max(np.abs((1 - 4) * np.sin(t) * np.cos(t) / l))
    assert abs(gv - dense) < 1e-6


def test_growth_variance_random_matches_dense_scan():
    rng = np.random.default_rng(11)
    A = rng.uniform(-2, 2, size=(2, 2))
    gv = projective.growth_variance(A, samples=8192)
    t = np.linspace(0, math.pi, 100000)
    v = np.stack([np.cos(t), np.sin(t)], axis=-1)
    vp = np.stack([-np.sin(t), np.cos(t)], axis=-1)
    w = v @ A.T
    wp = vp @ A.T
    dense = np.max(np.abs(np.sum(w * wp, axis=-1)) / np.linalg.norm(w, axis=-1))
    assert abs(gv - dense) < 1e-6 * max(1.0, dense)


def test_eccentricity_isometry_and_diagonal():
    assert projective.eccentricity(system.linear_map(rot(0.3))) == pytest.approx(1.0)
    assert projective.eccentricity(system.linear_map(np.diag([2.0, 0.5]))) == pytest.approx(4.0)


def test_eccentricity_grid_refinement():
    F = system.henon(1.4, 0.3)
    region = [[-1.0, 1.0], [-1.0, 1.0]]
    e1 = projective.eccentricity(F, region, grid=64)
    e2 = projective.eccentricity(F, region, grid=256)
    assert abs(e1 - e2) / e2 < 0.02


def test_eccentricity_rejects_outside_region():
    F = system.henon(1.4, 0.3, domain=system.Rect(-2, 2, -2, 2))
    with pytest.raises(ValueError):
        projective.eccentricity(F, [[-3, 3], [-1, 1]])


class _MatrixOrbit:
    """Minimal orbit-like object with a constant or listed cocycle."""

    def __init__(self, mats, M=0):
        self.matrices = np.asarray(mats, dtype=float)
        self.M = M
        self.N = self.matrices.shape[0] - M

    def A(self, m):
        return self.matrices[m + self.M]


def test_classify_diag_attractor_minimal_L_one():
    rho = 0.5
    orb = _MatrixOrbit([np.diag([1.0, rho])] * 30)
    cert = projective.classify_projective(orb, Direction(0.0), rho, 0.3,
                                          "forward-attractor", 30)
    assert cert.minimal_L == pytest.approx(1.0)
    assert np.allclose(cert.values(), rho ** np.arange(31))


def test_classify_wrong_mode_diverges():
    rho = 0.5
    orb = _MatrixOrbit([np.diag([1.0, rho])] * 10)
    c10 = projective.classify_projective(orb, Direction(0.0), rho, 0.3,
                                         "forward-repeller", 10)
    orb = _MatrixOrbit([np.diag([1.0, rho])] * 20)
    c20 = projective.classify_projective(orb, Direction(0.0), rho, 0.3,
                                         "forward-repeller", 20)
    assert c20.minimal_L > c10.minimal_L > 1e3


def test_classify_henon_matches_bruteforce():
    F = system.henon(1.4, 0.3)
    orb = system.orbit(F, [0.1, 0.1], 30, 30)
    e = system.contracted_direction(orb)
    E = Direction.from_vector(e)
    rho, eps, H = 0.3, 0.1, 30
    cert = projective.classify_projective(orb, E, rho, eps, "forward-attractor", H)
    # brute force: max over n of both ratio defects
    vals = np.exp(projective.log_projective_products(orb, E, H))
    Ls = [1.0]
    for n in range(H + 1):
        Ls.append(vals[n] / rho ** ((1 - eps) * n))
        Ls.append(rho ** ((1 + eps) * n) / vals[n])
    assert cert.minimal_L == pytest.approx(max(Ls), rel=1e-10)


def test_chain_rule_multiplicativity():
    F = system.henon(1.4, 0.3)
    orb = system.orbit(F, [0.1, 0.1], 0, 20)
    E = Direction(1.2)
    logs = projective.log_projective_products(orb, E, 12)
    # split at m = 5: d_P DF^{12} = d_P DF^7 (at pushed direction) * d_P DF^5
    u = system.direction_orbit(orb, E.vector())
    orb_shift = _MatrixOrbit(orb.matrices[5:], M=0)
    logs_tail = projective.log_projective_products(
        orb_shift, Direction.from_vector(u[5]), 7)
    assert abs(logs[12] - (logs[5] + logs_tail[7])) < 1e-9


def test_telescoping_sum():
    F = system.henon(1.4, 0.3)
    orb = system.orbit(F, [0.0, 0.3], 0, 15)
    E = Direction(0.7)
    logs = projective.log_projective_products(orb, E, 15)
    u = system.direction_orbit(orb, E.vector())
    acc = 0.0
    for i in range(15):
        acc += math.log(projective.projective_derivative(orb.A(i), Direction.from_vector(u[i])))
    assert abs(acc - logs[15]) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-2, 2, size=(2, 2))
    if abs(np.linalg.det(A)) < 1e-3:
        return
    t = rng.uniform(0, math.pi)
    th = rng.uniform(0, 2 * math.pi)
    E = Direction(t)
    base = projective.projective_derivative(A, E)
    post = projective.projective_derivative(rot(th) @ A, E)
    pre = projective.projective_derivative(A @ rot(th), Direction(t - th))
    assert abs(post - base) < 1e-10 * base
    assert abs(pre - base) < 1e-10 * base


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_inverse_reciprocity(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-2, 2, size=(2, 2))
    if abs(np.linalg.det(A)) < 1e-2:
        return
    E = Direction(rng.uniform(0, math.pi))
    w = A @ E.vector()
    fwd = projective.projective_derivative(A, E)
    bwd = projective.projective_derivative(np.linalg.inv(A), Direction.from_vector(w))
    assert abs(fwd * bwd - 1.0) < 1e-9
