import math

import numpy as np
import pytest

from regatlas import system
from regatlas.errors import DomainError
from regatlas.jets import jet_compose_2d


def test_henon_jacobian_at_origin():
    F = system.henon(0.0, -1.0)
    D = F.derivative(np.array([0.0, 0.0]))
    assert np.allclose(D, [[0.0, 1.0], [1.0, 0.0]], atol=1e-14)
    # hand Jacobian [[-2x, -b], [1, 0]] on a few points
    pts = np.array([[0.5, -0.2], [-1.0, 0.3]])
    D = F.jet(pts, 1).linear()
    for k, (x, y) in enumerate(pts):
        assert np.allclose(D[k], [[-2 * x, 1.0], [1.0, 0.0]], atol=1e-14)


def test_henon_round_trip():
    rng = np.random.default_rng(0)
    F = system.henon(1.4, 0.3)
    pts = rng.uniform(-2, 2, size=(1000, 2))
    back = F.inverse(F(pts))
    assert np.max(np.abs(back - pts)) < 1e-12


def test_henon_rejects_b_zero():
    with pytest.raises(ValueError):
        system.henon(1.0, 0.0)


def test_henon_classical_orbit_bounded():
    F = system.henon(1.4, 0.3)
    p = np.array([0.0, 0.0])
    lo = np.array([np.inf, np.inf])
    hi = -lo
    for _ in range(10**4):
        p = F(p)
        lo = np.minimum(lo, p)
        hi = np.maximum(hi, p)
    assert np.all(lo >= -1.8) and np.all(hi <= 1.8)


def test_orbit_identity_map():
    ident = system.linear_map(np.eye(2))
    orb = system.orbit(ident, [0.3, 0.4], 5, 5)
    assert np.allclose(orb.points, np.tile([0.3, 0.4], (11, 1)))
    assert np.allclose(orb.matrices, np.tile(np.eye(2), (10, 1, 1)))


def test_orbit_at_henon_fixed_point():
    a, b = 1.4, 0.3
    F = system.henon(a, b)
    q = system.henon_fixed_points(a, b)[0]
    assert np.allclose(F(q), q, atol=1e-12)
    orb = system.orbit(F, q, 10, 10)
    assert np.max(np.abs(orb.points - q)) < 1e-10


def test_orbit_linear_diagonal():
    F = system.linear_map(np.diag([2.0, 0.5]))
    orb = system.orbit(F, [1.0, 1.0], 0, 3)
    assert np.allclose(orb.point(3), [8.0, 0.125])


def test_orbit_early_termination():
    F = system.henon(1.4, 0.3, domain=system.Rect(-1.0, 1.0, -1.0, 1.0))
    orb = system.orbit(F, [0.0, 0.0], 0, 100)
    assert orb.truncated and orb.N < 100


def test_orbit_rejects_outside_seed():
    F = system.henon(1.4, 0.3)
    with pytest.raises(DomainError):
        system.orbit(F, [10.0, 0.0], 0, 1)


def test_cocycle_in_frame_diagonal():
    F = system.linear_map(np.diag([2.0, 0.5]))
    orb = system.orbit(F, [0.1, 0.1], 3, 3)
    coc = system.cocycle_in_frame(orb, [0.0, 1.0])
    for m in range(-3, 3):
        assert np.allclose(coc.A(m), [[2.0, 0.0], [0.0, 0.5]], atol=1e-14)
    assert np.allclose(coc.frames[0], np.eye(2) * np.sign(coc.frames[0][0, 0]))


def test_cocycle_in_frame_rotation():
    th = math.pi / 4
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    F = system.linear_map(R)
    orb = system.orbit(F, [0.0, 0.0], 4, 4)
    coc = system.cocycle_in_frame(orb, [0.0, 1.0])
    for m in range(-4, 4):
        A = coc.A(m)
        assert abs(A[0, 1]) < 1e-14
        assert abs(abs(np.linalg.det(A)) - 1.0) < 1e-12


def test_cocycle_in_frame_henon_triangular():
    F = system.henon(1.4, 0.3)
    orb = system.orbit(F, [0.1, 0.1], 0, 50)
    e = system.contracted_direction(orb)
    coc = system.cocycle_in_frame(orb, e)
    resid = np.max(np.abs(coc.matrices[:, 0, 1]))
    assert resid < 1e-9
    assert np.all(coc.matrices[:, 0, 0] > 0)
    assert np.all(coc.matrices[:, 1, 1] > 0)


def test_cocycle_det_matches_composed_jet():
    # spiral-sink parameters keep the 50-step product well-conditioned, so
    # the determinant of the composed jet is not lost to cancellation
    F = system.henon(0.1, 0.9, domain=system.Rect(-4, 4, -4, 4))
    orb = system.orbit(F, [0.2, 0.1], 0, 50)
    n = min(50, orb.N)
    logdet = system.jacobian_of_power(orb, n)
    # direct jet evaluation of the composed map's linear part
    J = F.jet(orb.point(0), 1)
    for m in range(1, n):
        J = jet_compose_2d(F.jet(J.value, 1), J)
    det_direct = abs(J.det())
    assert abs(logdet - math.log(det_direct)) / max(1.0, abs(logdet)) < 1e-9


def test_frame_change_preserves_singular_values():
    F = system.henon(1.4, 0.3)
    orb = system.orbit(F, [0.1, 0.1], 0, 20)
    e = system.contracted_direction(orb)
    coc = system.cocycle_in_frame(orb, e)
    P_raw = np.eye(2)
    P_frame = np.eye(2)
    for m in range(10):
        P_raw = orb.A(m) @ P_raw
        P_frame = coc.A(m) @ P_frame
    s_raw = np.linalg.svd(P_raw, compute_uv=False)
    s_frame = np.linalg.svd(P_frame, compute_uv=False)
    assert np.max(np.abs(s_raw - s_frame) / s_raw) < 1e-10


def test_perturbed_linear_round_trip():
    F = system.perturbed_linear_map(2 / 3, 0.1, 1e-3)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.3, 0.3, size=(200, 2))
    assert np.max(np.abs(F.inverse(F(pts)) - pts)) < 1e-10
    assert np.allclose(F(np.zeros(2)), [0.0, 0.0], atol=1e-15)
