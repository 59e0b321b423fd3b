"""Chart-level map helpers: affine conjugations, smooth blending to a linear
far field, and composed charts.  These are the building blocks the atlas
pipeline conjugates and rectifies."""

from __future__ import annotations

import math

import numpy as np

from .jets import (Jet1D, Jet2D, SJet2, jet_compose_2d, jet_invert_2d,
                   jet1_sqrt, sj_apply_1d, s_product, tri_size, _TRI_POS)


class ConjugatedMap:
    """q -> Z_out(F(Z_in^{-1}(q))) for affine frames Z (matrix + center).

    Z maps phase space to chart coordinates: Z(p) = mat (p - center).
    """

    def __init__(self, F, mat_in, center_in, mat_out, center_out):
        self.F = F
        self.mat_in = np.asarray(mat_in, dtype=float)
        self.center_in = np.asarray(center_in, dtype=float)
        self.mat_out = np.asarray(mat_out, dtype=float)
        self.center_out = np.asarray(center_out, dtype=float)
        self._inv_in = np.linalg.inv(self.mat_in)

    def __call__(self, pts):
        p = np.asarray(pts, dtype=float) @ self._inv_in.T + self.center_in
        return (self.F(p) - self.center_out) @ self.mat_out.T

    def jet(self, pts, order):
        pts = np.asarray(pts, dtype=float)
        batch = pts.shape[:-1]
        Zin_inv = Jet2D.affine(self._inv_in, self.center_in, pts, order, batch=batch)
        JF = self.F.jet(Zin_inv.value, order)
        Zout = Jet2D.affine(self.mat_out, -self.mat_out @ self.center_out,
                            JF.value, order, batch=batch)
        return jet_compose_2d(Zout, jet_compose_2d(JF, Zin_inv))


def smoothstep_coeffs(smooth_order):
    """Polynomial S on [0, 1] with S(0)=0, S(1)=1 and `smooth_order` vanishing
    derivatives at both ends (ascending coefficients)."""
    q = smooth_order
    coeffs = np.zeros(2 * q + 2)
    for k in range(q + 1):
        coeffs[q + k + 1] = math.comb(q, k) * (-1) ** k / (q + k + 1)
    coeffs /= np.polynomial.polynomial.polyval(1.0, coeffs)
    return coeffs


class BlendedMap:
    """F inside radius r_in, its linear part A outside r_out, and a C^k
    radial smoothstep blend on the annulus (k = smooth_order).

    The map must fix the origin with D_0 F = A for the blend to preserve the
    linearization data.
    """

    def __init__(self, F, A, r_in, r_out, smooth_order=4):
        self.F = F
        self.A = np.asarray(A, dtype=float)
        self.r_in = float(r_in)
        self.r_out = float(r_out)
        self.smooth_order = smooth_order
        self._step = smoothstep_coeffs(smooth_order)

    def _phi(self, r):
        """Blend weight 1 -> 0 across [r_in, r_out]; exact at the seams."""
        u = np.clip((r - self.r_in) / (self.r_out - self.r_in), 0.0, 1.0)
        phi = 1.0 - np.polynomial.polynomial.polyval(u, self._step)
        return np.where(r >= self.r_out, 0.0, np.where(r <= self.r_in, 1.0, phi))

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        lin = pts @ self.A.T
        r = np.linalg.norm(pts, axis=-1)
        phi = self._phi(r)
        return lin + phi[..., None] * (self.F(pts) - lin)

    def jet(self, pts, order):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        n = flat.shape[0]
        r = np.linalg.norm(flat, axis=-1)
        out = np.zeros((2, tri_size(order), n))
        inner = r <= self.r_in
        outer = r >= self.r_out
        mid = ~inner & ~outer
        if np.any(inner):
            out[:, :, inner] = self.F.jet(flat[inner], order).coeffs
        if np.any(outer):
            out[:, :, outer] = Jet2D.affine(self.A, np.zeros(2), flat[outer],
                                            order, batch=(int(outer.sum()),)).coeffs
        if np.any(mid):
            p = flat[mid]
            b = (int(mid.sum()),)
            JF = self.F.jet(p, order)
            JA = Jet2D.affine(self.A, np.zeros(2), p, order, batch=b)
            delta0 = SJet2(p, JF.coeffs[0] - JA.coeffs[0])
            delta1 = SJet2(p, JF.coeffs[1] - JA.coeffs[1])
            # scalar jet of the radius, then of the blend weight
            pos = _TRI_POS[order]
            r2 = np.zeros((tri_size(order),) + b)
            r2[0] = np.sum(p ** 2, axis=-1)
            r2[pos[(1, 0)]] = 2 * p[:, 0]
            r2[pos[(0, 1)]] = 2 * p[:, 1]
            if order >= 2:
                r2[pos[(2, 0)]] = 2.0
                r2[pos[(0, 2)]] = 2.0
            rad = sj_apply_1d(jet1_sqrt_batch(r2[0], order), SJet2(p, r2))
            u_coeffs = np.array(rad.coeffs)
            u_coeffs[0] -= self.r_in
            u_coeffs /= (self.r_out - self.r_in)
            phi_outer = _poly_jet_batch(u_coeffs[0], self._step, order)
            phi = sj_apply_1d(phi_outer, SJet2(p, u_coeffs))
            blended0 = SJet2(p, JA.coeffs[0] + s_product(phi, delta0).coeffs)
            blended1 = SJet2(p, JA.coeffs[1] + s_product(phi, delta1).coeffs)
            out[0][:, mid] = blended0.coeffs
            out[1][:, mid] = blended1.coeffs
        out = out.reshape((2, tri_size(order)) + pts.shape[:-1])
        return Jet2D(pts, out)


def jet1_sqrt_batch(u0, order):
    """Batched 1D sqrt jets at positive base values."""
    u0 = np.asarray(u0, dtype=float)
    c = np.empty((order + 1,) + u0.shape)
    c[0] = np.sqrt(u0)
    for k in range(1, order + 1):
        coef = 1.0
        for i in range(k):
            coef *= (0.5 - i)
        c[k] = coef * u0 ** (0.5 - k)
    return Jet1D(u0, c)


def _poly_jet_batch(u0, step_coeffs, order):
    """1D jet of phi(u) = 1 - step(u) at base values u0 (batched)."""
    u0 = np.asarray(u0, dtype=float)
    c = np.empty((order + 1,) + u0.shape)
    for k in range(order + 1):
        acc = np.zeros(u0.shape)
        for i in range(len(step_coeffs) - 1, k - 1, -1):
            acc = acc * u0 + step_coeffs[i] * math.perm(i, k)
        c[k] = -acc
    c[0] = 1.0 - np.polynomial.polynomial.polyval(u0, step_coeffs)
    return Jet1D(u0, c)


class ComposedChart:
    """Phi = Psi o Z for an affine frame Z(p) = mat (p - center) and a
    rectifying chart Psi; exposes forward/inverse evaluation and jets."""

    def __init__(self, psi, mat, center):
        self.psi = psi
        self.mat = np.asarray(mat, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self._inv = np.linalg.inv(self.mat)

    def z(self, pts):
        return (np.asarray(pts, dtype=float) - self.center) @ self.mat.T

    def z_inverse(self, pts):
        return np.asarray(pts, dtype=float) @ self._inv.T + self.center

    def forward(self, pts):
        return self.psi.forward(self.z(pts))

    def inverse(self, pts):
        return self.z_inverse(self.psi.inverse(pts))

    def jet(self, pts, order):
        pts = np.asarray(pts, dtype=float)
        batch = pts.shape[:-1]
        Z = Jet2D.affine(self.mat, -self.mat @ self.center, pts, order, batch=batch)
        return jet_compose_2d(self.psi.jet(Z.value, order), Z)

    def inverse_jet(self, pts, order):
        pts = np.asarray(pts, dtype=float)
        batch = pts.shape[:-1]
        Jp = self.psi.inverse_jet(pts, order)
        Zi = Jet2D.affine(self._inv, self.center, Jp.value, order, batch=batch)
        return jet_compose_2d(Zi, Jp)


class ChartTriple:
    """Conjugated dynamics F_m = Psi_out o Ftilde o Psi_in^{-1} with jets."""

    def __init__(self, psi_in, Ftilde, psi_out):
        self.psi_in = psi_in
        self.Ft = Ftilde
        self.psi_out = psi_out

    def __call__(self, pts):
        return self.psi_out.forward(self.Ft(self.psi_in.inverse(pts)))

    def jet(self, pts, order):
        J1 = self.psi_in.inverse_jet(pts, order)
        J2 = self.Ft.jet(J1.value, order)
        J3 = self.psi_out.jet(J2.value, order)
        return jet_compose_2d(J3, jet_compose_2d(J2, J1))
