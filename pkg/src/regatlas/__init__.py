"""Certification of finite-time regularity for planar diffeomorphism orbits,
regular-chart atlases, invariant manifolds, and homogeneity diagnostics."""

__version__ = "0.1.0"
