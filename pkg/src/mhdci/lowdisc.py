"""Deterministic low-discrepancy sequences.

All quasi-random sampling in the toolkit flows through the additive
(Kronecker) sequence built on the generalized golden ratio, seeded by an
integer offset.  Same (dim, seed, count) always yields bit-identical points,
which is what makes reports reproducible byte-for-byte.
"""

import numpy as np
from scipy.special import ndtri


def _harmonious(dim):
    """Root of x**(dim+1) = x + 1, the generalized golden ratio."""
    phi = 2.0
    for _ in range(64):
        phi = phi - (phi ** (dim + 1) - phi - 1.0) / ((dim + 1) * phi**dim - 1.0)
    return phi


def unit_cube(count, dim, seed=0):
    """First `count` points of the seeded Kronecker sequence in [0,1)^dim."""
    phi = _harmonious(dim)
    alpha = (1.0 / phi) ** np.arange(1, dim + 1)
    # seed enters both as an index offset and an irrational shift
    shift = 0.5 + seed * 0.7548776662466927  # plastic-ratio fraction
    k = np.arange(1, count + 1, dtype=np.float64)[:, None]
    return (shift + k * alpha[None, :]) % 1.0


def unit_sphere(count, dim, seed=0):
    """Low-discrepancy points on the unit sphere S^{dim-1}.

    Cube points are pushed through the inverse normal CDF and normalized;
    the resulting direction distribution is uniform.
    """
    u = unit_cube(count, dim, seed=seed)
    g = ndtri(np.clip(u, 1e-12, 1.0 - 1e-12))
    norms = np.linalg.norm(g, axis=1)
    norms[norms < 1e-12] = 1.0
    return g / norms[:, None]


def unit_ball(count, dim, seed=0):
    """Low-discrepancy points in the closed unit ball of R^dim."""
    u = unit_cube(count, dim + 1, seed=seed)
    g = ndtri(np.clip(u[:, :dim], 1e-12, 1.0 - 1e-12))
    norms = np.linalg.norm(g, axis=1)
    norms[norms < 1e-12] = 1.0
    radii = u[:, dim] ** (1.0 / dim)
    return g / norms[:, None] * radii[:, None]


def ball_volume(dim, radius=1.0):
    """Closed-form volume of the dim-ball, used to cross-check estimates."""
    from math import gamma, pi

    return pi ** (dim / 2.0) / gamma(dim / 2.0 + 1.0) * radius**dim
