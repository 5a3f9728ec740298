"""Wave-cone machinery: kernel directions of embedded states, the explicit
direction solver for pairs of constraint atoms, and cone segments with the
energy-gap inequality.

A state is in the wave cone when its stacked matrix W annihilates some
nonzero space-time direction xi; fields oscillating along such a direction
solve the linear relaxation system.  Directions used by the perturbation
machinery always carry zero pressure component.
"""

from dataclasses import dataclass

import numpy as np

from .algebra import (
    ReducedState,
    State,
    pack_state,
    power_split_constant,
    reduced_dim,
    reduced_from_coords,
)
from .errors import AtConstraintSet, DegenerateInput, GeometryError, UnsupportedDimension
from .hullgeom import atom_budget, in_relaxed_set

KERNEL_TOL = 1e-10


@dataclass(frozen=True)
class WaveDirection:
    """Normalized space-time direction xi = (zeta, s) with its certificate
    residual |W xi| / (|W| |xi|)."""

    xi: np.ndarray
    residual: float

    @property
    def zeta(self):
        return self.xi[:-1]

    @property
    def s(self):
        return float(self.xi[-1])

    @property
    def n(self):
        return len(self.xi) - 1


def _sign_fix(v, tol=1e-12):
    for comp in v:
        if abs(comp) > tol:
            return v if comp > 0 else -v
    return v


def _canonical_member(basis_vectors, scan_axes, dim):
    """Deterministic representative of a subspace.

    Coordinate axes are scanned in the given order; the first axis whose
    projection onto the subspace is resolvable wins, and its normalized
    projection (sign-fixed) is returned.
    """
    B = np.stack(basis_vectors, axis=1)  # dim x k, orthonormal columns
    best = None
    for axis in scan_axes:
        e = np.zeros(dim)
        e[axis] = 1.0
        proj = B @ (B.T @ e)
        norm = np.linalg.norm(proj)
        if best is None or norm > best[0] + 1e-12:
            best = (norm, proj)
        if norm > 1e-6:
            return _sign_fix(proj / norm)
    return _sign_fix(best[1] / best[0])


def _relative_residual(Wmat, xi):
    denom = np.linalg.norm(Wmat) * np.linalg.norm(xi)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(Wmat @ xi) / denom)


def wave_cone_kernel(z, tol=KERNEL_TOL):
    """Kernel direction of the embedded matrix of z, or None.

    Rank deficiency is decided by singular-value thresholding at
    tol * sigma_max.  When the kernel is more than one-dimensional the
    representative is canonical: spatial axes are scanned from the highest
    index down, then the time axis, and the first resolvable projection is
    returned (sign-fixed so its first nonzero component is positive).
    """
    n = z.n
    Wmat = pack_state(z).entries
    smax = float(np.abs(Wmat).max())
    if smax == 0.0:
        raise DegenerateInput("zero state: every direction is trivially annihilated")
    U_, sv, Vt = np.linalg.svd(Wmat)
    thresh = tol * sv[0]
    null_rows = [Vt[i] for i in range(n + 1) if (i >= len(sv) or sv[i] <= thresh)]
    if not null_rows:
        return None
    scan = list(range(n - 1, -1, -1)) + [n]
    xi = _canonical_member(null_rows, scan, n + 1)
    return WaveDirection(xi=xi, residual=_relative_residual(Wmat, xi))


def pair_difference_matrix(u1, b1, u2, b2):
    """Embedded matrix of the difference of the two constraint-atom states
    (zero pressure); its kernel directions are the usable oscillation
    directions between the atoms."""
    from .algebra import ConstraintAtom

    a1 = ConstraintAtom(np.asarray(u1, float), np.asarray(b1, float))
    a2 = ConstraintAtom(np.asarray(u2, float), np.asarray(b2, float))
    diff = a1.as_reduced_state() - a2.as_reduced_state()
    return pack_state(State(diff, 0.0)).entries


def cone_direction(u1, b1, u2, b2):
    """Explicit wave-cone direction for a pair of constraint atoms.

    zeta is a canonical unit vector orthogonal to span{u1 - u2, b1, b2}
    (nontrivial whenever n >= 4) and s = -u1 . zeta; the full difference
    matrix annihilates (zeta, s).
    """
    u1 = np.asarray(u1, float)
    b1 = np.asarray(b1, float)
    u2 = np.asarray(u2, float)
    b2 = np.asarray(b2, float)
    n = len(u1)
    if n < 4:
        raise UnsupportedDimension(n)

    span = np.stack([u1 - u2, b1, b2])
    # orthonormal basis of the orthogonal complement
    _, sv, Vt = np.linalg.svd(span)
    rank = int((sv > 1e-12 * max(1.0, sv[0])).sum())
    comp = [Vt[i] for i in range(rank, n)]
    if not comp:
        raise GeometryError("orthogonal complement numerically trivial")
    zeta = _canonical_member(comp, list(range(n - 1, -1, -1)), n)
    s = -float(u1 @ zeta)
    xi = np.concatenate([zeta, [s]])
    xi = _sign_fix(xi / np.linalg.norm(xi))
    W = pair_difference_matrix(u1, b1, u2, b2)
    return WaveDirection(xi=xi, residual=_relative_residual(W, xi))


@dataclass(frozen=True)
class ConeSegment:
    """Segment {base + t * direction, |t| <= half_length} along a wave-cone
    direction (zero pressure), with its annihilation certificate."""

    base: State
    direction: ReducedState
    half_length: float
    certificate: WaveDirection

    @property
    def direction_state(self):
        return State(self.direction, 0.0)

    def endpoint(self, sign):
        return State(self.base.reduced + (sign * self.half_length) * self.direction,
                     self.base.q)

    def direction_residual(self):
        W = pack_state(self.direction_state).entries
        return _relative_residual(W, self.certificate.xi)

    def ub_norm(self):
        """Norm of the (u, b) part of the direction, the energy-gap driver."""
        return float(np.sqrt(self.direction.u @ self.direction.u
                             + self.direction.b @ self.direction.b))


def segment_from_decomposition(z, decomp, lib, interior_check=None):
    """Cone segment at z built from its Caratheodory decomposition.

    Atom 1 is the largest-weight atom (lowest index on ties); the partner l
    maximizes weight_k * |(u_k, b_k) - (u_1, b_1)| over the rest.  The
    direction is half that weighted difference with zero pressure, the
    certificate is the explicit pair direction, and both endpoints must lie
    in the relaxed set.

    interior_check replaces the default (full probe-margin membership) with
    a cheaper certified test; the scheme passes one.
    """
    recon = decomp.reconstruct()
    err = (recon - z.reduced).norm()
    if err > 1e-8 * max(1.0, z.reduced.norm()):
        raise GeometryError(f"decomposition does not reconstruct z (error {err:.2e})")
    w = decomp.weights
    first = int(np.argmax(w))  # argmax returns the lowest index on ties
    pair_dist = np.array(
        [
            np.sqrt(np.sum((a.u - decomp.atoms[first].u) ** 2)
                    + np.sum((a.b - decomp.atoms[first].b) ** 2))
            for a in decomp.atoms
        ]
    )
    scores = w * pair_dist
    scores[first] = -1.0
    l = int(np.argmax(scores))
    if scores[l] <= 1e-12:
        raise AtConstraintSet()
    direction = (0.5 * w[l]) * (
        decomp.atoms[l].as_reduced_state() - decomp.atoms[first].as_reduced_state()
    )
    cert = cone_direction(
        decomp.atoms[l].u, decomp.atoms[l].b, decomp.atoms[first].u, decomp.atoms[first].b
    )
    seg = ConeSegment(base=z, direction=direction, half_length=1.0, certificate=cert)
    check = interior_check if interior_check is not None else (lambda s: in_relaxed_set(s, lib))
    for sign in (+1.0, -1.0):
        endpoint = seg.endpoint(sign)
        if not check(endpoint):
            raise GeometryError("segment endpoint leaves the relaxed set",
                                endpoint=endpoint)
    return seg


def gap_constant(n, m):
    """Explicit constant in the energy-gap inequality: 2^m n(n+2) C(m)."""
    return 2.0**m * atom_budget(n) * power_split_constant(m)


def energy_gap_inequality(z, seg, eps, m):
    """Machine-checkable energy-gap inequality for a segment at z.

    lhs = eps^(m-1) (2 - |u|^m - |b|^m) / C0 must not exceed
    rhs = |(ubar, bbar)|^m + 2 eps^m / C0, with the explicit constant C0.
    Returns (lhs, rhs, holds).
    """
    if not (0.0 < eps < 1.0):
        raise ValueError(f"need 0 < eps < 1, got {eps}")
    if m < 2.0:
        raise ValueError(f"need m >= 2, got {m}")
    n = z.n
    C0 = gap_constant(n, m)
    uu = float(np.linalg.norm(z.u))
    bb = float(np.linalg.norm(z.b))
    lhs = eps ** (m - 1.0) * (2.0 - uu**m - bb**m) / C0
    rhs = seg.ub_norm() ** m + 2.0 * eps**m / C0
    return lhs, rhs, bool(lhs <= rhs)


def direction_space_dimensions(n, xi):
    """Kernel dimensions of the linear map z -> (embedded z) xi.

    Returns a dict with the dimension over zero-pressure direction states
    and over full states (pressure included); also records the ambient
    dimensions.  Needs a direction with nonzero spatial part.
    """
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi[:n]) < 1e-12:
        raise DegenerateInput("direction parallel to the time axis")
    D = reduced_dim(n)
    cols = []
    for k in range(D):
        e = np.zeros(D)
        e[k] = 1.0
        zr = reduced_from_coords(e, n)
        cols.append(pack_state(State(zr, 0.0)).entries @ xi)
    cols_q = cols + [pack_state(State(ReducedState.zero(n), 1.0)).entries @ xi]

    def nullity(cs):
        sv = np.linalg.svd(np.stack(cs, axis=1), compute_uv=False)
        return len(cs) - int((sv > 1e-8).sum())

    return {
        "ambient_reduced": D,
        "ambient_full": D + 1,
        "nullity_zero_pressure": nullity(cols),
        "nullity_full": nullity(cols_q),
    }
