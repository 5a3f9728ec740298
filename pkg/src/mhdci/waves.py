"""Localized plane waves: second-order potentials, basis changes, covering,
and the full building-block constructor.

A wave-cone direction with certificate xi is first rotated into the aligned
frame (xi -> first axis) by a basis change fixing the time axis.  There the
field is generated by a pair of antisymmetric 4-tensor potentials built from
the aligned amplitude blocks and a radial C^4 cutoff; the generating operator
is evaluated in closed form, so interior values are exact sines and support
is exactly zero outside the unit ball.  The general block is a sum of
disjoint rescaled copies of the transformed aligned field.

Internally the lower amplitude block is carried in its fully antisymmetric
form [[Q, b], [-b^t, 0]]; conjugation by any time-fixing matrix preserves
that class (and the symmetric upper class), which is what makes the basis
change structurally sound.  Public values are always converted back to the
standard [[Q, b], [b^t, 0]] convention.
"""

from dataclasses import dataclass, field

import numpy as np

from . import lowdisc
from .algebra import EmbeddedMatrix, State, pack_state
from .errors import (
    AlignmentError,
    CoveringError,
    DegenerateDirection,
    DegenerateInput,
    GeometryError,
)

# ---------------------------------------------------------------------------
# Radial polynomial cutoff, C^4, identically 1 on the half ball.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffSpec:
    inner: float = 0.5
    outer: float = 1.0
    smoothness: int = 4

    def __post_init__(self):
        if (self.inner, self.outer, self.smoothness) != (0.5, 1.0, 4):
            raise ValueError("only the (0.5, 1.0, C^4) cutoff profile is implemented")


def _smooth_step(t):
    """Ninth-degree step: 0 -> 1 on [0,1] with four vanishing derivatives."""
    return t**5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + t * 70.0))))


def _smooth_step_d1(t):
    return 630.0 * t**4 * (t - 1.0) ** 4


def _smooth_step_d2(t):
    return 2520.0 * t**3 * (t - 1.0) ** 3 * (2.0 * t - 1.0)


def bump_profile(rho):
    """Radial profile value w(rho): 1 on [0, 1/2], smooth to 0 at 1."""
    rho = np.asarray(rho, dtype=float)
    t = np.clip(2.0 * (1.0 - rho), 0.0, 1.0)
    out = _smooth_step(t)
    return np.where(rho <= 0.5, 1.0, out)


def bump_profile_d1(rho):
    rho = np.asarray(rho, dtype=float)
    inside = (rho > 0.5) & (rho < 1.0)
    t = np.clip(2.0 * (1.0 - rho), 0.0, 1.0)
    return np.where(inside, -2.0 * _smooth_step_d1(t), 0.0)


def bump_profile_d2(rho):
    rho = np.asarray(rho, dtype=float)
    inside = (rho > 0.5) & (rho < 1.0)
    t = np.clip(2.0 * (1.0 - rho), 0.0, 1.0)
    return np.where(inside, 4.0 * _smooth_step_d2(t), 0.0)


_TGRID = np.linspace(0.0, 1.0, 20001)
PSI_C1 = float(np.abs(2.0 * _smooth_step_d1(_TGRID)).max())
PSI_C2 = float(np.abs(4.0 * _smooth_step_d2(_TGRID)).max())


def cutoff_hessian(Y):
    """(value, gradient, Hessian) of the radial bump at each row of Y."""
    Y = np.atleast_2d(Y)
    rho = np.linalg.norm(Y, axis=1)
    w = bump_profile(rho)
    w1 = bump_profile_d1(rho)
    w2 = bump_profile_d2(rho)
    safe = np.where(rho > 1e-14, rho, 1.0)
    grad = (w1 / safe)[:, None] * Y
    rad = (w2 - w1 / safe) / safe**2
    H = rad[:, None, None] * Y[:, None, :] * Y[:, :, None]
    H[:, np.arange(Y.shape[1]), np.arange(Y.shape[1])] += (w1 / safe)[:, None]
    return w, grad, H


# ---------------------------------------------------------------------------
# Aligned potentials and the generating operator in closed form.
# ---------------------------------------------------------------------------


def split_blocks(W):
    """Split an embedded matrix into (symmetric upper, antisymmetric lower).

    The lower block is returned in the antisymmetric convention (last row
    negated relative to the public form)."""
    E = W.entries if isinstance(W, EmbeddedMatrix) else np.asarray(W, float)
    n = E.shape[1] - 1
    U = E[: n + 1].copy()
    X = E[n + 1 :].copy()
    X[n, :] = -X[n, :]
    return U, X


def join_blocks(U, X):
    """Inverse of split_blocks, back to the public convention."""
    n = U.shape[1] - 1
    V = X.copy()
    V[..., n, :] = -V[..., n, :]
    return np.concatenate([U, V], axis=-2)


@dataclass(frozen=True)
class PotentialPair:
    """Aligned plane-wave potential: amplitude annihilating the first axis,
    integer frequency, radial cutoff."""

    amplitude: EmbeddedMatrix
    frequency: int
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)
    _U: np.ndarray = field(init=False, repr=False)
    _X: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        U, X = split_blocks(self.amplitude)
        object.__setattr__(self, "_U", U)
        object.__setattr__(self, "_X", X)

    @property
    def n(self):
        return self.amplitude.n


def aligned_potential(Wbar, N):
    """Potential pair for an aligned amplitude (first column annihilated).

    The tiny alignment residual is projected out of the stored blocks so the
    closed-form evaluation below is exact.
    """
    if N is None or int(N) != N or N < 1:
        raise ValueError(f"frequency must be a positive integer, got {N}")
    E = Wbar.entries if isinstance(Wbar, EmbeddedMatrix) else np.asarray(Wbar, float)
    scale = float(np.abs(E).max())
    if scale == 0.0:
        return PotentialPair(EmbeddedMatrix(np.zeros_like(E)), int(N))
    n = E.shape[1] - 1
    res = float(np.linalg.norm(E @ np.eye(n + 1)[:, 0])) / np.linalg.norm(E)
    if res > 1e-12:
        raise AlignmentError(res)
    U, X = split_blocks(E)
    U[0, :] = 0.0
    U[:, 0] = 0.0
    X[0, :] = 0.0
    X[:, 0] = 0.0
    return PotentialPair(EmbeddedMatrix(join_blocks(U, X)), int(N))


def _contract_sym(S, H):
    """Closed form of the symmetrized operator on the upper potential:
    out_ij = d_i0 (SH)_j0 + d_j0 (SH)_i0 - d_i0 d_j0 <S,H> - H_00 S_ij."""
    SH = np.einsum("ab,pbc->pac", S, H)
    v = SH[:, :, 0]
    out = -H[:, 0, 0][:, None, None] * S[None, :, :]
    out[:, 0, :] += v
    out[:, :, 0] += v
    out[:, 0, 0] -= np.einsum("ab,pab->p", S, H)
    return out


def _contract_skew(X, H):
    """Closed form of the antisymmetrized operator on the lower potential:
    out_ij = d_i0 (XH)_j0 - d_j0 (XH)_i0 + H_00 X_ij."""
    XH = np.einsum("ab,pbc->pac", X, H)
    v = XH[:, :, 0]
    out = H[:, 0, 0][:, None, None] * X[None, :, :]
    out[:, 0, :] += v
    out[:, :, 0] -= v
    return out


def _field_tilde(U, X, N, Y):
    """Aligned field (U-part, antisymmetric part) at the rows of Y."""
    Y = np.atleast_2d(Y)
    psi, grad, Hpsi = cutoff_hessian(Y)
    y1 = Y[:, 0]
    g = np.sin(N * y1) / N**2
    g1 = np.cos(N * y1) / N
    g2 = -np.sin(N * y1)
    H = g[:, None, None] * Hpsi
    H[:, 0, :] += g1[:, None] * grad
    H[:, :, 0] += g1[:, None] * grad
    H[:, 0, 0] += psi * g2
    # the upper potential carries +psi*g, the lower one -psi*g, so both
    # blocks come out as +sin(N y1) times their amplitude in the interior
    outU = _contract_sym(U, H)
    outX = _contract_skew(X, -H)
    return outU, outX


def evaluate_potential(p, y):
    """Value of the generated divergence-free field at one point, in the
    public block convention."""
    outU, outX = _field_tilde(p._U, p._X, p.frequency, np.asarray(y, float)[None, :])
    return EmbeddedMatrix(join_blocks(outU[0], outX[0]))


def evaluate_potential_many(p, Y):
    """Vectorized evaluate_potential: (P, 2n+2, n+1) array."""
    outU, outX = _field_tilde(p._U, p._X, p.frequency, Y)
    return join_blocks(outU, outX)


def potential_tensors(p):
    """Materialized 4-tensor potentials (constant patterns), for audits.

    Returns (PU, PX) with shape (n+1,)*4 such that the upper/lower potential
    tensors are pattern * psi(y) * g(y1) with g = +-sin(N y1)/N^2; both
    satisfy the required antisymmetries in each index pair.
    """
    n1 = p.n + 1

    def pattern(S):
        P = np.zeros((n1, n1, n1, n1))
        for a in range(n1):
            for b in range(n1):
                for c in range(n1):
                    for d in range(n1):
                        v = 0.0
                        if a == 0 and c == 0:
                            v += S[b, d]
                        if b == 0 and c == 0:
                            v -= S[a, d]
                        if a == 0 and d == 0:
                            v -= S[b, c]
                        if b == 0 and d == 0:
                            v += S[a, c]
                        P[a, b, c, d] = v
        return P

    return pattern(p._U), pattern(p._X)


# ---------------------------------------------------------------------------
# Basis change and covering.
# ---------------------------------------------------------------------------


def basis_change(xi):
    """Invertible matrix A with A e_1 = xi (normalized), A e_{n+1} = e_{n+1}.

    The remaining columns are coordinate axes (the axis most aligned with xi
    is displaced into the first slot's old position), orthonormalized
    against xi and the time axis; for an axis direction xi the result is an
    exact permutation.
    """
    v = xi.xi if hasattr(xi, "xi") else np.asarray(xi, dtype=float)
    dim = len(v)
    n = dim - 1
    v = v / np.linalg.norm(v)
    if np.linalg.norm(v[:n]) <= 1e-8:
        raise DegenerateDirection()
    A = np.eye(dim)
    A[:, 0] = v
    istar = int(np.argmax(np.abs(v[:n])))
    if istar != 0:
        A[:, istar] = np.eye(dim)[:, 0]
    # orthonormalize the middle columns against xi, the time axis, and
    # each other (slot order fixed -> deterministic)
    frame = [v, np.eye(dim)[:, n]]
    for j in range(1, n):
        c = A[:, j]
        for f in frame:
            c = c - (f @ c) * f
        nc = np.linalg.norm(c)
        if nc < 1e-10:
            raise GeometryError("basis completion degenerated")
        c /= nc
        frame.append(c)
        A[:, j] = c
    if abs(np.linalg.det(A)) <= 1e-10:
        raise GeometryError("basis change singular")
    return A


def pack_ellipsoid(A, target_fraction, cap=10_000, seed=0):
    """Disjoint scaled translates of the ellipsoid A^{-t} B_1 inside B_1.

    Works in pre-transform coordinates where the pieces are balls inside the
    ellipsoid A^t B_1; greedy placement over a low-discrepancy candidate
    stream with a halving radius schedule.  Returns (pieces, fraction) with
    pieces given as (local center, scale) and fraction the covered share of
    the unit ball.
    """
    dim = A.shape[0]
    Ut, axes, _ = np.linalg.svd(A.T)
    det = float(np.prod(axes))
    a_min = float(axes.min())
    inv_map = Ut * (1.0 / axes)[None, :]  # x -> Sigma^-1 U^t x, ellipsoid norm

    centers, radii = [], []
    volume = 0.0

    def try_accept(c, rho):
        nonlocal volume
        e_norm = float(np.linalg.norm(inv_map.T @ c))
        allow = (1.0 - e_norm) * a_min
        for cj, rj in zip(centers, radii):
            allow = min(allow, float(np.linalg.norm(c - cj)) - rj)
            if allow < rho:
                return False
        if allow < rho:
            return False
        centers.append(c)
        radii.append(rho)
        volume += rho**dim
        return True

    n_cand = 128
    for octave in range(9):
        rho = a_min * (1.0 - 1e-12) / 2.0**octave
        if octave == 0:
            try_accept(np.zeros(dim), rho)
        cand = lowdisc.unit_ball(n_cand, dim, seed=seed + octave) @ (Ut * axes[None, :]).T
        for c in cand:
            if volume / det >= target_fraction or len(centers) >= cap:
                break
            try_accept(c, rho)
        if volume / det >= target_fraction or len(centers) >= cap:
            break
        n_cand = min(4 * n_cand, 32768)

    fraction = volume / det
    AinvT = np.linalg.inv(A.T)
    pieces = [(AinvT @ c, r) for c, r in zip(centers, radii)]
    return pieces, float(fraction)


# ---------------------------------------------------------------------------
# Building blocks.
# ---------------------------------------------------------------------------


@dataclass
class BuildingBlock:
    """One localized plane wave, anchored in global space-time coordinates.

    The field is the sum over the cover of rescaled transformed copies of
    the aligned potential field; it vanishes identically outside the anchor
    ball and oscillates along the certificate direction with the stored
    amplitude in every interior slice.
    """

    amplitude: State
    certificate: object
    basis: np.ndarray
    frequency: int
    delta: float
    cover: list
    anchor: tuple
    cover_fraction: float
    delta_measured: float
    _U: np.ndarray = field(init=False, repr=False)
    _X: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        W = pack_state(self.amplitude)
        U, X = split_blocks(W)
        At = self.basis.T
        Uh, Xh = At @ U @ self.basis, At @ X @ self.basis
        Uh[0, :] = 0.0
        Uh[:, 0] = 0.0
        Xh[0, :] = 0.0
        Xh[:, 0] = 0.0
        object.__setattr__(self, "_U", Uh)
        object.__setattr__(self, "_X", Xh)

    @property
    def n(self):
        return self.amplitude.n

    def bounding_box(self):
        c, r = self.anchor
        return np.asarray(c, float) - r, np.asarray(c, float) + r

    def evaluate_packed(self, Y):
        """Packed field values at the rows of Y: (P, 2n+2, n+1), public
        block convention.  Exactly zero outside the anchor ball."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        n = self.n
        P = Y.shape[0]
        out = np.zeros((P, 2 * n + 2, n + 1))
        c0, r0 = self.anchor
        loc = (Y - np.asarray(c0, float)[None, :]) / r0
        inside = np.einsum("pi,pi->p", loc, loc) < 1.0
        if not inside.any():
            return out
        loc_in = loc[inside]
        K = loc_in.shape[0]
        accU = np.zeros((K, n + 1, n + 1))
        accX = np.zeros((K, n + 1, n + 1))
        A = self.basis
        AinvT = np.linalg.inv(A.T)
        Ainv = np.linalg.inv(A)
        for center, scale in self.cover:
            x = (loc_in - center[None, :]) / scale
            w = x @ A  # aligned coordinates A^t x
            mask = np.einsum("pi,pi->p", w, w) < 1.0
            if not mask.any():
                continue
            tU, tX = _field_tilde(self._U, self._X, self.frequency, w[mask])
            accU[mask] += np.matmul(np.matmul(AinvT, tU), Ainv)
            accX[mask] += np.matmul(np.matmul(AinvT, tX), Ainv)
        accX[:, n, :] *= -1.0  # back to the public lower-block convention
        block_vals = np.concatenate([accU, accX], axis=1)
        out[inside] = block_vals
        return out

    def evaluate_components(self, Y):
        """Component fields (u, b, M, Q, q) at the rows of Y."""
        return unpack_packed_values(self.evaluate_packed(Y), self.n)


def unpack_packed_values(W, n):
    """Vectorized split of packed values into state components."""
    upper = W[..., : n + 1, :]
    lower = W[..., n + 1 :, :]
    u = upper[..., :n, n]
    b = lower[..., :n, n]
    q = np.trace(upper[..., :n, :n], axis1=-2, axis2=-1) / n
    M = upper[..., :n, :n] - q[..., None, None] * np.eye(n)
    Q = lower[..., :n, :n]
    return {"u": u, "b": b, "M": M, "Q": Q, "q": q}


def segment_distance(values, Wbar):
    """Distance of packed values to the segment {t * Wbar, |t| <= 1}."""
    flatW = Wbar.reshape(-1)
    denom = float(flatW @ flatW)
    flat = values.reshape(values.shape[0], -1)
    if denom == 0.0:
        return np.linalg.norm(flat, axis=1)
    t = np.clip(flat @ flatW / denom, -1.0, 1.0)
    return np.linalg.norm(flat - t[:, None] * flatW[None, :], axis=1)


def _certify_delta(block, samples, seed):
    """Sampled sup-distance of the block field to its amplitude segment."""
    c0, r0 = block.anchor
    pts = np.asarray(c0, float)[None, :] + r0 * lowdisc.unit_ball(
        samples, block.n + 1, seed=seed
    )
    vals = block.evaluate_packed(pts)
    Wbar = pack_state(block.amplitude).entries
    return float(segment_distance(vals, Wbar).max())


def build_block(
    seg,
    delta,
    m,
    anchor,
    *,
    min_cover_fraction=0.5,
    allow_partial_cover=False,
    cert_samples=100_000,
    max_pieces=10_000,
    max_frequency=2**20,
    seed=0,
):
    """Construct the localized plane wave for a cone segment.

    The frequency is the smallest power of two whose sampled sup-distance to
    the amplitude segment stays below delta; the cover is packed greedily
    until it holds min_cover_fraction of the unit ball (raising
    CoveringError unless allow_partial_cover, in which case the achieved
    fraction is recorded and used downstream).
    """
    direction = seg.direction
    ub = seg.ub_norm()
    if ub <= 1e-14:
        raise DegenerateInput("direction has zero (u, b) part: the temporal column vanishes")
    if delta <= 0.0:
        raise ValueError(f"need delta > 0, got {delta}")
    c0, r0 = anchor
    c0 = np.asarray(c0, dtype=float)
    if r0 <= 0.0:
        raise ValueError(f"need a positive anchor radius, got {r0}")
    if m < 2.0:
        raise ValueError(f"need m >= 2, got {m}")

    A = basis_change(seg.certificate)
    pieces, fraction = pack_ellipsoid(A, min_cover_fraction, cap=max_pieces, seed=seed)
    if fraction < min_cover_fraction and not allow_partial_cover:
        raise CoveringError(fraction, min_cover_fraction, len(pieces))

    amp = State(direction, 0.0)
    norm_w = float(np.linalg.norm(pack_state(amp).entries))
    kappa = np.linalg.cond(A)
    guess = 4.0 * (PSI_C2 + 2.0 * PSI_C1) * kappa**2 * norm_w / delta
    N = int(2 ** max(1, int(np.ceil(np.log2(max(2.0, guess))))))
    N = min(N, max_frequency)

    def make(Nval):
        return BuildingBlock(
            amplitude=amp,
            certificate=seg.certificate,
            basis=A,
            frequency=Nval,
            delta=delta,
            cover=pieces,
            anchor=(c0, float(r0)),
            cover_fraction=fraction,
            delta_measured=np.nan,
        )

    measured = _certify_delta(make(N), cert_samples, seed)
    if measured < delta:
        while N > 2:
            lower = _certify_delta(make(N // 2), cert_samples, seed)
            if lower < delta:
                N //= 2
                measured = lower
            else:
                break
    else:
        while measured >= delta and N < max_frequency:
            N *= 2
            measured = _certify_delta(make(N), cert_samples, seed)
        if measured >= delta:
            raise GeometryError(
                f"could not certify the segment distance below {delta:.3e} "
                f"(reached {measured:.3e} at N={N})"
            )
    block = make(N)
    block.delta_measured = measured
    return block


def block_metrics(blk, m, grid, seed=0):
    """Temporal-column mass of the block relative to its amplitude.

    mass_ratio = (ball average of |W(y) e_{n+1}|^m) / |Wbar e_{n+1}|^m,
    computed with a stratified low-discrepancy rule (one sample per lattice
    cell, offset quasi-randomly so the block frequency cannot alias the
    quadrature).  alpha_est discounts the ratio by the sampling error and is
    asserted positive.
    """
    ppa = int(getattr(grid, "points_per_axis", grid))
    dim = blk.n + 1
    c0, r0 = blk.anchor
    axes = [np.linspace(-r0, r0, ppa, endpoint=False) + r0 / ppa for _ in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.reshape(-1) for g in mesh], axis=1)
    offsets = (lowdisc.unit_cube(pts.shape[0], dim, seed=seed) - 0.5) * (2.0 * r0 / ppa)
    pts = pts + offsets + np.asarray(c0, float)[None, :]
    inside = np.linalg.norm(pts - np.asarray(c0, float)[None, :], axis=1) <= r0
    pts = pts[inside]

    Wbar = pack_state(blk.amplitude).entries
    ref = float(np.linalg.norm(Wbar[:, -1])) ** m
    if ref == 0.0:
        raise DegenerateInput("amplitude has zero temporal column")
    vals = np.empty(pts.shape[0])
    chunk = 200_000
    for lo in range(0, pts.shape[0], chunk):
        W = blk.evaluate_packed(pts[lo : lo + chunk])
        vals[lo : lo + chunk] = np.linalg.norm(W[:, :, -1], axis=1) ** m
    mass_ratio = float(vals.mean()) / ref
    rel_err = 3.0 / np.sqrt(max(1, len(vals)))
    alpha_est = mass_ratio * (1.0 - rel_err)
    if not mass_ratio >= alpha_est > 0.0:
        raise GeometryError(
            f"mass ratio {mass_ratio:.3e} failed its lower-bound certificate"
        )
    return mass_ratio, alpha_est
