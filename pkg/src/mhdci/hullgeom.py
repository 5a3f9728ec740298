"""Constraint-set geometry: finite atom libraries, hull membership with
margins, Caratheodory decomposition, and sphere-moment estimates.

The continuum constraint set (all unit pairs with their tensor stresses) is
replaced by a finite, deterministically generated atom library; convex-hull
questions about it become small dense LPs.  Every interiority claim is
therefore relative to the sampled hull and is certified with an explicit
margin.
"""

from dataclasses import dataclass, field

import numpy as np

from . import lowdisc
from .algebra import (
    ConstraintAtom,
    constraint_atom,
    reduced_coords,
    reduced_dim,
)
from .errors import NumericalDegeneracy, OutsideHull
from .lp import Infeasible, feasible_combination

INTERIOR_TOL = 1e-10
RECON_TOL = 1e-9


def atom_budget(n):
    """Caratheodory atom budget: one more than the reduced-space dimension."""
    return n * (n + 2)


@dataclass
class AtomLibrary:
    """Finite surrogate for the constraint set.

    Atoms are generated in symmetry orbits of size eight,
    (+-u, +-b) and the (u, b) swap, so the library is exactly centered:
    its mean reduced state is zero by construction.
    """

    atoms: list
    seed: int
    count: int
    coords: np.ndarray = field(init=False, repr=False)
    _interior_ball: float = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.coords = np.stack([reduced_coords(a) for a in self.atoms])

    @property
    def n(self):
        return self.atoms[0].n

    def columns(self):
        """(dim, K) matrix of atom coordinates, the LP column pool."""
        return self.coords.T


def build_atom_library(n, count, seed):
    """Deterministic library of `count` constraint atoms.

    Requires count >= 4 n (n+2) so decompositions have room to move.
    """
    minimum = 4 * atom_budget(n)
    if count < minimum:
        raise ValueError(f"count={count} too small, need at least {minimum}")
    pairs = (count + 7) // 8
    pts = lowdisc.unit_sphere(2 * pairs, 2 * n, seed=seed)
    atoms = []
    for k in range(pairs):
        raw_u = pts[2 * k, :n] + pts[2 * k, n:]
        raw_b = pts[2 * k + 1, :n] + pts[2 * k + 1, n:]
        u = raw_u / np.linalg.norm(raw_u)
        b = raw_b / np.linalg.norm(raw_b)
        for su in (1.0, -1.0):
            for sb in (1.0, -1.0):
                atoms.append(ConstraintAtom(su * u, sb * b))
        for su in (1.0, -1.0):
            for sb in (1.0, -1.0):
                atoms.append(ConstraintAtom(su * b, sb * u))
    return AtomLibrary(atoms=atoms[:count], seed=seed, count=count)


@dataclass
class CaratheodoryDecomp:
    """Convex weights over constraint atoms representing a hull point."""

    weights: np.ndarray
    atoms: list
    reconstruction_error: float

    def reconstruct(self):
        out = self.weights[0] * self.atoms[0].as_reduced_state()
        for w, a in zip(self.weights[1:], self.atoms[1:]):
            out = out + w * a.as_reduced_state()
        return out


def caratheodory_reduce(weights, coords, target_count):
    """Prune a convex combination to at most target_count atoms.

    Repeatedly removes one atom along an affine dependence among the active
    columns while keeping all weights nonnegative; the represented point and
    the weight sum are invariant.
    """
    weights = np.array(weights, dtype=float)
    active = list(np.where(weights > 0.0)[0])
    while len(active) > target_count:
        B = np.vstack([coords[active].T, np.ones(len(active))])
        _, sv, vt = np.linalg.svd(B)
        smallest = min(sv) if B.shape[0] >= B.shape[1] else 0.0
        if B.shape[0] >= B.shape[1] and smallest > 1e-9:
            raise NumericalDegeneracy(
                f"no affine dependence among {len(active)} atoms (sigma_min={smallest:.2e})"
            )
        mu = vt[-1]
        if np.abs(mu).max() < 1e-12:
            raise NumericalDegeneracy("degenerate dependence vector")
        if mu[np.abs(mu).argmax()] < 0:
            mu = -mu
        steps = [(weights[a] / mu[i], i) for i, a in enumerate(active) if mu[i] > 1e-14]
        if not steps:
            raise NumericalDegeneracy("dependence vector has no positive component")
        t, drop_i = min(steps)
        for i, a in enumerate(active):
            weights[a] -= t * mu[i]
        weights[active[drop_i]] = 0.0
        active = [a for a in active if weights[a] > 0.0]
    total = weights.sum()
    if abs(total - 1.0) > 1e-9:
        raise NumericalDegeneracy(f"weight sum drifted to {total}")
    weights /= total
    return weights


def decompose(zr, lib):
    """Represent a reduced state as a convex combination of library atoms.

    Solves the LP feasibility problem, then applies Caratheodory reduction
    until at most n(n+2) atoms carry weight.  Raises OutsideHull (with the
    phase-1 separation value) when the point is not in the sampled hull.
    """
    target = reduced_coords(zr)
    try:
        res = feasible_combination(lib.columns(), target)
    except Infeasible as exc:
        raise OutsideHull(exc.violation, dual=exc.dual) from exc
    weights = caratheodory_reduce(res.x, lib.coords, atom_budget(lib.n))
    idx = np.where(weights > 0.0)[0]
    atoms = [lib.atoms[i] for i in idx]
    w = weights[idx]
    recon = lib.coords[idx].T @ w
    err = float(np.abs(recon - target).max())
    if err > RECON_TOL:
        raise NumericalDegeneracy(f"reconstruction error {err:.2e} above budget")
    return CaratheodoryDecomp(weights=w, atoms=atoms, reconstruction_error=err)


def probe_directions(n):
    """Signed coordinate probes of the reduced-state space (2 dim of them)."""
    D = reduced_dim(n)
    eye = np.eye(D)
    return np.vstack([eye, -eye])


def _max_step(lib, base, direction):
    """Largest rho >= 0 with base + rho*direction inside the sampled hull."""
    K = lib.count
    try:
        res = feasible_combination(
            lib.columns(), base, extra_cols=-direction[:, None], maximize_col=K
        )
    except Infeasible:
        return 0.0
    return float(res.x[K])


def hull_margin(zr, lib):
    """Largest rho such that every signed coordinate probe of radius rho
    stays LP-feasible; 0 when the point itself is outside the hull."""
    base = reduced_coords(zr)
    margin = np.inf
    for d in probe_directions(lib.n):
        rho = _max_step(lib, base, d)
        margin = min(margin, rho)
        if margin <= 0.0:
            return 0.0
    return float(margin)


def radial_gauge(zr, lib):
    """Largest lambda with lambda * zr inside the hull (inf for zr = 0).

    A single LP; lambda > 1 certifies interiority of zr relative to the
    segment toward 0 and feeds the Euclidean margin bound below.
    """
    base = reduced_coords(zr)
    scale = float(np.linalg.norm(base))
    if scale < 1e-14:
        return np.inf
    K = lib.count
    try:
        res = feasible_combination(
            lib.columns(), np.zeros_like(base), extra_cols=-base[:, None], maximize_col=K
        )
    except Infeasible:
        return 0.0
    return float(res.x[K])


def interior_ball_radius(lib):
    """Radius of a Euclidean ball around 0 certified inside the hull.

    The probe margin rho0 at the origin gives a cross-polytope inside the
    hull; its inscribed ball has radius rho0 / sqrt(dim).  Cached per
    library (the probe sweep costs ~2 dim LPs).
    """
    if lib._interior_ball is None:
        from .algebra import ReducedState

        rho0 = hull_margin(ReducedState.zero(lib.n), lib)
        lib._interior_ball = rho0 / np.sqrt(reduced_dim(lib.n))
    return lib._interior_ball


def euclidean_margin(zr, lib):
    """Certified lower bound on the Euclidean distance from zr to the hull
    boundary: convex combination of the radial certificate at zr and the
    interior ball at the origin."""
    lam = radial_gauge(zr, lib)
    R0 = interior_ball_radius(lib)
    if not np.isfinite(lam):
        return R0
    if lam <= 1.0:
        return 0.0
    return (1.0 - 1.0 / lam) * R0


def in_relaxed_set(z, lib):
    """Membership in the open relaxed set: interior hull margin for the
    reduced part and |q| < 1 for the pressure."""
    if abs(z.q) >= 1.0:
        return False
    return hull_margin(z.reduced, lib) > INTERIOR_TOL


@dataclass(frozen=True)
class SphereMoments:
    gamma1: float
    gamma2: float
    gamma3: float
    se1: float
    se2: float
    se3: float
    samples: int

    def as_dict(self):
        return {
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "gamma3": self.gamma3,
            "se1": self.se1,
            "se2": self.se2,
            "se3": self.se3,
            "samples": self.samples,
        }


def exact_moments(n):
    """Closed-form sphere moments used as the reference in tests:
    E[u1^2], E[u1^2 u2^2], Var-type E[(u1^2 - 1/n)^2]."""
    g1 = 1.0 / n
    g2 = 1.0 / (n * (n + 2))
    g3 = 3.0 / (n * (n + 2)) - 1.0 / n**2
    return g1, g2, g3


def sphere_moments(n, samples, seed):
    """Quasi-Monte-Carlo estimates of the three quadratic sphere moments,
    with per-moment standard errors."""
    if samples < 10_000:
        raise ValueError(f"need at least 10^4 samples, got {samples}")
    pts = lowdisc.unit_sphere(samples, n, seed=seed)
    f1 = pts[:, 0] ** 2
    f2 = pts[:, 0] ** 2 * pts[:, 1] ** 2
    f3 = (pts[:, 0] ** 2 - 1.0 / n) ** 2
    ests, ses = [], []
    for f in (f1, f2, f3):
        ests.append(float(f.mean()))
        ses.append(float(f.std(ddof=1) / np.sqrt(samples)))
    return SphereMoments(ests[0], ests[1], ests[2], ses[0], ses[1], ses[2], samples)


def t_image_rows(lib):
    """Images of the four moment-test families under the discretized
    averaging map: rows are library averages of phi(u,b) * atom."""
    n = lib.n
    U = np.stack([a.u for a in lib.atoms])
    B = np.stack([a.b for a in lib.atoms])
    C = lib.coords
    rows = []

    def push(phi):
        rows.append(phi @ C / len(lib.atoms))

    for i in range(n):
        push(U[:, i])
    for i in range(n):
        push(B[:, i])
    for i in range(n):
        for j in range(i + 1, n):
            push(U[:, i] * U[:, j])
            push(-B[:, i] * B[:, j])
    for i in range(n):
        push(U[:, i] ** 2 - 1.0 / n)
        push(-(B[:, i] ** 2) + 1.0 / n)
    for i in range(n):
        for j in range(i + 1, n):
            push(U[:, i] * B[:, j])
    return np.stack(rows)


def t_image_rank(lib, tol=1e-8):
    """Joint rank of the four family images (full rank = reduced dim)."""
    sv = np.linalg.svd(t_image_rows(lib), compute_uv=False)
    return int((sv > tol).sum())
