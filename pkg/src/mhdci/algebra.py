"""State algebra: relaxed states, the stacked matrix embedding, constraint atoms.

The relaxed unknown is z = (u, b, M, Q, q) with M symmetric trace-free and
Q skew.  Packing stacks it into the (2n+2) x (n+1) matrix

    W = [ M + q I_n   u ]
        [ u^t         0 ]
        [ Q           b ]
        [ b^t         0 ]

so that the linear relaxation system is exactly div_y W = 0 in the space-time
variable y = (x, t).  The embedding is a linear isomorphism; pack/unpack are
written so that states whose coordinates live on a dyadic grid round-trip
bit-exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonUnitVector, StructureViolation, UnsupportedDimension

STRUCT_TOL = 1e-12


def _fold_trace(M):
    """Return a copy of M whose sequential-loop trace is exactly 0.0.

    The accumulated trace of the first n-1 diagonal entries is negated into
    the last one; the adjustment is at most the incoming trace residual.
    """
    M = np.array(M, dtype=float)
    n = M.shape[0]
    s = 0.0
    for i in range(n - 1):
        s += M[i, i]
    M[n - 1, n - 1] = -s
    return M


def _loop_trace(M):
    t = 0.0
    for i in range(M.shape[0]):
        t += M[i, i]
    return t


@dataclass(frozen=True)
class ReducedState:
    """(u, b, M, Q) with M in the trace-free symmetric class and Q skew."""

    u: np.ndarray
    b: np.ndarray
    M: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        n = len(self.u)
        if n < 4:
            raise UnsupportedDimension(n)
        scale = max(1.0, float(np.abs(self.M).max(initial=0.0)))
        if np.abs(self.M - self.M.T).max() > STRUCT_TOL * scale:
            raise StructureViolation("M-symmetric", float(np.abs(self.M - self.M.T).max()))
        if abs(_loop_trace(self.M)) > STRUCT_TOL * max(scale, 1.0) * n:
            raise StructureViolation("M-trace", abs(_loop_trace(self.M)))
        qscale = max(1.0, float(np.abs(self.Q).max(initial=0.0)))
        if np.abs(self.Q + self.Q.T).max() > STRUCT_TOL * qscale:
            raise StructureViolation("Q-skew", float(np.abs(self.Q + self.Q.T).max()))
        # store exact-symmetric / exact-skew / exact-traceless representatives
        object.__setattr__(self, "u", np.array(self.u, dtype=float))
        object.__setattr__(self, "b", np.array(self.b, dtype=float))
        object.__setattr__(self, "M", _fold_trace((self.M + self.M.T) / 2.0))
        object.__setattr__(self, "Q", (self.Q - self.Q.T) / 2.0)

    @property
    def n(self):
        return len(self.u)

    def __add__(self, other):
        return ReducedState(self.u + other.u, self.b + other.b,
                            self.M + other.M, self.Q + other.Q)

    def __sub__(self, other):
        return ReducedState(self.u - other.u, self.b - other.b,
                            self.M - other.M, self.Q - other.Q)

    def __rmul__(self, a):
        return ReducedState(a * self.u, a * self.b, a * self.M, a * self.Q)

    def norm(self):
        """Frobenius-compatible Euclidean norm of all components."""
        return float(np.sqrt(self.u @ self.u + self.b @ self.b
                             + (self.M * self.M).sum() + (self.Q * self.Q).sum()))

    @staticmethod
    def zero(n):
        z = np.zeros(n)
        return ReducedState(z, z.copy(), np.zeros((n, n)), np.zeros((n, n)))


@dataclass(frozen=True)
class State:
    """Relaxed state: reduced part plus the modified pressure q."""

    reduced: ReducedState
    q: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.q):
            raise ValueError(f"pressure component must be finite, got {self.q}")

    u = property(lambda self: self.reduced.u)
    b = property(lambda self: self.reduced.b)
    M = property(lambda self: self.reduced.M)
    Q = property(lambda self: self.reduced.Q)

    @property
    def n(self):
        return self.reduced.n

    def __add__(self, other):
        return State(self.reduced + other.reduced, self.q + other.q)

    def __sub__(self, other):
        return State(self.reduced - other.reduced, self.q - other.q)

    def __rmul__(self, a):
        return State(a * self.reduced, a * self.q)

    def norm(self):
        return float(np.sqrt(self.reduced.norm() ** 2 + self.q * self.q))

    @staticmethod
    def zero(n):
        return State(ReducedState.zero(n), 0.0)


@dataclass(frozen=True)
class EmbeddedMatrix:
    """The stacked (2n+2) x (n+1) divergence-free object."""

    entries: np.ndarray

    def __post_init__(self):
        rows, cols = self.entries.shape
        if rows != 2 * cols or cols < 5:
            raise StructureViolation("shape", float(rows))
        object.__setattr__(self, "entries", np.array(self.entries, dtype=float))

    @property
    def n(self):
        return self.entries.shape[1] - 1

    @property
    def upper(self):
        """Symmetric block [M + qI, u; u^t, 0]."""
        return self.entries[: self.n + 1]

    @property
    def lower(self):
        """Block [Q, b; b^t, 0] with skew top-left part."""
        return self.entries[self.n + 1 :]

    def validate(self, tol=STRUCT_TOL):
        """Check the block structure, naming the first violated block."""
        n = self.n
        U, V = self.upper, self.lower
        scale = max(1.0, float(np.abs(self.entries).max()))
        if np.abs(U - U.T).max() > tol * scale:
            raise StructureViolation("upper-symmetric", float(np.abs(U - U.T).max()))
        if abs(U[n, n]) > tol * scale:
            raise StructureViolation("upper-corner", abs(float(U[n, n])))
        Q = V[:n, :n]
        if np.abs(Q + Q.T).max() > tol * scale:
            raise StructureViolation("lower-skew", float(np.abs(Q + Q.T).max()))
        if abs(V[n, n]) > tol * scale:
            raise StructureViolation("lower-corner", abs(float(V[n, n])))
        if np.abs(V[:n, n] - V[n, :n]).max() > tol * scale:
            raise StructureViolation("lower-vector", float(np.abs(V[:n, n] - V[n, :n]).max()))
        return self


def pack_state(z):
    """Embed a State into its stacked matrix form (linear isomorphism)."""
    n = z.n
    W = np.zeros((2 * n + 2, n + 1))
    W[:n, :n] = z.M + z.q * np.eye(n)
    W[:n, n] = z.u
    W[n, :n] = z.u
    W[n + 1 : 2 * n + 1, :n] = z.Q
    W[n + 1 : 2 * n + 1, n] = z.b
    W[2 * n + 1, :n] = z.b
    return EmbeddedMatrix(W)


def unpack_state(W, tol=STRUCT_TOL):
    """Invert pack_state; rejects matrices breaking the block structure."""
    W.validate(tol=tol)
    n = W.n
    E = W.entries
    u = E[:n, n].copy()
    b = E[n + 1 : 2 * n + 1, n].copy()
    upper = E[:n, :n]
    q = _loop_trace(upper) / n
    M = upper - q * np.eye(n)
    Q = E[n + 1 : 2 * n + 1, :n].copy()
    return State(ReducedState(u, b, M, Q), q)


def constraint_atom(u, b, tol=STRUCT_TOL):
    """Atom of the pointwise constraint set: unit (u, b) with the exact
    tensor formulas M = u (x) u - b (x) b and Q = b (x) u - u (x) b."""
    u = np.asarray(u, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(u)
    if n < 4:
        raise UnsupportedDimension(n)
    nu, nb = float(np.linalg.norm(u)), float(np.linalg.norm(b))
    if abs(nu - 1.0) > tol:
        raise NonUnitVector("u", nu)
    if abs(nb - 1.0) > tol:
        raise NonUnitVector("b", nb)
    return ConstraintAtom(u=u, b=b)


@dataclass(frozen=True)
class ConstraintAtom:
    """Extreme point of the constraint set, stored by its unit vectors only;
    M and Q are always recomputed from the defining formulas so the
    symmetry/skewness identities cannot drift."""

    u: np.ndarray
    b: np.ndarray
    M: np.ndarray = field(init=False)
    Q: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "M", np.outer(self.u, self.u) - np.outer(self.b, self.b))
        object.__setattr__(self, "Q", np.outer(self.b, self.u) - np.outer(self.u, self.b))

    @property
    def n(self):
        return len(self.u)

    def as_reduced_state(self):
        return ReducedState(self.u, self.b, self.M, self.Q)


def relaxed_vars(u, b, p):
    """Relaxed variables generated by a velocity/field pair and pressure:
    the stress parts are the trace-corrected tensor products and
    q = p + (|u|^2 - |b|^2)/n."""
    u = np.asarray(u, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(u)
    if n < 4:
        raise UnsupportedDimension(n)
    tau = (u @ u - b @ b) / n
    M = np.outer(u, u) - np.outer(b, b) - tau * np.eye(n)
    Q = np.outer(b, u) - np.outer(u, b)
    return State(ReducedState(u, b, M, Q), float(p) + tau)


def power_split_constant(m):
    """The constant 2^m (m-1)^(m-1) in the split-power inequality."""
    if m <= 1.0:
        raise ValueError(f"exponent must exceed 1, got m={m}")
    return 2.0**m * (m - 1.0) ** (m - 1.0)


def power_sum_bound(a, c, eps, m):
    """Split-power estimate (a+c)^m <= (1+eps) a^m + C(m) eps^(1-m) c^m.

    Returns (bound, holds) where bound is the right-hand side and holds
    reports whether the inequality is satisfied for these inputs.
    """
    if a < 0.0 or c < 0.0:
        raise ValueError(f"need a, c >= 0, got a={a}, c={c}")
    if not (0.0 < eps < 1.0):
        raise ValueError(f"need 0 < eps < 1, got eps={eps}")
    if m <= 1.0:
        raise ValueError(f"need m > 1, got m={m}")
    bound = (1.0 + eps) * a**m + power_split_constant(m) * eps ** (1.0 - m) * c**m
    return bound, (a + c) ** m <= bound


# ---------------------------------------------------------------------------
# Orthonormal coordinates on the reduced-state space.
#
# Used by the hull geometry: the coordinate map is an isometry, so Euclidean
# norms of coordinate vectors equal the natural Frobenius norm of states.
# ---------------------------------------------------------------------------

def reduced_dim(n):
    """Dimension of the reduced-state space (u, b, M, Q)."""
    return 2 * n + (n * (n + 1)) // 2 - 1 + (n * (n - 1)) // 2


def state_dim(n):
    """Dimension with the pressure coordinate included."""
    return reduced_dim(n) + 1


def reduced_coords(zr):
    """Isometric coordinates of a reduced state (or constraint atom)."""
    n = len(zr.u)
    parts = [zr.u, zr.b]
    iu = np.triu_indices(n, k=1)
    s = np.sqrt(2.0)
    parts.append(s * zr.M[iu])
    d = np.diagonal(zr.M)
    diag = np.empty(n - 1)
    for k in range(1, n):
        diag[k - 1] = (d[:k].sum() - k * d[k]) / np.sqrt(k * (k + 1))
    parts.append(diag)
    parts.append(s * zr.Q[iu])
    return np.concatenate(parts)


def reduced_from_coords(vec, n):
    """Inverse of reduced_coords."""
    vec = np.asarray(vec, dtype=float)
    if len(vec) != reduced_dim(n):
        raise ValueError(f"expected {reduced_dim(n)} coordinates, got {len(vec)}")
    u = vec[:n]
    b = vec[n : 2 * n]
    k_off = (n * (n - 1)) // 2
    pos = 2 * n
    iu = np.triu_indices(n, k=1)
    M = np.zeros((n, n))
    M[iu] = vec[pos : pos + k_off] / np.sqrt(2.0)
    M = M + M.T
    pos += k_off
    diag = np.zeros(n)
    for k in range(1, n):
        c = vec[pos + k - 1] / np.sqrt(k * (k + 1))
        diag[:k] += c
        diag[k] -= k * c
    M[np.diag_indices(n)] = diag
    pos += n - 1
    Q = np.zeros((n, n))
    Q[iu] = vec[pos : pos + k_off] / np.sqrt(2.0)
    Q = Q - Q.T
    return ReducedState(u, b, M, Q)


def random_state(n, rng, scale=1.0, dyadic=False):
    """Random valid State, for tests and self-checks.

    With dyadic=True every coordinate is quantized to 2^-26, which makes all
    additions inside pack/unpack exact so round-trips are bit-identical.
    """
    def draw(shape):
        x = rng.uniform(-scale, scale, size=shape)
        if dyadic:
            x = np.round(x * 2.0**26) / 2.0**26
        return x

    u, b = draw(n), draw(n)
    M = draw((n, n))
    M = (M + M.T) / 2.0
    M -= np.trace(M) / n * np.eye(n)
    if dyadic:
        M = np.round(M * 2.0**26) / 2.0**26
        M = _fold_trace(M)
    Q = draw((n, n))
    Q = (Q - Q.T) / 2.0
    return State(ReducedState(u, b, _fold_trace(M), Q), float(draw(())))
