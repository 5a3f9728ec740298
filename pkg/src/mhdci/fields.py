"""Grid sampling of analytic fields, quadrature, mollification, and
finite-difference divergence residuals.

Fields live on cell-centered lattices over an axis-aligned box in space-time;
the box always contains the working domain with a margin at least as large as
the widest mollifier, so zero-padded convolutions are exact and compact
supports are preserved.  States are stored channel-wise (u, b, M, Q, q
flattened along the last axis).
"""

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import ConfigError, PlacementError, UnresolvedKernel
from .lowdisc import ball_volume
from .runtime import get_threads
from .waves import bump_profile

MEMORY_GUARD_BYTES = 6 * 2**30


@dataclass(frozen=True)
class Domain:
    """Bounded working domain: a ball or a box, centered at the origin."""

    kind: str = "ball"
    size: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ConfigError(f"unknown domain kind {self.kind!r}")
        if self.size <= 0.0:
            raise ConfigError(f"domain size must be positive, got {self.size}")

    def volume(self, dim):
        if self.kind == "ball":
            return ball_volume(dim, self.size)
        return (2.0 * self.size) ** dim

    def volume_estimate(self, dim, samples=1_000_000, seed=0):
        """Deterministic quasi-Monte-Carlo volume estimate (cross-check)."""
        from .lowdisc import unit_cube

        pts = (unit_cube(samples, dim, seed=seed) - 0.5) * (2.0 * self.size)
        return float(self.contains(pts).mean()) * (2.0 * self.size) ** dim

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        if self.kind == "ball":
            return np.einsum("pi,pi->p", pts, pts) <= self.size**2
        return np.abs(pts).max(axis=1) <= self.size

    def boundary_distance(self, pts):
        """Distance to the boundary from inside (negative outside)."""
        pts = np.atleast_2d(pts)
        if self.kind == "ball":
            return self.size - np.linalg.norm(pts, axis=1)
        return self.size - np.abs(pts).max(axis=1)

    def radius(self):
        """Circumscribed radius."""
        return self.size if self.kind == "ball" else self.size * np.sqrt(5.0)


@dataclass(frozen=True)
class GridSpec:
    """Cell-centered lattice over the cube [lo, hi]^(n+1) in space-time."""

    n: int = 4
    lo: float = -1.25
    hi: float = 1.25
    points_per_axis: int = 24

    def __post_init__(self):
        if self.points_per_axis < 8:
            raise ConfigError(
                f"points_per_axis={self.points_per_axis} below the minimum of 8"
            )
        if self.hi <= self.lo:
            raise ConfigError("empty grid box")
        dim = self.n + 1
        est = self.points_per_axis**dim * self.channels * 8
        if est > MEMORY_GUARD_BYTES:
            raise ConfigError(
                f"grid would need {est / 2**30:.1f} GiB (guard at "
                f"{MEMORY_GUARD_BYTES / 2**30:.0f} GiB); lower the resolution or n"
            )

    @property
    def dim(self):
        return self.n + 1

    @property
    def h(self):
        return (self.hi - self.lo) / self.points_per_axis

    @property
    def channels(self):
        return 2 * self.n + 2 * self.n**2 + 1

    def axis(self):
        k = np.arange(self.points_per_axis)
        return self.lo + (k + 0.5) * self.h

    def shape(self):
        return (self.points_per_axis,) * self.dim

    def points(self):
        """All lattice points, flattened to (P, n+1)."""
        mesh = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def margin_for(self, omega):
        """Gap between the domain's circumscribed ball and the box."""
        return min(-self.lo, self.hi) - omega.radius()


def grid_for_domain(omega, points_per_axis, margin, n=4):
    """Grid box holding the domain plus a margin (mollifier headroom)."""
    half = omega.radius() + margin
    return GridSpec(n=n, lo=-half, hi=half, points_per_axis=points_per_axis)


def channel_slices(n):
    """Layout of the state channels along the last array axis."""
    return {
        "u": slice(0, n),
        "b": slice(n, 2 * n),
        "M": slice(2 * n, 2 * n + n * n),
        "Q": slice(2 * n + n * n, 2 * n + 2 * n * n),
        "q": slice(2 * n + 2 * n * n, 2 * n + 2 * n * n + 1),
    }


@dataclass
class FieldGrid:
    """Sampled state field: lattice shape + channel axis."""

    spec: GridSpec
    values: np.ndarray
    provenance: tuple = ()

    def channel(self, name):
        return self.values[..., channel_slices(self.spec.n)[name]]

    def M_entry(self, i, j):
        n = self.spec.n
        return self.values[..., 2 * n + i * n + j]

    def Q_entry(self, i, j):
        n = self.spec.n
        return self.values[..., 2 * n + n * n + i * n + j]

    def copy(self):
        return FieldGrid(self.spec, self.values.copy(), self.provenance)

    def __add__(self, other):
        if other.spec != self.spec:
            raise ConfigError("grids live on different lattices")
        return FieldGrid(self.spec, self.values + other.values,
                         self.provenance + other.provenance)

    @staticmethod
    def zero(spec):
        return FieldGrid(spec, np.zeros(spec.shape() + (spec.channels,)))


def pack_channels(comp, n):
    """Stack per-point component dict into the channel layout."""
    lead = comp["u"].shape[:-1]
    out = np.empty(lead + (2 * n + 2 * n * n + 1,))
    sl = channel_slices(n)
    out[..., sl["u"]] = comp["u"]
    out[..., sl["b"]] = comp["b"]
    out[..., sl["M"]] = comp["M"].reshape(lead + (n * n,))
    out[..., sl["Q"]] = comp["Q"].reshape(lead + (n * n,))
    out[..., sl["q"]] = comp["q"][..., None]
    return out


def sample_field(blocks, spec):
    """Pointwise sum of block evaluations on the lattice.

    Each block is evaluated only on the sub-lattice window meeting its
    anchor ball; anchors must sit inside the grid box.
    """
    grid = FieldGrid.zero(spec)
    axis = spec.axis()
    names = []
    for blk in blocks:
        c0, r0 = blk.anchor
        c0 = np.asarray(c0, dtype=float)
        if (c0 - r0 < spec.lo).any() or (c0 + r0 > spec.hi).any():
            raise PlacementError(
                f"anchor at {c0} radius {r0} escapes the grid box "
                f"[{spec.lo}, {spec.hi}]"
            )
        windows = []
        for d in range(spec.dim):
            idx = np.where(np.abs(axis - c0[d]) <= r0 + spec.h)[0]
            windows.append((idx[0], idx[-1] + 1) if len(idx) else (0, 0))
        if any(b - a <= 0 for a, b in windows):
            continue
        mesh = np.meshgrid(*[axis[a:b] for a, b in windows], indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        comp = blk.evaluate_components(pts)
        vals = pack_channels(comp, spec.n).reshape(mesh[0].shape + (spec.channels,))
        region = tuple(slice(a, b) for a, b in windows)
        grid.values[region] += vals
        names.append(id(blk))
    grid.provenance = tuple(names)
    return grid


def domain_mask(spec, omega):
    pts = spec.points()
    return omega.contains(pts).reshape(spec.shape())


def lm_norm(g, m, component="all", omega=None):
    """Midpoint-rule approximation of the integral of |.|^m over the domain.

    component selects 'u', 'b', or 'all' (the full state vector).  With a
    curved domain the indicator adds an O(h) boundary term to the usual
    O(h^2) budget; values are used comparatively across iterates on one
    fixed lattice.
    """
    if m < 1.0:
        raise ValueError(f"need m >= 1, got {m}")
    spec = g.spec
    if component == "all":
        vals = g.values
    else:
        vals = g.channel(component)
    mag = np.sqrt(np.einsum("...c,...c->...", vals, vals))
    if omega is not None:
        mag = mag * domain_mask(spec, omega)
    return float((mag**m).sum() * spec.h**spec.dim)


def mollifier_kernel(spec, r):
    """Normalized radial bump on the lattice, support radius r."""
    if r < 2.0 * spec.h:
        raise UnresolvedKernel(r, spec.h)
    K = int(np.floor(r / spec.h))
    offs = (np.arange(-K, K + 1)) * spec.h
    mesh = np.meshgrid(*([offs] * spec.dim), indexing="ij")
    rho = np.sqrt(sum(m**2 for m in mesh)) / r
    kern = bump_profile(rho)
    kern[rho >= 1.0] = 0.0
    s = kern.sum()
    if s <= 0.0:
        raise UnresolvedKernel(r, spec.h)
    return kern / s


def mollify(g, r):
    """Convolve every channel with the normalized bump of radius r.

    Fields vanish on the boundary layer (grid margin >= r), so the implicit
    zero padding of the convolution is exact.  All channels go through one
    batched FFT; same inputs give bit-identical outputs.
    """
    kern = mollifier_kernel(g.spec, r)
    dim = g.spec.dim
    axes = tuple(range(dim))
    workers = get_threads()
    K = kern.shape[0] // 2
    P = g.spec.points_per_axis

    # Fields that honor the margin vanish on the boundary band, making the
    # wrap-around convolution at the native grid size exact (and much
    # cheaper than padding).  Fall back to padded transforms otherwise.
    band = np.zeros(g.values.shape[:-1], dtype=bool)
    for a in axes:
        sl = [slice(None)] * dim
        sl[a] = slice(0, K)
        band[tuple(sl)] = True
        sl[a] = slice(P - K, P)
        band[tuple(sl)] = True
    circular_ok = kern.shape[0] <= P and not np.abs(g.values[band]).any()

    if circular_ok:
        fshape = [P] * dim
        kfull = np.zeros(fshape)
        sl = tuple(slice(0, kern.shape[a]) for a in axes)
        kfull[sl] = kern
        kfull = np.roll(kfull, (-K,) * dim, axis=axes)
        FV = sfft.rfftn(g.values, axes=axes, workers=workers)
        FK = sfft.rfftn(kfull, axes=axes, workers=workers)
        conv = sfft.irfftn(FV * FK[..., None], s=fshape, axes=axes, workers=workers)
        return FieldGrid(g.spec, np.ascontiguousarray(conv), g.provenance)

    fshape = [sfft.next_fast_len(g.values.shape[a] + kern.shape[a] - 1) for a in axes]
    FV = sfft.rfftn(g.values, s=fshape, axes=axes, workers=workers)
    FK = sfft.rfftn(kern, s=fshape, axes=axes, workers=workers)
    conv = sfft.irfftn(FV * FK[..., None], s=fshape, axes=axes, workers=workers)
    sl = tuple(
        slice((kern.shape[a] - 1) // 2, (kern.shape[a] - 1) // 2 + g.values.shape[a])
        for a in axes
    )
    return FieldGrid(g.spec, np.ascontiguousarray(conv[sl]), g.provenance)


def _axis_derivative(arr, axis, h):
    """Central difference along a lattice axis, interior values only.

    Output is trimmed by one cell on every lattice axis so all terms of a
    divergence align on the common interior.
    """
    dim_slices = [slice(1, -1)] * arr.ndim
    plus = list(dim_slices)
    minus = list(dim_slices)
    plus[axis] = slice(2, None)
    minus[axis] = slice(None, -2)
    return (arr[tuple(plus)] - arr[tuple(minus)]) / (2.0 * h)


def div_residual(g):
    """Finite-difference space-time divergence of the packed matrix field.

    Returns (max_res, l2_res): the max over interior lattice points and
    rows, and the lattice L2 norm of the row-wise residual.
    """
    spec = g.spec
    n, h = spec.n, spec.h
    t_ax = n  # time is the last lattice axis
    u = g.channel("u")
    b = g.channel("b")
    q = g.channel("q")[..., 0]
    rows = []
    for i in range(n):
        acc = _axis_derivative(g.M_entry(i, i) + q, i, h)
        for j in range(n):
            if j != i:
                acc = acc + _axis_derivative(g.M_entry(i, j), j, h)
        acc = acc + _axis_derivative(u[..., i], t_ax, h)
        rows.append(acc)
    acc = _axis_derivative(u[..., 0], 0, h)
    for j in range(1, n):
        acc = acc + _axis_derivative(u[..., j], j, h)
    rows.append(acc)
    for i in range(n):
        acc = _axis_derivative(Q_row := g.Q_entry(i, 0), 0, h)
        for j in range(1, n):
            acc = acc + _axis_derivative(g.Q_entry(i, j), j, h)
        acc = acc + _axis_derivative(b[..., i], t_ax, h)
        rows.append(acc)
    acc = _axis_derivative(b[..., 0], 0, h)
    for j in range(1, n):
        acc = acc + _axis_derivative(b[..., j], j, h)
    rows.append(acc)
    res = np.stack(rows, axis=-1)
    max_res = float(np.abs(res).max())
    l2_res = float(np.sqrt((res**2).sum() * h**spec.dim))
    return max_res, l2_res


# ---------------------------------------------------------------------------
# Binary dump format: magic "MHDF", version, n, points_per_axis, channel
# count as little-endian u32, then float64 little-endian values in row-major
# lattice order with channels innermost.
# ---------------------------------------------------------------------------

MHDF_MAGIC = b"MHDF"
MHDF_VERSION = 1


def write_mhdf(path, values, n, points_per_axis):
    values = np.ascontiguousarray(values, dtype="<f8")
    channels = values.shape[-1]
    with open(path, "wb") as fh:
        fh.write(MHDF_MAGIC)
        fh.write(struct.pack("<III", MHDF_VERSION, n, points_per_axis))
        fh.write(struct.pack("<I", channels))
        fh.write(values.tobytes())


def read_mhdf(path):
    """Returns (values, n, points_per_axis); values keep the flat lattice
    shape (records, channels)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MHDF_MAGIC:
            raise ConfigError(f"not an MHDF file (magic {magic!r})")
        version, n, ppa = struct.unpack("<III", fh.read(12))
        if version != MHDF_VERSION:
            raise ConfigError(f"unsupported MHDF version {version}")
        (channels,) = struct.unpack("<I", fh.read(4))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(-1, channels), n, ppa


def write_field_grid(path, g):
    flat = g.values.reshape(-1, g.values.shape[-1])
    write_mhdf(path, flat, g.spec.n, g.spec.points_per_axis)
