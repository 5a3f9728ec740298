"""Energy-growth perturbation step and the convex-integration iteration.

One step covers the domain with disjoint balls, reads the current state at
each center, decomposes it over the atom library, picks a wave-cone segment,
and inserts a localized plane wave scaled so the perturbed states stay
certified inside the relaxed set.  The iteration repeats the step, enforcing
the mollification ladder that converts weak oscillation into strong small
distances, and records every metric needed to audit the energy-growth
recursion.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import lowdisc
from .algebra import State, reduced_coords, reduced_dim, unpack_state, pack_state
from .errors import (
    AtConstraintSet,
    ConfigError,
    CoveringError,
    GeometryError,
    OutsideHull,
    SchemeError,
)
from .fields import Domain, FieldGrid, GridSpec, domain_mask, grid_for_domain, lm_norm, mollify, sample_field
from .hullgeom import (
    build_atom_library,
    decompose,
    euclidean_margin,
    interior_ball_radius,
    radial_gauge,
)
from .waves import build_block, unpack_packed_values
from .wavecone import ConeSegment, segment_from_decomposition


# ---------------------------------------------------------------------------
# Relaxed solutions as analytic block sums.
# ---------------------------------------------------------------------------


@dataclass
class RelaxedSolution:
    """Analytic relaxed solution: the zero base plus a list of blocks.

    margin_bound caches certified per-lattice-point lower bounds for the
    Euclidean distance of the reduced state to the hull boundary; it is
    carried across steps so untouched points keep their certificate.
    """

    blocks: list
    omega: Domain
    generation: int = 0
    margin_bound: np.ndarray = None
    grid_spec: GridSpec = None

    def evaluate_packed(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        n = self.blocks[0].n if self.blocks else 4
        out = np.zeros((Y.shape[0], 2 * n + 2, n + 1))
        for blk in self.blocks:
            out += blk.evaluate_packed(Y)
        return out

    def state_at(self, y):
        n = self.blocks[0].n if self.blocks else 4
        W = self.evaluate_packed(np.asarray(y, float)[None, :])[0]
        comp = unpack_packed_values(W[None], n)
        from .algebra import ReducedState

        return State(
            ReducedState(comp["u"][0], comp["b"][0], comp["M"][0], comp["Q"][0]),
            float(comp["q"][0]),
        )

    def sample(self, spec):
        return sample_field(self.blocks, spec)


@dataclass
class StepParams:
    """Tunables of one perturbation step."""

    grid: GridSpec
    kappa: float = 0.12
    sigma_budget: float = 0.9
    delta: float = 0.05          # segment-distance budget, fraction of local margin
    seed: int = 0
    max_balls: int = 320
    cert_samples: int = 4096
    amp_fraction: float = 0.5    # direction length, fraction of local margin
    freq_boost: int = 1
    max_pieces: int = 512

    def __post_init__(self):
        if not (0.0 < self.kappa < 1.0) or not (0.0 < self.sigma_budget < 1.0):
            raise ConfigError("need 0 < kappa, sigma_budget < 1")
        if not (0.0 < self.delta < 1.0) or not (0.0 < self.amp_fraction < 1.0):
            raise ConfigError("need 0 < delta, amp_fraction < 1")


@dataclass
class StepReport:
    energy_before: float
    energy_after: float
    gap_before: float
    gap_after: float
    beta_measured: float
    balls_used: int
    balls_skipped: int
    min_margin: float
    saturated: bool
    cover_fractions: list
    frequencies: list
    moll_distances: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def vitali_cover(omega, kappa, sigma_budget, seed, cap=10_000, dim=5):
    """Disjoint balls of radius below kappa inside the domain, leaving an
    uncovered volume fraction below sigma_budget.

    Deterministic multiscale greedy: candidate centers stream from the
    low-discrepancy sequence, radii halve per sweep.  Because the balls are
    disjoint and inside the domain, the uncovered fraction is exact:
    1 - sum of ball volumes / domain volume.  Raises CoveringError with the
    achieved fraction when the budget is unreachable under the cap.
    """
    if not (0.0 < kappa) or not (0.0 < sigma_budget < 1.0):
        raise ConfigError("need kappa > 0 and 0 < sigma_budget < 1")
    vol_omega = omega.volume(dim)
    centers, radii = [], []
    covered = 0.0

    def try_accept(c, rho):
        nonlocal covered
        allow = float(omega.boundary_distance(c[None, :])[0])
        for cj, rj in zip(centers, radii):
            allow = min(allow, float(np.linalg.norm(c - cj)) - rj)
            if allow < rho:
                return False
        if allow < rho:
            return False
        centers.append(c)
        radii.append(rho)
        covered += lowdisc.ball_volume(dim, rho)
        return True

    half = omega.radius()
    n_cand = 256
    rho0 = min(kappa * (1.0 - 1e-9), half * (1.0 - 1e-9))
    done = lambda: 1.0 - covered / vol_omega < sigma_budget
    for octave in range(8):
        rho = rho0 / 2.0**octave
        if octave == 0:
            try_accept(np.zeros(dim), rho)
        cand = (lowdisc.unit_cube(n_cand, dim, seed=seed + 17 * octave) - 0.5) * (2 * half)
        inside = omega.boundary_distance(cand) >= rho
        for c in cand[inside]:
            if done() or len(centers) >= cap:
                break
            try_accept(c, rho)
        if done() or len(centers) >= cap:
            break
        n_cand = min(4 * n_cand, 65536)

    uncovered = 1.0 - covered / vol_omega
    if uncovered >= sigma_budget:
        raise CoveringError(1.0 - uncovered, 1.0 - sigma_budget, len(centers))
    return list(zip(centers, radii))


def _coords_from_channels(values, n):
    """Vectorized reduced-state coordinates from channel arrays: (P, D)."""
    comp = unpack_packed_values(values, n) if values.ndim == 3 else None
    if comp is None:
        raise ValueError("expected packed values (P, 2n+2, n+1)")
    P = values.shape[0]
    D = reduced_dim(n)
    out = np.empty((P, D))
    out[:, :n] = comp["u"]
    out[:, n : 2 * n] = comp["b"]
    iu = np.triu_indices(n, k=1)
    k_off = (n * (n - 1)) // 2
    s = np.sqrt(2.0)
    pos = 2 * n
    out[:, pos : pos + k_off] = s * comp["M"][:, iu[0], iu[1]]
    pos += k_off
    d = np.diagonal(comp["M"], axis1=1, axis2=2)
    for k in range(1, n):
        out[:, pos + k - 1] = (d[:, :k].sum(axis=1) - k * d[:, k]) / np.sqrt(k * (k + 1))
    pos += n - 1
    out[:, pos : pos + k_off] = s * comp["Q"][:, iu[0], iu[1]]
    return out


def perturb_step(z, m, lib, params, state_fn=None):
    """One energy-growth pass over a fresh ball cover of the domain.

    Returns (new solution, StepReport).  Balls whose center state offers no
    usable direction (already at the constraint set, or without certified
    interior margin) are skipped and counted; if every ball skips, the
    solution is returned unchanged with the saturation flag set.

    state_fn overrides the pointwise evaluation of z (testing hook).
    """
    spec = params.grid
    n = spec.n
    omega = z.omega
    if spec.margin_for(omega) < 0:
        raise ConfigError("grid box does not contain the domain")
    balls = vitali_cover(omega, params.kappa, params.sigma_budget,
                         params.seed, cap=params.max_balls, dim=spec.dim)
    R0 = interior_ball_radius(lib)
    if R0 <= 0.0:
        raise GeometryError("atom library has no certified interior ball at 0")
    evaluate = state_fn if state_fn is not None else z.state_at

    g_before = z.sample(spec)
    e_before = lm_norm(g_before, m, "u", omega) + lm_norm(g_before, m, "b", omega)
    gap_before = 2.0 * omega.volume(spec.dim) - e_before

    new_blocks = []
    ball_certs = []  # (center, radius, margin, center coords)
    skipped = 0
    fractions, freqs = [], []
    for k, (c, r) in enumerate(balls):
        zc = evaluate(np.asarray(c, float))
        if abs(zc.q) >= 1.0:
            skipped += 1
            continue
        try:
            dec = decompose(zc.reduced, lib)
        except OutsideHull:
            skipped += 1
            continue
        margin = euclidean_margin(zc.reduced, lib)
        if margin <= 0.0:
            skipped += 1
            continue

        def inside_ball_cert(s, _zc=zc, _margin=margin):
            return ((s.reduced - _zc.reduced).norm() < _margin) and abs(s.q) < 1.0

        try:
            seg = segment_from_decomposition(zc, dec, lib, interior_check=inside_ball_cert)
        except AtConstraintSet:
            skipped += 1
            continue
        except GeometryError:
            skipped += 1
            continue
        dir_norm = seg.direction.norm()
        eta = min(1.0, params.amp_fraction * margin / dir_norm)
        seg_scaled = ConeSegment(
            base=zc,
            direction=eta * seg.direction,
            half_length=1.0,
            certificate=seg.certificate,
        )
        delta_ball = params.delta * margin
        try:
            blk = build_block(
                seg_scaled,
                delta_ball,
                m,
                anchor=(np.asarray(c, float), float(r) * 0.999),
                allow_partial_cover=True,
                min_cover_fraction=0.5,
                cert_samples=params.cert_samples,
                max_pieces=params.max_pieces,
                seed=params.seed + 1009 * k,
            )
        except GeometryError:
            skipped += 1
            continue
        if params.freq_boost > 1:
            blk.frequency = int(blk.frequency * params.freq_boost)
        new_blocks.append(blk)
        fractions.append(blk.cover_fraction)
        freqs.append(blk.frequency)
        ball_certs.append((np.asarray(c, float), float(r), margin,
                           reduced_coords(zc.reduced), abs(zc.q)))

    if not new_blocks:
        report = StepReport(
            energy_before=e_before, energy_after=e_before,
            gap_before=gap_before, gap_after=gap_before,
            beta_measured=0.0, balls_used=0, balls_skipped=skipped,
            min_margin=float(np.min(z.margin_bound)) if z.margin_bound is not None else R0,
            saturated=True, cover_fractions=[], frequencies=[],
        )
        return z, report

    z_new = RelaxedSolution(
        blocks=list(z.blocks) + new_blocks,
        omega=omega,
        generation=z.generation + 1,
        grid_spec=spec,
    )
    g_after = z_new.sample(spec)
    e_after = lm_norm(g_after, m, "u", omega) + lm_norm(g_after, m, "b", omega)
    gap_after = 2.0 * omega.volume(spec.dim) - e_after
    beta = (e_after - e_before) / gap_before**m if gap_before > 0 else 0.0

    # certified per-point margins: carry old bounds, refresh inside new balls
    if z.margin_bound is not None and z.grid_spec == spec:
        bound = z.margin_bound.copy()
    else:
        base_coords = _coords_from_channels(_pack_grid(g_before), n)
        bound = (R0 - np.linalg.norm(base_coords, axis=1)).reshape(spec.shape())
    pts = spec.points()
    new_coords = _coords_from_channels(_pack_grid(g_after), n)
    qvals = np.abs(g_after.channel("q")[..., 0]).reshape(-1)
    flat_bound = bound.reshape(-1)
    for c, r, margin, c_coords, _cq in ball_certs:
        sel = np.where(np.linalg.norm(pts - c[None, :], axis=1) <= r)[0]
        if len(sel) == 0:
            continue
        dist = np.linalg.norm(new_coords[sel] - c_coords[None, :], axis=1)
        flat_bound[sel] = margin - dist
    interior = omega.contains(pts) & (np.abs(pts).max(axis=1) < spec.hi - spec.h)
    idx = np.where(interior)[0]
    bad = idx[(flat_bound[idx] <= 0.0)]
    for i in bad:
        # exact LP fallback for points the cheap certificate missed
        from .algebra import reduced_from_coords

        lam = radial_gauge(reduced_from_coords(new_coords[i], n), lib)
        if lam <= 1.0:
            raise SchemeError(
                f"perturbed state left the relaxed set at lattice point {pts[i]}",
                iteration=z_new.generation,
            )
        flat_bound[i] = (1.0 - 1.0 / lam) * R0
    if np.any(qvals[idx] >= 1.0):
        raise SchemeError("pressure left the admissible interval", iteration=z_new.generation)
    z_new.margin_bound = flat_bound.reshape(spec.shape())
    min_margin = float(flat_bound[idx].min()) if len(idx) else float("nan")

    report = StepReport(
        energy_before=e_before,
        energy_after=e_after,
        gap_before=gap_before,
        gap_after=gap_after,
        beta_measured=beta,
        balls_used=len(new_blocks),
        balls_skipped=skipped,
        min_margin=min_margin,
        saturated=False,
        cover_fractions=fractions,
        frequencies=freqs,
    )
    return z_new, report


def _pack_grid(g):
    """Lattice values as packed matrices (P, 2n+2, n+1)."""
    spec = g.spec
    n = spec.n
    P = int(np.prod(spec.shape()))
    vals = g.values.reshape(P, spec.channels)
    W = np.zeros((P, 2 * n + 2, n + 1))
    u = vals[:, :n]
    b = vals[:, n : 2 * n]
    M = vals[:, 2 * n : 2 * n + n * n].reshape(P, n, n)
    Q = vals[:, 2 * n + n * n : 2 * n + 2 * n * n].reshape(P, n, n)
    q = vals[:, -1]
    W[:, :n, :n] = M + q[:, None, None] * np.eye(n)
    W[:, :n, n] = u
    W[:, n, :n] = u
    W[:, n + 1 : 2 * n + 1, :n] = Q
    W[:, n + 1 : 2 * n + 1, n] = b
    W[:, 2 * n + 1, :n] = b
    return W


# ---------------------------------------------------------------------------
# Iteration driver.
# ---------------------------------------------------------------------------


@dataclass
class SchemeConfig:
    """Configuration of the full iteration."""

    J: int = 3
    m: float = 2.0
    n: int = 4
    points_per_axis: int = 16
    omega: Domain = field(default_factory=lambda: Domain("ball", 0.32))
    seed: int = 0
    atom_count: int = 200
    kappa: float = 0.12
    sigma_budget: float = 0.9
    delta: float = 0.05
    amp_fraction: float = 0.5
    max_balls: int = 320
    cert_samples: int = 4096
    r_schedule: tuple = None
    retry_cap: int = 5

    def __post_init__(self):
        if self.J < 1:
            raise ConfigError(f"need at least one iteration, got J={self.J}")
        if self.m < 2.0:
            raise ConfigError(f"need m >= 2, got {self.m}")
        if self.n < 4:
            from .errors import UnsupportedDimension

            raise UnsupportedDimension(self.n)

    def resolve_grid(self):
        """Grid plus mollifier schedule consistent with the ladder caps.

        The flat schedule r_j = 0.95 * 2^-J satisfies every cap r_j < 2^-j;
        the grid margin holds the largest radius and the step must resolve
        the kernel (r >= 2h).
        """
        if self.r_schedule is None:
            r = 0.95 * 2.0 ** (-self.J)
            schedule = (r,) * (self.J + 1)
        else:
            schedule = tuple(self.r_schedule)
            if len(schedule) != self.J + 1:
                raise ConfigError("r_schedule must list J+1 radii (index 0 included)")
        for j, r in enumerate(schedule):
            if j >= 1 and not (r < 2.0**-j):
                raise ConfigError(f"mollifier radius r_{j}={r} violates its cap 2^-{j}")
        margin = max(schedule) * 1.01
        grid = grid_for_domain(self.omega, self.points_per_axis, margin, n=self.n)
        for j, r in enumerate(schedule):
            if r < 2.0 * grid.h:
                raise ConfigError(
                    f"mollifier radius r_{j}={r:.4g} under-resolved: grid step "
                    f"{grid.h:.4g} needs r >= {2 * grid.h:.4g}"
                )
        return grid, schedule


@dataclass
class RunReport:
    config: dict
    iterations: list
    domain_volume: float
    domain_volume_qmc: float
    beta_min: float
    recursion_holds: bool
    interior_ball: float

    def as_dict(self):
        return {
            "config": self.config,
            "iterations": self.iterations,
            "domain_volume": self.domain_volume,
            "domain_volume_qmc": self.domain_volume_qmc,
            "beta_min": self.beta_min,
            "recursion_holds": self.recursion_holds,
            "interior_ball": self.interior_ball,
        }

    def to_json(self):
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"


def _state_distance_norm(g, m, omega):
    return lm_norm(g, m, "all", omega) ** (1.0 / m)


def run_scheme(config):
    """Run the convex-integration iteration for J steps.

    After each step the mollification ladder is enforced: the self-distance
    |z_j - z_j * rho_{r_j}| and all cross-distances |(z_j - z_{j-1}) * rho_{r_i}|,
    i < j, must fall below 2^-j in the L^m norm over the domain.  A violating
    step is retried with doubled block frequencies (cap retry_cap); higher
    frequency improves the mollified cancellation, which the retry certifies
    empirically.
    """
    grid, schedule = config.resolve_grid()
    lib = build_atom_library(config.n, config.atom_count, config.seed)
    omega = config.omega
    dim = grid.dim
    R0 = interior_ball_radius(lib)
    z = RelaxedSolution(blocks=[], omega=omega, generation=0, grid_spec=grid)
    z.margin_bound = np.full(grid.shape(), R0)

    iterations = []
    energies = [None]
    betas = []
    g_prev = z.sample(grid)
    for j in range(1, config.J + 1):
        boost = 1
        for attempt in range(config.retry_cap + 1):
            params = StepParams(
                grid=grid,
                kappa=config.kappa,
                sigma_budget=config.sigma_budget,
                delta=config.delta,
                seed=config.seed + 7919 * j,
                max_balls=config.max_balls,
                cert_samples=config.cert_samples,
                amp_fraction=config.amp_fraction,
                freq_boost=boost,
            )
            z_try, rep = perturb_step(z, config.m, lib, params)
            g_new = z_try.sample(grid)
            r_j = schedule[j]
            diff_self = FieldGrid(grid, g_new.values - mollify(g_new, r_j).values)
            d_self = _state_distance_norm(diff_self, config.m, omega)
            step_grid = FieldGrid(grid, g_new.values - g_prev.values)
            cross = []
            for i in range(j):
                moll_step = mollify(step_grid, schedule[i])
                cross.append(_state_distance_norm(moll_step, config.m, omega))
            cap = 2.0**-j
            distances = [d_self] + cross
            if all(d < cap for d in distances):
                rep.moll_distances = distances
                break
            boost *= 2
        else:
            raise SchemeError(
                f"mollification caps unreachable at iteration {j}",
                iteration=j,
                distances=distances,
            )
        z = z_try
        g_prev = g_new
        defect = compat_defect(g_new, config.m, grid, omega=omega)
        sat = saturation_stats(g_new, grid, omega=omega)
        betas.append(rep.beta_measured)
        energies.append(rep.energy_after)
        record = rep.as_dict()
        record.update(
            {
                "iteration": j,
                "mollifier_radius": schedule[j],
                "defect_F_norm": defect[0],
                "defect_G_norm": defect[1],
                "saturation": sat,
                "retries": attempt,
            }
        )
        iterations.append(record)

    beta_pos = [b for b in betas if b > 0.0]
    beta_min = min(beta_pos) if beta_pos else 0.0
    recursion = True
    for j in range(1, len(iterations)):
        e_prev = iterations[j - 1]["energy_after"]
        gap_prev = iterations[j - 1]["gap_after"]
        if iterations[j]["energy_after"] < e_prev + beta_min * gap_prev**config.m - 1e-12:
            recursion = False
    cfg = asdict(config)
    cfg["omega"] = {"kind": omega.kind, "size": omega.size}
    cfg["r_schedule"] = list(schedule)
    return RunReport(
        config=cfg,
        iterations=iterations,
        domain_volume=omega.volume(dim),
        domain_volume_qmc=omega.volume_estimate(dim, seed=config.seed),
        beta_min=beta_min,
        recursion_holds=recursion,
        interior_ball=R0,
    )


# ---------------------------------------------------------------------------
# Defect and saturation diagnostics.
# ---------------------------------------------------------------------------


def _as_grid(z, spec):
    if isinstance(z, FieldGrid):
        return z
    return z.sample(spec)


def compat_defect(z, m, spec=None, omega=None):
    """Forcing tensors measuring distance from an unforced weak solution.

    F = u (x) u - b (x) b - (M + (|u|^2-|b|^2) I/n) and
    G = b (x) u - u (x) b - Q on the lattice; returns (|F|_m, |G|_m, f, g)
    with f, g the spatial finite-difference divergence grids of F and G.
    """
    g = _as_grid(z, spec)
    spec = g.spec
    n, h = spec.n, spec.h
    u = g.channel("u")
    b = g.channel("b")
    M = g.channel("M").reshape(spec.shape() + (n, n))
    Q = g.channel("Q").reshape(spec.shape() + (n, n))
    uu = np.einsum("...i,...j->...ij", u, u)
    bb = np.einsum("...i,...j->...ij", b, b)
    trace = (np.einsum("...i,...i->...", u, u) - np.einsum("...i,...i->...", b, b)) / n
    F = uu - bb - M - trace[..., None, None] * np.eye(n)
    G = np.einsum("...i,...j->...ij", b, u) - np.einsum("...i,...j->...ij", u, b) - Q

    mask = None
    if omega is not None:
        mask = domain_mask(spec, omega)

    def tensor_norm(T):
        mag = np.sqrt(np.einsum("...ij,...ij->...", T, T))
        if mask is not None:
            mag = mag * mask
        return float(((mag**m).sum() * h**spec.dim) ** (1.0 / m))

    def spatial_div(T):
        from .fields import _axis_derivative

        rows = []
        for i in range(n):
            acc = _axis_derivative(T[..., i, 0], 0, h)
            for jax in range(1, n):
                acc = acc + _axis_derivative(T[..., i, jax], jax, h)
            rows.append(acc)
        return np.stack(rows, axis=-1)

    return tensor_norm(F), tensor_norm(G), spatial_div(F), spatial_div(G)


def saturation_stats(z, spec=None, omega=None):
    """Pointwise norm statistics over interior lattice points."""
    g = _as_grid(z, spec)
    spec = g.spec
    u = g.channel("u")
    b = g.channel("b")
    nu = np.sqrt(np.einsum("...i,...i->...", u, u))
    nb = np.sqrt(np.einsum("...i,...i->...", b, b))
    if omega is not None:
        sel = domain_mask(spec, omega)
        nu, nb = nu[sel], nb[sel]
    else:
        nu, nb = nu.reshape(-1), nb.reshape(-1)
    if len(nu) == 0:
        raise ConfigError("no lattice points inside the domain")
    peak = np.maximum(nu, nb)
    return {
        "mean_u_norm": float(nu.mean()),
        "mean_b_norm": float(nb.mean()),
        "frac_above_0.9": float((peak >= 0.9).mean()),
        "frac_above_0.95": float((peak >= 0.95).mean()),
        "frac_above_0.99": float((peak >= 0.99).mean()),
    }
