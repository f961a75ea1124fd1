"""Uniformity experiments over attracting basins.

The harness asks one empirical question: how far, in the intrinsic metric
of the basin, can a point be from the truncated backward orbit of the
fixed point? It draws samples stratified by escape-time shell (the step
at which the forward orbit first enters the attraction bidisc), bounds
each sample's distance to the depth-K backward orbit with the two-leg
chain estimator, and reports per-shell maxima together with a disclosed
plateau criterion for the trend of those maxima.

Verdicts are deliberately coarse: "bounded" when the shell maxima have
flattened, "growing" when they climb steadily, "indeterminate" between.
The thresholds are module constants, not tuned per map. Truncating the
backward orbit at depth K biases shells deeper than K upward, so trend
reads are only meaningful alongside the depth used; reports record both.

Randomness comes exclusively from numpy's PCG64 generator and every
report records the seed it was given, so identical configuration and
seed reproduce reports and CSV files byte for byte.
"""

from __future__ import annotations

import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    BASIN,
    Box,
    GridDomain,
    SliceDomain,
    basin_grid_1d,
    classify_points,
    label_components,
    pick_attraction_radius,
    stable_manifold_series,
)
from .errors import (
    ConfigError,
    ExcessUndecided,
    HypothesisViolation,
    OutOfDomain,
    ShellEmpty,
)
from .hyperbolic import (
    ChainDistanceEstimator,
    SliceProvider,
    closed_form_distance,
    density_field,
    monomial_product_model,
    multi_source_costs,
    projection_lower,
    _field_graph,
)
from .polynomials import SkewProduct, map_fingerprint
from .preimage import (
    GraphFamily,
    PreimageTree,
    StableGraph,
    base_preimages,
    build_graph_family,
    preimage_tree,
)

DEFAULT_SEED = 20260814
DEFAULT_N_MAX = 12

# Disclosed plateau criterion: least-squares slope of the shell maxima over
# the last PLATEAU_WINDOW shells, in nats per shell.
PLATEAU_WINDOW = 6
PLATEAU_BOUNDED_SLOPE = 0.05
PLATEAU_GROWING_SLOPE = 0.3

STRATEGIES = frozenset({"auto", "raster", "closed-form", "uniform", "base"})

CSV_COLUMNS = (
    "sample_id",
    "shell_n",
    "z_re",
    "z_im",
    "w_re",
    "w_im",
    "preimage_depth",
    "chain_upper",
    "proj_lower",
    "method",
    "status",
)

_ENDPOINT_TOL = 1e-6  # per orbit step, matched to the preimage residual gate
_MARKER = (200, 30, 30)
_COLORS = {0: (255, 255, 255), 1: (0, 0, 0), 2: (176, 176, 176)}


# ---------------------------------------------------------------------------
# Report containers.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleRecord:
    """One estimated sample; chain_upper / proj_lower are nan when absent."""

    sample_id: int
    shell_n: int
    z: complex
    w: complex
    preimage_depth: int
    chain_upper: float
    proj_lower: float
    method: str
    status: str
    target_z: complex = 0j
    target_w: complex = 0j
    endpoint_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def csv_row(self) -> list[str]:
        return [
            str(self.sample_id),
            str(self.shell_n),
            repr(self.z.real),
            repr(self.z.imag),
            repr(self.w.real),
            repr(self.w.imag),
            str(self.preimage_depth),
            repr(self.chain_upper),
            repr(self.proj_lower),
            self.method,
            self.status,
        ]


@dataclass
class ExperimentReport:
    """Shell-stratified distance summary for one map at one backward depth.

    depth is the requested truncation K; depth_effective is what the graph
    family actually supported. c_empirical is the max of chain_upper over
    ok records, shell_max its per-shell restriction, and trend the plateau
    verdict on the shell_max sequence.
    """

    map_hash: str
    map_note: str
    depth: int
    depth_effective: int
    seed: int | None
    n_max: int
    eps_attract: float
    records: list[SampleRecord]
    shell_max: dict[int, float]
    shell_counts: dict[int, int]
    c_empirical: float
    trend: str
    plateau_slope: float
    unresolved: int
    s_size: int
    endpoint_residual_max: float
    config_hash: str = ""
    elapsed_seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.records:
            buf.write(",".join(r.csv_row()) + "\n")
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.csv_text())
        return path

    def to_text(self) -> str:
        lines = [
            "experiment-report\tv1",
            f"map\t{self.map_hash}",
            f"note\t{self.map_note}",
            f"config\t{self.config_hash}",
            f"depth\t{self.depth}",
            f"depth-effective\t{self.depth_effective}",
            f"seed\t{self.seed}",
            f"eps-attract\t{self.eps_attract!r}",
            f"n-max\t{self.n_max}",
            f"samples\t{len(self.records)}",
            f"unresolved\t{self.unresolved}",
            f"s-size\t{self.s_size}",
            f"c-empirical\t{self.c_empirical!r}",
            f"trend\t{self.trend}",
            f"plateau-slope\t{self.plateau_slope!r}",
            f"endpoint-residual-max\t{self.endpoint_residual_max!r}",
            f"elapsed-seconds\t{self.elapsed_seconds:.1f}",
        ]
        for n in sorted(self.shell_max):
            lines.append(
                f"shell\t{n}\tcount\t{self.shell_counts.get(n, 0)}"
                f"\tmax\t{self.shell_max[n]!r}"
            )
        return "\n".join(lines) + "\n"

    def write_text(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path


def plateau_trend(shell_max: dict[int, float]) -> tuple[str, float]:
    """Disclosed verdict on a shell-max sequence: fit the last PLATEAU_WINDOW
    shells; slope below PLATEAU_BOUNDED_SLOPE reads "bounded", above
    PLATEAU_GROWING_SLOPE reads "growing", else "indeterminate"."""
    shells = sorted(shell_max)
    if len(shells) < 2:
        return "indeterminate", float("nan")
    window = shells[-PLATEAU_WINDOW:]
    ys = [shell_max[n] for n in window]
    slope = float(np.polyfit(window, ys, 1)[0])
    if slope < PLATEAU_BOUNDED_SLOPE:
        return "bounded", slope
    if slope > PLATEAU_GROWING_SLOPE:
        return "growing", slope
    return "indeterminate", slope


# ---------------------------------------------------------------------------
# Stratified sampling.
# ---------------------------------------------------------------------------


def _shell_quotas(n_samples: int, n_max: int) -> list[int]:
    base, rem = divmod(n_samples, n_max + 1)
    return [base + (1 if n < rem else 0) for n in range(n_max + 1)]


def _classify_batch(f, zs, ws, eps, max_iter, radius):
    state, steps = classify_points(
        f, np.asarray(zs, dtype=complex), np.asarray(ws, dtype=complex),
        eps, max_iter, radius,
    )
    return state, steps


def _escape_radius_for(f: SkewProduct) -> float | None:
    if f.escape_radius is not None:
        return None  # classify_points reads it from the map
    model = monomial_product_model(f)
    if model is not None:
        return 2.0 * max(model)
    return None


def _base_entry_times(p, zs: np.ndarray, eps: float, max_iter: int, radius: float):
    """Vectorized base-only entry times; -1 where the orbit never enters."""
    z = np.array(zs, dtype=np.complex128)
    steps = np.full(z.shape, -1, dtype=np.int64)
    active = np.arange(z.size)
    for k in range(max_iter + 1):
        m = np.abs(z[active])
        hit = m < eps
        steps[active[hit]] = k
        active = active[~hit & (m <= radius)]
        if active.size == 0:
            break
        if k < max_iter:
            z[active] = p(z[active])
    return steps


def _power_band(eps: float, power: int, n: int) -> tuple[float, float]:
    """Moduli whose pure power-iteration enters |x| < eps exactly at step n."""
    if n == 0:
        return 0.0, eps
    return eps ** (1.0 / power ** (n - 1)), eps ** (1.0 / power ** n)


def _sample_closed_form(f, quotas, rng, eps, max_iter):
    """Shell sampling from the exact product geometry of monomial maps.

    Basins of decoupled unit-coefficient monomial maps are round bidiscs
    and the escape-time shells are explicit annuli of bidiscs; one of the
    two coordinates is drawn from its shell band and the other below it.
    Every candidate is re-verified by forward iteration before acceptance.
    """
    model = monomial_product_model(f)
    if model is None or abs(f.p.coeffs[-1]) != 1.0 or abs(f.q.terms[0][2]) != 1.0:
        raise ConfigError(
            "closed-form sampling needs a decoupled unit-coefficient monomial map"
        )
    powers = (f.p.degree, f.q.terms[0][1])
    radius = 2.0 * max(model)
    out: list[tuple[complex, complex]] = []
    for n, quota in enumerate(quotas):
        got = 0
        for _ in range(12):
            if got >= quota:
                break
            m = max(16, 4 * (quota - got))
            binding = rng.integers(0, 2, size=m)
            lo0, hi0 = _power_band(eps, powers[0], n)
            lo1, hi1 = _power_band(eps, powers[1], n)
            r_bind = np.where(
                binding == 0,
                lo0 + (hi0 - lo0) * rng.random(m),
                lo1 + (hi1 - lo1) * rng.random(m),
            )
            r_free = np.where(binding == 0, hi1, hi0) * rng.random(m)
            ang = rng.random((m, 2)) * 2.0 * np.pi
            zs = np.where(binding == 0, r_bind, r_free) * np.exp(1j * ang[:, 0])
            ws = np.where(binding == 0, r_free, r_bind) * np.exp(1j * ang[:, 1])
            state, steps = _classify_batch(f, zs, ws, eps, max_iter, radius)
            for i in range(m):
                if got >= quota:
                    break
                if state[i] == BASIN and int(steps[i]) == n:
                    out.append((complex(zs[i]), complex(ws[i])))
                    got += 1
        if got < quota:
            raise ShellEmpty(
                f"shell {n}: drew {got} of {quota} verified samples", shell=n
            )
    return out


def _slice_pool(f, u_grid, n_base, n_max, rng, slices):
    """Deterministic pool of base cell centers with their slice rasters.

    The pool is stratified by base entry time so every 2D shell has slices
    that can carry it: a slice over a base point entering at step j only
    holds cells of shell >= j, so shell 0 needs base points inside the
    attraction disc itself. Base shells beyond the raster are skipped, and
    base points whose slice shows no basin are dropped.
    """
    basin = u_grid.mask == BASIN
    if not basin.any():
        raise OutOfDomain("base grid shows no basin cells")
    groups = []
    for j in range(n_max + 1):
        ys, xs = np.nonzero(basin & (u_grid.entry_time == j))
        if ys.size:
            groups.append((ys, xs))
    if not groups:
        raise OutOfDomain("base grid has no entry times within the shell range")
    per = max(1, -(-n_base // len(groups)))
    pool = []
    for ys, xs in groups:
        # Slices over near-boundary base points can show no basin at the
        # provider's coarse probe; keep drawing from the same entry-time
        # group until `per` slices stick or the group runs out.
        kept = 0
        for k in rng.permutation(ys.size):
            if kept >= per:
                break
            z = u_grid.point_of(int(ys[k]), int(xs[k]))
            try:
                grid = slices.grid(z)
            except OutOfDomain:
                continue
            pool.append((z, grid))
            kept += 1
    if not pool:
        raise OutOfDomain("no sampled base point produced a basin slice")
    return pool


def _raster_inventory(pool, n_max):
    """inventory[n] = array of (pool index, iy, ix) rows, scanline order."""
    inventory: list[list[tuple[int, int, int]]] = [[] for _ in range(n_max + 1)]
    for pi, (_, grid) in enumerate(pool):
        basin = grid.mask == BASIN
        ent = grid.entry_time
        for n in range(n_max + 1):
            ys, xs = np.nonzero(basin & (ent == n))
            inventory[n].extend((pi, int(y), int(x)) for y, x in zip(ys, xs))
    return inventory


def _draw_from_inventory(f, pool, inv, n, quota, rng, eps, max_iter, radius):
    """Rejection sampling for one shell: jitter w inside inventory cells and
    keep candidates whose re-verified entry time matches the shell."""
    out: list[tuple[complex, complex]] = []
    for _ in range(12):
        if len(out) >= quota:
            break
        m = max(16, 4 * (quota - len(out)))
        rows = [inv[int(i)] for i in rng.integers(0, len(inv), size=m)]
        jit = rng.random((m, 2))
        zs, ws = [], []
        for (pi, iy, ix), (jy, jx) in zip(rows, jit):
            z, grid = pool[pi]
            center = grid.point_of(iy, ix)
            ws.append(
                center
                + complex((jx - 0.5) * grid.cell_re, (jy - 0.5) * grid.cell_im)
            )
            zs.append(z)
        state, steps = _classify_batch(f, zs, ws, eps, max_iter, radius)
        for i in range(m):
            if len(out) >= quota:
                break
            if state[i] == BASIN and int(steps[i]) == n:
                out.append((zs[i], complex(ws[i])))
    if len(out) < quota:
        # Cell centers are already raster-verified; use them as-is.
        zs = [pool[pi][0] for pi, _, _ in inv]
        ws = [pool[pi][1].point_of(iy, ix) for pi, iy, ix in inv]
        state, steps = _classify_batch(f, zs, ws, eps, max_iter, radius)
        for i in range(len(inv)):
            if len(out) >= quota:
                break
            if state[i] == BASIN and int(steps[i]) == n:
                out.append((zs[i], complex(ws[i])))
    if len(out) < quota:
        raise ShellEmpty(
            f"shell {n}: raster holds {len(inv)} cells but only "
            f"{len(out)} of {quota} samples re-verified",
            shell=n,
        )
    return out


def sample_basin(
    f: SkewProduct,
    n_samples: int,
    strategy: str = "auto",
    n_max: int = DEFAULT_N_MAX,
    *,
    seed: int = DEFAULT_SEED,
    eps_attract: float | None = None,
    max_iter: int = 400,
    base_resolution: int = 192,
    slice_resolution: int = 256,
    n_base: int = 48,
    u_grid: GridDomain | None = None,
    slices: SliceProvider | None = None,
    workers: int = 1,
) -> list[tuple[complex, complex]]:
    """Draw basin points stratified by escape-time shell 0..n_max.

    Shell quotas are near-uniform (they differ by at most one and sum to
    n_samples). The "raster" strategy draws from slice rasters over a pool
    of base cells and rejection-samples jittered cell points until the
    re-verified entry time matches the shell; "closed-form" uses the exact
    shell geometry of decoupled monomial maps; "auto" picks between them.
    "uniform" ignores quotas and draws basin points with entry <= n_max.
    "base" samples the base grid only, stratified by base entry time, and
    returns points (z, 0) for the one-dimensional harness.

    Raises ShellEmpty when a shell has no raster support (or cannot be
    re-verified) at this resolution. Identical arguments and seed return
    the identical sample list.
    """
    if n_samples < 0:
        raise ConfigError("n_samples must be >= 0")
    if n_max < 0:
        raise ConfigError("n_max must be >= 0")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown sampling strategy {strategy!r}")
    if n_samples == 0:
        return []
    if strategy == "auto":
        strategy = "closed-form" if monomial_product_model(f) else "raster"

    rng = np.random.Generator(np.random.PCG64(seed))
    eps = pick_attraction_radius(f) if eps_attract is None else float(eps_attract)
    radius = _escape_radius_for(f)
    quotas = _shell_quotas(n_samples, n_max)

    if strategy == "closed-form":
        return _sample_closed_form(f, quotas, rng, eps, max_iter)

    if f.escape_radius is None and strategy in ("raster", "uniform"):
        raise ConfigError(
            "raster sampling needs a certified escape radius: "
            + "; ".join(f.hypothesis_issues)
        )

    if u_grid is None:
        u_grid = basin_grid_1d(
            f, Box.square(0j, 1.02 * f.base_radius), base_resolution,
            eps, max_iter, workers=workers, max_undecided=None,
        )

    if strategy == "base":
        basin = u_grid.mask == BASIN
        ent = u_grid.entry_time
        out: list[tuple[complex, complex]] = []
        for n, quota in enumerate(quotas):
            ys, xs = np.nonzero(basin & (ent == n))
            if quota > 0 and ys.size == 0:
                raise ShellEmpty(f"base shell {n} has no raster cells", shell=n)
            got: list[tuple[complex, complex]] = []
            for _ in range(12):
                if len(got) >= quota:
                    break
                m = max(16, 4 * (quota - len(got)))
                sel = rng.integers(0, ys.size, size=m)
                jit = rng.random((m, 2))
                zs = np.array(
                    [
                        u_grid.point_of(int(ys[i]), int(xs[i]))
                        + complex(
                            (jx - 0.5) * u_grid.cell_re, (jy - 0.5) * u_grid.cell_im
                        )
                        for i, (jy, jx) in zip(sel, jit)
                    ]
                )
                steps = _base_entry_times(
                    f.p, zs, eps, max_iter, u_grid.radius or f.base_radius * 2
                )
                for i in range(m):
                    if len(got) >= quota:
                        break
                    if int(steps[i]) == n:
                        got.append((complex(zs[i]), 0j))
            if len(got) < quota:
                raise ShellEmpty(
                    f"base shell {n}: only {len(got)} of {quota} re-verified",
                    shell=n,
                )
            out.extend(got)
        return out

    if slices is None:
        slices = SliceProvider(
            f, resolution=slice_resolution, eps_attract=eps,
            max_iter=max_iter, workers=workers,
        )
    pool = _slice_pool(f, u_grid, n_base, n_max, rng, slices)

    if strategy == "uniform":
        inv_all = []
        inventory = _raster_inventory(pool, n_max)
        for n in range(n_max + 1):
            inv_all.extend(inventory[n])
        out = []
        for _ in range(12):
            if len(out) >= n_samples:
                break
            m = max(16, 4 * (n_samples - len(out)))
            rows = [inv_all[int(i)] for i in rng.integers(0, len(inv_all), size=m)]
            jit = rng.random((m, 2))
            zs, ws = [], []
            for (pi, iy, ix), (jy, jx) in zip(rows, jit):
                z, grid = pool[pi]
                ws.append(
                    grid.point_of(iy, ix)
                    + complex((jx - 0.5) * grid.cell_re, (jy - 0.5) * grid.cell_im)
                )
                zs.append(z)
            state, steps = _classify_batch(f, zs, ws, eps, max_iter, radius)
            for i in range(m):
                if len(out) >= n_samples:
                    break
                if state[i] == BASIN and int(steps[i]) <= n_max:
                    out.append((zs[i], complex(ws[i])))
        if len(out) < n_samples:
            raise ShellEmpty(
                f"uniform draw produced {len(out)} of {n_samples} samples",
                shell=-1,
            )
        return out

    inventory = _raster_inventory(pool, n_max)
    out = []
    for n, quota in enumerate(quotas):
        if quota == 0:
            continue
        if not inventory[n]:
            raise ShellEmpty(
                f"shell {n} has no raster support across {len(pool)} slices",
                shell=n,
            )
        out.extend(
            _draw_from_inventory(
                f, pool, inventory[n], n, quota, rng, eps, max_iter, radius
            )
        )
    return out


# ---------------------------------------------------------------------------
# Distance harness.
# ---------------------------------------------------------------------------


def _forward_residual(f, z: complex, w: complex, steps: int) -> float:
    for _ in range(steps):
        z, w = f.p(z), f.q(z, w)
    return max(abs(z), abs(w))


def _base_orbit_nodes(f, depth: int, merge_tol: float = 1e-9):
    """Backward orbit of 0 under the base polynomial: (point, depth) pairs."""
    nodes = [(0j, 0)]
    frontier = [0j]
    for level in range(1, depth + 1):
        cand: list[complex] = []
        for t in frontier:
            cand.extend(base_preimages(f.p, t))
        cand.sort(key=lambda c: (c.real, c.imag))
        fresh = []
        for c in cand:
            if all(abs(c - p) > merge_tol for p, _ in nodes) and all(
                abs(c - p) > merge_tol for p in fresh
            ):
                fresh.append(c)
        nodes.extend((c, level) for c in fresh)
        frontier = fresh
    return nodes


def _estimate_base(f, samples, depth, u_grid, eps, max_iter, workers):
    """One-dimensional harness: upper path costs in the base density field
    from each sample to the truncated backward orbit of 0 under P."""
    if u_grid is None:
        u_grid = basin_grid_1d(
            f, Box.square(0j, 1.02 * f.base_radius), 256, eps, max_iter,
            workers=workers, max_undecided=None,
        )
    if u_grid.labels is None:
        label_components(u_grid)
    fld = density_field(u_grid, 0)
    nodes = _base_orbit_nodes(f, depth)
    cells, kept = [], []
    seen = set()
    for zp, nd in nodes:
        try:
            cell = u_grid.index_of(zp)
        except OutOfDomain:
            continue
        if not fld.in_component(cell) or cell in seen:
            continue
        seen.add(cell)
        cells.append(cell)
        kept.append((zp, nd))
    if not cells:
        raise OutOfDomain("no backward-orbit base point lands in the field")
    cost, winner = multi_source_costs(fld, cells, [0.0] * len(cells))
    node_ids = _field_graph(fld, "upper")["node"]

    zs = np.array([complex(s[0]) for s in samples])
    shells = _base_entry_times(f.p, zs, eps, max_iter, u_grid.radius or 10.0)
    records = []
    for i, z in enumerate(zs):
        z = complex(z)
        shell = int(shells[i])
        status, upper, pd = "ok", float("nan"), -1
        tz = tw = complex("nan")
        if shell < 0:
            status = "not-basin"
        else:
            try:
                cell = u_grid.index_of(z)
                nid = int(node_ids[cell])
            except OutOfDomain:
                nid = -1
            if nid < 0 or not math.isfinite(float(cost[nid])) or winner[nid] < 0:
                status = "unreachable"
            else:
                upper = float(cost[nid])
                tz, nd = kept[int(winner[nid])]
                tw, pd = 0j, int(nd)
        records.append(
            SampleRecord(
                sample_id=i, shell_n=max(shell, -1), z=z, w=0j,
                preimage_depth=pd, chain_upper=upper, proj_lower=float("nan"),
                method="slice-graph", status=status, target_z=tz, target_w=tw,
                endpoint_residual=0.0
                if status != "ok"
                else abs(_base_forward(f, tz, pd)),
            )
        )
    return records, len(nodes)


def _base_forward(f, z: complex, steps: int) -> complex:
    for _ in range(steps):
        z = f.p(z)
    return z


def _snap_allowance(slices, u_field, z: complex, w: complex) -> float:
    """Cell-snapping allowance for comparing chain and projection routes.

    Both routes measure between cell centers on rasters of different
    resolutions, so each may be off by roughly one local edge weight per
    snapped endpoint. Two slice-field steps at w plus two base-field steps
    at z cover the four snaps; this is a consistency tolerance for route
    agreement, not a certified quantity.
    """
    try:
        sgrid = slices.grid(z)
        wcell = sgrid.index_of(w)
        comp = int(sgrid.labels[wcell])
        if comp < 0:
            return math.inf
        rho_s = float(slices.field(z, comp).upper[wcell])
        diag_s = math.hypot(sgrid.cell_re, sgrid.cell_im)
        zcell = u_field.cell_of(z)
        rho_u = float(u_field.upper[zcell])
        diag_u = math.hypot(u_field.grid.cell_re, u_field.grid.cell_im)
    except OutOfDomain:
        return math.inf
    return 2.0 * rho_s * diag_s + 2.0 * rho_u * diag_u


def estimate_C(
    f: SkewProduct,
    samples,
    depth: int,
    graphs: GraphFamily | list[StableGraph] | None = None,
    *,
    tree: PreimageTree | None = None,
    slices: SliceProvider | None = None,
    estimator: ChainDistanceEstimator | None = None,
    u_grid: GridDomain | None = None,
    mode: str = "auto",
    eps_attract: float | None = None,
    max_iter: int = 400,
    seed: int | None = None,
    workers: int = 1,
    map_note: str = "",
    config_hash: str = "",
    max_unresolved: float = 0.05,
    series_order: int = 24,
    graph_resolution: int = 128,
    slice_resolution: int = 256,
) -> ExperimentReport:
    """Bound each sample's distance to the depth-`depth` backward orbit.

    mode "chain" runs the two-leg estimator against the preimage tree and
    stable graph family (built here when not supplied); "closed-form" uses
    the exact bidisc distance available for decoupled monomial maps, where
    both factor projections certify the same value as a lower bound;
    "base" runs the one-dimensional harness on the base polynomial alone.
    "auto" picks closed-form when available, else chain.

    `depth` truncates the backward orbit fed to leg 2; sheet levels are a
    coverage resource, so a default-built family is sized by the deepest
    shell the samples occupy, not by `depth`. Passing `estimator` reuses
    one instrument (its tree, family, slices, and cost caches) across
    several depths, which makes C_empirical non-increasing in `depth` on
    a fixed sample set.

    Every ok record's endpoint is re-verified at report time: its forward
    orbit must land on the origin within 1e-6 per step, else the record is
    demoted to "endpoint-drift". The run fails with ExcessUndecided when
    more than max_unresolved of the samples end without an ok estimate.
    """
    samples = [(complex(p[0]), complex(p[1])) for p in samples]
    if not samples:
        raise ConfigError("estimate_C needs at least one sample")
    if depth < 1:
        raise ConfigError("depth must be >= 1")
    if mode not in ("auto", "chain", "closed-form", "base"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "auto":
        mode = "closed-form" if monomial_product_model(f) else "chain"

    t0 = time.time()
    eps = pick_attraction_radius(f) if eps_attract is None else float(eps_attract)
    radius = _escape_radius_for(f)

    if mode == "base":
        records, s_size = _estimate_base(
            f, samples, depth, u_grid, eps, max_iter, workers
        )
        depth_effective = depth
    elif mode == "closed-form":
        if closed_form_distance(f, (0j, 0j), (0j, 0j)) is None:
            raise ConfigError("map has no closed-form bidisc model")
        if tree is None:
            tree = preimage_tree(f, depth)
        state, steps = _classify_batch(
            f, [s[0] for s in samples], [s[1] for s in samples],
            eps, max_iter, radius,
        )
        records = []
        for i, (z, w) in enumerate(samples):
            if state[i] != BASIN:
                records.append(
                    SampleRecord(i, -1, z, w, -1, float("nan"), float("nan"),
                                 "closed-form", "not-basin")
                )
                continue
            est = closed_form_distance(f, (z, w), (0j, 0j))
            records.append(
                SampleRecord(
                    sample_id=i, shell_n=int(steps[i]), z=z, w=w,
                    preimage_depth=0, chain_upper=est.upper,
                    proj_lower=est.lower, method="closed-form", status="ok",
                    target_z=0j, target_w=0j, endpoint_residual=0.0,
                )
            )
        s_size = sum(1 for n in tree.nodes if n.depth <= depth)
        depth_effective = depth
    else:
        state, steps = _classify_batch(
            f, [s[0] for s in samples], [s[1] for s in samples],
            eps, max_iter, radius,
        )
        if estimator is not None:
            tree = estimator.tree
            slices = estimator.slices
        else:
            if tree is None:
                tree = preimage_tree(f, depth)
            if graphs is None:
                deepest = max(
                    (int(steps[i]) for i in range(len(samples))
                     if state[i] == BASIN),
                    default=0,
                )
                series = stable_manifold_series(f, series_order)
                graphs = build_graph_family(
                    f, series, levels=max(depth, deepest),
                    resolution=graph_resolution, max_graphs=8192,
                )
            if slices is None:
                slices = SliceProvider(
                    f, resolution=slice_resolution, eps_attract=eps,
                    max_iter=max_iter, workers=workers,
                )
            estimator = ChainDistanceEstimator(f, tree, graphs, slices)
        depth_effective = min(depth, estimator.depth_budget)
        groups: dict[complex, list[int]] = {}
        for i, (z, _) in enumerate(samples):
            if state[i] == BASIN:
                groups.setdefault(z, []).append(i)

        def run_group(item):
            z, idxs = item
            ests, _ = estimator.estimate_slice(
                z, [samples[i][1] for i in idxs], depth_budget=depth
            )
            return ests

        items = list(groups.items())
        if workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_group, items))
        else:
            results = [run_group(it) for it in items]

        if u_grid is None:
            u_grid = basin_grid_1d(
                f, Box.square(0j, 1.02 * f.base_radius), 256, eps, max_iter,
                workers=workers, max_undecided=None,
            )
        if u_grid.labels is None:
            label_components(u_grid)
        u_field = density_field(u_grid, 0)

        by_sample: dict[int, object] = {}
        for (z, idxs), ests in zip(items, results):
            for i, est in zip(idxs, ests):
                by_sample[i] = est

        records = []
        for i, (z, w) in enumerate(samples):
            if state[i] != BASIN:
                records.append(
                    SampleRecord(i, -1, z, w, -1, float("nan"), float("nan"),
                                 "chain", "not-basin")
                )
                continue
            est = by_sample.get(i)
            if est is None:
                records.append(
                    SampleRecord(i, int(steps[i]), z, w, -1, float("nan"),
                                 float("nan"), "chain", "unreachable")
                )
                continue
            pd = int(est.metadata.get("orbit_steps", est.metadata["node_depth"]))
            tz, tw = est.target
            residual = _forward_residual(f, tz, tw, pd)
            status = "ok" if residual <= _ENDPOINT_TOL * max(1, pd) else "endpoint-drift"
            lower = float("nan")
            if status == "ok":
                try:
                    lower = projection_lower(f, (z, w), (tz, tw), u_field).lower
                except OutOfDomain:
                    lower = float("nan")
                if math.isfinite(lower) and lower > est.upper:
                    # The two routes quantize endpoints on independent
                    # rasters; within one cell-step allowance the published
                    # lower is rounded down to the upper (weakening a lower
                    # bound is always sound). Beyond the allowance the
                    # routes genuinely contradict each other.
                    quant = _snap_allowance(slices, u_field, z, w)
                    if lower <= est.upper + quant:
                        lower = est.upper
                    else:
                        raise HypothesisViolation(
                            f"sample {i}: projection lower {lower:.6g} "
                            f"exceeds chain upper {est.upper:.6g} by more "
                            f"than the snap allowance {quant:.6g}"
                        )
            records.append(
                SampleRecord(
                    sample_id=i, shell_n=int(steps[i]), z=z, w=w,
                    preimage_depth=pd, chain_upper=est.upper, proj_lower=lower,
                    method=est.method, status=status, target_z=tz, target_w=tw,
                    endpoint_residual=residual,
                )
            )
        s_size = sum(1 for n in tree.nodes if n.depth <= depth)

    unresolved = sum(1 for r in records if not r.ok)
    if unresolved > max_unresolved * len(records):
        raise ExcessUndecided(
            f"{unresolved} of {len(records)} samples unresolved "
            f"(cap {max_unresolved:.0%})"
        )
    shell_max: dict[int, float] = {}
    shell_counts: dict[int, int] = {}
    for r in records:
        if not r.ok:
            continue
        shell_counts[r.shell_n] = shell_counts.get(r.shell_n, 0) + 1
        prev = shell_max.get(r.shell_n)
        if prev is None or r.chain_upper > prev:
            shell_max[r.shell_n] = r.chain_upper
    c_emp = max(shell_max.values()) if shell_max else float("nan")
    trend, slope = plateau_trend(shell_max)
    return ExperimentReport(
        map_hash=map_fingerprint(f),
        map_note=map_note,
        depth=depth,
        depth_effective=depth_effective,
        seed=seed,
        n_max=max(shell_max) if shell_max else -1,
        eps_attract=eps,
        records=records,
        shell_max=shell_max,
        shell_counts=shell_counts,
        c_empirical=c_emp,
        trend=trend,
        plateau_slope=slope,
        unresolved=unresolved,
        s_size=s_size,
        endpoint_residual_max=max(
            (r.endpoint_residual for r in records if r.ok), default=0.0
        ),
        config_hash=config_hash,
        elapsed_seconds=time.time() - t0,
    )


# ---------------------------------------------------------------------------
# Raster rendering with overlays.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Overlay:
    """Marker set for render(): complex points in the grid's plane."""

    points: tuple[complex, ...]
    color: tuple[int, int, int] = _MARKER


def tree_slice_overlay(
    tree: PreimageTree, z: complex, atol: float = 1e-9,
    color: tuple[int, int, int] = _MARKER,
) -> Overlay:
    """Fiber coordinates of tree nodes sitting over the given base point."""
    pts = tuple(n.w for n in tree.nodes if abs(n.z - z) <= atol)
    return Overlay(points=pts, color=color)


def tree_base_overlay(
    tree: PreimageTree, color: tuple[int, int, int] = _MARKER
) -> Overlay:
    seen: list[complex] = []
    for n in tree.nodes:
        if all(abs(n.z - p) > 1e-12 for p in seen):
            seen.append(n.z)
    return Overlay(points=tuple(seen), color=color)


def graph_slice_overlay(
    graphs, f: SkewProduct, z: complex,
    color: tuple[int, int, int] = (30, 90, 220),
) -> Overlay:
    """Sheet values over one base point, one marker per defined sheet."""
    if isinstance(graphs, GraphFamily):
        graphs = graphs.graphs
    pts = []
    for g in graphs:
        if not bool(g.defined_at(z)):
            continue
        vals, ok = g.eval_at(f, np.array([complex(z)]))
        if ok[0]:
            pts.append(complex(vals[0]))
    return Overlay(points=tuple(pts), color=color)


def render(
    target: GridDomain | SliceDomain,
    overlays=(),
    path: str | Path = "render.ppm",
) -> Path:
    """Write a binary portable pixmap of the mask with overlay markers.

    Basin cells are black, escaped cells white, undecided cells gray; the
    top image row is the highest imaginary part. Markers are 5-pixel
    crosses clipped to the image. Output bytes are a pure function of the
    inputs. Overlay points outside the grid box are skipped.
    """
    grid = target.grid if isinstance(target, SliceDomain) else target
    res = grid.resolution
    img = np.zeros((res, res, 3), dtype=np.uint8)
    for code, rgb in _COLORS.items():
        img[grid.mask == code] = rgb
    for ov in overlays:
        color = np.array(ov.color, dtype=np.uint8)
        for p in ov.points:
            try:
                iy, ix = grid.index_of(complex(p))
            except OutOfDomain:
                continue
            img[iy, ix] = color
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                y, x = iy + dy, ix + dx
                if 0 <= y < res and 0 <= x < res:
                    img[y, x] = color
    path = Path(path)
    header = f"P6\n{res} {res}\n255\n".encode()
    path.write_bytes(header + img[::-1].tobytes())
    return path
