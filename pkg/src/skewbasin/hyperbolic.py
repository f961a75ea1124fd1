"""Certified bounds on hyperbolic distances in basin slices and products.

Planar slices of the basin carry the Koebe density bracket: 1/delta is
always an upper bound for the infinitesimal invariant metric, and 1/(4*delta)
is a lower bound on simply connected components. Integrating either density
along shortest cell paths gives certified distance estimates; exact closed
forms on discs and polydiscs calibrate everything else.

Estimates come in five flavours, tagged on each DistanceEstimate:

- "closed-form":  exact values on model domains (discs, products of discs),
- "slice-graph":  Dijkstra over one planar component with the Koebe bracket,
- "projection":   lower bound through the distance-decreasing base projection,
- "chain":        two-leg upper bound from a point to the backward orbit,
- "polydisc-4d":  coarse upper bound on a four-dimensional raster.

Upper estimates are true upper bounds up to raster slack: grid paths are
admissible curves, and their upper-density length dominates the infimum.
Lower estimates carry the disclosed multiplicative slack LOWER_SLACK; the
8-neighbor graph adds at most ANISOTROPY relative path length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_cdt, distance_transform_edt
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .dynamics import (
    BASIN,
    Box,
    GridDomain,
    SliceDomain,
    classify_points,
    count_holes,
    label_components,
    basin_grid_slice,
    pick_attraction_radius,
)
from .errors import (
    ConfigError,
    Disconnected,
    HypothesisViolation,
    NoGraphReachable,
    OutOfDomain,
    ResourceCap,
)
from .polynomials import ROOT_TOL, SkewProduct, map_fingerprint
from .preimage import (
    MERGE_TOL,
    GraphFamily,
    PreimageTree,
    StableGraph,
    _cell_indices,
    _dedupe_candidates,
)

METHODS = frozenset(
    {"slice-graph", "chain", "polydisc-4d", "closed-form", "projection"}
)

# Disclosed slack constants. Grid shortest paths only approximate the
# infimum over all curves from above, and the 8-neighbor stencil adds at
# most sec(pi/8) - 1 < 8% length on worst-case directions.
ANISOTROPY = 0.08
LOWER_SLACK = 1.05

_MAX_AXIS_4D = 48


# ---------------------------------------------------------------------------
# Estimates and the exact disc oracle.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistanceEstimate:
    """A certified bracket [lower, upper] with its method tag.

    upper may be +inf (projection bounds carry no upper information);
    closed forms have lower == upper. source and target hold the complex
    coordinates the estimate actually measured, after any cell snapping.
    """

    lower: float
    upper: float
    method: str
    resolution: int
    source: tuple[complex, ...] = ()
    target: tuple[complex, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown estimate method {self.method!r}")
        if self.lower < 0 or math.isnan(self.lower) or math.isnan(self.upper):
            raise ConfigError("estimate bounds must be nonnegative reals")
        if self.lower > self.upper:
            raise ConfigError(
                f"lower {self.lower} exceeds upper {self.upper} ({self.method})"
            )
        if self.method == "closed-form" and self.lower != self.upper:
            raise ConfigError("closed-form estimates must be exact")

    def as_row(self) -> list[str]:
        """method, resolution, lower, upper, then source/target coordinates."""
        fmt = lambda pts: " ".join(f"{p.real!r},{p.imag!r}" for p in pts)
        return [
            self.method,
            str(self.resolution),
            repr(self.lower),
            repr(self.upper),
            fmt(self.source),
            fmt(self.target),
        ]


def _disc_dist(p: complex, q: complex, radius: float = 1.0) -> float:
    """Poincare distance on a round disc, unit infinitesimal metric at 0."""
    if abs(p) >= radius or abs(q) >= radius:
        raise OutOfDomain(f"point outside disc of radius {radius}")
    if (q.real, q.imag) < (p.real, p.imag):  # bitwise-symmetric in (p, q)
        p, q = q, p
    num = radius * (p - q)
    den = radius * radius - np.conj(p) * q
    return float(np.arctanh(abs(num / den)))


def disc_distance(r1: complex, r2: complex) -> DistanceEstimate:
    """Exact distance on the unit disc; the calibration oracle.

    Normalized so distance(0, r) = arctanh(r): the infinitesimal metric at
    the origin applied to a unit vector is 1.
    """
    d = _disc_dist(complex(r1), complex(r2))
    return DistanceEstimate(
        lower=d, upper=d, method="closed-form", resolution=0,
        source=(complex(r1),), target=(complex(r2),),
    )


# ---------------------------------------------------------------------------
# Koebe density fields on planar components.
# ---------------------------------------------------------------------------


@dataclass
class DensityField:
    """Koebe density bracket on one labeled component of a planar raster.

    delta is the Euclidean distance transform on cell centers, clamped by
    half the box diagonal; upper = 1/delta always bounds the invariant
    metric from above (the delta-disc embeds in the component), and
    lower = 1/(4*delta) bounds it from below only when the component is
    simply connected, else lower is identically 0 and certifies nothing.
    """

    grid: GridDomain
    component: int
    delta: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    simply_connected: bool
    holes: int
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def cell_of(self, point) -> tuple[int, int]:
        if isinstance(point, (tuple, list)) and len(point) == 2 and all(
            isinstance(c, (int, np.integer)) for c in point
        ):
            iy, ix = int(point[0]), int(point[1])
            res = self.grid.resolution
            if not (0 <= iy < res and 0 <= ix < res):
                raise OutOfDomain(f"cell {point} outside {res}x{res} grid")
            return iy, ix
        return self.grid.index_of(complex(point))

    def in_component(self, cell: tuple[int, int]) -> bool:
        return bool(self.grid.labels[cell] == self.component)


def density_field(grid: GridDomain | SliceDomain, component: int = 0) -> DensityField:
    """Build the density bracket for one basin component of a raster."""
    if isinstance(grid, SliceDomain):
        grid = grid.grid
    if grid.labels is None:
        label_components(grid)
    comp = grid.labels == component
    if not comp.any():
        raise OutOfDomain(f"component {component} is empty")
    holes = count_holes(grid, component)
    delta = distance_transform_edt(comp, sampling=(grid.cell_im, grid.cell_re))
    half_diag = math.hypot(grid.box.half_re, grid.box.half_im)
    delta = np.minimum(delta, half_diag)
    delta[~comp] = 0.0
    upper = np.full(comp.shape, np.inf)
    upper[comp] = 1.0 / delta[comp]
    lower = np.zeros(comp.shape)
    if holes == 0:
        lower[comp] = 0.25 * upper[comp]
    return DensityField(
        grid=grid, component=component, delta=delta, lower=lower, upper=upper,
        simply_connected=(holes == 0), holes=holes,
    )


# Representative directed offsets for the undirected 8-neighbor stencil.
_EDGE_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))


def _field_graph(fld: DensityField, which: str) -> dict:
    """Cached sparse shortest-path graph over the component's cells.

    Nodes are component cells in scanline order; each undirected edge gets
    weight = mean endpoint density * Euclidean step length.
    """
    key = ("graph", which)
    if key in fld.cache:
        return fld.cache[key]
    comp = fld.grid.labels == fld.component
    res = fld.grid.resolution
    node = np.full(comp.shape, -1, dtype=np.int64)
    n = int(comp.sum())
    node[comp] = np.arange(n)
    rho = fld.upper if which == "upper" else fld.lower
    rows, cols, data = [], [], []
    for dy, dx in _EDGE_OFFSETS:
        a = (slice(max(0, -dy), res - max(0, dy)),
             slice(max(0, -dx), res - max(0, dx)))
        b = (slice(max(0, dy), res - max(0, -dy)),
             slice(max(0, dx), res - max(0, -dx)))
        both = comp[a] & comp[b]
        if not both.any():
            continue
        u = node[a][both].astype(np.int32)
        v = node[b][both].astype(np.int32)
        w = 0.5 * (rho[a][both] + rho[b][both]) * math.hypot(
            dx * fld.grid.cell_re, dy * fld.grid.cell_im
        )
        rows.append(u); cols.append(v); data.append(w)
        rows.append(v); cols.append(u); data.append(w)
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        d = np.concatenate(data)
    else:
        r = c = np.zeros(0, dtype=np.int32)
        d = np.zeros(0)
    graph = {
        "n": n,
        "node": node,
        "coo": (r, c, d),
    }
    fld.cache[key] = graph
    return graph


def _field_csr(fld: DensityField, which: str) -> csr_matrix:
    """Compressed form of the path graph, built on first pairwise query.

    Multi-source runs assemble their own augmented matrix from the coo
    triplets, so plain fields never pay for this copy.
    """
    key = ("csr", which)
    if key not in fld.cache:
        g = _field_graph(fld, which)
        r, c, d = g["coo"]
        fld.cache[key] = csr_matrix((d, (r, c)), shape=(g["n"], g["n"]))
    return fld.cache[key]


def _pair_cost(fld: DensityField, which: str, a: tuple[int, int],
               b: tuple[int, int]) -> float:
    g = _field_graph(fld, which)
    ia = int(g["node"][a])
    ib = int(g["node"][b])
    dist = dijkstra(_field_csr(fld, which), directed=True, indices=ia)
    out = float(dist[ib])
    if math.isinf(out):
        raise Disconnected(
            f"no path between cells {a} and {b} in component {fld.component}"
        )
    return out


def multi_source_costs(
    fld: DensityField,
    cells: list[tuple[int, int]],
    offsets: list[float],
    which: str = "upper",
) -> tuple[np.ndarray, np.ndarray]:
    """Cheapest offset[i] + path(cells[i] -> x) over i, for every cell x.

    Returns per-node vectors (cost, winner): winner[j] is the index into
    `cells` realizing the minimum at node j, -1 where unreachable. Uses a
    virtual super-source with one offset edge per entry, so one Dijkstra
    run answers the whole component.
    """
    if len(cells) != len(offsets) or not cells:
        raise ConfigError("need matching nonempty cells and offsets")
    g = _field_graph(fld, which)
    n = g["n"]
    m = len(cells)
    ids = np.array([g["node"][c] for c in cells], dtype=np.int64)
    if (ids < 0).any():
        raise OutOfDomain("source cell outside the component")
    r, c, d = g["coo"]
    rows = np.concatenate([r, np.arange(n, n + m)])
    cols = np.concatenate([c, ids])
    data = np.concatenate([d, np.asarray(offsets, dtype=float)])
    aug = csr_matrix((data, (rows, cols)), shape=(n + m, n + m))
    dist, _, src = dijkstra(
        aug, directed=True, indices=np.arange(n, n + m),
        min_only=True, return_predecessors=True,
    )
    winner = np.where(src[:n] >= n, src[:n] - n, -1).astype(np.int64)
    return dist[:n], winner


def max_edge_weight(fld: DensityField, which: str = "upper") -> float:
    """Largest single-step cost in the field's path graph.

    Bounds the cell-snapping error of any path cost: moving an endpoint
    inside its cell changes the cost by at most one edge weight.
    """
    data = _field_graph(fld, which)["coo"][2]
    return float(data.max()) if data.size else 0.0


def slice_distance(fld: DensityField, p, q) -> DistanceEstimate:
    """Certified distance bracket between two cells of one component.

    Shortest 8-neighbor path integrating the upper density gives a true
    upper bound; the same path problem on the lower density gives the
    Koebe lower bound (0 on non simply connected components). Symmetric
    exactly: the pair is ordered canonically before the run.
    """
    ca = fld.cell_of(p)
    cb = fld.cell_of(q)
    for cell in (ca, cb):
        if not fld.in_component(cell):
            raise OutOfDomain(f"cell {cell} not in component {fld.component}")
    meta = {"anisotropy": ANISOTROPY, "lower_slack": LOWER_SLACK}
    src = (complex(fld.grid.point_of(*ca)),)
    tgt = (complex(fld.grid.point_of(*cb)),)
    if ca == cb:
        return DistanceEstimate(0.0, 0.0, "slice-graph", fld.grid.resolution,
                                source=src, target=tgt, metadata=meta)
    a, b = sorted((ca, cb))
    upper = _pair_cost(fld, "upper", a, b)
    lower = _pair_cost(fld, "lower", a, b)
    return DistanceEstimate(
        lower=lower, upper=upper, method="slice-graph",
        resolution=fld.grid.resolution, source=src, target=tgt, metadata=meta,
    )


def projection_lower(
    f: SkewProduct, p, q, u_field: DensityField
) -> DistanceEstimate:
    """Lower bound through the base projection (z, w) -> z.

    The projection is holomorphic from the basin onto the base domain, so
    distances never increase under it; any lower bound between the base
    points bounds the distance between the points themselves. Uninformative
    (0) within a single fiber.
    """
    zp, wp = (complex(p[0]), complex(p[1]))
    zq, wq = (complex(q[0]), complex(q[1]))
    ca = u_field.cell_of(zp)
    cb = u_field.cell_of(zq)
    for cell in (ca, cb):
        if not u_field.in_component(cell):
            raise OutOfDomain(f"base cell {cell} not in component")
    meta = {"lower_slack": LOWER_SLACK}
    if ca == cb:
        return DistanceEstimate(0.0, math.inf, "projection",
                                u_field.grid.resolution,
                                source=(zp, wp), target=(zq, wq), metadata=meta)
    a, b = sorted((ca, cb))
    lower = _pair_cost(u_field, "lower", a, b)
    return DistanceEstimate(
        lower=lower, upper=math.inf, method="projection",
        resolution=u_field.grid.resolution,
        source=(zp, wp), target=(zq, wq), metadata=meta,
    )


# ---------------------------------------------------------------------------
# Exact closed forms on products of discs.
# ---------------------------------------------------------------------------


def monomial_product_model(f: SkewProduct) -> tuple[float, float] | None:
    """(base radius, fiber radius) when the basin is exactly a bidisc.

    Holds for decoupled monomial maps (c*z^d, c'*w^e): the basin of the
    origin is then the product of round discs of radii |c|^(-1/(d-1)) and
    |c'|^(-1/(e-1)). Returns None for every other map.
    """
    pc = f.p.coeffs
    if any(c != 0 for c in pc[:-1]) or pc[-1] == 0:
        return None
    d = len(pc) - 1
    if d < 2:
        return None
    terms = f.q.terms
    if len(terms) != 1:
        return None
    j, k, c = terms[0]
    if j != 0 or k < 2 or c == 0:
        return None
    r_base = float(abs(pc[-1]) ** (-1.0 / (d - 1)))
    r_fiber = float(abs(c) ** (-1.0 / (k - 1)))
    return r_base, r_fiber


def closed_form_distance(f: SkewProduct, p, q) -> DistanceEstimate | None:
    """Exact distance when the basin is a bidisc, else None.

    On a product of discs the distance is the max of the per-factor disc
    distances, each normalized to its own radius.
    """
    model = monomial_product_model(f)
    if model is None:
        return None
    r_base, r_fiber = model
    zp, wp = complex(p[0]), complex(p[1])
    zq, wq = complex(q[0]), complex(q[1])
    d = max(_disc_dist(zp, zq, r_base), _disc_dist(wp, wq, r_fiber))
    return DistanceEstimate(
        lower=d, upper=d, method="closed-form", resolution=0,
        source=(zp, wp), target=(zq, wq),
        metadata={"base_radius": r_base, "fiber_radius": r_fiber},
    )


# ---------------------------------------------------------------------------
# Slice provider: cached w-plane rasters and their density fields.
# ---------------------------------------------------------------------------


class SliceProvider:
    """Builds and caches basin slices over base points, with density fields.

    A coarse probe raster over the full escape box locates the slice basin;
    the final raster zooms onto its bounding box so the working resolution
    is spent on the basin and not on empty escape region. Undecided cells
    are treated as exterior, which shrinks the domain and keeps every upper
    bound valid.
    """

    def __init__(
        self,
        f: SkewProduct,
        resolution: int = 256,
        *,
        coarse_resolution: int = 96,
        eps_attract: float | None = None,
        max_iter: int = 400,
        workers: int = 1,
    ):
        if f.escape_radius is None:
            raise HypothesisViolation(
                "map has no certified escape radius: "
                + "; ".join(f.hypothesis_issues)
            )
        self.f = f
        self.resolution = int(resolution)
        self.coarse_resolution = int(coarse_resolution)
        self.eps_attract = (
            pick_attraction_radius(f) if eps_attract is None else float(eps_attract)
        )
        self.max_iter = int(max_iter)
        self.workers = int(workers)
        self._grids: dict = {}
        self._fields: dict = {}

    @staticmethod
    def _key(z: complex) -> tuple[float, float]:
        return (round(z.real, 12), round(z.imag, 12))

    def _zoom_box(self, z: complex) -> Box:
        half = 1.02 * self.f.escape_radius
        coarse = basin_grid_slice(
            self.f, z, Box.square(0j, half), self.coarse_resolution,
            self.eps_attract, self.max_iter, workers=self.workers,
            max_undecided=None,
        ).grid
        basin = coarse.mask == BASIN
        if not basin.any():
            raise OutOfDomain(f"slice over z={z} shows no basin cells")
        ys, xs = np.nonzero(basin)
        re_ax, im_ax = coarse.axes()
        pad_re = 3.0 * coarse.cell_re
        pad_im = 3.0 * coarse.cell_im
        lo_re = re_ax[xs.min()] - pad_re
        hi_re = re_ax[xs.max()] + pad_re
        lo_im = im_ax[ys.min()] - pad_im
        hi_im = im_ax[ys.max()] + pad_im
        center = complex(0.5 * (lo_re + hi_re), 0.5 * (lo_im + hi_im))
        return Box(center, 0.5 * (hi_re - lo_re), 0.5 * (hi_im - lo_im))

    def grid(self, z: complex) -> GridDomain:
        """The labeled fine raster of the slice basin over z."""
        key = self._key(complex(z))
        if key not in self._grids:
            box = self._zoom_box(complex(z))
            fine = basin_grid_slice(
                self.f, complex(z), box, self.resolution,
                self.eps_attract, self.max_iter, workers=self.workers,
                max_undecided=None,
            ).grid
            label_components(fine)
            self._grids[key] = fine
        return self._grids[key]

    def field(self, z: complex, component: int = 0) -> DensityField:
        key = (self._key(complex(z)), int(component))
        if key not in self._fields:
            self._fields[key] = density_field(self.grid(z), component)
        return self._fields[key]


# ---------------------------------------------------------------------------
# Two-leg chain estimator: point -> sheet -> backward-orbit node.
# ---------------------------------------------------------------------------


class ChainDistanceEstimator:
    """Upper bounds on the distance from a basin point to the backward orbit.

    Leg 1 runs inside the fiber slice over z: shortest upper-density path
    from w to a continued sheet value at z, minimized over every sheet the
    family offers, whatever its level. Leg 2 runs inside the sheet's base
    domain: shortest upper-density path from z to a backward-orbit base
    point z' sitting on the sheet; the sheet is a biholomorphic copy of
    its base domain and inclusion into the basin only shrinks distances,
    so the base-domain length bounds the in-basin length. Both legs and the
    choice of sheet are minimized jointly by a single multi-source Dijkstra
    per slice with one offset edge per usable sheet.

    The depth budget caps only the backward depth of the leg-2 endpoints;
    sheet levels are a coverage resource, not part of the truncation.
    Thousands of sheets can be resident at once, so per-sheet leg-2 state
    is kept slim: one cell-to-node map plus one cost vector per budget,
    with density and edge graphs rebuilt transiently per sheet.

    The endpoint (z', sheet value at z') is an exact backward-orbit point:
    its forward orbit lands on the origin in max(node depth, sheet level)
    steps, which can exceed the budget through the level. Whenever the tree
    is at least that deep the endpoint appears in it and node_index names
    it, otherwise node_index is -1 and the endpoint coordinates are still
    exact backward-orbit data.
    """

    def __init__(
        self,
        f: SkewProduct,
        tree: PreimageTree,
        graphs: GraphFamily | list[StableGraph],
        slices: SliceProvider | None = None,
        *,
        depth_budget: int | None = None,
        merge_tol: float = MERGE_TOL,
        tol: float = ROOT_TOL,
    ):
        self.f = f
        self.tree = tree
        if isinstance(graphs, GraphFamily):
            graphs = list(graphs.graphs)
        self.graphs = sorted(
            graphs, key=lambda g: (g.level, g.anchor.real, g.anchor.imag)
        )
        # The budget truncates backward depth of leg-2 endpoints, so its
        # natural ceiling is the deepest node available, not a sheet level.
        cap = max((n.depth for n in tree.nodes), default=0)
        self.depth_budget = cap if depth_budget is None else min(int(depth_budget), cap)
        self.slices = slices if slices is not None else SliceProvider(f)
        self.tol = tol
        self.merge_tol = merge_tol

        zs, ws = tree.as_arrays()
        depths = np.array([n.depth for n in tree.nodes], dtype=np.int64)
        self._node_kd = cKDTree(
            np.column_stack([zs.real, zs.imag, ws.real, ws.imag])
        )
        # Base points of the backward orbit: unique z values, keeping the
        # smallest depth at which each appears.
        order = np.lexsort((zs.imag, zs.real, depths))
        coords = np.column_stack([zs.real, zs.imag])[order]
        keep = _dedupe_candidates(coords, None, merge_tol)
        self._zn_values = zs[order][keep]
        self._zn_depths = depths[order][keep]
        self._node_maps: dict = {}
        self._leg2: dict = {}
        self._sheet_points: dict = {}

    # -- leg 2 machinery ----------------------------------------------------
    #
    # Per-sheet state stays slim so deep families fit in memory: an int32
    # cell-to-node map per sheet, plus float32 cost and int32 winner vectors
    # per budget. The density and the edge graph are rebuilt transiently for
    # each Dijkstra run and dropped.

    def _node_map(self, g: StableGraph) -> np.ndarray:
        nm = self._node_maps.get(id(g))
        if nm is None:
            nm = np.full(g.defined.shape, -1, dtype=np.int32)
            nm[g.defined] = np.arange(int(g.defined.sum()), dtype=np.int32)
            self._node_maps[id(g)] = nm
        return nm

    def _leg2_vectors(self, g: StableGraph, budget: int):
        """Cheapest upper-density cost to any budgeted endpoint, per cell.

        One multi-source Dijkstra over the sheet's full defined mask with
        the Koebe upper density; the mask complement is the sheet domain's
        own boundary, so the integrated cost is a valid upper bound along
        paths inside the sheet. Returns (cost, node_of) vectors indexed by
        the sheet's cell-to-node map, or (None, None) when no budgeted
        endpoint lands inside the mask.
        """
        key = (id(g), budget)
        out = self._leg2.get(key)
        if out is not None:
            return out
        nm = self._node_map(g)
        inside = g.defined
        n = int(inside.sum())
        res = g.resolution
        cell_re = 2.0 * g.box.half_re / res
        cell_im = 2.0 * g.box.half_im / res
        sel = np.nonzero(self._zn_depths <= budget)[0]
        iy, ix, ok = _cell_indices(g.box, res, self._zn_values[sel])
        sel, iy, ix = sel[ok], iy[ok], ix[ok]
        if sel.size:
            ok = inside[iy, ix]
            sel, iy, ix = sel[ok], iy[ok], ix[ok]
        if sel.size == 0 or n == 0:
            self._leg2[key] = (None, None)
            return self._leg2[key]

        delta = distance_transform_edt(inside, sampling=(cell_im, cell_re))
        np.minimum(delta, math.hypot(g.box.half_re, g.box.half_im), out=delta)
        rho = np.zeros(inside.shape)
        rho[inside] = 1.0 / delta[inside]
        rows, cols, data = [], [], []
        for dy, dx in _EDGE_OFFSETS:
            a = (slice(max(0, -dy), res - max(0, dy)),
                 slice(max(0, -dx), res - max(0, dx)))
            b = (slice(max(0, dy), res - max(0, -dy)),
                 slice(max(0, dx), res - max(0, -dx)))
            both = inside[a] & inside[b]
            if not both.any():
                continue
            u = nm[a][both]
            v = nm[b][both]
            w = 0.5 * (rho[a][both] + rho[b][both]) * math.hypot(
                dx * cell_re, dy * cell_im
            )
            rows.append(u); cols.append(v); data.append(w)
            rows.append(v); cols.append(u); data.append(w)
        if not rows:
            self._leg2[key] = (None, None)
            return self._leg2[key]
        graph = csr_matrix(
            (np.concatenate(data),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        # Several endpoints can share a cell; nodes are depth-sorted, so the
        # first occurrence is the shallowest.
        seeds = nm[iy, ix]
        uniq, first = np.unique(seeds, return_index=True)
        src_of = np.full(n, -1, dtype=np.int64)
        src_of[uniq] = sel[first]
        dist, _, sources = dijkstra(
            graph, directed=True, indices=uniq.astype(np.int64),
            min_only=True, return_predecessors=True,
        )
        node_of = np.full(n, -1, dtype=np.int32)
        hit = sources >= 0
        node_of[hit] = src_of[sources[hit]]
        out = (dist.astype(np.float32), node_of)
        self._leg2[key] = out
        return out

    def _sheet_hit(self, g: StableGraph, z: complex, budget: int):
        """(leg2, endpoint index) for one sheet at z, None when unusable."""
        nm = self._node_map(g)
        iy, ix, ok = _cell_indices(g.box, g.resolution, np.array([z]))
        if not ok[0]:
            return None
        nid = int(nm[int(iy[0]), int(ix[0])])
        if nid < 0:
            return None
        cost, node_of = self._leg2_vectors(g, budget)
        if cost is None:
            return None
        leg2 = float(cost[nid])
        if not math.isfinite(leg2):
            return None
        return leg2, int(node_of[nid])

    def _sheet_point(self, g: StableGraph, node_idx: int) -> complex:
        """Sheet value over one backward-orbit base point, machine accurate."""
        key = (id(g), node_idx)
        if key not in self._sheet_points:
            vals, ok = g.eval_at(self.f, np.array([self._zn_values[node_idx]]),
                                 self.tol)
            if not ok[0]:
                raise OutOfDomain("sheet undefined over its own source point")
            self._sheet_points[key] = complex(vals[0])
        return self._sheet_points[key]

    # -- public estimation --------------------------------------------------

    def estimate_slice(
        self, z: complex, ws, depth_budget: int | None = None
    ) -> tuple[list[DistanceEstimate | None], dict]:
        """Chain bounds for many fiber points over one base point.

        Returns one estimate per input (None where no chain closed) plus a
        diagnostics dict recording where candidates fell away: which leg
        failed distinguishes insufficient backward depth from insufficient
        sheet coverage.
        """
        z = complex(z)
        ws = [complex(w) for w in np.atleast_1d(np.asarray(ws, dtype=complex))]
        budget = self.depth_budget if depth_budget is None else min(
            int(depth_budget), self.depth_budget
        )
        diag = {
            "depth_budget": budget,
            "graphs_total": len(self.graphs),
            "graphs_in_budget": 0,
            "graphs_covering": 0,
            "leg2_reached": 0,
            "targets_in_slice": 0,
            "slice_has_basin": True,
            "endpoint_eval_failed": 0,
        }
        out: list[DistanceEstimate | None] = [None] * len(ws)

        # Trivial hits: the query already sits on a backward-orbit node.
        pending = []
        for j, w in enumerate(ws):
            scale = max(1.0, abs(z), abs(w))
            d, i = self._node_kd.query([z.real, z.imag, w.real, w.imag])
            if d <= 10.0 * self.merge_tol * scale:
                node = self.tree.nodes[int(i)]
                out[j] = DistanceEstimate(
                    0.0, 0.0, "chain", 0, source=(z, w),
                    target=(node.z, node.w),
                    metadata={"node_index": int(i), "node_depth": node.depth,
                              "leg1": 0.0, "leg2": 0.0,
                              "depth_budget": budget},
                )
            else:
                pending.append(j)
        if not pending:
            return out, diag

        try:
            sgrid = self.slices.grid(z)
        except OutOfDomain:
            diag["slice_has_basin"] = False
            return out, diag

        # Usable sheets over z: continued at z with a reachable backward-orbit
        # base point in z's cell component. Every level participates; the
        # budget restricts leg-2 endpoints only.
        usable = []
        for g in self.graphs:
            diag["graphs_in_budget"] += 1
            if not bool(g.defined_at(z)):
                continue
            diag["graphs_covering"] += 1
            hit = self._sheet_hit(g, z, budget)
            if hit is None:
                continue
            leg2, znode = hit
            diag["leg2_reached"] += 1
            vals, ok = g.eval_at(self.f, np.array([z]), self.tol)
            if not ok[0]:
                continue
            usable.append((g, complex(vals[0]), leg2, znode))
        if not usable:
            return out, diag

        # Group sheet targets by the slice component they land in, then one
        # offset-source Dijkstra per component answers every pending w.
        by_comp: dict[int, list[int]] = {}
        target_cells = []
        for k, (g, wg, leg2, znode) in enumerate(usable):
            try:
                cell = sgrid.index_of(wg)
            except OutOfDomain:
                target_cells.append(None)
                continue
            comp = int(sgrid.labels[cell])
            if comp < 0:
                target_cells.append(None)
                continue
            target_cells.append(cell)
            by_comp.setdefault(comp, []).append(k)
            diag["targets_in_slice"] += 1

        for comp, ks in sorted(by_comp.items()):
            fld = self.slices.field(z, comp)
            graph_nodes = _field_graph(fld, "upper")["node"]
            cells = [target_cells[k] for k in ks]
            offs = [usable[k][2] for k in ks]
            cost, winner = multi_source_costs(fld, cells, offs)
            for j in pending:
                w = ws[j]
                try:
                    wcell = sgrid.index_of(w)
                except OutOfDomain:
                    continue
                if int(sgrid.labels[wcell]) != comp:
                    continue
                nid = int(graph_nodes[wcell])
                total = float(cost[nid])
                if math.isinf(total) or winner[nid] < 0:
                    continue
                k = ks[int(winner[nid])]
                g, wg, leg2, znode = usable[k]
                zn = complex(self._zn_values[znode])
                try:
                    wn = self._sheet_point(g, znode)
                except OutOfDomain:
                    # Shared masks are cell-coarse; the winning sheet can
                    # fail the exact tower at this node. Rare; drop the
                    # estimate rather than report an unverified endpoint.
                    diag["endpoint_eval_failed"] += 1
                    continue
                dn, ni = self._node_kd.query([zn.real, zn.imag, wn.real, wn.imag])
                node_index = int(ni) if dn <= 1e-6 * max(1.0, abs(zn), abs(wn)) else -1
                est = DistanceEstimate(
                    0.0, total, "chain", sgrid.resolution,
                    source=(z, w), target=(zn, wn),
                    metadata={
                        "leg1": total - leg2, "leg2": leg2,
                        "graph_level": g.level,
                        "graph_anchor": complex(g.anchor),
                        "node_index": node_index,
                        "node_depth": int(self._zn_depths[znode]),
                        "orbit_steps": max(int(self._zn_depths[znode]), g.level),
                        "depth_budget": budget,
                    },
                )
                if out[j] is None or est.upper < out[j].upper:
                    out[j] = est
        return out, diag

    def estimate(self, p, depth_budget: int | None = None) -> DistanceEstimate:
        z, w = complex(p[0]), complex(p[1])
        ests, diag = self.estimate_slice(z, [w], depth_budget)
        if ests[0] is None:
            raise NoGraphReachable(
                f"no chain closed from ({z}, {w}) at depth budget "
                f"{diag['depth_budget']}", diagnostics=diag,
            )
        return ests[0]


def chain_distance_to_S(
    f: SkewProduct,
    p,
    tree: PreimageTree,
    graphs: GraphFamily | list[StableGraph],
    slices: SliceProvider | None = None,
    *,
    depth_budget: int | None = None,
) -> DistanceEstimate:
    """One-shot chain bound from p to the backward orbit of the origin.

    Convenience wrapper; batch workloads should hold a
    ChainDistanceEstimator so slice rasters and leg-2 cost fields are
    built once and reused.
    """
    est = ChainDistanceEstimator(
        f, tree, graphs, slices, depth_budget=depth_budget
    )
    return est.estimate(p)


# ---------------------------------------------------------------------------
# Coarse 4D cross-check on an inscribed-polydisc density.
# ---------------------------------------------------------------------------


@dataclass
class Mask4D:
    """Boolean basin raster over a product box in C^2.

    mask is indexed [z_im, z_re, w_im, w_re], matching the planar row-major
    (im, re) convention on each factor.
    """

    z_box: Box
    w_box: Box
    resolution: int
    mask: np.ndarray
    eps_attract: float
    max_iter: int
    map_hash: str = ""
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def axes(self) -> tuple[np.ndarray, ...]:
        """(z_im, z_re, w_im, w_re) cell-center coordinates."""
        out = []
        for box, pick in ((self.z_box, "im"), (self.z_box, "re"),
                          (self.w_box, "im"), (self.w_box, "re")):
            half = box.half_im if pick == "im" else box.half_re
            c0 = (box.center.imag if pick == "im" else box.center.real) - half
            step = 2.0 * half / self.resolution
            out.append(c0 + (np.arange(self.resolution) + 0.5) * step)
        # Re-order to the documented (z_im, z_re, w_im, w_re).
        return out[0], out[1], out[2], out[3]

    def cell_sizes(self) -> tuple[float, float, float, float]:
        r = self.resolution
        return (
            2.0 * self.z_box.half_im / r,
            2.0 * self.z_box.half_re / r,
            2.0 * self.w_box.half_im / r,
            2.0 * self.w_box.half_re / r,
        )

    def index_of(self, z: complex, w: complex) -> tuple[int, int, int, int]:
        sizes = self.cell_sizes()
        coords = (
            z.imag - (self.z_box.center.imag - self.z_box.half_im),
            z.real - (self.z_box.center.real - self.z_box.half_re),
            w.imag - (self.w_box.center.imag - self.w_box.half_im),
            w.real - (self.w_box.center.real - self.w_box.half_re),
        )
        idx = []
        for x, h in zip(coords, sizes):
            i = int(math.floor(x / h))
            if not (0 <= i < self.resolution):
                raise OutOfDomain(f"point ({z}, {w}) outside 4D box")
            idx.append(i)
        return tuple(idx)

    def point_of(self, idx: tuple[int, int, int, int]) -> tuple[complex, complex]:
        zi, zr, wi, wr = self.axes()
        return (
            complex(zr[idx[1]], zi[idx[0]]),
            complex(wr[idx[3]], wi[idx[2]]),
        )


def _raster_4d(
    f: SkewProduct, z_box: Box, w_box: Box, resolution: int,
    eps: float, max_iter: int,
) -> Mask4D:
    out = Mask4D(
        z_box=z_box, w_box=w_box, resolution=resolution,
        mask=np.zeros((resolution,) * 4, dtype=bool),
        eps_attract=eps, max_iter=max_iter, map_hash=map_fingerprint(f),
    )
    zi, zr, wi, wr = out.axes()
    W = (wr[None, :] + 1j * wi[:, None]).ravel()
    # One z_im row of the lattice per call keeps the classifier's working
    # set at resolution^3 points.
    for a in range(resolution):
        Z = np.repeat(zr + 1j * zi[a], W.size)
        state, _ = classify_points(f, Z, np.tile(W, resolution), eps, max_iter)
        out.mask[a] = (state == BASIN).reshape(resolution, resolution, resolution)
    return out


def _bbox_axis(axis_coords: np.ndarray, hit: np.ndarray, pad: float) -> tuple[float, float]:
    lo = float(axis_coords[hit.argmax()]) - pad
    hi = float(axis_coords[len(hit) - 1 - hit[::-1].argmax()]) + pad
    return lo, hi


def basin_mask_4d(
    f: SkewProduct,
    resolution: int = 24,
    *,
    z_box: Box | None = None,
    w_box: Box | None = None,
    eps_attract: float | None = None,
    max_iter: int = 300,
    coarse_resolution: int = 12,
) -> Mask4D:
    """Classify the basin on a 4D lattice.

    A coarse pass over the full escape box locates the basin's bounding
    box; the fine raster then spends its cells there. Cropping only shrinks
    the visible domain, so distances computed on the result stay valid
    upper bounds. Explicit z_box/w_box skip the zoom.
    """
    resolution = int(resolution)
    if resolution > _MAX_AXIS_4D:
        raise ResourceCap(
            f"4D raster capped at {_MAX_AXIS_4D} cells per axis, got {resolution}"
        )
    if resolution < 4:
        raise ConfigError("4D raster needs at least 4 cells per axis")
    if f.escape_radius is None:
        raise HypothesisViolation(
            "map has no certified escape radius: " + "; ".join(f.hypothesis_issues)
        )
    eps = pick_attraction_radius(f) if eps_attract is None else float(eps_attract)
    if z_box is None or w_box is None:
        coarse = _raster_4d(
            f,
            z_box or Box.square(0j, 1.02 * f.base_radius),
            w_box or Box.square(0j, 1.02 * f.escape_radius),
            int(coarse_resolution), eps, int(max_iter),
        )
        if not coarse.mask.any():
            raise OutOfDomain("coarse 4D raster shows no basin cells")
        czi, czr, cwi, cwr = coarse.axes()
        sizes = coarse.cell_sizes()
        hits = [
            coarse.mask.any(axis=tuple(i for i in range(4) if i != k))
            for k in range(4)
        ]
        if z_box is None:
            lo_i, hi_i = _bbox_axis(czi, hits[0], 1.5 * sizes[0])
            lo_r, hi_r = _bbox_axis(czr, hits[1], 1.5 * sizes[1])
            z_box = Box(complex(0.5 * (lo_r + hi_r), 0.5 * (lo_i + hi_i)),
                        0.5 * (hi_r - lo_r), 0.5 * (hi_i - lo_i))
        if w_box is None:
            lo_i, hi_i = _bbox_axis(cwi, hits[2], 1.5 * sizes[2])
            lo_r, hi_r = _bbox_axis(cwr, hits[3], 1.5 * sizes[3])
            w_box = Box(complex(0.5 * (lo_r + hi_r), 0.5 * (lo_i + hi_i)),
                        0.5 * (hi_r - lo_r), 0.5 * (hi_i - lo_i))
    return _raster_4d(f, z_box, w_box, resolution, eps, int(max_iter))


_AXIS_STEPS_4D = ((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1))


def _mask4d_graph(m4: Mask4D, max_nodes: int) -> dict:
    if "graph" in m4.cache:
        return m4.cache["graph"]
    mask = m4.mask
    n = int(mask.sum())
    if n == 0:
        raise OutOfDomain("4D raster contains no basin cells")
    if n > max_nodes:
        raise ResourceCap(f"4D graph would hold {n} nodes (cap {max_nodes})")
    node = np.full(mask.shape, -1, dtype=np.int64)
    node[mask] = np.arange(n)
    # Inscribed-cube radius in chessboard cell units; a cube of that
    # physical half-size (times the smallest cell edge) sits inside the
    # basin around each center, and a polydisc inscribes in the cube.
    sizes = m4.cell_sizes()
    rho = distance_transform_cdt(mask, metric="chessboard").astype(float)
    rho *= min(sizes)
    rows, cols, data = [], [], []
    res = m4.resolution
    for step, h in zip(_AXIS_STEPS_4D, sizes):
        a = tuple(slice(0, res - s) for s in step)
        b = tuple(slice(s, res) for s in step)
        both = mask[a] & mask[b]
        if not both.any():
            continue
        u = node[a][both]
        v = node[b][both]
        w = h / (0.5 * (rho[a][both] + rho[b][both]))
        rows.append(u); cols.append(v); data.append(w)
        rows.append(v); cols.append(u); data.append(w)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    d = np.concatenate(data)
    graph = {
        "n": n, "node": node,
        "csr": csr_matrix((d, (r, c)), shape=(n, n)),
        "max_edge": float(d.max()) if d.size else 0.0,
    }
    m4.cache["graph"] = graph
    return graph


def polydisc_distance_4d(
    m4: Mask4D, p, q, *, max_nodes: int = 6_000_000
) -> DistanceEstimate:
    """Coarse true upper bound on the basin distance between two points.

    Edge weight along an axis step is step length divided by the inscribed
    polydisc radius (the max over the two complex coordinates reduces to
    the moving one); any lattice path is an admissible curve run through
    the polydisc upper metric.
    """
    zp, wp = complex(p[0]), complex(p[1])
    zq, wq = complex(q[0]), complex(q[1])
    ia = m4.index_of(zp, wp)
    ib = m4.index_of(zq, wq)
    for cell in (ia, ib):
        if not m4.mask[cell]:
            raise OutOfDomain(f"4D cell {cell} not classified basin")
    g = _mask4d_graph(m4, max_nodes)
    meta = {"nodes": g["n"], "max_edge": g["max_edge"]}
    src = m4.point_of(ia)
    tgt = m4.point_of(ib)
    if ia == ib:
        return DistanceEstimate(0.0, 0.0, "polydisc-4d", m4.resolution,
                                source=src, target=tgt, metadata=meta)
    a, b = sorted((ia, ib))
    dist = dijkstra(g["csr"], directed=True, indices=int(g["node"][a]))
    d = float(dist[int(g["node"][b])])
    if math.isinf(d):
        raise Disconnected(f"no 4D lattice path between {a} and {b}")
    return DistanceEstimate(
        lower=0.0, upper=d, method="polydisc-4d", resolution=m4.resolution,
        source=src, target=tgt, metadata=meta,
    )
