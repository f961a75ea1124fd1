"""Backward orbits of the attracting fixed point and continued stable graphs.

Two families of objects live here. The preimage trees enumerate, breadth
first, the finite-depth backward orbit of the fixed point (0, 0): depth k+1
points solve P(z) = z_parent and then Q(z, w) = w_parent over each base root,
with nearby points merged so the fixed point does not re-enter as its own
duplicate. The stable graphs extend the local invariant curve w = s(z)
backwards: each graph is a sheet w = f(z) over a raster of base cells
satisfying Q(z, f(z)) = parent(P(z)), anchored at a fiber preimage (0, w_n)
of the origin and grown outward from the anchor cell by a breadth-first flood
that assigns each new cell the fiber root closest to an already-solved
neighbor. Cells where that choice is ambiguous (two distinct roots comparably
close to the seed) or discontinuous (a jump far beyond the ring's typical
increment) are excluded and counted, never silently kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.spatial import cKDTree

from .dynamics import (
    BASIN,
    ESCAPED,
    Box,
    GridDomain,
    StableSeries,
    classify_points,
    pick_attraction_radius,
)
from .errors import (
    BranchPointProximity,
    ConfigError,
    DegreeDrop,
    HypothesisViolation,
    NonConvergence,
    OutOfDomain,
    ResourceCap,
)
from .parallel import band_map
from .polynomials import (
    ROOT_TOL,
    BivarPoly,
    ComplexPoly,
    SkewProduct,
    _largest_real_root_at_least,
    batched_roots,
    map_fingerprint,
    roots,
)

MERGE_TOL = 1e-9

# Neighbor offsets in fixed priority order: axis neighbors first, then
# diagonals, row-major within each group. Seed selection and flood order
# must not depend on dict or set iteration.
_OFFSETS = ((-1, 0), (0, -1), (0, 1), (1, 0), (-1, -1), (-1, 1), (1, -1), (1, 1))

_EIGHT = np.ones((3, 3), dtype=bool)


# ---------------------------------------------------------------------------
# Single-target preimage solves.
# ---------------------------------------------------------------------------


def fiber_preimages_w(
    q: BivarPoly, z: complex, w_target: complex, tol: float = ROOT_TOL
) -> list[complex]:
    """All deg_w roots (with multiplicity) of Q(z, w) = w_target, sorted.

    Raises DegreeDrop when the leading w-coefficient vanishes at this base
    point; under the structural hypotheses that cannot happen, so a drop is
    evidence against them and is surfaced rather than papered over.
    """
    fiber = q.fiber_poly(complex(z))
    if fiber.degree < q.degree_w:
        raise DegreeDrop(
            f"fiber polynomial degenerates at z={complex(z)}: "
            f"degree {fiber.degree} < {q.degree_w}"
        )
    coeffs = list(fiber.coeffs)
    coeffs[0] -= complex(w_target)
    return roots(ComplexPoly(tuple(coeffs)), tol=tol)


def base_preimages(p: ComplexPoly, z_target: complex, tol: float = ROOT_TOL) -> list[complex]:
    """All deg P roots of P(z) = z_target, sorted by (re, im)."""
    if p.degree < 1:
        raise HypothesisViolation("base polynomial is constant")
    coeffs = list(p.coeffs)
    coeffs[0] -= complex(z_target)
    return roots(ComplexPoly(tuple(coeffs)), tol=tol)


def _fiber_rows(q: BivarPoly, zs: np.ndarray) -> np.ndarray:
    """Coefficient rows of w -> Q(z, w) for a flat vector of base points."""
    rows = np.zeros((zs.size, q.degree_w + 1), dtype=np.complex128)
    for k, a_k in q._w_coeff_polys():
        rows[:, k] = a_k(zs)
    return rows


def _quadratic_roots(c0: np.ndarray, c1: np.ndarray, c2: np.ndarray):
    """Both roots of c2 w^2 + c1 w + c0 = 0 elementwise, cancellation-safe."""
    disc = np.sqrt(c1 * c1 - 4.0 * c2 * c0)
    disc = np.where(np.real(np.conj(c1) * disc) < 0.0, -disc, disc)
    qq = -0.5 * (c1 + disc)
    r1 = qq / c2
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(qq != 0, c0 / qq, 0j)
    return r1, r2


def solve_fiber_batch(
    q: BivarPoly, zs: np.ndarray, targets: np.ndarray, tol: float = ROOT_TOL
) -> np.ndarray:
    """Roots of Q(z_i, w) = target_i for flat input vectors; shape (n, deg_w).

    Quadratic fibers use the closed form; higher degrees run the batched
    simultaneous iteration.
    """
    zs = np.asarray(zs, dtype=np.complex128).ravel()
    rows = _fiber_rows(q, zs)
    rows[:, 0] -= np.asarray(targets, dtype=np.complex128).ravel()
    dead = np.abs(rows[:, -1]) == 0.0
    if np.any(dead):
        bad = complex(zs[int(np.argmax(dead))])
        raise DegreeDrop(f"fiber polynomial degenerates at z={bad}")
    if q.degree_w == 2:
        r1, r2 = _quadratic_roots(rows[:, 0], rows[:, 1], rows[:, 2])
        return np.stack([r1, r2], axis=1)
    return batched_roots(rows, tol=tol)


def _solve_univariate_batch(p: ComplexPoly, targets: np.ndarray, tol: float) -> np.ndarray:
    """Roots of P(z) = target_i for a flat target vector; shape (n, deg P)."""
    targets = np.asarray(targets, dtype=np.complex128).ravel()
    rows = np.tile(np.asarray(p.coeffs, dtype=np.complex128), (targets.size, 1))
    rows[:, 0] -= targets
    if p.degree == 2:
        r1, r2 = _quadratic_roots(rows[:, 0], rows[:, 1], rows[:, 2])
        return np.stack([r1, r2], axis=1)
    return batched_roots(rows, tol=tol)


# ---------------------------------------------------------------------------
# Preimage trees.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeNode:
    """One backward-orbit point: F^depth maps (z, w) to the origin."""

    z: complex
    w: complex
    depth: int
    parent: int
    residual: float


@dataclass
class PreimageTree:
    nodes: list[TreeNode]
    merge_tol: float = MERGE_TOL
    map_hash: str = ""

    @property
    def max_depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def at_depth(self, k: int) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.depth == k]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        zs = np.array([n.z for n in self.nodes], dtype=np.complex128)
        ws = np.array([n.w for n in self.nodes], dtype=np.complex128)
        return zs, ws

    def save_text(self, path: str | Path) -> Path:
        """One record per node: index depth parent z_re z_im w_re w_im residual."""
        path = Path(path)
        lines = [
            "# skewbasin preimage tree v1",
            f"# map {self.map_hash}",
            f"# merge_tol {self.merge_tol!r}",
            "# columns: index depth parent z_re z_im w_re w_im residual",
        ]
        for i, n in enumerate(self.nodes):
            lines.append(
                f"{i} {n.depth} {n.parent} {n.z.real!r} {n.z.imag!r} "
                f"{n.w.real!r} {n.w.imag!r} {n.residual!r}"
            )
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load_text(cls, path: str | Path) -> "PreimageTree":
        text = Path(path).read_text().splitlines()
        if not text or text[0] != "# skewbasin preimage tree v1":
            raise ConfigError(f"{path}: not a preimage tree file")
        map_hash = ""
        merge_tol = MERGE_TOL
        nodes: list[TreeNode] = []
        for line in text[1:]:
            if line.startswith("# map "):
                map_hash = line[len("# map "):].strip()
            elif line.startswith("# merge_tol "):
                merge_tol = float(line[len("# merge_tol "):])
            elif line.startswith("#") or not line.strip():
                continue
            else:
                parts = line.split()
                if len(parts) != 8:
                    raise ConfigError(f"{path}: malformed record {line!r}")
                idx, depth, parent = int(parts[0]), int(parts[1]), int(parts[2])
                if idx != len(nodes):
                    raise ConfigError(f"{path}: out-of-order record {line!r}")
                if parent >= idx:
                    raise ConfigError(f"{path}: node {idx} precedes its parent")
                nodes.append(
                    TreeNode(
                        z=complex(float(parts[3]), float(parts[4])),
                        w=complex(float(parts[5]), float(parts[6])),
                        depth=depth,
                        parent=parent,
                        residual=float(parts[7]),
                    )
                )
        if not nodes:
            raise ConfigError(f"{path}: no node records")
        return cls(nodes=nodes, merge_tol=merge_tol, map_hash=map_hash)


def _check_fixed_origin(f: SkewProduct) -> None:
    scale = f.p.coefficient_scale() + f.q.coefficient_scale()
    if abs(f.p(0j)) > 1e-12 * scale or abs(f.q(0j, 0j)) > 1e-12 * scale:
        raise HypothesisViolation("origin is not a fixed point of the skew product")


def _dedupe_candidates(
    coords: np.ndarray, existing: np.ndarray | None, merge_tol: float
) -> np.ndarray:
    """Greedy first-wins merge of candidate rows against themselves and any
    existing rows; returns indices of kept candidates in input order."""
    n = coords.shape[0]
    keep = np.ones(n, dtype=bool)
    if existing is not None and existing.shape[0]:
        dist, _ = cKDTree(existing).query(coords, k=1, distance_upper_bound=merge_tol)
        keep &= ~np.isfinite(dist)
    if n > 1:
        idx = np.nonzero(keep)[0]
        if idx.size > 1:
            tree = cKDTree(coords[idx])
            neighbor_lists = tree.query_ball_point(coords[idx], merge_tol)
            alive = np.ones(idx.size, dtype=bool)
            for i in range(idx.size):
                if not alive[i]:
                    continue
                for j in neighbor_lists[i]:
                    if j > i:
                        alive[j] = False
            keep[idx[~alive]] = False
    return np.nonzero(keep)[0]


def preimage_tree(
    f: SkewProduct,
    depth: int,
    *,
    filter_basin: bool = False,
    tol: float = ROOT_TOL,
    merge_tol: float = MERGE_TOL,
    max_nodes: int = 500_000,
    workers: int = 1,
) -> PreimageTree:
    """Breadth-first backward orbit of (0, 0) down to the given depth.

    Each frontier node (z', w') spawns all solutions of P(z) = z' paired with
    all solutions of Q(z, w) = w' at that base root. New points closer than
    merge_tol to any earlier point (lower depth, or earlier in the current
    level's deterministic order) are merged away, keeping the lowest depth.
    With filter_basin set, every node is classified and non-basin nodes are
    pruned together with their descendants.
    """
    if depth < 0:
        raise ConfigError("depth must be >= 0")
    _check_fixed_origin(f)
    nodes = [TreeNode(0j, 0j, 0, -1, 0.0)]
    coords = [np.zeros((1, 4), dtype=np.float64)]
    frontier = [0]
    dp, dq = f.p.degree, f.q.degree_w
    for level in range(1, depth + 1):
        if not frontier:
            break
        pz = np.array([nodes[i].z for i in frontier], dtype=np.complex128)
        pw = np.array([nodes[i].w for i in frontier], dtype=np.complex128)
        try:
            zroots = _solve_univariate_batch(f.p, pz, tol)
            cand_z = zroots.ravel()
            cand_targets = np.repeat(pw, dp)
            wroots = _solve_fiber_batch_banded(f.q, cand_z, cand_targets, tol, workers)
        except NonConvergence as exc:
            raise NonConvergence(
                f"root solve failed at depth {level} while expanding "
                f"{len(frontier)} frontier nodes: {exc}",
                iterations=exc.iterations,
            ) from exc
        cz = np.repeat(cand_z, dq)
        cw = wroots.ravel()
        parent_idx = np.repeat(np.array(frontier), dp * dq)
        pz_full = np.repeat(pz, dp * dq)
        pw_full = np.repeat(pw, dp * dq)
        res = np.maximum(np.abs(f.p(cz) - pz_full), np.abs(f.q(cz, cw) - pw_full))

        order = np.lexsort((cw.imag, cw.real, cz.imag, cz.real))
        cz, cw, parent_idx, res = cz[order], cw[order], parent_idx[order], res[order]
        cand_coords = np.column_stack([cz.real, cz.imag, cw.real, cw.imag])
        kept = _dedupe_candidates(cand_coords, np.concatenate(coords), merge_tol)

        if len(nodes) + kept.size > max_nodes:
            raise ResourceCap(
                f"preimage tree would exceed {max_nodes} nodes at depth {level}"
            )
        start = len(nodes)
        for i in kept:
            nodes.append(
                TreeNode(
                    z=complex(cz[i]),
                    w=complex(cw[i]),
                    depth=level,
                    parent=int(parent_idx[i]),
                    residual=float(res[i]),
                )
            )
        coords.append(cand_coords[kept])
        frontier = list(range(start, len(nodes)))
    tree = PreimageTree(nodes=nodes, merge_tol=merge_tol, map_hash=map_fingerprint(f))
    if filter_basin:
        tree = _prune_non_basin(f, tree)
    return tree


def _solve_fiber_batch_banded(
    q: BivarPoly, zs: np.ndarray, targets: np.ndarray, tol: float, workers: int
) -> np.ndarray:
    if workers <= 1 or zs.size < 1024:
        return solve_fiber_batch(q, zs, targets, tol)
    parts = band_map(
        lambda lo, hi: solve_fiber_batch(q, zs[lo:hi], targets[lo:hi], tol),
        zs.size,
        workers,
    )
    return np.concatenate(parts, axis=0)


def _prune_non_basin(f: SkewProduct, tree: PreimageTree) -> PreimageTree:
    zs, ws = tree.as_arrays()
    eps = pick_attraction_radius(f)
    state, _ = classify_points(f, zs, ws, eps_attract=eps, max_iter=400)
    keep = state.ravel() == BASIN
    # A dropped node takes its whole subtree with it: parents precede children.
    remap = np.full(len(tree.nodes), -2, dtype=np.int64)
    out: list[TreeNode] = []
    for i, node in enumerate(tree.nodes):
        parent_ok = node.parent < 0 or remap[node.parent] >= 0
        if keep[i] and parent_ok:
            remap[i] = len(out)
            out.append(
                TreeNode(node.z, node.w, node.depth,
                         int(remap[node.parent]) if node.parent >= 0 else -1,
                         node.residual)
            )
    return PreimageTree(nodes=out, merge_tol=tree.merge_tol, map_hash=tree.map_hash)


# ---------------------------------------------------------------------------
# One-variable pullback trees: base plane z-nodes and invariant-fiber anchors.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PullbackNode:
    value: complex
    depth: int
    parent: int
    residual: float


@dataclass
class PullbackTree:
    """Backward orbit of 0 under a single polynomial, merged keep-lowest-depth."""

    nodes: list[PullbackNode]
    kind: str
    merge_tol: float = MERGE_TOL
    map_hash: str = ""

    def values(self) -> np.ndarray:
        return np.array([n.value for n in self.nodes], dtype=np.complex128)

    def depths(self) -> np.ndarray:
        return np.array([n.depth for n in self.nodes], dtype=np.int64)

    def at_depth(self, k: int) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.depth == k]


def _pullback_tree(
    poly: ComplexPoly, levels: int, merge_tol: float, tol: float, kind: str,
    max_nodes: int,
) -> PullbackTree:
    if levels < 0:
        raise ConfigError("levels must be >= 0")
    if abs(poly(0j)) > 1e-12 * poly.coefficient_scale():
        raise HypothesisViolation("0 is not a fixed point of the pullback polynomial")
    nodes = [PullbackNode(0j, 0, -1, 0.0)]
    coords = [np.zeros((1, 2), dtype=np.float64)]
    frontier = [0]
    deg = poly.degree
    for level in range(1, levels + 1):
        if not frontier:
            break
        targets = np.array([nodes[i].value for i in frontier], dtype=np.complex128)
        try:
            got = _solve_univariate_batch(poly, targets, tol)
        except NonConvergence as exc:
            raise NonConvergence(
                f"pullback solve failed at depth {level}: {exc}",
                iterations=exc.iterations,
            ) from exc
        cand = got.ravel()
        parent_idx = np.repeat(np.array(frontier), deg)
        res = np.abs(poly(cand) - np.repeat(targets, deg))
        order = np.lexsort((cand.imag, cand.real))
        cand, parent_idx, res = cand[order], parent_idx[order], res[order]
        cand_coords = np.column_stack([cand.real, cand.imag])
        kept = _dedupe_candidates(cand_coords, np.concatenate(coords), merge_tol)
        if len(nodes) + kept.size > max_nodes:
            raise ResourceCap(f"pullback tree would exceed {max_nodes} nodes")
        start = len(nodes)
        for i in kept:
            nodes.append(
                PullbackNode(complex(cand[i]), level, int(parent_idx[i]), float(res[i]))
            )
        coords.append(cand_coords[kept])
        frontier = list(range(start, len(nodes)))
    return PullbackTree(nodes=nodes, kind=kind, merge_tol=merge_tol)


def base_preimage_tree(
    f: SkewProduct, depth: int, *, merge_tol: float = MERGE_TOL,
    tol: float = ROOT_TOL, max_nodes: int = 500_000,
) -> PullbackTree:
    """z-plane nodes with P^depth(z) = 0, each kept at its lowest depth."""
    tree = _pullback_tree(f.p, depth, merge_tol, tol, "base", max_nodes)
    tree.map_hash = map_fingerprint(f)
    return tree


def fiber_anchor_tree(
    f: SkewProduct, levels: int, *, merge_tol: float = MERGE_TOL,
    tol: float = ROOT_TOL, max_nodes: int = 500_000,
) -> PullbackTree:
    """Anchor points (0, w) on the invariant fiber: pullbacks of 0 under Q(0, .)."""
    tree = _pullback_tree(f.q.fiber_poly(0j), levels, merge_tol, tol, "fiber-anchor", max_nodes)
    tree.map_hash = map_fingerprint(f)
    return tree


# ---------------------------------------------------------------------------
# Raster geometry helpers shared by the stable graphs.
# ---------------------------------------------------------------------------


def _grid_axes(box: Box, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    cell_re = 2.0 * box.half_re / resolution
    cell_im = 2.0 * box.half_im / resolution
    re0 = box.center.real - box.half_re
    im0 = box.center.imag - box.half_im
    re = re0 + (np.arange(resolution) + 0.5) * cell_re
    im = im0 + (np.arange(resolution) + 0.5) * cell_im
    return re, im


def _grid_centers(box: Box, resolution: int) -> np.ndarray:
    re, im = _grid_axes(box, resolution)
    return re[None, :] + 1j * im[:, None]


def _cell_indices(box: Box, resolution: int, pts: np.ndarray):
    """(iy, ix, inside) for a flat complex vector; indices are clipped, the
    inside mask says which were actually in the box."""
    cell_re = 2.0 * box.half_re / resolution
    cell_im = 2.0 * box.half_im / resolution
    fx = (pts.real - (box.center.real - box.half_re)) / cell_re
    fy = (pts.imag - (box.center.imag - box.half_im)) / cell_im
    ix = np.floor(fx).astype(np.int64)
    iy = np.floor(fy).astype(np.int64)
    inside = (ix >= 0) & (ix < resolution) & (iy >= 0) & (iy < resolution)
    return np.clip(iy, 0, resolution - 1), np.clip(ix, 0, resolution - 1), inside


# ---------------------------------------------------------------------------
# Stable graphs.
# ---------------------------------------------------------------------------


@dataclass
class StableGraph:
    """One sheet w = f(z) of the backward-extended stable curve.

    level is the number of pullback steps from the local series; the sheet
    satisfies Q(z, f(z)) = parent(P(z)) on its defined cells and passes
    through the anchor (0, anchor). anchor_depth is the anchor's own pullback
    depth on the invariant fiber, which is < level for re-extended sheets.
    """

    level: int
    anchor: complex
    anchor_depth: int
    parent: "StableGraph | StableSeries"
    box: Box
    resolution: int
    defined: np.ndarray
    values: np.ndarray
    flags: dict[str, int] = field(default_factory=dict)
    flagged_cells: tuple[BranchPointProximity, ...] = ()
    residual_max: float = 0.0
    map_hash: str = ""

    def lineage(self) -> list:
        """[series, level-1 sheet, ..., this sheet], top of the tower first."""
        chain: list = [self]
        node = self.parent
        while isinstance(node, StableGraph):
            chain.append(node)
            node = node.parent
        chain.append(node)
        return chain[::-1]

    def defined_at(self, z) -> np.ndarray:
        pts = np.asarray(z, dtype=np.complex128).ravel()
        iy, ix, inside = _cell_indices(self.box, self.resolution, pts)
        out = inside & self.defined[iy, ix]
        return out.reshape(np.shape(z)) if np.shape(z) else out[0]

    def raster_value(self, z) -> np.ndarray:
        """Nearest-cell stored value; branch selector, half-cell accurate."""
        pts = np.asarray(z, dtype=np.complex128).ravel()
        iy, ix, inside = _cell_indices(self.box, self.resolution, pts)
        vals = np.where(inside & self.defined[iy, ix], self.values[iy, ix],
                        np.nan + 0j)
        return vals.reshape(np.shape(z)) if np.shape(z) else vals[0]

    def eval_at(self, f: SkewProduct, z, tol: float = ROOT_TOL):
        """Machine-accurate sheet values at arbitrary base points.

        Pulls the point forward through the tower, evaluates the series at
        the top, then descends one fiber root solve per level, using each
        ancestor's raster only to pick the branch. Returns (values, ok); the
        ok mask is False where the tower is not defined along the orbit.
        """
        pts = np.asarray(z, dtype=np.complex128).ravel()
        chain = self.lineage()
        series: StableSeries = chain[0]
        orbit = [None] * (self.level + 1)
        orbit[self.level] = pts
        for j in range(self.level - 1, -1, -1):
            orbit[j] = f.p(orbit[j + 1])
        ok = series.defined_at(orbit[0])
        vals = np.full(pts.shape, np.nan + 0j, dtype=np.complex128)
        vals[ok] = series(orbit[0][ok])
        for j in range(1, self.level + 1):
            g: StableGraph = chain[j]
            idx = np.nonzero(ok)[0]
            if idx.size == 0:
                break
            seeds = g.raster_value(orbit[j][idx])
            good = ~np.isnan(seeds.real)
            ok[idx[~good]] = False
            idx = idx[good]
            if idx.size == 0:
                continue
            cand = solve_fiber_batch(f.q, orbit[j][idx], vals[idx], tol=tol)
            pick = np.argmin(np.abs(cand - seeds[good][:, None]), axis=1)
            vals[idx] = cand[np.arange(idx.size), pick]
        vals = np.where(ok, vals, np.nan + 0j)
        if np.shape(z):
            return vals.reshape(np.shape(z)), ok.reshape(np.shape(z))
        return complex(vals[0]), bool(ok[0])


def covering_radius(f: SkewProduct, epsilon: float, level: int) -> float:
    """Radius certain to contain all z with |P^level(z)| <= epsilon.

    One pullback step: outside radius r with |lead| r^deg - sum |c_i| r^i
    greater than the previous radius, |P(z)| stays too large, so the preimage
    region sits inside r. Iterating from epsilon gives a monotone sequence
    bounded by the base escape radius.
    """
    pc = [abs(c) for c in f.p.coeffs]
    deg = f.p.degree
    rho = epsilon
    for _ in range(level):
        coeffs = [-pc[i] for i in range(deg)] + [pc[deg]]
        coeffs[0] -= rho
        rho = _largest_real_root_at_least(coeffs, rho)
    return rho


def continue_stable_graph(
    f: SkewProduct,
    prev: "StableGraph | StableSeries",
    anchor: complex,
    *,
    resolution: int = 192,
    box: Box | None = None,
    anchor_depth: int | None = None,
    branch_tol: float | None = None,
    jump_fraction: float = 0.3,
    tol: float = ROOT_TOL,
    max_flagged: int = 64,
) -> StableGraph:
    """One backward extension step: the sheet through (0, anchor) over the
    pullback of the parent's base.

    Solves Q(z, w) = parent(P(z)) on every covered cell (all fiber roots at
    once), then floods outward from the anchor cell, assigning each cell the
    root nearest an already-solved neighbor. A cell is excluded and flagged
    when the two nearest roots lie within branch_tol of each other
    (branch-point proximity) or when the cell-to-cell increment exceeds
    jump_fraction of the local root separation, which is when a raster of
    this pitch can no longer tell the sheets apart. A final sweep drops
    adjacent cell pairs whose values disagree by more than that same bound:
    two flood arms that met around a branch point carrying different
    branches would otherwise sit side by side with no flag between them.
    """
    anchor = complex(anchor)
    level = prev.level + 1
    scale = f.q.coefficient_scale()
    if branch_tol is None:
        branch_tol = 1e-4 * scale
    if abs(f.q(0j, anchor) - prev.anchor) > 1e-8 * scale:
        raise HypothesisViolation(
            f"anchor {anchor} does not map onto the parent anchor {prev.anchor}"
        )
    chain = prev.lineage() if isinstance(prev, StableGraph) else [prev]
    series: StableSeries = chain[0]
    if box is None:
        rho = covering_radius(f, series.epsilon, level)
        box = Box.square(0j, 1.05 * rho)

    Z = _grid_centers(box, resolution)
    zk = Z.copy()
    for _ in range(level):
        zk = f.p(zk)
    candidate = np.abs(zk) <= series.epsilon

    idx_flat = np.nonzero(candidate.ravel())[0]
    zc = Z.ravel()[idx_flat]
    if isinstance(prev, StableSeries):
        tau_flat = prev(f.p(zc))
        tau_ok = np.ones(zc.size, dtype=bool)
    else:
        tau_flat, tau_ok = prev.eval_at(f, f.p(zc), tol=tol)
    allowed = np.zeros(Z.shape, dtype=bool)
    allowed.ravel()[idx_flat[tau_ok]] = True
    tau = np.full(Z.shape, np.nan + 0j, dtype=np.complex128)
    tau.ravel()[idx_flat[tau_ok]] = tau_flat[tau_ok]

    d = f.q.degree_w
    roots_grid = np.zeros(Z.shape + (d,), dtype=np.complex128)
    sel = np.nonzero(allowed.ravel())[0]
    if sel.size == 0:
        raise OutOfDomain("no base cell is covered by the parent sheet")
    cell_roots = solve_fiber_batch(f.q, Z.ravel()[sel], tau.ravel()[sel], tol=tol)
    roots_grid.reshape(-1, d)[sel] = cell_roots

    dq_dw = f.q.partial_w()
    collapse_tol = 100.0 * tol * scale
    value = np.full(Z.shape, np.nan + 0j, dtype=np.complex128)
    # 0 untouched, 1 solved, 2 ambiguous, 3 jump
    state = np.zeros(Z.shape, dtype=np.uint8)

    iy0, ix0, inside0 = _cell_indices(box, resolution, np.array([0j]))
    if not inside0[0] or not allowed[iy0[0], ix0[0]]:
        raise OutOfDomain("anchor cell is outside the covered base")
    r0 = roots_grid[iy0[0], ix0[0]]
    value[iy0[0], ix0[0]] = r0[np.argmin(np.abs(r0 - anchor))]
    state[iy0[0], ix0[0]] = 1

    flagged: list[BranchPointProximity] = []
    n_ambiguous = 0
    n_jump = 0
    res = resolution
    while True:
        solved = state == 1
        frontier = binary_dilation(solved, structure=_EIGHT) & allowed & (state == 0)
        if not frontier.any():
            break
        fy, fx = np.nonzero(frontier)
        seed = np.full(fy.shape, np.nan + 0j, dtype=np.complex128)
        for dy, dx in _OFFSETS:
            ny, nx = fy + dy, fx + dx
            ok = (
                np.isnan(seed.real)
                & (ny >= 0) & (ny < res) & (nx >= 0) & (nx < res)
            )
            ok[ok] &= solved[ny[ok], nx[ok]]
            seed[ok] = value[ny[ok], nx[ok]]
        cand = roots_grid[fy, fx]
        dist = np.abs(cand - seed[:, None])
        rows = np.arange(fy.size)
        if d == 1:
            pick = cand[:, 0]
            ambiguous = np.zeros(fy.size, dtype=bool)
            jump = ambiguous
        else:
            order = np.argsort(dist, axis=1, kind="stable")
            pick = cand[rows, order[:, 0]]
            d1 = dist[rows, order[:, 0]]
            sep = np.abs(pick - cand[rows, order[:, 1]])
            # A collapsed multiple root (sep ~ solver noise) is not a choice
            # at all, so neither guard applies to it.
            distinct = sep > collapse_tol
            ambiguous = distinct & (sep < branch_tol)
            jump = distinct & ~ambiguous & (d1 > jump_fraction * sep)
        accept = ~ambiguous & ~jump
        value[fy[accept], fx[accept]] = pick[accept]
        state[fy[accept], fx[accept]] = 1
        state[fy[ambiguous], fx[ambiguous]] = 2
        state[fy[jump], fx[jump]] = 3
        n_ambiguous += int(np.count_nonzero(ambiguous))
        n_jump += int(np.count_nonzero(jump))
        for k in np.nonzero(ambiguous)[0]:
            if len(flagged) >= max_flagged:
                break
            cell = (int(fy[k]), int(fx[k]))
            deriv = abs(complex(dq_dw(Z[cell], pick[k])))
            flagged.append(BranchPointProximity(cell=cell, derivative_modulus=deriv))

    defined = state == 1
    n_seam = 0
    if d >= 2:
        gap = np.abs(roots_grid - value[:, :, None])
        gap[~defined] = np.inf
        sep_grid = np.partition(gap, 1, axis=2)[:, :, 1]
        seam = np.zeros_like(defined)
        # one representative of each +/- direction pair, diagonals included
        for dy, dx in ((-1, 0), (0, -1), (-1, -1), (-1, 1)):
            a_sl = (slice(max(dy, 0), res + min(dy, 0)),
                    slice(max(dx, 0), res + min(dx, 0)))
            b_sl = (slice(max(-dy, 0), res + min(-dy, 0)),
                    slice(max(-dx, 0), res + min(-dx, 0)))
            both = defined[a_sl] & defined[b_sl]
            delta = np.abs(value[a_sl] - value[b_sl])
            thresh = jump_fraction * np.minimum(sep_grid[a_sl], sep_grid[b_sl])
            viol = both & (delta > np.maximum(thresh, collapse_tol))
            seam[a_sl] |= viol
            seam[b_sl] |= viol
        n_seam = int(np.count_nonzero(seam))
        defined &= ~seam
    n_unreached = int(np.count_nonzero(allowed & (state == 0)))
    residual = np.abs(f.q(Z[defined], value[defined]) - tau[defined])
    return StableGraph(
        level=level,
        anchor=anchor,
        anchor_depth=level if anchor_depth is None else anchor_depth,
        parent=prev,
        box=box,
        resolution=resolution,
        defined=defined,
        values=np.where(defined, value, np.nan + 0j),
        flags={
            "ambiguous": n_ambiguous,
            "jump": n_jump,
            "seam": n_seam,
            "unreached": n_unreached,
        },
        flagged_cells=tuple(flagged),
        residual_max=float(residual.max()) if residual.size else 0.0,
        map_hash=map_fingerprint(f),
    )


# ---------------------------------------------------------------------------
# The graph family used by the chain estimator.
# ---------------------------------------------------------------------------


@dataclass
class GraphFamily:
    """All continued sheets up to a backward depth, indexed by (anchor, level).

    Fresh anchors of depth n get their sheet at level n; anchors of depth at
    most extend_depth are re-extended at every later level so the dominant
    sheets stay available over the growing base domains. The family is closed
    under taking parents.
    """

    series: StableSeries
    anchors: PullbackTree
    graphs: list[StableGraph]
    index: dict[tuple[int, int], int]
    levels: int
    extend_depth: int
    map_hash: str = ""

    def at_level(self, level: int) -> list[StableGraph]:
        return [g for g in self.graphs if g.level == level]

    def up_to_level(self, level: int) -> list[StableGraph]:
        return [g for g in self.graphs if g.level <= level]


def build_graph_family(
    f: SkewProduct,
    series: StableSeries,
    levels: int,
    *,
    extend_depth: int = 2,
    resolution: int = 192,
    max_graphs: int = 512,
    merge_tol: float = MERGE_TOL,
    tol: float = ROOT_TOL,
) -> GraphFamily:
    """Continue every sheet of backward depth up to `levels`.

    The anchor of each sheet is a pullback of 0 on the invariant fiber; its
    parent sheet is the one anchored at the anchor's own image, one level
    down. Build order is by level, then by anchor depth and position, so the
    parent always exists when a sheet is continued.
    """
    if levels < 1:
        raise ConfigError("levels must be >= 1")
    anchors = fiber_anchor_tree(f, levels, merge_tol=merge_tol, tol=tol)
    order_key = {
        i: (n.depth, n.value.real, n.value.imag) for i, n in enumerate(anchors.nodes)
    }
    graphs: list[StableGraph] = []
    index: dict[tuple[int, int], int] = {}
    for level in range(1, levels + 1):
        eligible = [
            i for i, n in enumerate(anchors.nodes)
            if n.depth == level or (n.depth < level and n.depth <= extend_depth)
        ]
        eligible.sort(key=lambda i: order_key[i])
        if len(graphs) + len(eligible) > max_graphs:
            raise ResourceCap(
                f"graph family would exceed {max_graphs} sheets at level {level}"
            )
        rho = covering_radius(f, series.epsilon, level)
        box = Box.square(0j, 1.05 * rho)
        for i in eligible:
            node = anchors.nodes[i]
            parent_anchor = node.parent if node.parent >= 0 else 0
            if level - 1 == 0:
                parent: StableGraph | StableSeries = series
            else:
                parent = graphs[index[(parent_anchor, level - 1)]]
            g = continue_stable_graph(
                f, parent, node.value,
                resolution=resolution, box=box, anchor_depth=node.depth,
                tol=tol,
            )
            index[(i, level)] = len(graphs)
            graphs.append(g)
    return GraphFamily(
        series=series,
        anchors=anchors,
        graphs=graphs,
        index=index,
        levels=levels,
        extend_depth=extend_depth,
        map_hash=map_fingerprint(f),
    )


def graph_base_grid(graph: StableGraph) -> GridDomain:
    """The sheet's base domain as a grid, for hyperbolic-metric estimates."""
    mask = np.where(graph.defined, BASIN, ESCAPED).astype(np.uint8)
    zeros = np.zeros(mask.shape, dtype=np.int32)
    return GridDomain(
        box=graph.box,
        resolution=graph.resolution,
        mask=mask,
        entry_time=zeros,
        exit_time=zeros.copy(),
        map_hash=graph.map_hash,
        kind="graph-base",
    )
