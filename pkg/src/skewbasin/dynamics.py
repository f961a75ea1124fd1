"""Basin rasters, orbit classification, components, and the stable series.

Cell codes: 0 escaped, 1 basin, 2 undecided. Grids are square arrays indexed
[iy, ix] with iy ascending in Im; serialization flips rows so image viewers
show Im pointing up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import parallel
from .errors import (
    ConfigError,
    ExcessUndecided,
    HypothesisViolation,
    NonConvergence,
    OutOfDomain,
    ResonanceDegeneracy,
)
from .polynomials import ComplexPoly, SkewProduct, map_fingerprint

ESCAPED = 0
BASIN = 1
UNDECIDED = 2

_PGM_BYTES = {ESCAPED: 0, BASIN: 255, UNDECIDED: 128}
_PGM_CODES = {0: ESCAPED, 255: BASIN, 128: UNDECIDED}

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
EIGHT_CONNECTED = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class Box:
    """Axis-aligned square-ish box: center plus per-axis half-widths."""

    center: complex
    half_re: float
    half_im: float

    @staticmethod
    def square(center: complex, half_width: float) -> "Box":
        return Box(center, half_width, half_width)


@dataclass
class GridDomain:
    box: Box
    resolution: int
    mask: np.ndarray
    entry_time: np.ndarray
    exit_time: np.ndarray
    labels: np.ndarray | None = None
    eps_attract: float = 0.0
    max_iter: int = 0
    radius: float = 0.0
    map_hash: str = ""
    kind: str = "base"
    z: complex | None = None
    config_hash: str = ""

    @property
    def cell_re(self) -> float:
        return 2.0 * self.box.half_re / self.resolution

    @property
    def cell_im(self) -> float:
        return 2.0 * self.box.half_im / self.resolution

    @property
    def cell_diag(self) -> float:
        return float(np.hypot(self.cell_re, self.cell_im))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """(re_axis, im_axis) of cell centers."""
        re0 = self.box.center.real - self.box.half_re
        im0 = self.box.center.imag - self.box.half_im
        re = re0 + (np.arange(self.resolution) + 0.5) * self.cell_re
        im = im0 + (np.arange(self.resolution) + 0.5) * self.cell_im
        return re, im

    def centers(self) -> np.ndarray:
        re, im = self.axes()
        return re[None, :] + 1j * im[:, None]

    def index_of(self, point: complex) -> tuple[int, int]:
        dx = point.real - (self.box.center.real - self.box.half_re)
        dy = point.imag - (self.box.center.imag - self.box.half_im)
        ix = int(np.floor(dx / self.cell_re))
        iy = int(np.floor(dy / self.cell_im))
        if not (0 <= ix < self.resolution and 0 <= iy < self.resolution):
            raise OutOfDomain(f"point {point} outside grid box")
        return iy, ix

    def point_of(self, iy: int, ix: int) -> complex:
        re, im = self.axes()
        return complex(re[ix], im[iy])

    def basin_fraction(self) -> float:
        return float(np.count_nonzero(self.mask == BASIN)) / self.mask.size

    def undecided_fraction(self) -> float:
        return float(np.count_nonzero(self.mask == UNDECIDED)) / self.mask.size


@dataclass(frozen=True)
class SliceDomain:
    """A fiber slice raster: the base point plus its w-plane grid."""

    z: complex
    grid: GridDomain


@dataclass(frozen=True)
class PointClass:
    """Orbit classification: kind is 'basin', 'escaped', or 'undecided';
    steps is the first entry/exit time (-1 when undecided)."""

    kind: str
    steps: int

    @property
    def is_basin(self) -> bool:
        return self.kind == "basin"


# ---------------------------------------------------------------------------
# Orbit classification kernels.
# ---------------------------------------------------------------------------


def _classify_orbits(step_fn, moduli_fn, n: int, eps: float, max_iter: int, radius: float):
    """Generic active-set orbit classifier.

    step_fn(idx) advances the orbit for the active indices in place;
    moduli_fn(idx) returns the current max-modulus for those indices.
    """
    state = np.full(n, UNDECIDED, dtype=np.uint8)
    steps = np.full(n, -1, dtype=np.int32)
    active = np.arange(n)
    for k in range(max_iter + 1):
        m = moduli_fn(active)
        hit = m < eps
        esc = m > radius
        if hit.any() or esc.any():
            state[active[hit]] = BASIN
            state[active[esc]] = ESCAPED
            steps[active[hit]] = k
            steps[active[esc]] = k
            keep = ~(hit | esc)
            active = active[keep]
            if active.size == 0:
                break
        if k < max_iter:
            step_fn(active)
    return state, steps


def classify_points(
    f: SkewProduct,
    Z: np.ndarray,
    W: np.ndarray,
    eps_attract: float,
    max_iter: int,
    radius: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized classification of arbitrary points in C^2."""
    if radius is None:
        if f.escape_radius is None:
            raise HypothesisViolation(
                "map has no certified escape radius: " + "; ".join(f.hypothesis_issues)
            )
        radius = f.escape_radius
    z = np.array(Z, dtype=np.complex128).ravel()
    w = np.array(W, dtype=np.complex128).ravel()

    def step(idx):
        zi = z[idx]
        w[idx] = f.q(zi, w[idx])
        z[idx] = f.p(zi)

    def moduli(idx):
        return np.maximum(np.abs(z[idx]), np.abs(w[idx]))

    state, steps = _classify_orbits(step, moduli, z.size, eps_attract, max_iter, radius)
    return state.reshape(np.shape(Z)), steps.reshape(np.shape(Z))


def classify_point(
    f: SkewProduct,
    point: tuple[complex, complex],
    eps_attract: float,
    max_iter: int,
    radius: float | None = None,
) -> PointClass:
    """Classify one point: first bidisc entry wins 'basin', first escape past
    the certified radius wins 'escaped', otherwise 'undecided'."""
    state, steps = classify_points(
        f, np.array([point[0]]), np.array([point[1]]), eps_attract, max_iter, radius
    )
    kind = {BASIN: "basin", ESCAPED: "escaped", UNDECIDED: "undecided"}[int(state[0])]
    return PointClass(kind, int(steps[0]))


def _classify_fiber(f, z0: complex, W: np.ndarray, eps, max_iter, radius):
    """Classification over one fiber: the base orbit is shared by all cells."""
    z_orbit = np.empty(max_iter + 1, dtype=np.complex128)
    z = complex(z0)
    for k in range(max_iter + 1):
        z_orbit[k] = z
        if abs(z) > radius:
            z_orbit[k + 1 :] = z  # base already certified out; value unused
            break
        z = complex(f.p(z))
    w = np.array(W, dtype=np.complex128).ravel()
    k_box = [0]

    def step(idx):
        zk = z_orbit[k_box[0]]
        coeffs = f.q.fiber_poly(zk).coeffs
        wi = w[idx]
        acc = np.full(wi.shape, coeffs[-1], dtype=np.complex128)
        for c in reversed(coeffs[:-1]):
            acc *= wi
            acc += c
        w[idx] = acc
        k_box[0] += 1

    def moduli(idx):
        return np.maximum(abs(z_orbit[k_box[0]]), np.abs(w[idx]))

    state, steps = _classify_orbits(step, moduli, w.size, eps, max_iter, radius)
    return state.reshape(np.shape(W)), steps.reshape(np.shape(W))


def _classify_base(p: ComplexPoly, Z: np.ndarray, eps, max_iter, radius):
    z = np.array(Z, dtype=np.complex128).ravel()

    def step(idx):
        z[idx] = p(z[idx])

    def moduli(idx):
        return np.abs(z[idx])

    state, steps = _classify_orbits(step, moduli, z.size, eps, max_iter, radius)
    return state.reshape(np.shape(Z)), steps.reshape(np.shape(Z))


# ---------------------------------------------------------------------------
# Grid builders.
# ---------------------------------------------------------------------------


def _check_resolution(resolution: int) -> None:
    if resolution < 8 or resolution > 4096:
        raise ConfigError(f"resolution {resolution} out of range")


def _banded(classify_rows, resolution: int, workers: int):
    out_state = np.empty((resolution, resolution), dtype=np.uint8)
    out_steps = np.empty((resolution, resolution), dtype=np.int32)

    def run(lo, hi):
        s, t = classify_rows(lo, hi)
        return lo, hi, s, t

    for lo, hi, s, t in parallel.band_map(run, resolution, workers):
        out_state[lo:hi] = s
        out_steps[lo:hi] = t
    return out_state, out_steps


def _guard_undecided(grid: GridDomain, max_undecided: float | None):
    if max_undecided is None:
        return
    if np.count_nonzero(grid.mask == BASIN) == 0:
        return  # nothing attracted in view: emptiness is the answer, not noise
    frac = grid.undecided_fraction()
    if frac > max_undecided:
        raise ExcessUndecided(
            f"{frac:.2%} of cells undecided (cap {max_undecided:.2%}); raise max_iter"
        )


def basin_grid_1d(
    f: SkewProduct,
    box: Box,
    resolution: int,
    eps_attract: float,
    max_iter: int,
    workers: int = 1,
    max_undecided: float | None = 0.01,
) -> GridDomain:
    """Raster of the base-polynomial basin of 0 in the z-plane."""
    _check_resolution(resolution)
    if abs(f.p(0j)) != 0 or abs(f.p.derivative()(0j)) >= 1:
        raise HypothesisViolation("0 is not an attracting fixed point of the base")
    if f.base_radius is None:
        raise HypothesisViolation("no certified base escape radius")
    radius = f.base_radius
    geometry = GridDomain(
        box, resolution,
        np.empty(0), np.empty(0), np.empty(0),
        eps_attract=eps_attract, max_iter=max_iter, radius=radius,
    )
    re, im = geometry.axes()

    def rows(lo, hi):
        Z = re[None, :] + 1j * im[lo:hi, None]
        return _classify_base(f.p, Z, eps_attract, max_iter, radius)

    state, steps = _banded(rows, resolution, workers)
    entry = np.where(state == BASIN, steps, -1)
    exit_t = np.where(state == ESCAPED, steps, -1)
    grid = GridDomain(
        box, resolution, state, entry, exit_t,
        eps_attract=eps_attract, max_iter=max_iter, radius=radius,
        map_hash=map_fingerprint(f), kind="base",
    )
    _guard_undecided(grid, max_undecided)
    return grid


def basin_grid_slice(
    f: SkewProduct,
    z: complex,
    box: Box,
    resolution: int,
    eps_attract: float,
    max_iter: int,
    workers: int = 1,
    max_undecided: float | None = 0.01,
) -> SliceDomain:
    """Raster of the w-plane slice of the attracting basin over base point z."""
    _check_resolution(resolution)
    if f.escape_radius is None:
        raise HypothesisViolation(
            "map has no certified escape radius: " + "; ".join(f.hypothesis_issues)
        )
    radius = f.escape_radius
    geometry = GridDomain(
        box, resolution,
        np.empty(0), np.empty(0), np.empty(0),
        eps_attract=eps_attract, max_iter=max_iter, radius=radius,
    )
    re, im = geometry.axes()

    def rows(lo, hi):
        W = re[None, :] + 1j * im[lo:hi, None]
        return _classify_fiber(f, z, W, eps_attract, max_iter, radius)

    state, steps = _banded(rows, resolution, workers)
    entry = np.where(state == BASIN, steps, -1)
    exit_t = np.where(state == ESCAPED, steps, -1)
    grid = GridDomain(
        box, resolution, state, entry, exit_t,
        eps_attract=eps_attract, max_iter=max_iter, radius=radius,
        map_hash=map_fingerprint(f), kind="slice", z=complex(z),
    )
    _guard_undecided(grid, max_undecided)
    return SliceDomain(complex(z), grid)


# ---------------------------------------------------------------------------
# Components and holes.
# ---------------------------------------------------------------------------


def label_components(grid: GridDomain) -> GridDomain:
    """Label 4-connected basin components.

    Component 0 contains the basin cell nearest the origin; the rest are
    numbered in scanline order of first encounter. Labels array stores -1 on
    non-basin cells.
    """
    basin = grid.mask == BASIN
    raw, n = ndimage.label(basin, structure=FOUR_CONNECTED)
    labels = np.full(grid.mask.shape, -1, dtype=np.int32)
    if n == 0:
        grid.labels = labels
        return grid
    ys, xs = np.nonzero(basin)
    centers = grid.centers()
    d2 = np.abs(centers[ys, xs])
    nearest_id = raw[ys[np.argmin(d2)], xs[np.argmin(d2)]]
    order = [nearest_id] + [i for i in range(1, n + 1) if i != nearest_id]
    remap = np.full(n + 1, -1, dtype=np.int32)
    for new, old in enumerate(order):
        remap[old] = new
    labels[basin] = remap[raw[basin]]
    grid.labels = labels
    return grid


def component_mask(grid: GridDomain, component: int = 0) -> np.ndarray:
    if grid.labels is None:
        label_components(grid)
    return grid.labels == component


def count_holes(grid: GridDomain, component: int = 0) -> int:
    """Bounded complementary components of one basin component (8-connected)."""
    comp = component_mask(grid, component)
    if not comp.any():
        raise OutOfDomain(f"component {component} is empty")
    complement = ~comp
    raw, n = ndimage.label(complement, structure=EIGHT_CONNECTED)
    border_ids = np.unique(
        np.concatenate([raw[0, :], raw[-1, :], raw[:, 0], raw[:, -1]])
    )
    bounded = set(range(1, n + 1)) - set(int(i) for i in border_ids)
    return len(bounded)


# ---------------------------------------------------------------------------
# Multipliers and the attraction radius.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiplierReport:
    a: float
    b: float
    d: int
    base_fixes_origin: bool
    fiber_fixes_origin: bool
    base_contracts: bool
    fiber_contracts: bool
    ordered: bool
    no_linear_coupling: bool

    @property
    def attracting(self) -> bool:
        return (
            self.base_fixes_origin
            and self.fiber_fixes_origin
            and self.base_contracts
            and self.fiber_contracts
        )


def check_multipliers(f: SkewProduct) -> MultiplierReport:
    q0 = f.q.coefficient_in_z(0)
    dq_dz = f.q.partial_z()
    return MultiplierReport(
        a=f.a,
        b=f.b,
        d=f.d,
        base_fixes_origin=f.p(0j) == 0,
        fiber_fixes_origin=f.q(0j, 0j) == 0,
        base_contracts=f.a < 1,
        fiber_contracts=f.b < 1,
        ordered=f.a < f.b,
        no_linear_coupling=dq_dz(0j, 0j) == 0,
    )


def certify_attraction_radius(
    f: SkewProduct,
    eps: float,
    n_samples: int = 50,
    n_steps: int = 5,
    seed: int = 20260814,
) -> bool:
    """Accept eps when orbits from the bidisc boundary shrink strictly in
    max-modulus for n_steps consecutive steps, over n_samples samples."""
    rng = np.random.Generator(np.random.PCG64(seed))
    half = n_samples // 2
    ang1 = rng.random(n_samples) * 2 * np.pi
    ang2 = rng.random(n_samples) * 2 * np.pi
    rad = np.sqrt(rng.random(n_samples)) * eps
    z = np.where(np.arange(n_samples) < half, eps * np.exp(1j * ang1), rad * np.exp(1j * ang1))
    w = np.where(np.arange(n_samples) < half, rad * np.exp(1j * ang2), eps * np.exp(1j * ang2))
    m = np.maximum(np.abs(z), np.abs(w))
    for _ in range(n_steps):
        z, w = f.p(z), f.q(z, w)
        m_next = np.maximum(np.abs(z), np.abs(w))
        if not np.all(m_next < m):
            return False
        m = m_next
    return True


def pick_attraction_radius(
    f: SkewProduct,
    start: float = 0.5,
    floor: float = 1e-6,
    seed: int = 20260814,
) -> float:
    """Halve from `start` until the bidisc certification passes."""
    eps = start
    while eps >= floor:
        if certify_attraction_radius(f, eps, seed=seed):
            return eps
        eps *= 0.5
    raise NonConvergence(f"no certified attraction radius above {floor}")


# ---------------------------------------------------------------------------
# The stable series: w = s(z) with Q(z, s(z)) = s(P(z)), s(z) = O(z^2).
# ---------------------------------------------------------------------------


@dataclass
class StableSeries:
    coeffs: np.ndarray  # power-indexed, coeffs[0] = coeffs[1] = 0
    order: int
    epsilon: float
    residual_tol: float
    map_hash: str = ""

    def __call__(self, z):
        acc = np.zeros_like(np.asarray(z, dtype=np.complex128))
        for c in self.coeffs[::-1]:
            acc = acc * z + c
        if np.isscalar(z) or np.asarray(z).shape == ():
            return complex(acc)
        return acc

    def defined_at(self, z) -> np.ndarray:
        return np.abs(z) <= self.epsilon

    @property
    def level(self) -> int:
        return 0

    @property
    def anchor(self) -> complex:
        return 0j


def _ser_mul(a: np.ndarray, b: np.ndarray, order: int) -> np.ndarray:
    out = np.convolve(a, b)[: order + 1]
    if out.size < order + 1:
        out = np.pad(out, (0, order + 1 - out.size))
    return out


def _ser_compose(outer: np.ndarray, inner: np.ndarray, order: int) -> np.ndarray:
    """outer(inner(z)) truncated; requires inner[0] == 0."""
    acc = np.zeros(order + 1, dtype=np.complex128)
    for c in outer[::-1]:
        acc = _ser_mul(acc, inner, order)
        acc[0] += c
    return acc


def _series_residual(f: SkewProduct, c: np.ndarray, order: int) -> np.ndarray:
    """Coefficients of Q(z, s(z)) - s(P(z)) through z^order."""
    p_ser = np.zeros(order + 1, dtype=np.complex128)
    pc = np.asarray(f.p.coeffs, dtype=np.complex128)
    p_ser[: min(pc.size, order + 1)] = pc[: order + 1]
    lhs = np.zeros(order + 1, dtype=np.complex128)
    w_pow = np.zeros(order + 1, dtype=np.complex128)
    w_pow[0] = 1.0
    terms = f.q._w_coeff_polys()  # sorted by w-power
    prev_k = 0
    for k, a_k in terms:
        for _ in range(k - prev_k):
            w_pow = _ser_mul(w_pow, c, order)
        prev_k = k
        a_ser = np.zeros(order + 1, dtype=np.complex128)
        ac = np.asarray(a_k.coeffs, dtype=np.complex128)
        a_ser[: min(ac.size, order + 1)] = ac[: order + 1]
        lhs += _ser_mul(a_ser, w_pow, order)
    rhs = _ser_compose(c, p_ser, order)
    return lhs - rhs


def stable_manifold_series(
    f: SkewProduct,
    order: int,
    tol: float = 1e-9,
    resonance_tol: float = 1e-12,
) -> StableSeries:
    """Solve the invariance equation Q(z, s(z)) = s(P(z)) order by order.

    The z^k coefficient determines c_k through the factor (b - a^k) where a
    and b are the complex base and fiber multipliers; a vanishing factor is a
    resonance and raises. When Q(z, 0) is identically zero the invariant
    curve is exactly w = 0 and the zero series is returned directly.
    """
    if order < 2:
        raise ConfigError("series order must be at least 2")
    if f.p(0j) != 0 or f.q(0j, 0j) != 0:
        raise HypothesisViolation("origin is not fixed")
    if f.q.partial_z()(0j, 0j) != 0:
        raise HypothesisViolation("dQ/dz(0,0) != 0: the curve is not tangent to w = 0")
    c = np.zeros(order + 1, dtype=np.complex128)
    q_along_zero = [t for t in f.q.terms if t[1] == 0]
    if not q_along_zero:
        eps = _epsilon_scan(f, c, order, tol)
        return StableSeries(c, order, eps, tol, map_fingerprint(f))

    a_lin = complex(f.p.coeffs[1]) if len(f.p.coeffs) > 1 else 0j
    q0 = f.q.coefficient_in_z(0)
    b_lin = complex(q0.coeffs[1]) if len(q0.coeffs) > 1 else 0j
    # Only both-contracting is needed here; a < b would preclude the
    # resonances b = a^k this solver must detect for maps outside the class.
    if not (0 < abs(a_lin) < 1 and 0 < abs(b_lin) < 1):
        raise HypothesisViolation(
            f"multipliers a={abs(a_lin):.4g}, b={abs(b_lin):.4g} are not both in (0, 1)"
        )
    scale = f.q.coefficient_scale()
    for k in range(2, order + 1):
        denom = b_lin - a_lin**k
        if abs(denom) < resonance_tol * scale:
            raise ResonanceDegeneracy(
                f"b - a^{k} = {denom:.3e} is numerically zero", order=k
            )
        g = _series_residual(f, c, order)
        c[k] = -g[k] / denom
    eps = _epsilon_scan(f, c, order, tol)
    return StableSeries(c, order, eps, tol, map_fingerprint(f))


def series_residual_on_circle(
    f: SkewProduct, series: StableSeries, radius: float, n_angles: int = 64
) -> float:
    z = radius * np.exp(2j * np.pi * np.arange(n_angles) / n_angles)
    s = series(z)
    sp = series(f.p(z))
    return float(np.max(np.abs(f.q(z, s) - sp)))


def _epsilon_scan(f: SkewProduct, coeffs: np.ndarray, order: int, tol: float) -> float:
    probe = StableSeries(coeffs, order, np.inf, tol)
    cap = f.base_radius if f.base_radius is not None else 1.0
    eps = cap
    for _ in range(80):
        if series_residual_on_circle(f, probe, eps) <= tol:
            return eps
        eps *= 0.5
    raise NonConvergence(f"no validity radius with residual <= {tol} above {eps}")


# ---------------------------------------------------------------------------
# Serialization: portable graymap plus sidecar metadata.
# ---------------------------------------------------------------------------


def save_grid(grid: GridDomain, basepath: str | Path) -> tuple[Path, Path]:
    """Write <base>.pgm (binary graymap: 0 escaped, 255 basin, 128 undecided),
    <base>.json (metadata), and <base>.npz (entry/exit/labels for reload)."""
    base = Path(basepath)
    pgm = base.with_suffix(".pgm")
    meta = base.with_suffix(".json")
    npz = base.with_suffix(".npz")
    img = np.zeros_like(grid.mask)
    for code, byte in _PGM_BYTES.items():
        img[grid.mask == code] = byte
    header = f"P5\n{grid.resolution} {grid.resolution}\n255\n".encode()
    pgm.write_bytes(header + img[::-1].tobytes())
    payload = {
        "kind": grid.kind,
        "center": [grid.box.center.real, grid.box.center.imag],
        "half_width": [grid.box.half_re, grid.box.half_im],
        "resolution": grid.resolution,
        "eps_attract": grid.eps_attract,
        "max_iter": grid.max_iter,
        "escape_radius": grid.radius,
        "map_hash": grid.map_hash,
        "config_hash": grid.config_hash,
        "z": None if grid.z is None else [grid.z.real, grid.z.imag],
        "basin_fraction": grid.basin_fraction(),
        "undecided_fraction": grid.undecided_fraction(),
        "row0_im": "max",
        "byte_codes": {"escaped": 0, "basin": 255, "undecided": 128},
    }
    meta.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    arrays = {"entry_time": grid.entry_time, "exit_time": grid.exit_time}
    if grid.labels is not None:
        arrays["labels"] = grid.labels
    np.savez_compressed(npz, **arrays)
    return pgm, meta


def load_grid(basepath: str | Path, expected_config_hash: str | None = None) -> GridDomain:
    base = Path(basepath)
    meta = json.loads(base.with_suffix(".json").read_text())
    if expected_config_hash is not None and meta.get("config_hash") != expected_config_hash:
        raise ConfigError(
            f"artifact config hash {meta.get('config_hash')!r} does not match "
            f"expected {expected_config_hash!r}"
        )
    raw = base.with_suffix(".pgm").read_bytes()
    head, _, rest = raw.partition(b"\n")
    dims, _, rest = rest.partition(b"\n")
    maxval, _, payload = rest.partition(b"\n")
    if head != b"P5" or maxval != b"255":
        raise ConfigError("not a package-written graymap")
    w, h = (int(t) for t in dims.split())
    img = np.frombuffer(payload, dtype=np.uint8, count=w * h).reshape(h, w)[::-1]
    mask = np.full((h, w), UNDECIDED, dtype=np.uint8)
    for byte, code in _PGM_CODES.items():
        mask[img == byte] = code
    box = Box(
        complex(meta["center"][0], meta["center"][1]),
        meta["half_width"][0],
        meta["half_width"][1],
    )
    npz_path = base.with_suffix(".npz")
    entry = exit_t = None
    labels = None
    if npz_path.exists():
        with np.load(npz_path) as data:
            entry = data["entry_time"]
            exit_t = data["exit_time"]
            labels = data["labels"] if "labels" in data else None
    if entry is None:
        entry = np.full((h, w), -1, dtype=np.int32)
        exit_t = np.full((h, w), -1, dtype=np.int32)
    return GridDomain(
        box,
        meta["resolution"],
        mask.copy(),
        entry,
        exit_t,
        labels=labels,
        eps_attract=meta["eps_attract"],
        max_iter=meta["max_iter"],
        radius=meta["escape_radius"],
        map_hash=meta["map_hash"],
        kind=meta["kind"],
        z=None if meta["z"] is None else complex(meta["z"][0], meta["z"][1]),
        config_hash=meta.get("config_hash", ""),
    )
