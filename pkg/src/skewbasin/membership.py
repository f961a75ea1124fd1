"""Membership verdicts for attracting polynomial skew products.

Three layers of checking live here. check_hypotheses inspects the structural
conditions at the fixed point: the origin is fixed, the multipliers are sized
and ordered correctly, and the degree layout keeps the basin bounded.
check_condition_c tests the four critical-orbit exclusion conditions against
basin rasters and exact orbits. verify_example_bounds evaluates the two
certificate inequalities of the quadratic demonstration family in exact
rational arithmetic.

Every check returns PASS, FAIL, or INCONCLUSIVE. FAIL always carries a
concrete witness (a coefficient value or a point). INCONCLUSIVE is the honest
outcome whenever floating point cannot decide an exact statement; it is never
silently upgraded.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .dynamics import (
    BASIN,
    Box,
    GridDomain,
    basin_grid_slice,
    classify_point,
    pick_attraction_radius,
)
from .errors import ConfigError, NonConvergence, OutOfDomain
from .polynomials import ComplexPoly, SkewProduct, roots
from .rational import QC_ZERO, RationalComplex, parse_fraction

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"

FLOAT_TOL = 1e-12
# |value| at entry into the zero-free disc below which a float orbit is too
# close to zero to certify avoidance.
ENTRY_MARGIN = 1e-9
BOUNDARY_SAMPLE_CAP = 10_000
SAMPLE_SEED = 20260814

_EIGHT = np.ones((3, 3), dtype=bool)
_MAX_WITNESS_POINTS = 8


# ---------------------------------------------------------------------------
# Report types.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckEntry:
    """One named check: verdict plus a human-readable witness.

    points carries concrete witness coordinates as (base, fiber) pairs; for
    base-only witnesses the fiber coordinate is 0.
    """

    name: str
    verdict: str
    witness: str
    points: tuple[tuple[complex, complex], ...] = ()

    def __post_init__(self):
        if self.verdict not in (PASS, FAIL, INCONCLUSIVE):
            raise ConfigError(f"unknown verdict {self.verdict!r}")
        if self.verdict == FAIL and not self.witness and not self.points:
            raise ConfigError(f"FAIL verdict for {self.name!r} carries no witness")


def combine_verdicts(verdicts) -> str:
    """FAIL dominates, then INCONCLUSIVE; empty input combines to PASS."""
    out = PASS
    for v in verdicts:
        if v == FAIL:
            return FAIL
        if v == INCONCLUSIVE:
            out = INCONCLUSIVE
    return out


def _fmt_points(points: tuple[tuple[complex, complex], ...]) -> str:
    return ";".join(
        f"{z.real!r},{z.imag!r},{w.real!r},{w.imag!r}" for z, w in points
    )


@dataclass(frozen=True)
class MembershipReport:
    p_checks: tuple[CheckEntry, ...]
    q_checks: tuple[CheckEntry, ...]
    condition_c: tuple[CheckEntry, ...] = ()
    map_hash: str = ""

    def entries(self) -> tuple[CheckEntry, ...]:
        return (*self.p_checks, *self.q_checks, *self.condition_c)

    @property
    def overall(self) -> str:
        return combine_verdicts(e.verdict for e in self.entries())

    def to_text(self) -> str:
        """Stable tab-separated serialization, one check per line."""
        lines = ["membership-report\tv1", f"map\t{self.map_hash}"]
        for section, checks in (
            ("base", self.p_checks),
            ("fiber", self.q_checks),
            ("critical", self.condition_c),
        ):
            for e in checks:
                lines.append(
                    f"{section}\t{e.verdict}\t{e.name}\t{e.witness}"
                    f"\t{_fmt_points(e.points)}"
                )
        lines.append(f"overall\t{self.overall}")
        return "\n".join(lines) + "\n"

    def render_table(self) -> str:
        """Aligned human-readable table with witnesses."""
        rows = []
        for section, checks in (
            ("base", self.p_checks),
            ("fiber", self.q_checks),
            ("critical", self.condition_c),
        ):
            for e in checks:
                rows.append((e.verdict, section, e.name, e.witness, e.points))
        wide = max((len(r[2]) for r in rows), default=4)
        out = [f"{'VERDICT':<13}{'SECTION':<10}{'CHECK':<{wide + 2}}WITNESS"]
        out.append("-" * len(out[0]))
        for verdict, section, name, witness, points in rows:
            out.append(f"{verdict:<13}{section:<10}{name:<{wide + 2}}{witness}")
            for z, w in points[:_MAX_WITNESS_POINTS]:
                out.append(f"{'':<13}{'':<10}  at ({z:.6g}, {w:.6g})")
        out.append(f"overall: {self.overall}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Verdict arithmetic: exact where possible, toleranced in float mode.
# ---------------------------------------------------------------------------


def _zero_verdict(value: complex, scale: float) -> str:
    return PASS if abs(value) <= FLOAT_TOL * scale else FAIL

def _less_verdict(x: float, y: float, scale: float = 1.0) -> str:
    """Strict x < y: exact float equality is a definite violation, and a
    nonzero gap below the tolerance cannot be decided."""
    if x == y:
        return FAIL
    if x < y - FLOAT_TOL * scale:
        return PASS
    if x > y + FLOAT_TOL * scale:
        return FAIL
    return INCONCLUSIVE


def _bool_verdict(ok: bool) -> str:
    return PASS if ok else FAIL


# ---------------------------------------------------------------------------
# Structural hypothesis checks.
# ---------------------------------------------------------------------------


def check_hypotheses(f: SkewProduct) -> MembershipReport:
    """One verdict per structural condition at the fixed point.

    With rational coefficients every comparison is exact; in float mode
    equalities are tested to FLOAT_TOL times the coefficient scale and strict
    inequalities leave a tolerance band that yields INCONCLUSIVE.
    """
    p, q = f.p, f.q
    p_exact = p.exact is not None
    q_exact = q.exact is not None
    dp = p.derivative()
    q0 = q.coefficient_in_z(0)
    dq0 = q0.derivative()
    dq_dz = q.partial_z()

    if p_exact:
        v1 = _bool_verdict(p.eval_exact(QC_ZERO).is_zero)
    else:
        v1 = _zero_verdict(p(0j), p.coefficient_scale())
    if p_exact:
        a2 = dp.eval_exact(QC_ZERO).abs2()
        v2 = _bool_verdict(0 < a2 < 1)
    else:
        v2 = combine_verdicts((_less_verdict(0.0, f.a), _less_verdict(f.a, 1.0)))
    p_checks = (
        CheckEntry("base fixes the origin", v1, f"base value at 0 is {p(0j):.6g}"),
        CheckEntry(
            "base multiplier strictly inside the unit interval",
            v2,
            f"base multiplier modulus {f.a!r}",
        ),
        CheckEntry(
            "base degree at least two", _bool_verdict(f.d >= 2), f"degree {f.d}"
        ),
    )

    bad_degrees = [
        (j, q.coefficient_in_z(j).degree)
        for j in range(2, q.degree_z + 1)
        if q.coefficient_in_z(j).degree > f.d - 1
    ]
    if bad_degrees:
        detail = ", ".join(
            f"coefficient of base power {j} has fiber degree {deg}"
            for j, deg in bad_degrees
        )
    else:
        detail = f"all coefficients of base powers >= 2 have fiber degree <= {f.d - 1}"

    if q_exact:
        v3 = _bool_verdict(q.eval_exact(QC_ZERO, QC_ZERO).is_zero)
    else:
        v3 = _zero_verdict(q0.coeffs[0], q.coefficient_scale())
    if q_exact:
        b2 = dq0.eval_exact(QC_ZERO).abs2()
        v4 = _bool_verdict(0 < b2 < 1)
    else:
        v4 = combine_verdicts((_less_verdict(0.0, f.b), _less_verdict(f.b, 1.0)))
    if p_exact and q_exact:
        v5 = _bool_verdict(
            dp.eval_exact(QC_ZERO).abs2() < dq0.eval_exact(QC_ZERO).abs2()
        )
    else:
        v5 = _less_verdict(f.a, f.b)
    if q_exact:
        v6 = _bool_verdict(dq_dz.eval_exact(QC_ZERO, QC_ZERO).is_zero)
    else:
        v6 = _zero_verdict(dq_dz(0j, 0j), q.coefficient_scale())
    q_checks = (
        CheckEntry(
            "higher base powers carry fiber degree below the base degree",
            _bool_verdict(not bad_degrees),
            detail,
        ),
        CheckEntry(
            "invariant fiber polynomial has full degree",
            _bool_verdict(q0.degree == f.d),
            f"fiber degree {q0.degree}, base degree {f.d}",
        ),
        CheckEntry(
            "fiber fixes the origin", v3, f"fiber value at 0 is {q(0j, 0j):.6g}"
        ),
        CheckEntry(
            "fiber multiplier strictly inside the unit interval",
            v4,
            f"fiber multiplier modulus {f.b!r}",
        ),
        CheckEntry(
            "base multiplier strictly below fiber multiplier",
            v5,
            f"base {f.a!r} vs fiber {f.b!r}",
        ),
        CheckEntry(
            "no linear base coupling at the origin",
            v6,
            f"mixed derivative at origin is {dq_dz(0j, 0j):.6g}",
        ),
    )
    return MembershipReport(p_checks, q_checks, (), f.fingerprint())


# ---------------------------------------------------------------------------
# Exact helpers: small root extraction and zero-free contraction discs.
# ---------------------------------------------------------------------------


def _frac_sqrt(x: Fraction) -> Fraction | None:
    if x < 0:
        return None
    rn = math.isqrt(x.numerator)
    rd = math.isqrt(x.denominator)
    if rn * rn == x.numerator and rd * rd == x.denominator:
        return Fraction(rn, rd)
    return None


def _exact_sqrt(v: RationalComplex) -> RationalComplex | None:
    """Square root inside the Gaussian rationals, for real inputs only."""
    if v.im != 0:
        return None
    if v.re >= 0:
        r = _frac_sqrt(v.re)
        return None if r is None else RationalComplex(r, Fraction(0))
    r = _frac_sqrt(-v.re)
    return None if r is None else RationalComplex(Fraction(0), r)


def _exact_roots_small(poly: ComplexPoly) -> list[RationalComplex] | None:
    """Exact roots for rational polynomials of degree <= 2 when the
    discriminant has a Gaussian-rational square root; None otherwise."""
    if poly.exact is None or poly.degree < 1 or poly.degree > 2:
        return None
    if poly.degree == 1:
        c0, c1 = poly.exact[0], poly.exact[1]
        return [-c0 / c1]
    c0, c1, c2 = poly.exact[0], poly.exact[1], poly.exact[2]
    four = RationalComplex.make(4)
    two = RationalComplex.make(2)
    s = _exact_sqrt(c1 * c1 - four * c2 * c0)
    if s is None:
        return None
    out = [(-c1 - s) / (two * c2), (-c1 + s) / (two * c2)]
    return sorted(out, key=lambda r: (r.re, r.im))


def _exclusion_radius(poly: ComplexPoly) -> tuple[float, float] | None:
    """A dyadic radius r with: inside |x| < r the polynomial has no zero
    except 0 and contracts modulus by a factor < 1.

    Requires zero constant term and linear coefficient of modulus m in (0,1).
    Returns (r, lam) where lam < 1 bounds the contraction factor, by the
    coefficient estimate m - tail <= |poly(x)|/|x| <= m + tail with
    tail = sum_{k>=2} |c_k| r^(k-1) kept below min(m, 1-m)/2.
    """
    if abs(poly.coeffs[0]) != 0:
        return None
    if poly.exact is not None and not poly.exact[0].is_zero:
        return None
    if poly.degree < 1:
        return None
    m = abs(poly.coeffs[1])
    if not 0 < m < 1:
        return None
    thresh = min(m, 1.0 - m) / 2.0
    higher = [(k, abs(c)) for k, c in enumerate(poly.coeffs) if k >= 2 and c != 0]
    r = 0.5
    for _ in range(60):
        tail = sum(mag * r ** (k - 1) for k, mag in higher)
        if tail <= thresh:
            return r, m + thresh
        r *= 0.5
    return None


# ---------------------------------------------------------------------------
# Critical-orbit avoidance of the fixed point.
# ---------------------------------------------------------------------------


def _pair_str(z: complex, w: complex) -> str:
    return f"({z:.9g}, {w:.9g})"


def _avoid_origin_fiber(
    f: SkewProduct,
    q0: ComplexPoly,
    wc_float: complex,
    wc_exact: RationalComplex | None,
    max_iter: int,
) -> CheckEntry:
    """Does the forward orbit of (0, wc) ever hit the origin exactly?

    Exact mode iterates the full map in rational arithmetic and can FAIL with
    the exact hitting step, or PASS once the fiber value enters the zero-free
    contraction disc with nonzero value (inside it the fiber map has no zero
    besides 0 and strictly shrinks modulus, so the orbit can never reach 0).
    Float mode can only PASS via the same disc argument with an entry margin.
    """
    name = "fiber critical orbit avoids the origin"
    excl = _exclusion_radius(q0)
    exact_ok = (
        wc_exact is not None
        and f.has_exact
        and f.p.eval_exact(QC_ZERO).is_zero
    )
    if exact_ok:
        z, w = QC_ZERO, wc_exact
        for n in range(1, max_iter + 1):
            z, w = f.eval_exact(z, w)
            if z.is_zero and w.is_zero:
                return CheckEntry(
                    name,
                    FAIL,
                    f"exact orbit of critical value {wc_float:.9g} hits the "
                    f"origin at step {n}",
                    ((0j, wc_float),),
                )
            if excl is not None and z.is_zero and not w.is_zero:
                r0, lam = excl
                if w.abs2() < Fraction(r0) ** 2:
                    return CheckEntry(
                        name,
                        PASS,
                        f"exact orbit enters the zero-free disc of radius {r0} "
                        f"at step {n} with nonzero value; the fiber map has no "
                        f"other zero there and contracts by a factor <= {lam:.4g},"
                        f" so the orbit never reaches the origin",
                        ((0j, wc_float),),
                    )
        return CheckEntry(
            name,
            INCONCLUSIVE,
            f"exact orbit of {wc_float:.9g} undecided after {max_iter} steps",
            ((0j, wc_float),),
        )

    # Float fallback: valid only while the base coordinate stays exactly 0.
    if abs(f.p.coeffs[0]) != 0:
        return CheckEntry(
            name,
            INCONCLUSIVE,
            "base does not fix 0, so the invariant-fiber orbit argument "
            "does not apply and no exact arithmetic is available",
            ((0j, wc_float),),
        )
    qf = f.q.fiber_poly(0j)
    w = complex(wc_float)
    for n in range(1, max_iter + 1):
        w = qf(w)
        if excl is not None and abs(w) < excl[0]:
            if abs(w) >= ENTRY_MARGIN:
                r0, lam = excl
                return CheckEntry(
                    name,
                    PASS,
                    f"float orbit enters the zero-free disc of radius {r0} at "
                    f"step {n} with |value| = {abs(w):.3e} >= {ENTRY_MARGIN}; "
                    f"inside it the fiber map contracts by <= {lam:.4g} and "
                    f"only vanishes at 0",
                    ((0j, wc_float),),
                )
            return CheckEntry(
                name,
                INCONCLUSIVE,
                f"float orbit entered the disc with |value| = {abs(w):.3e} "
                f"below the certification margin {ENTRY_MARGIN}",
                ((0j, wc_float),),
            )
        if w == 0:
            return CheckEntry(
                name,
                INCONCLUSIVE,
                "float orbit reached exact zero; rational coefficients are "
                "needed to certify a genuine hit",
                ((0j, wc_float),),
            )
    return CheckEntry(
        name,
        INCONCLUSIVE,
        f"float orbit of {wc_float:.9g} undecided after {max_iter} steps",
        ((0j, wc_float),),
    )


def _avoid_zero_base(
    f: SkewProduct,
    zc_float: complex,
    zc_exact: RationalComplex | None,
    max_iter: int,
) -> CheckEntry:
    """Same avoidance scheme for a base critical point and the base map."""
    name = "base critical orbit avoids zero"
    excl = _exclusion_radius(f.p)
    if zc_exact is not None and f.p.exact is not None:
        z = zc_exact
        for n in range(1, max_iter + 1):
            z = f.p.eval_exact(z)
            if z.is_zero:
                return CheckEntry(
                    name,
                    FAIL,
                    f"exact base orbit of critical point {zc_float:.9g} hits 0 "
                    f"at step {n}",
                    ((zc_float, 0j),),
                )
            if excl is not None and z.abs2() < Fraction(excl[0]) ** 2:
                r0, lam = excl
                return CheckEntry(
                    name,
                    PASS,
                    f"exact base orbit enters the zero-free disc of radius {r0} "
                    f"at step {n} with nonzero value; the base map contracts "
                    f"by <= {lam:.4g} there and only vanishes at 0",
                    ((zc_float, 0j),),
                )
        return CheckEntry(
            name,
            INCONCLUSIVE,
            f"exact base orbit of {zc_float:.9g} undecided after {max_iter} steps",
            ((zc_float, 0j),),
        )
    z = complex(zc_float)
    for n in range(1, max_iter + 1):
        z = f.p(z)
        if excl is not None and abs(z) < excl[0]:
            if abs(z) >= ENTRY_MARGIN:
                r0, lam = excl
                return CheckEntry(
                    name,
                    PASS,
                    f"float base orbit enters the zero-free disc of radius {r0} "
                    f"at step {n} with |value| = {abs(z):.3e} >= {ENTRY_MARGIN}",
                    ((zc_float, 0j),),
                )
            return CheckEntry(
                name,
                INCONCLUSIVE,
                f"float base orbit entered the disc with |value| = {abs(z):.3e} "
                f"below the certification margin {ENTRY_MARGIN}",
                ((zc_float, 0j),),
            )
        if z == 0:
            return CheckEntry(
                name,
                INCONCLUSIVE,
                "float base orbit reached exact zero; rational coefficients "
                "are needed to certify a genuine hit",
                ((zc_float, 0j),),
            )
    return CheckEntry(
        name,
        INCONCLUSIVE,
        f"float base orbit of {zc_float:.9g} undecided after {max_iter} steps",
        ((zc_float, 0j),),
    )


def _match_exact(
    floats: list[complex], exacts: list[RationalComplex] | None
) -> list[RationalComplex | None]:
    if exacts is None:
        return [None] * len(floats)
    out: list[RationalComplex | None] = []
    pool = list(exacts)
    for r in floats:
        if not pool:
            out.append(None)
            continue
        best = min(range(len(pool)), key=lambda i: abs(pool[i].to_complex() - r))
        out.append(pool.pop(best))
    return out


# ---------------------------------------------------------------------------
# The four critical-orbit conditions.
# ---------------------------------------------------------------------------


def boundary_adjacent_cells(grid: GridDomain) -> np.ndarray:
    """(k, 2) array of (iy, ix) for basin cells with a non-basin 8-neighbor.

    Cells on the raster rim count as boundary-adjacent. Rows come in scanline
    order, so subsampling on top of this is deterministic.
    """
    basin = grid.mask == BASIN
    outside = np.pad(~basin, 1, constant_values=True)
    near_out = ndimage.binary_dilation(outside, structure=_EIGHT)[1:-1, 1:-1]
    iy, ix = np.nonzero(basin & near_out)
    return np.column_stack([iy, ix])


def subsample_rows(cells: np.ndarray, cap: int, seed: int = SAMPLE_SEED) -> np.ndarray:
    """Uniform without-replacement subsample, order-preserving, fixed seed."""
    if len(cells) <= cap:
        return cells
    rng = np.random.Generator(np.random.PCG64(seed))
    sel = rng.choice(len(cells), size=cap, replace=False)
    sel.sort()
    return cells[sel]


def _critical_ws(f: SkewProduct, z: complex) -> list[complex] | None:
    """Zeros of the fiber derivative of Q over base point z; None if the
    derivative vanishes identically there."""
    dq = f.q.partial_w().fiber_poly(z)
    if dq.is_zero:
        return None
    if dq.degree < 1:
        return []
    return roots(dq)


def _item1_at(
    f: SkewProduct,
    z: complex,
    box: Box,
    resolution: int,
    eps: float,
    max_iter: int,
    dil_cells: int,
) -> list[tuple[str, complex, str]]:
    """Per-base-point records: (status, critical w, detail) with status in
    ok / fail / undecided / degenerate."""
    try:
        crit = _critical_ws(f, z)
    except NonConvergence as exc:
        return [("undecided", 0j, f"critical solve failed: {exc}")]
    if crit is None:
        return [("degenerate", 0j, "fiber derivative vanishes identically")]
    if not crit:
        return []
    sl = basin_grid_slice(
        f, z, box, resolution, eps, max_iter, max_undecided=None
    ).grid
    basin = sl.mask == BASIN
    near = (
        ndimage.binary_dilation(basin, structure=_EIGHT, iterations=dil_cells)
        if basin.any()
        else basin
    )
    out = []
    for wc in crit:
        cls = classify_point(f, (z, wc), eps, max_iter)
        near_hit = False
        try:
            cell = sl.index_of(wc)
            near_hit = bool(near[cell])
        except OutOfDomain:
            pass  # outside the certified box: far from the rastered basin
        if cls.kind == "basin":
            out.append(("fail", wc, "classified inside the attracting basin"))
        elif near_hit:
            out.append(
                ("fail", wc, f"within {dil_cells} cells of a rastered basin cell")
            )
        elif cls.kind == "escaped":
            out.append(("ok", wc, f"escapes after {cls.steps} steps"))
        else:
            out.append(("undecided", wc, f"undecided after {max_iter} steps"))
    return out


def check_condition_c(
    f: SkewProduct,
    u_grid: GridDomain,
    dilation: float = 2.0,
    samples: int | None = None,
    max_iter: int = 300,
    *,
    slice_resolution: int = 64,
    eps_attract: float | None = None,
    seed: int = SAMPLE_SEED,
    workers: int = 1,
) -> tuple[CheckEntry, CheckEntry, CheckEntry, CheckEntry]:
    """The four critical-orbit exclusion conditions, as raster verdicts.

    1. Over basin cells adjacent to the base-basin boundary, no fiber
       critical point may lie in, or within `dilation` cells of, the
       rastered attracting basin of its slice.
    2. Fiber critical points of the invariant slice that are not attracted
       must verifiably escape.
    3. Fiber critical points inside the invariant slice must have forward
       orbits that never hit the origin exactly.
    4. Base critical points inside the base basin must have orbits that
       never hit 0 exactly.

    The closure of the basin on a raster is approximated by dilating basin
    cells; `dilation` counts cells and rounds up. When `samples` is None all
    boundary-adjacent cells are used up to a fixed cap, then uniformly
    subsampled with a fixed seed.
    """
    if u_grid.kind != "base":
        raise ConfigError(f"need a base grid, got kind={u_grid.kind!r}")
    if dilation <= 0:
        raise ConfigError("dilation must be positive")
    if samples is not None and samples < 1:
        raise ConfigError("samples must be positive")
    if max_iter < 1:
        raise ConfigError("max_iter must be positive")
    dil_cells = int(math.ceil(dilation))

    no_radius = f.escape_radius is None
    if not no_radius:
        if eps_attract is None:
            eps = u_grid.eps_attract if u_grid.eps_attract > 0 else None
            eps = pick_attraction_radius(f) if eps is None else eps
        else:
            eps = eps_attract

    # Item 1: boundary-adjacent sampling.
    if no_radius:
        item1 = CheckEntry(
            "no fiber critical point meets the closed basin over boundary cells",
            INCONCLUSIVE,
            "no certified escape radius: " + "; ".join(f.hypothesis_issues),
        )
    else:
        cells = boundary_adjacent_cells(u_grid)
        cap = BOUNDARY_SAMPLE_CAP if samples is None else samples
        chosen = subsample_rows(cells, cap, seed)
        if len(chosen) == 0:
            item1 = CheckEntry(
                "no fiber critical point meets the closed basin over boundary cells",
                INCONCLUSIVE,
                "the base raster has no boundary-adjacent basin cells",
            )
        else:
            box = Box.square(0j, 1.02 * f.escape_radius)
            zs = [u_grid.point_of(int(iy), int(ix)) for iy, ix in chosen]

            def one(zc: complex):
                return _item1_at(
                    f, zc, box, slice_resolution, eps, max_iter, dil_cells
                )

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as ex:
                    per_z = list(ex.map(one, zs))
            else:
                per_z = [one(zc) for zc in zs]

            fails: list[tuple[complex, complex, str]] = []
            undecided: list[tuple[complex, complex, str]] = []
            n_crit = n_ok = 0
            degenerate = False
            for zc, recs in zip(zs, per_z):
                for status, wc, detail in recs:
                    if status == "fail":
                        fails.append((zc, wc, detail))
                    elif status == "undecided":
                        undecided.append((zc, wc, detail))
                    elif status == "degenerate":
                        degenerate = True
                    else:
                        n_ok += 1
                    n_crit += status != "degenerate"
            name1 = (
                "no fiber critical point meets the closed basin over boundary cells"
            )
            if fails:
                item1 = CheckEntry(
                    name1,
                    FAIL,
                    f"{len(fails)} of {n_crit} critical points over "
                    f"{len(zs)} boundary cells violate the exclusion; first: "
                    f"{_pair_str(*fails[0][:2])} {fails[0][2]}",
                    tuple((zc, wc) for zc, wc, _ in fails[:_MAX_WITNESS_POINTS]),
                )
            elif undecided or degenerate:
                why = (
                    "fiber derivative degenerate at a sampled cell"
                    if degenerate
                    else f"{len(undecided)} of {n_crit} critical orbits undecided "
                    f"after {max_iter} steps"
                )
                item1 = CheckEntry(
                    name1,
                    INCONCLUSIVE,
                    why,
                    tuple(
                        (zc, wc) for zc, wc, _ in undecided[:_MAX_WITNESS_POINTS]
                    ),
                )
            else:
                item1 = CheckEntry(
                    name1,
                    PASS,
                    f"{len(zs)} boundary cells, {n_crit} critical points: all "
                    f"escape and none lies within {dil_cells} cells of a "
                    f"rastered basin cell",
                )

    # Items 2 and 3: critical points of the invariant fiber polynomial.
    q0 = f.q.coefficient_in_z(0)
    dq0 = q0.derivative()
    name2 = "fiber critical points outside the invariant slice escape"
    name3 = "fiber critical orbit avoids the origin"
    if no_radius:
        item2 = CheckEntry(
            name2, INCONCLUSIVE,
            "no certified escape radius: " + "; ".join(f.hypothesis_issues),
        )
        item3 = CheckEntry(
            name3, INCONCLUSIVE,
            "no certified escape radius: " + "; ".join(f.hypothesis_issues),
        )
    elif dq0.is_zero:
        item2 = CheckEntry(
            name2, INCONCLUSIVE, "fiber derivative vanishes identically"
        )
        item3 = CheckEntry(
            name3, INCONCLUSIVE, "fiber derivative vanishes identically"
        )
    else:
        crit_f = roots(dq0) if dq0.degree >= 1 else []
        crit_e = _match_exact(crit_f, _exact_roots_small(dq0))
        outside_ok: list[str] = []
        outside_bad: list[complex] = []
        inside_entries: list[CheckEntry] = []
        for wc, we in zip(crit_f, crit_e):
            if we is not None:
                wc = we.to_complex()  # exact coordinates make cleaner witnesses
            cls = classify_point(f, (0j, wc), eps, max_iter)
            if cls.kind == "escaped":
                outside_ok.append(f"{wc:.6g} escapes after {cls.steps} steps")
            elif cls.kind == "undecided":
                outside_bad.append(wc)
            else:
                inside_entries.append(
                    _avoid_origin_fiber(f, q0, wc, we, max_iter)
                )
        if outside_bad:
            item2 = CheckEntry(
                name2,
                INCONCLUSIVE,
                f"{len(outside_bad)} critical orbit(s) neither attracted nor "
                f"escaped after {max_iter} steps",
                tuple((0j, wc) for wc in outside_bad[:_MAX_WITNESS_POINTS]),
            )
        else:
            item2 = CheckEntry(
                name2,
                PASS,
                "; ".join(outside_ok)
                if outside_ok
                else "no critical points outside the invariant slice",
            )
        if inside_entries:
            item3 = CheckEntry(
                name3,
                combine_verdicts(e.verdict for e in inside_entries),
                " | ".join(e.witness for e in inside_entries),
                tuple(pt for e in inside_entries for pt in e.points),
            )
        else:
            item3 = CheckEntry(
                name3, PASS, "no critical points inside the invariant slice"
            )

    # Item 4: base critical points inside the base basin.
    dp = f.p.derivative()
    name4 = "base critical orbit avoids zero"
    if dp.is_zero:
        item4 = CheckEntry(name4, INCONCLUSIVE, "base derivative vanishes identically")
    else:
        crit_f = roots(dp) if dp.degree >= 1 else []
        crit_e = _match_exact(crit_f, _exact_roots_small(dp))
        base_eps = u_grid.eps_attract
        base_radius = u_grid.radius
        undecided_pts: list[complex] = []
        in_entries: list[CheckEntry] = []
        n_out = 0
        for zc, ze in zip(crit_f, crit_e):
            if ze is not None:
                zc = ze.to_complex()
            kind = _base_kind(f.p, zc, base_eps, max_iter, base_radius)
            if kind == "basin":
                in_entries.append(_avoid_zero_base(f, zc, ze, max_iter))
            elif kind == "escaped":
                n_out += 1
            else:
                undecided_pts.append(zc)
        if undecided_pts:
            item4 = CheckEntry(
                name4,
                INCONCLUSIVE,
                f"{len(undecided_pts)} base critical orbit(s) undecided after "
                f"{max_iter} steps",
                tuple((zc, 0j) for zc in undecided_pts[:_MAX_WITNESS_POINTS]),
            )
        elif in_entries:
            item4 = CheckEntry(
                name4,
                combine_verdicts(e.verdict for e in in_entries),
                " | ".join(e.witness for e in in_entries),
                tuple(pt for e in in_entries for pt in e.points),
            )
        else:
            item4 = CheckEntry(
                name4,
                PASS,
                f"no base critical points inside the basin ({n_out} escape)",
            )
    return item1, item2, item3, item4


def _base_kind(p: ComplexPoly, z: complex, eps: float, max_iter: int, radius: float) -> str:
    zz = complex(z)
    for _ in range(max_iter + 1):
        m = abs(zz)
        if m < eps:
            return "basin"
        if m > radius:
            return "escaped"
        zz = p(zz)
    return "undecided"


def membership_report(
    f: SkewProduct, u_grid: GridDomain, **condition_kwargs
) -> MembershipReport:
    """Full report: structural hypotheses plus the four critical-orbit checks."""
    hyp = check_hypotheses(f)
    cond = check_condition_c(f, u_grid, **condition_kwargs)
    return MembershipReport(hyp.p_checks, hyp.q_checks, tuple(cond), hyp.map_hash)


# ---------------------------------------------------------------------------
# Exact certificate inequalities for the quadratic demonstration family.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExampleBoundsReport:
    """Exact evaluation of the two inequalities certifying the demonstration
    family (z^2 + z/4, w^2 + w/2 + L z^2) with fiber bound B.

    star: B - 1/2 - 25L/(16B) >= 1 makes the fiber circle of radius B map
    outside itself over the base box, confining the basin. starstar:
    (9/16)L - 1/16 > B makes the critical value exit the fiber bound in one
    step over the outer base ring.
    """

    coupling: Fraction
    fiber_bound: Fraction
    star_value: Fraction
    starstar_value: Fraction
    star: CheckEntry
    starstar: CheckEntry

    def entries(self) -> tuple[CheckEntry, CheckEntry]:
        return (self.star, self.starstar)

    @property
    def overall(self) -> str:
        return combine_verdicts(e.verdict for e in self.entries())

    def to_text(self) -> str:
        lines = [
            "example-bounds\tv1",
            f"coupling\t{self.coupling}",
            f"fiber-bound\t{self.fiber_bound}",
        ]
        for e in self.entries():
            lines.append(f"bound\t{e.verdict}\t{e.name}\t{e.witness}")
        lines.append(f"overall\t{self.overall}")
        return "\n".join(lines) + "\n"


def verify_example_bounds(L, B) -> ExampleBoundsReport:
    """Both certificate inequalities in exact rational arithmetic.

    L and B may be ints, Fractions, or strings like '89/16'; floats are
    rejected so that every verdict is exact.
    """
    try:
        Lf = parse_fraction(L)
        Bf = parse_fraction(B)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if Lf <= 0 or Bf <= 0:
        raise ConfigError("coupling and fiber bound must be positive")
    star_value = Bf - Fraction(1, 2) - Fraction(25) * Lf / (16 * Bf)
    starstar_value = Fraction(9, 16) * Lf - Fraction(1, 16)
    star = CheckEntry(
        "fiber bound circle maps outside itself over the base box",
        _bool_verdict(star_value >= 1),
        f"margin {star_value} (= {float(star_value):.6g}) vs threshold 1",
    )
    starstar = CheckEntry(
        "critical value exits the fiber bound over the outer base ring",
        _bool_verdict(starstar_value > Bf),
        f"first-step value {starstar_value} (= {float(starstar_value):.6g}) "
        f"vs fiber bound {Bf}",
    )
    return ExampleBoundsReport(Lf, Bf, star_value, starstar_value, star, starstar)
