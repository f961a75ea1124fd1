"""Grids, orbit classification, components, and the stable series.

Numeric oracles are derived by hand from the catalog maps before the
assertions that use them:

* coupled quadratic (coupling 10): base z/4 + z^2, fiber w/2 + w^2 + 10 z^2.
  (0, -1/2) maps to (0, 0) in one step. (2, 0) maps to (4.5, 40) which is
  already past the certified escape radius ~9.5467.
* series coefficients from order matching by hand:
  c2 = -10 / (1/2 - 1/16) = -160/7
  c3 = (c2/2) / (1/2 - 1/64) = -5120/217
* fiber over z=0 is w/2 + w^2, conjugate to u^2 - 1/16 (inside the main
  cardioid), so the z=0 slice is connected with no holes.
"""

from __future__ import annotations

import collections
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skewbasin import maps
from skewbasin.dynamics import (
    BASIN,
    ESCAPED,
    UNDECIDED,
    Box,
    GridDomain,
    basin_grid_1d,
    basin_grid_slice,
    certify_attraction_radius,
    check_multipliers,
    classify_point,
    count_holes,
    label_components,
    load_grid,
    pick_attraction_radius,
    save_grid,
    series_residual_on_circle,
    stable_manifold_series,
)
from skewbasin.errors import (
    ConfigError,
    ExcessUndecided,
    HypothesisViolation,
    OutOfDomain,
    ResonanceDegeneracy,
)
from skewbasin.polynomials import BivarPoly, ComplexPoly, skew_product

DEMO = maps.coupled_quadratic()
PRODUCT = maps.product_power()


def make_grid(mask: np.ndarray, half: float = 1.0) -> GridDomain:
    n = mask.shape[0]
    return GridDomain(
        Box.square(0j, half),
        n,
        mask.astype(np.uint8),
        np.zeros_like(mask, dtype=np.int32),
        np.zeros_like(mask, dtype=np.int32),
    )


class TestClassification:
    def test_origin_is_basin_at_step_zero(self):
        r = classify_point(DEMO, (0j, 0j), eps_attract=0.25, max_iter=10)
        assert r.kind == "basin" and r.steps == 0

    def test_one_step_preimage_enters_at_step_one(self):
        r = classify_point(DEMO, (0j, -0.5 + 0j), eps_attract=0.25, max_iter=10)
        assert r.kind == "basin" and r.steps == 1

    def test_far_point_escapes_at_step_one(self):
        # F(2, 0) = (4.5, 40) and 40 > 9.5468
        r = classify_point(DEMO, (2 + 0j, 0j), eps_attract=0.25, max_iter=10)
        assert r.kind == "escaped" and r.steps == 1

    def test_shallow_budget_leaves_point_undecided(self):
        r = classify_point(DEMO, (0.3 + 0j, 0.3 + 0j), eps_attract=0.25, max_iter=0)
        assert r.kind == "undecided" and r.steps == -1

    def test_interior_fiber_point_converges(self):
        r = classify_point(DEMO, (0j, 0.1 + 0j), eps_attract=0.25, max_iter=50)
        assert r.kind == "basin"

    @given(
        zr=st.floats(-1.5, 1.5),
        zi=st.floats(-1.5, 1.5),
        wr=st.floats(-1.5, 1.5),
        wi=st.floats(-1.5, 1.5),
    )
    @settings(max_examples=80, deadline=None)
    def test_classification_is_monotone_in_budget(self, zr, zi, wr, wi):
        point = (complex(zr, zi), complex(wr, wi))
        short = classify_point(DEMO, point, eps_attract=0.25, max_iter=12)
        long = classify_point(DEMO, point, eps_attract=0.25, max_iter=48)
        if short.kind != "undecided":
            assert long.kind == short.kind
            assert long.steps == short.steps


class TestGridGeometry:
    @given(
        ix=st.integers(0, 63),
        iy=st.integers(0, 63),
        cr=st.floats(-2, 2),
        ci=st.floats(-2, 2),
    )
    @settings(max_examples=60, deadline=None)
    def test_index_point_round_trip(self, ix, iy, cr, ci):
        g = make_grid(np.zeros((64, 64), dtype=np.uint8))
        g = GridDomain(
            Box.square(complex(cr, ci), 1.7), 64, g.mask, g.entry_time, g.exit_time
        )
        assert g.index_of(g.point_of(iy, ix)) == (iy, ix)

    def test_point_outside_box_raises(self):
        g = make_grid(np.zeros((16, 16), dtype=np.uint8))
        with pytest.raises(OutOfDomain):
            g.index_of(5 + 0j)


class TestBaseGrid:
    def test_base_basin_raster(self):
        grid = basin_grid_1d(
            DEMO, Box.square(0j, 2.0), 128, eps_attract=0.1, max_iter=300
        )
        iy, ix = grid.index_of(0j)
        assert grid.mask[iy, ix] == BASIN
        # 3/4 is the other (repelling) fixed point; just beyond it escapes
        iy, ix = grid.index_of(1.9 + 0j)
        assert grid.mask[iy, ix] == ESCAPED
        assert grid.basin_fraction() > 0.05
        assert grid.undecided_fraction() <= 0.01
        assert grid.entry_time[grid.mask == BASIN].min() >= 0
        assert grid.exit_time[grid.mask == ESCAPED].min() >= 0

    def test_base_grid_requires_attracting_origin(self):
        with pytest.raises(HypothesisViolation):
            basin_grid_1d(
                maps.weak_fiber(a=1.5),
                Box.square(0j, 2.0),
                64,
                eps_attract=0.1,
                max_iter=50,
            )


class TestSliceGrid:
    def test_central_slice_contains_origin_cell(self):
        sl = basin_grid_slice(
            DEMO, 0j, Box.square(0j, 2.0), 128, eps_attract=0.25, max_iter=300
        )
        iy, ix = sl.grid.index_of(0j)
        assert sl.grid.mask[iy, ix] == BASIN
        iy, ix = sl.grid.index_of(1.5 + 1.5j)
        assert sl.grid.mask[iy, ix] == ESCAPED

    def test_slices_near_base_origin_are_nonempty(self):
        rng = np.random.Generator(np.random.PCG64(7))
        for _ in range(20):
            z = 0.2 * math.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random())
            sl = basin_grid_slice(
                DEMO,
                complex(z),
                Box.square(0j, 1.5),
                64,
                eps_attract=0.25,
                max_iter=300,
            )
            assert np.count_nonzero(sl.grid.mask == BASIN) > 0

    def test_forward_image_of_basin_samples_stays_basin(self):
        sl = basin_grid_slice(
            DEMO, 0.05 + 0j, Box.square(0j, 1.0), 64, eps_attract=0.25, max_iter=300
        )
        ys, xs = np.nonzero(sl.grid.mask == BASIN)
        take = slice(0, None, max(1, ys.size // 25))
        for iy, ix in zip(ys[take], xs[take]):
            w = sl.grid.point_of(iy, ix)
            z2, w2 = DEMO(sl.z, w)
            r = classify_point(DEMO, (z2, w2), eps_attract=0.25, max_iter=300)
            assert r.kind == "basin"

    def test_shallow_budget_raises_excess_undecided(self):
        with pytest.raises(ExcessUndecided):
            basin_grid_slice(
                DEMO, 0j, Box.square(0j, 2.0), 64, eps_attract=0.25, max_iter=2
            )

    def test_guard_skipped_when_no_basin_in_view(self):
        # every cell sits at modulus ~6: inside the escape radius but far
        # from the attractor, so with a zero budget all stay undecided
        sl = basin_grid_slice(
            DEMO, 0j, Box.square(6 + 0j, 0.25), 64, eps_attract=0.25, max_iter=0
        )
        assert np.count_nonzero(sl.grid.mask == BASIN) == 0
        assert sl.grid.undecided_fraction() == 1.0

    def test_worker_count_does_not_change_results(self):
        kw = dict(eps_attract=0.25, max_iter=200)
        a = basin_grid_slice(DEMO, 0.1 + 0j, Box.square(0j, 1.5), 128, workers=1, **kw)
        b = basin_grid_slice(DEMO, 0.1 + 0j, Box.square(0j, 1.5), 128, workers=4, **kw)
        assert np.array_equal(a.grid.mask, b.grid.mask)
        assert np.array_equal(a.grid.entry_time, b.grid.entry_time)
        assert np.array_equal(a.grid.exit_time, b.grid.exit_time)


def flood_components(basin: np.ndarray) -> list[set[tuple[int, int]]]:
    """4-connected components by BFS; independent of scipy."""
    seen = np.zeros_like(basin, dtype=bool)
    comps = []
    h, w = basin.shape
    for sy, sx in zip(*np.nonzero(basin)):
        if seen[sy, sx]:
            continue
        comp = set()
        queue = collections.deque([(int(sy), int(sx))])
        seen[sy, sx] = True
        while queue:
            y, x = queue.popleft()
            comp.add((y, x))
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and basin[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    queue.append((ny, nx))
        comps.append(comp)
    return comps


class TestComponents:
    def test_labels_match_flood_fill_oracle(self):
        rng = np.random.Generator(np.random.PCG64(11))
        for _ in range(10):
            mask = (rng.random((24, 24)) < 0.45).astype(np.uint8)
            grid = label_components(make_grid(mask))
            oracle = flood_components(mask == BASIN)
            got = collections.defaultdict(set)
            for y, x in zip(*np.nonzero(grid.labels >= 0)):
                got[int(grid.labels[y, x])].add((int(y), int(x)))
            assert sorted(map(frozenset, got.values())) == sorted(
                map(frozenset, oracle)
            )

    def test_component_zero_is_nearest_origin_not_scanline_first(self):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[1:3, 1:3] = BASIN  # scanline-first blob, far from center
        mask[8:10, 8:10] = BASIN  # contains the cell nearest w = 0
        grid = label_components(make_grid(mask, half=1.0))
        # box center is 0, so grid center cells are nearest the origin
        assert grid.labels[8, 8] == 0
        assert grid.labels[1, 1] == 1

    def test_hole_counting(self):
        ring = np.zeros((16, 16), dtype=np.uint8)
        ring[4:12, 4:12] = BASIN
        ring[7:9, 7:9] = ESCAPED
        grid = label_components(make_grid(ring))
        assert count_holes(grid, 0) == 1
        solid = np.zeros((16, 16), dtype=np.uint8)
        solid[4:12, 4:12] = BASIN
        assert count_holes(label_components(make_grid(solid)), 0) == 0

    def test_border_touching_complement_is_not_a_hole(self):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[0, :] = BASIN  # complement is one border-touching region
        assert count_holes(label_components(make_grid(mask)), 0) == 0

    def test_empty_component_raises(self):
        grid = label_components(make_grid(np.zeros((8, 8), dtype=np.uint8)))
        with pytest.raises(OutOfDomain):
            count_holes(grid, 0)

    def test_central_slice_is_connected_without_holes(self):
        sl = basin_grid_slice(
            DEMO,
            0j,
            Box.square(0j, 10.0),
            256,
            eps_attract=0.25,
            max_iter=400,
        )
        grid = label_components(sl.grid)
        assert grid.labels.max() == 0
        assert count_holes(grid, 0) == 0


class TestMultipliers:
    def test_demo_map_report(self):
        rep = check_multipliers(DEMO)
        assert rep.a == 0.25 and rep.b == 0.5 and rep.d == 2
        assert rep.attracting and rep.ordered and rep.no_linear_coupling

    def test_weak_fiber_is_not_ordered(self):
        rep = check_multipliers(maps.weak_fiber())
        assert rep.attracting
        assert not rep.ordered

    def test_linear_coupling_is_flagged(self):
        rep = check_multipliers(maps.superattracting_base())
        assert not rep.no_linear_coupling


class TestAttractionRadius:
    def test_quarter_radius_fails_for_demo_map(self):
        # at |z| = 1/4 the coupling term alone has modulus 10/16, so the
        # fiber coordinate grows no matter how w is phased
        assert not certify_attraction_radius(DEMO, 0.25)

    def test_picked_radius_passes_and_is_maximal_in_scan(self):
        eps = pick_attraction_radius(DEMO)
        assert certify_attraction_radius(DEMO, eps)
        assert not certify_attraction_radius(DEMO, 2 * eps)
        # growth needs 11 eps > 1/2, so the certified value sits near 1/22
        assert 0.015 <= eps <= 0.0625

    def test_product_map_certifies_at_half(self):
        assert pick_attraction_radius(PRODUCT) == 0.5


class TestStableSeries:
    def test_quadratic_coefficient_matches_closed_form(self):
        # c2 = -L / (b - a^2) for this family
        for coupling in (1, 5, 10):
            f = maps.coupled_quadratic(coupling)
            s = stable_manifold_series(f, order=6)
            assert s.coeffs[0] == 0 and s.coeffs[1] == 0
            expected = -coupling / (0.5 - 0.0625)
            assert abs(s.coeffs[2] - expected) < 1e-9 * abs(expected)

    def test_cubic_coefficient_matches_hand_derivation(self):
        s = stable_manifold_series(DEMO, order=6)
        assert abs(s.coeffs[3] - (-5120.0 / 217.0)) < 1e-9 * 5120 / 217

    def test_invariance_residual_within_radius(self):
        s = stable_manifold_series(DEMO, order=8)
        assert s.epsilon > 0
        assert series_residual_on_circle(DEMO, s, s.epsilon) <= s.residual_tol
        # the scan halves from the cap, so doubling must break the bound
        # unless the cap itself certified
        if s.epsilon < DEMO.base_radius:
            assert series_residual_on_circle(DEMO, s, 2 * s.epsilon) > s.residual_tol

    def test_direct_functional_equation_at_random_points(self):
        s = stable_manifold_series(DEMO, order=8)
        rng = np.random.Generator(np.random.PCG64(3))
        z = s.epsilon * np.sqrt(rng.random(40)) * np.exp(2j * np.pi * rng.random(40))
        lhs = DEMO.q(z, s(z))
        rhs = s(DEMO.p(z))
        assert np.max(np.abs(lhs - rhs)) <= 2 * s.residual_tol

    def test_truncation_residual_scales_with_order(self):
        s = stable_manifold_series(DEMO, order=6)
        hi = series_residual_on_circle(DEMO, s, 0.02)
        lo = series_residual_on_circle(DEMO, s, 0.01)
        assert hi / lo >= 2**6

    def test_product_map_has_zero_series(self):
        s = stable_manifold_series(PRODUCT, order=6)
        assert np.all(s.coeffs == 0)
        assert s.epsilon == PRODUCT.base_radius

    def test_resonance_is_detected(self):
        # b equals a^2 exactly: the order-2 denominator vanishes
        p = ComplexPoly((0j, 0.5 + 0j, 1 + 0j))
        q = BivarPoly(((0, 1, 0.25 + 0j), (0, 2, 1 + 0j), (2, 0, 1 + 0j)))
        f = skew_product(p, q)
        with pytest.raises(ResonanceDegeneracy) as err:
            stable_manifold_series(f, order=6)
        assert err.value.order == 2

    def test_linear_coupling_rejected(self):
        with pytest.raises(HypothesisViolation):
            stable_manifold_series(maps.superattracting_base(), order=4)


class TestSerialization:
    def test_round_trip_preserves_everything(self, tmp_path):
        sl = basin_grid_slice(
            DEMO, 0.1 + 0j, Box.square(0j, 1.5), 64, eps_attract=0.25, max_iter=200
        )
        grid = label_components(sl.grid)
        grid.config_hash = "cafe0123"
        save_grid(grid, tmp_path / "slice")
        back = load_grid(tmp_path / "slice", expected_config_hash="cafe0123")
        assert np.array_equal(back.mask, grid.mask)
        assert np.array_equal(back.entry_time, grid.entry_time)
        assert np.array_equal(back.exit_time, grid.exit_time)
        assert np.array_equal(back.labels, grid.labels)
        assert back.box == grid.box
        assert back.z == grid.z
        assert back.eps_attract == grid.eps_attract
        assert back.map_hash == grid.map_hash

    def test_mismatched_config_hash_rejected(self, tmp_path):
        sl = basin_grid_slice(
            DEMO, 0j, Box.square(0j, 1.5), 64, eps_attract=0.25, max_iter=200
        )
        sl.grid.config_hash = "cafe0123"
        save_grid(sl.grid, tmp_path / "slice")
        with pytest.raises(ConfigError):
            load_grid(tmp_path / "slice", expected_config_hash="deadbeef")

    def test_rewrite_is_byte_identical(self, tmp_path):
        sl = basin_grid_slice(
            DEMO, 0j, Box.square(0j, 1.5), 64, eps_attract=0.25, max_iter=200
        )
        p1, m1 = save_grid(sl.grid, tmp_path / "a")
        p2, m2 = save_grid(sl.grid, tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()
        assert m1.read_text() == m2.read_text()
