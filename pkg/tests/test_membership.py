"""Membership checker tests.

Hand oracles used below, each derivable with pencil and paper:

* Quadratic demo map (z^2 + z/4, w^2 + w/2 + 10 z^2): base multiplier 1/4,
  fiber multiplier 1/2, degree 2, z^2 coefficient constant. Its fiber
  critical locus is ∂Q/∂w = 2w + 1/2 = 0, so w = -1/4 for every z, and
  Q(z, -1/4) = 10 z^2 - 1/16, whose modulus is at least
  10 (3/4)^2 - 1/16 = 89/16 once |z| >= 3/4. Exact orbits:
  -1/4 -> -1/16 (fiber), -1/8 -> -1/64 (base).
* Certificate inequalities at (L, B): B - 1/2 - 25L/(16B) and 9L/16 - 1/16;
  at (10, 5) these are 11/8 and 89/16; at (1, 5) the second is 1/2; at
  (10, 100) the first is 3179/32.
* Origin-hitting toy: fiber polynomial w(w - 1/2)^2 has derivative
  (3w - 1/2)(w - 1/2), critical points 1/6 and 1/2, and the critical value
  at 1/2 is exactly 0.
* weak-fiber counterexample (0.1 z + z^2, w^2 + 0.01 w + 0.005 z): fiber
  multiplier 0.01 < base multiplier 0.1, mixed derivative 0.005 != 0, and
  the constant critical point w = -0.005 is attracted over every basin
  base point because the fiber contracts onto the forced orbit.
"""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skewbasin.dynamics import BASIN, ESCAPED, Box, GridDomain, basin_grid_1d, classify_point
from skewbasin.errors import ConfigError
from skewbasin.maps import (
    coupled_quadratic,
    critical_hits_origin,
    product_power,
    superattracting_base,
    weak_fiber,
)
from skewbasin.membership import (
    FAIL,
    INCONCLUSIVE,
    PASS,
    CheckEntry,
    MembershipReport,
    _exact_roots_small,
    _exact_sqrt,
    _exclusion_radius,
    _frac_sqrt,
    boundary_adjacent_cells,
    check_condition_c,
    check_hypotheses,
    combine_verdicts,
    membership_report,
    subsample_rows,
    verify_example_bounds,
)
from skewbasin.polynomials import BivarPoly, ComplexPoly, roots, skew_product
from skewbasin.rational import RationalComplex


def _entry(report: MembershipReport, fragment: str) -> CheckEntry:
    hits = [e for e in report.entries() if fragment in e.name]
    assert len(hits) == 1, f"{fragment!r} matched {len(hits)} entries"
    return hits[0]


@pytest.fixture(scope="module")
def demo():
    return coupled_quadratic()


@pytest.fixture(scope="module")
def demo_grid(demo):
    return basin_grid_1d(
        demo, Box.square(0j, 1.02 * demo.base_radius), 256, 0.03125, 300
    )


@pytest.fixture(scope="module")
def demo_condition(demo, demo_grid):
    return check_condition_c(
        demo, demo_grid, samples=60, max_iter=250, slice_resolution=48
    )


class TestVerdictAlgebra:
    def test_combine_empty_is_pass(self):
        assert combine_verdicts([]) == PASS

    @pytest.mark.parametrize(
        "verdicts,expected",
        [
            ([PASS, PASS], PASS),
            ([PASS, INCONCLUSIVE], INCONCLUSIVE),
            ([INCONCLUSIVE, FAIL, PASS], FAIL),
            ([FAIL], FAIL),
        ],
    )
    def test_combine(self, verdicts, expected):
        assert combine_verdicts(verdicts) == expected

    def test_unknown_verdict_rejected(self):
        with pytest.raises(ConfigError):
            CheckEntry("x", "MAYBE", "w")

    def test_fail_requires_witness(self):
        with pytest.raises(ConfigError):
            CheckEntry("x", FAIL, "")
        CheckEntry("x", FAIL, "", points=((0j, 1j),))  # points alone suffice

    def test_overall_matches_entries(self):
        ok = CheckEntry("a", PASS, "v")
        meh = CheckEntry("b", INCONCLUSIVE, "v")
        bad = CheckEntry("c", FAIL, "v")
        assert MembershipReport((ok,), (ok,)).overall == PASS
        assert MembershipReport((ok,), (meh,)).overall == INCONCLUSIVE
        assert MembershipReport((ok,), (meh,), (bad,)).overall == FAIL

    def test_to_text_shape(self):
        rep = MembershipReport(
            (CheckEntry("alpha", PASS, "w1"),),
            (CheckEntry("beta", FAIL, "w2", ((0.5 + 0j, -0.25 + 0j),)),),
            map_hash="abc123",
        )
        lines = rep.to_text().splitlines()
        assert lines[0] == "membership-report\tv1"
        assert lines[1] == "map\tabc123"
        assert lines[2].startswith("base\tPASS\talpha\tw1")
        assert lines[3].startswith("fiber\tFAIL\tbeta\tw2\t0.5,")
        assert lines[-1] == "overall\tFAIL"

    def test_render_table_mentions_everything(self):
        rep = MembershipReport(
            (CheckEntry("alpha", PASS, "w1"),),
            (CheckEntry("beta", FAIL, "w2", ((0.5 + 0j, -0.25 + 0j),)),),
        )
        table = rep.render_table()
        for token in ("VERDICT", "alpha", "beta", "w2", "overall: FAIL", "at ("):
            assert token in table


class TestHypotheses:
    def test_demo_all_pass(self, demo):
        rep = check_hypotheses(demo)
        assert rep.overall == PASS
        assert len(rep.p_checks) == 3 and len(rep.q_checks) == 6
        assert rep.condition_c == ()
        assert rep.map_hash == demo.fingerprint()
        assert "0.25" in _entry(rep, "base multiplier strictly inside").witness
        assert "0.5" in _entry(rep, "fiber multiplier strictly inside").witness

    def test_superattracting_base_fails_multiplier(self):
        rep = check_hypotheses(superattracting_base())
        assert rep.overall == FAIL
        e = _entry(rep, "base multiplier strictly inside")
        assert e.verdict == FAIL
        assert "0.0" in e.witness

    def test_weak_fiber_fails_ordering_with_witness(self):
        rep = check_hypotheses(weak_fiber())
        assert rep.overall == FAIL
        order = _entry(rep, "strictly below fiber multiplier")
        assert order.verdict == FAIL
        assert "0.1" in order.witness and "0.01" in order.witness
        assert _entry(rep, "no linear base coupling").verdict == FAIL
        # the base multiplier itself is fine for this map
        assert _entry(rep, "base multiplier strictly inside").verdict == PASS

    def test_product_map_fails_both_multipliers(self):
        rep = check_hypotheses(product_power())
        assert _entry(rep, "base multiplier strictly inside").verdict == FAIL
        assert _entry(rep, "fiber multiplier strictly inside").verdict == FAIL

    def test_origin_hitting_toy_passes_hypotheses(self):
        assert check_hypotheses(critical_hits_origin()).overall == PASS

    def test_float_twin_agrees_with_exact(self, demo):
        p = ComplexPoly((0j, 0.25 + 0j, 1 + 0j))
        q = BivarPoly(((0, 2, 1 + 0j), (0, 1, 0.5 + 0j), (2, 0, 10 + 0j)))
        float_rep = check_hypotheses(skew_product(p, q))
        exact_rep = check_hypotheses(demo)
        for fe, ee in zip(float_rep.entries(), exact_rep.entries()):
            assert fe.name == ee.name and fe.verdict == ee.verdict

    def test_borderline_multiplier_is_inconclusive(self):
        p = ComplexPoly((0j, complex(1 - 1e-14), 1 + 0j))
        q = BivarPoly(((0, 2, 1 + 0j), (0, 1, 0.5 + 0j)))
        rep = check_hypotheses(skew_product(p, q))
        assert _entry(rep, "base multiplier strictly inside").verdict == INCONCLUSIVE

    def test_degree_layout_violation_reported(self):
        # z^1 coefficient is allowed full degree; z^2 coefficient is not
        q = BivarPoly(
            ((0, 2, 1 + 0j), (0, 1, 0.5 + 0j), (2, 2, 1 + 0j))
        )
        p = ComplexPoly((0j, 0.25 + 0j, 1 + 0j))
        rep = check_hypotheses(skew_product(p, q))
        e = _entry(rep, "higher base powers")
        assert e.verdict == FAIL
        assert "base power 2" in e.witness and "degree 2" in e.witness


class TestExampleBounds:
    def test_reference_values_exact(self):
        r = verify_example_bounds(10, 5)
        assert r.star_value == Fraction(11, 8)
        assert r.starstar_value == Fraction(89, 16)
        assert r.star.verdict == PASS and r.starstar.verdict == PASS
        assert r.overall == PASS

    def test_weak_coupling_fails_second_bound(self):
        r = verify_example_bounds(1, 5)
        assert r.starstar_value == Fraction(1, 2)
        assert r.starstar.verdict == FAIL
        assert r.star.verdict == PASS
        assert r.overall == FAIL

    def test_huge_fiber_bound_fails_second_bound(self):
        r = verify_example_bounds(10, 100)
        assert r.star_value == Fraction(3179, 32)
        assert r.star.verdict == PASS and r.starstar.verdict == FAIL

    def test_equivalent_rationals_identical(self):
        assert verify_example_bounds(Fraction(20, 2), 5) == verify_example_bounds(
            10, "5"
        )

    def test_string_inputs(self):
        r = verify_example_bounds("10", "89/16")
        assert r.starstar_value == Fraction(89, 16)
        assert r.starstar.verdict == FAIL  # not strictly greater than itself

    def test_rejects_floats_and_nonpositive(self):
        with pytest.raises(ConfigError):
            verify_example_bounds(10.0, 5)
        with pytest.raises(ConfigError):
            verify_example_bounds(0, 5)
        with pytest.raises(ConfigError):
            verify_example_bounds(10, -1)

    def test_to_text_carries_exact_values(self):
        txt = verify_example_bounds(10, 5).to_text()
        assert "11/8" in txt and "89/16" in txt
        assert txt.splitlines()[-1] == "overall\tPASS"

    @given(
        ln=st.integers(1, 10**6),
        ld=st.integers(1, 10**3),
        bn=st.integers(1, 10**6),
        bd=st.integers(1, 10**3),
    )
    @settings(max_examples=60, deadline=None)
    def test_verdicts_match_cross_multiplied_forms(self, ln, ld, bn, bd):
        # clearing denominators gives integer-only equivalents of both bounds
        L, B = Fraction(ln, ld), Fraction(bn, bd)
        r = verify_example_bounds(L, B)
        star_ok = 16 * B * B - 8 * B - 25 * L >= 16 * B
        starstar_ok = 9 * L - 1 > 16 * B
        assert (r.star.verdict == PASS) == star_ok
        assert (r.starstar.verdict == PASS) == starstar_ok


class TestBoundarySampling:
    @staticmethod
    def _grid_from_mask(mask: np.ndarray) -> GridDomain:
        n = mask.shape[0]
        zeros = np.zeros_like(mask, dtype=np.int32)
        return GridDomain(
            Box.square(0j, 1.0), n, mask.astype(np.uint8), zeros, zeros,
            eps_attract=0.1, max_iter=10, radius=2.0, kind="base",
        )

    def test_matches_brute_force(self):
        rng = np.random.Generator(np.random.PCG64(7))
        mask = np.where(rng.random((12, 12)) < 0.55, BASIN, ESCAPED)
        got = boundary_adjacent_cells(self._grid_from_mask(mask))
        expect = []
        for iy in range(12):
            for ix in range(12):
                if mask[iy, ix] != BASIN:
                    continue
                exposed = False
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        if dy == 0 and dx == 0:
                            continue
                        y, x = iy + dy, ix + dx
                        if not (0 <= y < 12 and 0 <= x < 12) or mask[y, x] != BASIN:
                            exposed = True
                if exposed:
                    expect.append((iy, ix))
        assert [tuple(r) for r in got] == expect

    def test_rim_counts_as_boundary(self):
        mask = np.full((8, 8), BASIN, dtype=np.uint8)
        got = boundary_adjacent_cells(self._grid_from_mask(mask))
        assert len(got) == 8 * 8 - 6 * 6

    def test_subsample_deterministic_and_ordered(self):
        cells = np.column_stack([np.repeat(np.arange(40), 40),
                                 np.tile(np.arange(40), 40)])
        a = subsample_rows(cells, 100)
        b = subsample_rows(cells, 100)
        assert np.array_equal(a, b)
        assert len(a) == 100
        flat = a[:, 0] * 40 + a[:, 1]
        assert (np.diff(flat) > 0).all()
        as_set = {tuple(r) for r in a}
        assert as_set <= {tuple(r) for r in cells}
        c = subsample_rows(cells, 100, seed=999)
        assert not np.array_equal(a, c)

    def test_subsample_short_input_passthrough(self):
        cells = np.arange(10).reshape(5, 2)
        assert subsample_rows(cells, 5) is cells
        assert subsample_rows(cells, 50) is cells


class TestExactHelpers:
    def test_frac_sqrt(self):
        assert _frac_sqrt(Fraction(9, 4)) == Fraction(3, 2)
        assert _frac_sqrt(Fraction(0)) == 0
        assert _frac_sqrt(Fraction(2)) is None
        assert _frac_sqrt(Fraction(-1)) is None

    def test_exact_sqrt(self):
        four = RationalComplex.make(4)
        assert _exact_sqrt(four) == RationalComplex.make(2)
        assert _exact_sqrt(RationalComplex.make(-4)) == RationalComplex.make(0, 2)
        assert _exact_sqrt(RationalComplex.make(1, 1)) is None
        assert _exact_sqrt(RationalComplex.make(Fraction(1, 3))) is None

    def test_exact_roots_linear(self):
        poly = ComplexPoly(
            (0.5 + 0j, 2 + 0j),
            (RationalComplex.make(Fraction(1, 2)), RationalComplex.make(2)),
        )
        (root,) = _exact_roots_small(poly)
        assert root == RationalComplex.make(Fraction(-1, 4))

    def test_exact_roots_quadratic_toy(self):
        dq0 = critical_hits_origin().q.coefficient_in_z(0).derivative()
        got = _exact_roots_small(dq0)
        assert got == [
            RationalComplex.make(Fraction(1, 6)),
            RationalComplex.make(Fraction(1, 2)),
        ]
        for exact, approx in zip(got, roots(dq0)):
            assert abs(exact.to_complex() - approx) < 1e-9

    def test_exact_roots_unavailable(self):
        no_exact = ComplexPoly((1 + 0j, 1 + 0j))
        assert _exact_roots_small(no_exact) is None
        bad_disc = ComplexPoly(
            (-1 + 0j, -1 + 0j, 1 + 0j),
            tuple(RationalComplex.make(v) for v in (-1, -1, 1)),
        )  # golden-ratio roots: discriminant 5 has no rational square root
        assert _exact_roots_small(bad_disc) is None

    def test_exclusion_radius_demo_values(self, demo):
        assert _exclusion_radius(demo.q.coefficient_in_z(0)) == (0.25, 0.75)
        assert _exclusion_radius(demo.p) == (0.125, 0.375)

    def test_exclusion_radius_refusals(self):
        assert _exclusion_radius(ComplexPoly((1 + 0j, 0.5 + 0j))) is None
        assert _exclusion_radius(ComplexPoly((0j, 0j, 1 + 0j))) is None
        assert _exclusion_radius(ComplexPoly((0j, 1.5 + 0j, 1 + 0j))) is None

    def test_exclusion_radius_pure_linear(self):
        r, lam = _exclusion_radius(ComplexPoly((0j, 0.5 + 0j)))
        assert r == 0.5 and lam < 1

    @given(
        m=st.floats(0.05, 0.95),
        c2=st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False),
        c3=st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False),
    )
    @settings(max_examples=60, deadline=None)
    def test_exclusion_radius_sound(self, m, c2, c3):
        poly = ComplexPoly((0j, complex(m), c2, c3))
        got = _exclusion_radius(poly)
        assert got is not None
        r, lam = got
        assert lam < 1
        angles = np.exp(2j * np.pi * np.linspace(0, 1, 17)[:-1])
        for scale in (0.999, 0.5, 0.01):
            w = r * scale * angles
            vals = poly(w)
            assert (np.abs(vals) <= lam * np.abs(w) + 1e-15).all()
            assert (np.abs(vals) >= (m / 2) * np.abs(w) * (1 - 1e-12)).all()


class TestConditionC:
    def test_demo_all_pass(self, demo_condition):
        assert [e.verdict for e in demo_condition] == [PASS] * 4
        assert "boundary cells" in demo_condition[0].witness

    def test_demo_avoidance_justifications_recorded(self, demo_condition):
        # items 3 and 4 must carry the reason PASS is safe, not just the verdict
        assert "zero-free disc" in demo_condition[2].witness
        assert "zero-free disc" in demo_condition[3].witness
        assert demo_condition[2].points == ((0j, -0.25 + 0j),)
        assert demo_condition[3].points == ((-0.125 + 0j, 0j),)

    def test_demo_critical_locus_constant(self, demo, demo_grid):
        cells = subsample_rows(boundary_adjacent_cells(demo_grid), 20)
        dq = demo.q.partial_w()
        for iy, ix in cells:
            z = demo_grid.point_of(int(iy), int(ix))
            got = roots(dq.fiber_poly(z))
            assert len(got) == 1
            assert abs(got[0] - (-0.25)) < 1e-12

    def test_demo_first_step_clears_fiber_bound(self, demo, demo_grid):
        # hand bound: |Q(z, -1/4)| = |10 z^2 - 1/16| >= 89/16 once |z| >= 3/4
        cells = boundary_adjacent_cells(demo_grid)
        zs = [demo_grid.point_of(int(iy), int(ix)) for iy, ix in cells]
        outer = [z for z in zs if abs(z) >= 0.75]
        assert len(outer) > 100
        for z in outer:
            w1 = demo.q(z, -0.25 + 0j)
            assert abs(w1) >= 89 / 16 - 1e-9

    def test_origin_hitting_toy_fails_item3(self):
        g = critical_hits_origin()
        grid = basin_grid_1d(g, Box.square(0j, 1.02 * g.base_radius), 128, 0.05, 300)
        items = check_condition_c(g, grid, samples=20, max_iter=200,
                                  slice_resolution=48)
        assert items[2].verdict == FAIL
        assert "hits the origin at step 1" in items[2].witness
        assert (0j, 0.5 + 0j) in items[2].points
        assert items[3].verdict == PASS

    def test_weak_fiber_fails_item1_with_witness(self, demo):
        h = weak_fiber()
        grid = basin_grid_1d(h, Box.square(0j, 1.02 * h.base_radius), 128,
                             0.05, 400, max_undecided=None)
        items = check_condition_c(h, grid, samples=40, max_iter=400,
                                  slice_resolution=48)
        assert items[0].verdict == FAIL
        assert len(items[0].points) > 0
        z, w = items[0].points[0]
        assert abs(w - (-0.005)) < 1e-9
        # the witness is a genuine basin point: re-verify by forward orbit
        cls = classify_point(h, (z, w), 0.05, 600)
        assert cls.kind == "basin"

    def test_no_escape_radius_degrades_items_1_to_3(self, demo_grid):
        # same base polynomial as the demo map, so its base grid still applies;
        # the z^1 coefficient carries full fiber degree, killing the certificate
        p = ComplexPoly(
            (0j, 0.25 + 0j, 1 + 0j),
            tuple(RationalComplex.make(v) for v in (0, Fraction(1, 4), 1)),
        )
        q = BivarPoly(((0, 2, 1 + 0j), (0, 1, 0.5 + 0j), (1, 2, 1 + 0j)))
        f = skew_product(p, q)
        assert f.escape_radius is None
        items = check_condition_c(f, demo_grid, samples=5, max_iter=100)
        assert [e.verdict for e in items[:3]] == [INCONCLUSIVE] * 3
        for e in items[:3]:
            assert "escape radius" in e.witness
        assert items[3].verdict == PASS

    def test_rejects_bad_arguments(self, demo, demo_grid):
        import dataclasses

        slice_like = dataclasses.replace(demo_grid, kind="slice")
        with pytest.raises(ConfigError):
            check_condition_c(demo, slice_like)
        with pytest.raises(ConfigError):
            check_condition_c(demo, demo_grid, dilation=0)
        with pytest.raises(ConfigError):
            check_condition_c(demo, demo_grid, samples=0)
        with pytest.raises(ConfigError):
            check_condition_c(demo, demo_grid, max_iter=0)

    def test_deterministic_and_worker_independent(self, demo, demo_grid, demo_condition):
        again = check_condition_c(demo, demo_grid, samples=60, max_iter=250,
                                  slice_resolution=48)
        assert again == demo_condition
        threaded = check_condition_c(demo, demo_grid, samples=60, max_iter=250,
                                     slice_resolution=48, workers=4)
        assert threaded == demo_condition

    def test_refinement_never_flips_directly(self, demo, demo_grid, demo_condition):
        finer = check_condition_c(demo, demo_grid, samples=120, max_iter=300,
                                  slice_resolution=64)
        for coarse, fine in zip(demo_condition, finer):
            assert {coarse.verdict, fine.verdict} != {PASS, FAIL}

    def test_full_report_assembly(self, demo, demo_grid):
        rep = membership_report(demo, demo_grid, samples=30, max_iter=250,
                                slice_resolution=48)
        assert len(rep.entries()) == 13
        assert len(rep.condition_c) == 4
        assert rep.overall == PASS
        assert rep.map_hash == demo.fingerprint()
        assert rep.to_text().splitlines()[-1] == "overall\tPASS"


class TestRasterContainment:
    def test_demo_slices_stay_inside_certified_boxes(self, demo, demo_grid):
        """Every rastered basin cell obeys |w| <= 5 + diag and |z| <= 5/4 + diag."""
        from skewbasin.dynamics import basin_grid_slice

        basin_cells = np.nonzero(demo_grid.mask == BASIN)
        zs = demo_grid.centers()[basin_cells]
        assert (np.abs(zs) <= 1.25 + demo_grid.cell_diag).all()
        box = Box.square(0j, 1.02 * demo.escape_radius)
        for z in (0j, 0.3 + 0.2j, -0.6 + 0j, 0.7 + 0.1j):
            sl = basin_grid_slice(demo, z, box, 96, 0.03125, 300,
                                  max_undecided=None).grid
            ws = sl.centers()[np.nonzero(sl.mask == BASIN)]
            if len(ws):
                assert (np.abs(ws) <= 5.0 + sl.cell_diag).all()
