"""Polynomial layer: evaluation, derivatives, root finding, escape radii."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skewbasin import (
    BivarPoly,
    ComplexPoly,
    DegreeDrop,
    HypothesisViolation,
    NonConvergence,
    RationalComplex,
    certify_escape,
    escape_radii,
    eval_skew,
    roots,
    skew_product,
)
from skewbasin.maps import coupled_quadratic, product_power, weak_fiber
from skewbasin.polynomials import batched_roots


@pytest.fixture(scope="module")
def demo():
    return coupled_quadratic(10)


class TestEvaluation:
    def test_base_fixed_point(self, demo):
        assert demo.p(0j) == 0j

    def test_base_second_root_exact(self, demo):
        z = RationalComplex.make(Fraction(-1, 4))
        assert demo.p.eval_exact(z).is_zero

    def test_base_value(self, demo):
        assert demo.p(2.0 + 0j) == pytest.approx(4.5 + 0j)

    def test_bivar_value(self, demo):
        # w^2 + w/2 + 10 z^2 at (1, 1) is 1 + 0.5 + 10
        assert demo.q(1.0 + 0j, 1.0 + 0j) == pytest.approx(11.5 + 0j)

    def test_bivar_array_eval_matches_scalar(self, demo):
        rng = np.random.Generator(np.random.PCG64(7))
        z = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        w = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        arr = demo.q(z, w)
        for i in range(40):
            assert arr[i] == pytest.approx(demo.q(complex(z[i]), complex(w[i])))

    def test_eval_skew_fixed_point(self, demo):
        assert eval_skew(demo, (0j, 0j)) == (0j, 0j)

    def test_eval_skew_fiber_preimage(self, demo):
        # (0, -1/2) maps to the fixed point in one step
        out = eval_skew(demo, (0j, -0.5 + 0j))
        assert out[0] == 0j and abs(out[1]) < 1e-15

    def test_eval_skew_generic(self, demo):
        out = eval_skew(demo, (1.0 + 0j, 0j))
        assert out == (pytest.approx(1.25 + 0j), pytest.approx(10.0 + 0j))


class TestDerivatives:
    def test_partial_w_critical_point(self, demo):
        dq = demo.q.partial_w()
        # 2w + 1/2 vanishes at w = -1/4 regardless of z
        assert dq(0.3 + 0.2j, -0.25 + 0j) == pytest.approx(0j)

    def test_partial_z_at_origin(self, demo):
        dz = demo.q.partial_z()
        assert dz(0j, 0j) == 0j

    def test_derivative_of_constant_is_zero(self):
        c = ComplexPoly((3 + 0j,))
        assert c.derivative().is_zero

    def test_multipliers(self, demo):
        assert demo.a == pytest.approx(0.25)
        assert demo.b == pytest.approx(0.5)
        assert demo.d == 2

    def test_coefficient_extraction_round_trip(self, demo):
        q0 = demo.q.coefficient_in_z(0)
        q2 = demo.q.coefficient_in_z(2)
        assert q0.coeffs == (0j, 0.5 + 0j, 1 + 0j)
        assert q2.coeffs == (10 + 0j,)
        rebuilt = BivarPoly(
            tuple((0, k, c) for k, c in enumerate(q0.coeffs))
            + tuple((2, k, c) for k, c in enumerate(q2.coeffs))
        )
        assert rebuilt.terms == demo.q.terms


class TestRoots:
    def test_base_roots(self, demo):
        got = roots(demo.p)
        assert got == pytest.approx([-0.25 + 0j, 0j], abs=1e-12)

    def test_fiber_roots_at_origin(self, demo):
        got = roots(demo.q.fiber_poly(0j))
        assert got == pytest.approx([-0.5 + 0j, 0j], abs=1e-12)

    def test_fiber_roots_at_second_preimage(self, demo):
        got = roots(demo.q.fiber_poly(-0.25 + 0j))
        assert got == pytest.approx([-0.25 - 0.75j, -0.25 + 0.75j], abs=1e-12)

    def test_residuals_meet_target(self):
        rng = np.random.Generator(np.random.PCG64(11))
        for _ in range(25):
            c = rng.standard_normal(7) + 1j * rng.standard_normal(7)
            p = ComplexPoly(tuple(c))
            scale = 1.0 + np.sum(np.abs(np.asarray(p.coeffs) / p.coeffs[-1]))
            for r in roots(p):
                assert abs(p(r) / p.coeffs[-1]) <= 1e-12 * scale

    def test_against_numpy_oracle(self):
        rng = np.random.Generator(np.random.PCG64(3))
        for _ in range(20):
            c = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            p = ComplexPoly(tuple(c))
            mine = sorted(roots(p), key=lambda r: (r.real, r.imag))
            ref = sorted(
                np.roots(np.asarray(p.coeffs[::-1])), key=lambda r: (r.real, r.imag)
            )
            assert mine == pytest.approx(ref, abs=1e-8)

    def test_nonconvergence_raises(self):
        p = ComplexPoly((1 + 0j, 2 + 0j, 3 + 0j, 4 + 0j, 5 + 0j, 6 + 0j, 7 + 0j))
        with pytest.raises(NonConvergence):
            roots(p, max_iterations=1)

    def test_batched_matches_single(self, demo):
        rows = np.array(
            [demo.q.fiber_poly(0j).coeffs, demo.q.fiber_poly(-0.25 + 0j).coeffs]
        )
        got = batched_roots(rows)
        assert list(got[0]) == pytest.approx(roots(demo.q.fiber_poly(0j)))
        assert list(got[1]) == pytest.approx(roots(demo.q.fiber_poly(-0.25 + 0j)))

    def test_batched_degree_drop(self):
        rows = np.array([[1 + 0j, 1 + 0j, 0j]])
        with pytest.raises(DegreeDrop):
            batched_roots(rows)

    def test_multiple_root_merging(self):
        # (w - 0.5)^2 must come back as a merged double root
        p = ComplexPoly((0.25 + 0j, -1 + 0j, 1 + 0j))
        got = roots(p, tol=1e-9)
        assert len(got) == 2
        assert got[0] == got[1]
        assert got[0] == pytest.approx(0.5 + 0j, abs=1e-5)


@st.composite
def separated_roots(draw):
    n = draw(st.integers(min_value=2, max_value=6))
    vals: list[complex] = []
    for _ in range(n):
        re = draw(st.floats(min_value=-1.5, max_value=1.5))
        im = draw(st.floats(min_value=-1.5, max_value=1.5))
        vals.append(complex(re, im))
    for i in range(n):
        for j in range(i + 1, n):
            if abs(vals[i] - vals[j]) < 0.35:
                # nudge apart deterministically to keep the problem well conditioned
                vals[j] += 0.5 + 0.5j * ((i + j) % 3)
    return vals


class TestRootsExpandRoundTrip:
    @given(separated_roots())
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, known):
        coeffs = np.array([1 + 0j])
        for r in known:
            coeffs = np.convolve(coeffs, np.array([-r, 1 + 0j]))
        p = ComplexPoly(tuple(coeffs))
        got = roots(p, tol=1e-12)
        assert len(got) == len(known)
        ref = sorted(known, key=lambda r: (r.real, r.imag))
        hausdorff = max(
            max(min(abs(g - r) for r in ref) for g in got),
            max(min(abs(g - r) for g in got) for r in ref),
        )
        assert hausdorff <= 10 * 1e-12 * p.coefficient_scale() + 1e-10


class TestEscapeRadius:
    def test_demo_radii(self, demo):
        assert demo.base_radius == pytest.approx(1.25, abs=1e-9)
        assert demo.escape_radius is not None and demo.escape_radius <= 10.0

    def test_base_alone_certifies_5_4(self, demo):
        # any radius >= 5/4 certifies |P(z)| > |z| for the quadratic base
        rng = np.random.Generator(np.random.PCG64(5))
        for s in 1.25 * (1 + rng.random(200)):
            z = s * np.exp(2j * np.pi * rng.random())
            assert abs(demo.p(z)) > abs(z)

    def test_monic_product_radius(self):
        g = product_power()
        assert g.escape_radius == pytest.approx(2.0)

    def test_certificate_sampling(self, demo):
        rep = certify_escape(demo, n_samples=10_000)
        assert rep["passed"], rep

    def test_certificate_sampling_product(self):
        rep = certify_escape(product_power(), n_samples=10_000)
        assert rep["passed"], rep

    def test_degree_violation_raises(self):
        p = ComplexPoly((0j, 0.25 + 0j, 1 + 0j))
        q = BivarPoly(((0, 2, 1 + 0j), (1, 2, 1 + 0j)))  # z * w^2 term
        with pytest.raises(HypothesisViolation):
            escape_radii(p, q)
        f = skew_product(p, q)
        assert f.escape_radius is None
        assert f.hypothesis_issues

    def test_weak_fiber_still_has_radius(self):
        f = weak_fiber()
        assert f.escape_radius is not None
        assert certify_escape(f, n_samples=4000)["passed"]
