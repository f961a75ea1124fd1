"""Ready-made skew products used by the test suite and the experiment scripts."""

from __future__ import annotations

from fractions import Fraction

from .polynomials import BivarPoly, ComplexPoly, SkewProduct, skew_product
from .rational import RationalComplex


def _qc(re, im=0) -> RationalComplex:
    return RationalComplex.make(re, im)


def coupled_quadratic(coupling: float | Fraction = 10) -> SkewProduct:
    """The quadratic demonstration map F(z, w) = (z^2 + z/4, w^2 + w/2 + c z^2).

    The base multiplier is 1/4 and the fiber multiplier 1/2; the coupling
    coefficient c feeds the base into the fiber. Coefficients are carried
    exactly so certificate checks can run in rational arithmetic.
    """
    c = Fraction(coupling) if not isinstance(coupling, Fraction) else coupling
    p = ComplexPoly(
        (0j, 0.25 + 0j, 1 + 0j),
        (_qc(0), _qc(Fraction(1, 4)), _qc(1)),
    )
    q = BivarPoly(
        ((0, 2, 1 + 0j), (0, 1, 0.5 + 0j), (2, 0, complex(float(c)))),
        ((0, 2, _qc(1)), (0, 1, _qc(Fraction(1, 2))), (2, 0, _qc(c))),
    )
    return skew_product(p, q)


def product_power(d_base: int = 2, d_fiber: int = 2) -> SkewProduct:
    """The uncoupled product (z^d, w^e); its basin is the exact unit bidisc."""
    p_coeffs = [0j] * (d_base + 1)
    p_coeffs[d_base] = 1 + 0j
    p_exact = [_qc(0)] * (d_base + 1)
    p_exact[d_base] = _qc(1)
    q = BivarPoly(
        ((0, d_fiber, 1 + 0j),),
        ((0, d_fiber, _qc(1)),),
    )
    return skew_product(ComplexPoly(tuple(p_coeffs), tuple(p_exact)), q)


def superattracting_base(a: float = 1.0) -> SkewProduct:
    """(z^2, w^2 + a z): base multiplier 0, so the contraction-rate hypothesis fails."""
    p = ComplexPoly((0j, 0j, 1 + 0j))
    q = BivarPoly(((0, 2, 1 + 0j), (1, 0, complex(a))))
    return skew_product(p, q)


def weak_fiber(a: float = 0.1, b: float = 0.005, c: float = 0.01) -> SkewProduct:
    """(a z + z^2, w^2 + c w + b z) in the regime |a| >> |c| >> |a b|.

    Here the base contracts more slowly than it should relative to the fiber
    (the fiber multiplier c is smaller than a) and the fiber picks up a
    linear base term, so several structural hypotheses fail at once.
    """
    p = ComplexPoly((0j, complex(a), 1 + 0j))
    q = BivarPoly(((0, 2, 1 + 0j), (0, 1, complex(c)), (1, 0, complex(b))))
    return skew_product(p, q)


def critical_hits_origin() -> SkewProduct:
    """A cubic toy whose inner fiber critical point lands exactly on the fixed point.

    Q_0(w) = w (w - 1/2)^2 has a critical point at w = 1/2 with Q_0(1/2) = 0,
    so the backward-orbit avoidance condition fails after one exact step.
    """
    p = ComplexPoly(
        (0j, 0.125 + 0j, 0j, 1 + 0j),
        (_qc(0), _qc(Fraction(1, 8)), _qc(0), _qc(1)),
    )
    q = BivarPoly(
        ((0, 3, 1 + 0j), (0, 2, -1 + 0j), (0, 1, 0.25 + 0j)),
        ((0, 3, _qc(1)), (0, 2, _qc(-1)), (0, 1, _qc(Fraction(1, 4)))),
    )
    return skew_product(p, q)
