"""Polynomials, skew products, and certified escape radii.

Univariate polynomials are stored constant-first. Bivariate polynomials are
sparse term lists (j, k, c) meaning c * z**j * w**k. Both can carry an exact
Gaussian-rational shadow of their coefficients for exact evaluation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DegreeDrop, HypothesisViolation, NonConvergence
from .rational import QC_ZERO, RationalComplex

_TRIM_TOL = 0.0  # representation keeps exact zeros out; no fuzzy trimming


def _trim(coeffs: tuple[complex, ...]) -> tuple[complex, ...]:
    n = len(coeffs)
    while n > 1 and coeffs[n - 1] == 0:
        n -= 1
    return tuple(coeffs[:n])


@dataclass(frozen=True)
class ComplexPoly:
    """Univariate polynomial with complex coefficients, constant term first."""

    coeffs: tuple[complex, ...]
    exact: tuple[RationalComplex, ...] | None = None

    def __post_init__(self):
        trimmed = _trim(tuple(complex(c) for c in self.coeffs))
        object.__setattr__(self, "coeffs", trimmed)
        if self.exact is not None:
            ex = tuple(self.exact[: len(trimmed)])
            if len(ex) < len(trimmed):
                raise ValueError("exact coefficient list shorter than float list")
            object.__setattr__(self, "exact", ex)

    @property
    def degree(self) -> int:
        if len(self.coeffs) == 1 and self.coeffs[0] == 0:
            return -1
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == -1

    def __call__(self, z):
        """Horner evaluation; works on scalars and numpy arrays."""
        acc = self.coeffs[-1]
        if isinstance(z, np.ndarray):
            acc = np.full_like(z, acc, dtype=np.complex128)
        for c in reversed(self.coeffs[:-1]):
            acc = acc * z + c
        return acc

    def eval_exact(self, z: RationalComplex) -> RationalComplex:
        if self.exact is None:
            raise HypothesisViolation("polynomial has no exact coefficients")
        acc = self.exact[-1]
        for c in reversed(self.exact[:-1]):
            acc = acc * z + c
        return acc

    def derivative(self) -> "ComplexPoly":
        if len(self.coeffs) == 1:
            return ComplexPoly((0j,), (QC_ZERO,) if self.exact else None)
        d = tuple((k + 1) * c for k, c in enumerate(self.coeffs[1:]))
        ex = None
        if self.exact is not None:
            ex = tuple(
                RationalComplex.make(k + 1, 0) * c
                for k, c in enumerate(self.exact[1:])
            )
        return ComplexPoly(d, ex)

    def coefficient_scale(self) -> float:
        return 1.0 + sum(abs(c) for c in self.coeffs)


@dataclass(frozen=True)
class BivarPoly:
    """Sparse bivariate polynomial: sum of c * z**j * w**k over terms (j, k, c)."""

    terms: tuple[tuple[int, int, complex], ...]
    exact: tuple[tuple[int, int, RationalComplex], ...] | None = None

    def __post_init__(self):
        merged: dict[tuple[int, int], complex] = {}
        for j, k, c in self.terms:
            if j < 0 or k < 0:
                raise ValueError("negative exponent")
            merged[(j, k)] = merged.get((j, k), 0j) + complex(c)
        cleaned = tuple(
            (j, k, c) for (j, k), c in sorted(merged.items()) if c != 0
        )
        object.__setattr__(self, "terms", cleaned)
        if self.exact is not None:
            emerged: dict[tuple[int, int], RationalComplex] = {}
            for j, k, c in self.exact:
                prev = emerged.get((j, k), QC_ZERO)
                emerged[(j, k)] = prev + c
            ex = tuple(
                (j, k, c) for (j, k), c in sorted(emerged.items()) if not c.is_zero
            )
            object.__setattr__(self, "exact", ex)

    @property
    def degree_w(self) -> int:
        return max((k for _, k, _ in self.terms), default=-1)

    @property
    def degree_z(self) -> int:
        return max((j for j, _, _ in self.terms), default=-1)

    def coefficient_in_z(self, j: int) -> ComplexPoly:
        """The univariate polynomial Q_j(w) multiplying z**j; lossless."""
        kmax = max((k for jj, k, _ in self.terms if jj == j), default=0)
        coeffs = [0j] * (kmax + 1)
        for jj, k, c in self.terms:
            if jj == j:
                coeffs[k] = c
        ex = None
        if self.exact is not None:
            exc = [QC_ZERO] * (kmax + 1)
            for jj, k, c in self.exact:
                if jj == j and k <= kmax:
                    exc[k] = c
            ex = tuple(exc)
        return ComplexPoly(tuple(coeffs), ex)

    def fiber_poly(self, z: complex) -> ComplexPoly:
        """The univariate polynomial w -> Q(z, w) at a fixed base point."""
        kmax = self.degree_w
        coeffs = np.zeros(kmax + 1, dtype=np.complex128)
        for j, k, c in self.terms:
            coeffs[k] += c * (z**j)
        return ComplexPoly(tuple(coeffs))

    def __call__(self, z, w):
        if isinstance(z, np.ndarray) or isinstance(w, np.ndarray):
            acc = np.zeros(np.broadcast(z, w).shape, dtype=np.complex128)
            for k, az in self._w_coeff_polys():
                if k:
                    acc = acc + az(z) * _ipow(w, k)
                else:
                    acc = acc + az(z)
            return acc
        acc = 0j
        for j, k, c in self.terms:
            acc += c * (z**j) * (w**k)
        return acc

    def _w_coeff_polys(self) -> tuple[tuple[int, ComplexPoly], ...]:
        """Pairs (k, A_k) with Q(z,w) = sum_k A_k(z) * w**k; built once."""
        by_k: dict[int, dict[int, complex]] = {}
        for j, k, c in self.terms:
            by_k.setdefault(k, {})[j] = c
        out = []
        for k in sorted(by_k):
            jmax = max(by_k[k])
            coeffs = [0j] * (jmax + 1)
            for j, c in by_k[k].items():
                coeffs[j] = c
            out.append((k, ComplexPoly(tuple(coeffs))))
        return tuple(out)

    def eval_exact(self, z: RationalComplex, w: RationalComplex) -> RationalComplex:
        if self.exact is None:
            raise HypothesisViolation("polynomial has no exact coefficients")
        acc = QC_ZERO
        for j, k, c in self.exact:
            t = c
            for _ in range(j):
                t = t * z
            for _ in range(k):
                t = t * w
            acc = acc + t
        return acc

    def partial_w(self) -> "BivarPoly":
        terms = tuple((j, k - 1, k * c) for j, k, c in self.terms if k >= 1)
        ex = None
        if self.exact is not None:
            ex = tuple(
                (j, k - 1, RationalComplex.make(k, 0) * c)
                for j, k, c in self.exact
                if k >= 1
            )
        return BivarPoly(terms, ex)

    def partial_z(self) -> "BivarPoly":
        terms = tuple((j - 1, k, j * c) for j, k, c in self.terms if j >= 1)
        ex = None
        if self.exact is not None:
            ex = tuple(
                (j - 1, k, RationalComplex.make(j, 0) * c)
                for j, k, c in self.exact
                if j >= 1
            )
        return BivarPoly(terms, ex)

    def coefficient_scale(self) -> float:
        return 1.0 + sum(abs(c) for _, _, c in self.terms)


def _ipow(w, k: int):
    if k == 0:
        return np.ones_like(w)
    acc = w
    for _ in range(k - 1):
        acc = acc * w
    return acc


# ---------------------------------------------------------------------------
# Root finding: simultaneous Aberth-Ehrlich iteration.
# ---------------------------------------------------------------------------

ROOT_TOL = 1e-12
ROOT_MAX_ITER = 500
ROOT_MERGE_FACTOR = 100.0


def roots(
    poly: ComplexPoly,
    tol: float = ROOT_TOL,
    max_iterations: int = ROOT_MAX_ITER,
) -> list[complex]:
    """All complex roots of `poly`, with multiplicity, sorted by (re, im).

    Runs the Aberth-Ehrlich simultaneous iteration from perturbed roots of
    unity scaled by the Cauchy bound, polishes to stagnation, then verifies
    every root against the residual target tol * (1 + sum |coeffs|). Roots
    closer than ROOT_MERGE_FACTOR * tol are merged into a multiple root.
    """
    if poly.degree <= 0:
        return []
    c = np.asarray(poly.coeffs, dtype=np.complex128)
    got = _aberth_batch(c[None, :], tol=tol, max_iterations=max_iterations)
    out = [complex(v) for v in got[0]]
    merged = _merge_close(out, ROOT_MERGE_FACTOR * tol)
    return sorted(merged, key=lambda r: (r.real, r.imag))


def batched_roots(
    coeff_rows: np.ndarray,
    tol: float = ROOT_TOL,
    max_iterations: int = ROOT_MAX_ITER,
) -> np.ndarray:
    """Roots of many same-degree polynomials at once; rows are constant-first.

    Returns an (n, degree) array sorted by (re, im) within each row. No
    multiplicity merging is applied; callers that need cluster merging do it
    at their own tolerance.
    """
    c = np.asarray(coeff_rows, dtype=np.complex128)
    if c.ndim != 2 or c.shape[1] < 2:
        raise ValueError("need an (n, degree+1) coefficient array")
    if np.any(c[:, -1] == 0):
        raise DegreeDrop("leading coefficient vanished in batched solve")
    return _aberth_batch(c, tol=tol, max_iterations=max_iterations)


def _aberth_batch(c: np.ndarray, tol: float, max_iterations: int) -> np.ndarray:
    n, m = c.shape
    d = m - 1
    lead = c[:, -1:]
    monic = c / lead
    # Cauchy bound on root modulus, per row.
    rho = 1.0 + np.max(np.abs(monic[:, :-1]), axis=1)
    # Deterministic perturbed roots of unity; irrational twist avoids
    # symmetric stalls on real-coefficient inputs.
    ang = 2.0 * np.pi * (np.arange(d) + 0.2025) / d + 0.5611
    x = (0.65 * rho)[:, None] * np.exp(1j * ang)[None, :]

    dcoef = monic[:, 1:] * np.arange(1, d + 1)

    def val(xs: np.ndarray, coefs: np.ndarray) -> np.ndarray:
        acc = np.broadcast_to(coefs[:, -1:], xs.shape).copy()
        for i in range(coefs.shape[1] - 2, -1, -1):
            acc *= xs
            acc += coefs[:, i : i + 1]
        return acc

    scale_x = np.maximum(1.0, rho)[:, None]
    stop = 1e-15
    it = 0
    for it in range(1, max_iterations + 1):
        pv = val(x, monic)
        dv = val(x, dcoef)
        dv = np.where(np.abs(dv) < 1e-300, 1e-300 + 0j, dv)
        w = pv / dv
        diff = x[:, :, None] - x[:, None, :]
        idx = np.arange(d)
        diff[:, idx, idx] = 1.0
        s = np.sum(1.0 / diff, axis=2) - 1.0  # subtract the diagonal's 1/1
        denom = 1.0 - w * s
        denom = np.where(np.abs(denom) < 1e-300, 1e-300 + 0j, denom)
        delta = w / denom
        x = x - delta
        if np.max(np.abs(delta) / scale_x) < stop:
            break
    resid = np.abs(val(x, monic))
    target = tol * (1.0 + np.sum(np.abs(monic), axis=1))[:, None]
    bad = resid > target
    if np.any(bad):
        raise NonConvergence(
            f"root residual {float(resid[bad].max()):.3e} above target after {it} iterations",
            iterations=it,
        )
    order = np.lexsort((x.imag, x.real), axis=-1)
    return np.take_along_axis(x, order, axis=-1)


def _merge_close(vals: list[complex], radius: float) -> list[complex]:
    out: list[complex] = []
    used = [False] * len(vals)
    for i, v in enumerate(vals):
        if used[i]:
            continue
        cluster = [v]
        used[i] = True
        for j in range(i + 1, len(vals)):
            if not used[j] and abs(vals[j] - v) <= radius:
                cluster.append(vals[j])
                used[j] = True
        mean = sum(cluster) / len(cluster)
        out.extend([mean] * len(cluster))
    return out


# ---------------------------------------------------------------------------
# Skew products.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkewProduct:
    """F(z, w) = (P(z), Q(z, w)) with cached multipliers and escape data.

    a = |P'(0)| and b = |dQ/dw (0,0)| are the contraction moduli at the
    fixed point; d is the base degree. escape_radius is None when the degree
    layout rules out the two-stage escape certificate (the issues tuple says
    why), in which case grid classification refuses to run.
    """

    p: ComplexPoly
    q: BivarPoly
    a: float
    b: float
    d: int
    base_radius: float | None
    fiber_radius: float | None
    escape_radius: float | None
    hypothesis_issues: tuple[str, ...] = field(default_factory=tuple)

    @property
    def has_exact(self) -> bool:
        return self.p.exact is not None and self.q.exact is not None

    def __call__(self, z, w):
        return self.p(z), self.q(z, w)

    def eval_exact(
        self, z: RationalComplex, w: RationalComplex
    ) -> tuple[RationalComplex, RationalComplex]:
        return self.p.eval_exact(z), self.q.eval_exact(z, w)

    def fingerprint(self) -> str:
        return map_fingerprint(self)


def eval_skew(f: SkewProduct, point: tuple[complex, complex]) -> tuple[complex, complex]:
    """One forward step of the skew product."""
    z, w = point
    return f.p(z), f.q(z, w)


def _largest_real_root_at_least(coeffs: list[float], floor: float) -> float:
    """Largest real root of the real polynomial (constant first), clamped to floor."""
    poly = ComplexPoly(tuple(complex(c) for c in coeffs))
    if poly.degree <= 0:
        return floor
    cands = [floor]
    scale = 1.0 + max(abs(c) for c in coeffs)
    for r in roots(poly, tol=1e-13):
        if abs(r.imag) <= 1e-9 * scale:
            cands.append(r.real)
    return max(cands)


def escape_radii(p: ComplexPoly, q: BivarPoly) -> tuple[float, float, float]:
    """Certified escape radii (r_z, r_w, R) for the skew product (P, Q).

    The certificate is two-stage: |z| > r_z forces |P(z)| > |z|, and
    |z| <= r_z with |w| > r_w forces |Q(z, w)| > |w|. Together these confine
    the attracting basin to the closed bidisc of radius R = 2 * max(r_z, r_w)
    with margin to spare. Raises HypothesisViolation when the fiber degree
    layout (deg Q_0 = deg P >= 2, deg Q_j <= deg P - 1 for j >= 1) fails,
    since then no fiber bound of this shape exists.
    """
    d = p.degree
    if d < 2:
        raise HypothesisViolation(f"base degree {d} < 2")
    q0 = q.coefficient_in_z(0)
    if q0.degree != d:
        raise HypothesisViolation(
            f"fiber polynomial at z=0 has degree {q0.degree}, expected {d}"
        )
    for j in range(1, q.degree_z + 1):
        qj = q.coefficient_in_z(j)
        if qj.degree >= d:
            raise HypothesisViolation(
                f"coefficient of z^{j} has w-degree {qj.degree} >= {d}"
            )
    pc = [abs(c) for c in p.coeffs]
    g = [-pc[i] if i != 1 else -(pc[1] + 1.0) for i in range(d)] + [pc[d]]
    r_z = _largest_real_root_at_least(g, 1.0)

    lead = abs(q0.coeffs[d])
    h = [0.0] * (d + 1)
    h[d] = lead
    for j, k, c in q.terms:
        if (j, k) == (0, d):
            continue
        h[k] -= abs(c) * (r_z**j)
    h[1] -= 1.0
    r_w = _largest_real_root_at_least(h, 1.0)
    radius = 2.0 * max(r_z, r_w)
    return r_z, r_w, radius


def skew_product(p: ComplexPoly, q: BivarPoly) -> SkewProduct:
    """Assemble a SkewProduct, computing multipliers and escape radii.

    Degree-layout violations do not raise here: they are recorded in
    hypothesis_issues and leave escape_radius as None so that membership
    checking can still report on defective maps.
    """
    dp = p.derivative()
    a = abs(dp(0j))
    q0 = q.coefficient_in_z(0)
    b = abs(q0.derivative()(0j)) if q0.degree >= 1 else 0.0
    issues: list[str] = []
    r_z = r_w = radius = None
    try:
        r_z, r_w, radius = escape_radii(p, q)
    except HypothesisViolation as exc:
        issues.append(str(exc))
    return SkewProduct(
        p=p,
        q=q,
        a=a,
        b=b,
        d=p.degree,
        base_radius=r_z,
        fiber_radius=r_w,
        escape_radius=radius,
        hypothesis_issues=tuple(issues),
    )


def certify_escape(
    f: SkewProduct,
    n_samples: int = 10_000,
    seed: int = 20260814,
    factor: float = 1.01,
) -> dict:
    """Sample the sphere max(|z|,|w|) = factor * R and check the certificate.

    Each sample satisfies exactly one regime: |z| > r_z (base inequality
    |P(z)| > |z| must hold) or |z| <= r_z, |w| > r_w (fiber inequality
    |Q(z,w)| > |w| must hold). Returns counts and a pass flag.
    """
    if f.escape_radius is None:
        raise HypothesisViolation("map has no certified escape radius")
    rng = np.random.Generator(np.random.PCG64(seed))
    s = factor * f.escape_radius
    face_w = rng.random(n_samples) < 0.5
    ang1 = rng.random(n_samples) * 2 * np.pi
    ang2 = rng.random(n_samples) * 2 * np.pi
    rad = np.sqrt(rng.random(n_samples)) * s
    z = np.where(face_w, rad * np.exp(1j * ang1), s * np.exp(1j * ang1))
    w = np.where(face_w, s * np.exp(1j * ang2), rad * np.exp(1j * ang2))
    pz = f.p(z)
    qw = f.q(z, w)
    base_regime = np.abs(z) > f.base_radius
    ok_base = np.abs(pz) > np.abs(z)
    ok_fiber = np.abs(qw) > np.abs(w)
    ok = np.where(base_regime, ok_base, ok_fiber)
    return {
        "n": n_samples,
        "violations": int(np.count_nonzero(~ok)),
        "base_regime": int(np.count_nonzero(base_regime)),
        "fiber_regime": int(np.count_nonzero(~base_regime)),
        "passed": bool(np.all(ok)),
    }


def map_fingerprint(f: SkewProduct) -> str:
    """Stable hex digest of the map's coefficients; embedded in artifacts."""
    h = hashlib.sha256()
    for c in f.p.coeffs:
        h.update(repr((c.real, c.imag)).encode())
    for j, k, c in f.q.terms:
        h.update(repr((j, k, c.real, c.imag)).encode())
    return h.hexdigest()[:16]
