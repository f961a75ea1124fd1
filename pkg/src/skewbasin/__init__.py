"""skewbasin: a numerical laboratory for attracting basins of polynomial skew
products F(z, w) = (P(z), Q(z, w)) and the intrinsic (Kobayashi) geometry of
those basins: basin rasters, backward orbits of the attracting fixed point,
stable-manifold graphs, certified two-sided distance estimates, structural
membership checks, and an experiment harness for the uniform proximity
constant of backward orbits.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegreeDrop,
    Disconnected,
    ExcessUndecided,
    HypothesisViolation,
    NoGraphReachable,
    NonConvergence,
    OutOfDomain,
    ResonanceDegeneracy,
    ResourceCap,
    ShellEmpty,
    SkewBasinError,
)
from .polynomials import (
    BivarPoly,
    ComplexPoly,
    SkewProduct,
    certify_escape,
    escape_radii,
    eval_skew,
    map_fingerprint,
    roots,
    skew_product,
)
from .rational import RationalComplex

__all__ = [
    "BivarPoly",
    "ComplexPoly",
    "ConfigError",
    "DegreeDrop",
    "Disconnected",
    "ExcessUndecided",
    "HypothesisViolation",
    "NoGraphReachable",
    "NonConvergence",
    "OutOfDomain",
    "RationalComplex",
    "ResonanceDegeneracy",
    "ResourceCap",
    "ShellEmpty",
    "SkewBasinError",
    "SkewProduct",
    "certify_escape",
    "escape_radii",
    "eval_skew",
    "map_fingerprint",
    "roots",
    "skew_product",
]
