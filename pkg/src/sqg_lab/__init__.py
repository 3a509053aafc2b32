"""sqg-lab: a pseudo-spectral laboratory for the dissipative surface
quasi-geostrophic equation on the periodic box.

The package pairs a conventional spectral solver with the quantitative
harmonic-analysis toolkit used to study it: dyadic (Littlewood-Paley)
decompositions and Besov norms, commutator and flow-map probes, a Picard
contraction driver, and modulus-of-continuity certificates, each exposed both
as a library API and through the ``sqg-lab`` command line tool.
"""

from .spectral import (
    Field,
    Grid2D,
    GridMismatchError,
    Multiplier,
    ZeroModeError,
    apply_multiplier,
    dealiased_product,
    default_grid,
    frac_lap,
    fractional_laplacian_integral,
    gradient,
    lp_norm,
    riesz,
    semigroup_apply,
    velocity_from_theta,
)

__version__ = "0.1.0"

__all__ = [
    "Field",
    "Grid2D",
    "GridMismatchError",
    "Multiplier",
    "ZeroModeError",
    "apply_multiplier",
    "dealiased_product",
    "default_grid",
    "frac_lap",
    "fractional_laplacian_integral",
    "gradient",
    "lp_norm",
    "riesz",
    "semigroup_apply",
    "velocity_from_theta",
    "__version__",
]
