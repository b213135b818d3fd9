"""C0 finite elements for the clamped biharmonic problem on polygons.

The fourth-order problem (squared Laplacian with clamped boundary
conditions) is decoupled into standard second-order solves: an optional
Poisson pre-step manufacturing a rotational source, a Stokes solve whose
velocity is the rotated gradient of the unknown, and a Poisson post-step
recovering the scalar unknown from the velocity.  Corner singularities on
non-smooth domains are resolved by grading the triangulation toward
flagged corners with a per-corner contraction factor.
"""

__version__ = "0.1.0"

from .corners import (
    beta0,
    grading_kappa,
    solve_alpha0,
    theta_for_optimal_h1,
    theta_for_optimal_l2,
    theta_prime,
)

__all__ = [
    "beta0",
    "grading_kappa",
    "solve_alpha0",
    "theta_for_optimal_h1",
    "theta_for_optimal_l2",
    "theta_prime",
    "__version__",
]
