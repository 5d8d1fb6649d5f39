"""Curl-conforming multi-patch B-spline discretizations.

Library for H(curl) discretizations on multi-patch spline geometries:
discrete de Rham spaces on the control mesh, tree-cotree gauging of the
curl-curl operator (including non-contractible and periodic topologies),
and weak interface coupling with div-conforming multiplier spaces.
"""

from .errors import (
    AssemblyError,
    DomainError,
    SingularSystemError,
    TopologyError,
    ValidationError,
)
from .splines import (
    KnotVector,
    ReducedKnotVector,
    TensorBasis,
    eval_basis,
    eval_basis_derivatives,
    eval_curry_schoenberg,
    eval_curry_schoenberg_derivatives,
    greville_abscissae,
    refine_dyadic,
    uniform_open_knots,
)

__version__ = "0.1.0"
