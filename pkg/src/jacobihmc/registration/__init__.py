"""B-spline image registration posterior."""
from .bspline import SplineBoundaryError, SplineField, basis_matrix, bspline_basis, deform, membrane_precision
from .image import (ImageGrid, PGMError, bilinear_sample, blob_pair, gaussian_blobs, linear_ramp,
                    read_pgm, write_pgm)
from .model import (AffinePre, GaussNewtonTrace, RegistrationTarget, SolverError, gauss_newton_register,
                    mean_sectional_curvature, residual_and_jacobian, sample_registration_posterior, warp)

__all__ = [
    "AffinePre", "GaussNewtonTrace", "ImageGrid", "PGMError", "RegistrationTarget", "SolverError",
    "SplineBoundaryError", "SplineField", "basis_matrix", "bilinear_sample", "blob_pair", "bspline_basis",
    "deform", "gauss_newton_register", "gaussian_blobs", "linear_ramp", "mean_sectional_curvature",
    "membrane_precision", "read_pgm", "residual_and_jacobian", "sample_registration_posterior", "warp",
    "write_pgm",
]
