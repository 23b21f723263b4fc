"""HMC on Gaussian-like targets with Jacobi-metric curvature diagnostics."""
from .targets import DimensionError, GaussianTarget, StudentTTarget, TargetModel
from .hmc import ChainResult, HmcConfig, hmc_step, run_chain
from .geometry import curvature_scan, sample_frames, sectional_curvature
from .concentration import ConcentrationInputs, concentration_bound, gaussian_ingredients

__version__ = "0.1.0"

__all__ = [
    "ChainResult", "ConcentrationInputs", "DimensionError", "GaussianTarget", "HmcConfig", "StudentTTarget",
    "TargetModel", "concentration_bound", "curvature_scan", "gaussian_ingredients", "hmc_step", "run_chain",
    "sample_frames", "sectional_curvature",
]
