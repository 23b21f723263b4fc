"""Concentration bound for positively curved Markov chains and its ingredients."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple

import numpy as np

from .transport import Metric, MonteCarloEstimate, Sampler, euclidean

EXCEPTIONAL_SET_TERM = "O(T exp(-c sqrt(d)))"
GRANULARITY_FACTOR = 2.0


class NegativeCurvatureError(ValueError):
    def __init__(self, kappa: float):
        super().__init__(f"bound inapplicable: nonpositive curvature (kappa = {kappa})")
        self.kappa = kappa


@dataclass(frozen=True)
class ConcentrationInputs:
    """Everything the bound consumes.

    ``sigma2`` is the supremum of the coarse diffusion constant, ``local_dim``
    the matching local dimension, ``granularity`` is sigma_inf and ``lipschitz``
    the Lipschitz norm of the observable in the chain's metric. ``r`` is the
    deviation radius in units of that norm.
    """

    kappa: float
    sigma2: float
    local_dim: float
    granularity: float
    lipschitz: float
    T: int
    T0: int = 0
    r: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise NegativeCurvatureError(self.kappa)
        for name in ("sigma2", "local_dim", "granularity", "r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lipschitz < 0:
            raise ValueError("lipschitz must be non-negative")
        if not self.T >= 1 or self.T0 < 0:
            raise ValueError("need T >= 1 and T0 >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


class BoundResult(NamedTuple):
    probability: float
    regime: str
    threshold: float
    variance: float


def variance_term(inp: ConcentrationInputs) -> float:
    """V^2(kappa, T) = (1 + T0/T) sigma^2 / (n kappa^2 T)."""
    return (1.0 + inp.T0 / inp.T) * inp.sigma2 / (inp.local_dim * inp.kappa**2 * inp.T)


def regime_threshold(inp: ConcentrationInputs) -> float:
    """Radius separating the Gaussian and exponential regimes: 4 V^2 kappa T / (3 sigma_inf)."""
    return 4.0 * variance_term(inp) * inp.kappa * inp.T / (3.0 * inp.granularity)


def concentration_bound(inp: ConcentrationInputs) -> BoundResult:
    """Upper bound on P(|I_hat - E I_hat| >= r ||f||_Lip), capped at 1."""
    v2 = variance_term(inp)
    threshold = regime_threshold(inp)
    if inp.r < threshold:
        prob, regime = 2.0 * math.exp(-inp.r**2 / (16.0 * v2)), "gaussian"
    else:
        prob, regime = 2.0 * math.exp(-inp.kappa * inp.T * inp.r / (12.0 * inp.granularity)), "exponential"
    return BoundResult(min(prob, 1.0), regime, threshold, v2)


def required_T(inp: ConcentrationInputs, target: float) -> float:
    """Smallest real T at which the bound equals ``target``.

    Inverts the Gaussian branch; falls back to the exponential branch when the
    radius sits in that regime. ``inp.T`` is ignored.
    """
    if not 0 < target < 1:
        raise ValueError("target probability must lie in (0, 1)")
    log_term = math.log(2.0 / target)
    v2_needed = inp.r**2 / (16.0 * log_term)
    c = inp.sigma2 / (inp.local_dim * inp.kappa**2)
    # c (1/T + T0/T^2) = v2_needed, a quadratic in x = 1/T
    if inp.T0 == 0:
        x = v2_needed / c
    else:
        x = (-c + math.sqrt(c * c + 4.0 * c * inp.T0 * v2_needed)) / (2.0 * c * inp.T0)
    T = 1.0 / x
    probe = replace(inp, T=T)
    if inp.r < regime_threshold(probe):
        return T
    return 12.0 * inp.granularity * log_term / (inp.kappa * inp.r)


def bound_sweep(inp: ConcentrationInputs, Ts) -> list[tuple[int, float, str]]:
    rows = []
    for T in Ts:
        res = concentration_bound(replace(inp, T=int(T)))
        rows.append((int(T), res.probability, res.regime))
    return rows


def jacobi_lipschitz(euclidean_lip: float, d: int) -> float:
    """Lipschitz norm in the Jacobi metric, away from the exceptional momentum set."""
    if d < 1:
        raise ValueError("d must be at least 1")
    return euclidean_lip * 2.0 / math.sqrt(d)


@dataclass(frozen=True)
class GaussianIngredients:
    kappa: float
    sigma2: float
    local_dim: float
    granularity: float
    lipschitz: float
    trace_precision: float

    def inputs(self, T: int, T0: int = 0, r: float = 1.0) -> ConcentrationInputs:
        return ConcentrationInputs(self.kappa, self.sigma2, self.local_dim, self.granularity,
                                   self.lipschitz, T, T0, r)


def gaussian_ingredients(precision, d: int | None = None, euclidean_lip: float = 1.0) -> GaussianIngredients:
    """Analytic ingredients for HMC on N(0, Lambda^-1), coordinate observable by default.

    kappa = Tr(Lambda)/(3 d^2), sigma^2 = n = d, sigma_inf = 2 sqrt(d).
    """
    lam = np.asarray(precision, dtype=float)
    d = lam.shape[0] if d is None else d
    tr = float(np.trace(lam))
    return GaussianIngredients(
        kappa=tr / (3.0 * d**2),
        sigma2=float(d),
        local_dim=float(d),
        granularity=GRANULARITY_FACTOR * math.sqrt(d),
        lipschitz=jacobi_lipschitz(euclidean_lip, d),
        trace_precision=tr,
    )


def diffusion_constant_mc(kernel_sampler: Sampler, n: int, metric: Metric = euclidean,
                          rng: np.random.Generator | int = 0) -> MonteCarloEstimate:
    """sigma(q)^2 = E rho(x, y)^2 / 2 over n independent pairs from the kernel."""
    if n < 2:
        raise ValueError("need at least 2 pairs")
    rng = np.random.default_rng(rng)
    xs = np.asarray(kernel_sampler(n, rng), dtype=float)
    ys = np.asarray(kernel_sampler(n, rng), dtype=float)
    if metric is euclidean:
        dist2 = np.sum((xs - ys) ** 2, axis=1)
    else:
        dist2 = np.array([metric(x[None, :], y[None, :])[0, 0] ** 2 for x, y in zip(xs, ys)])
    half = 0.5 * dist2
    return MonteCarloEstimate(float(half.mean()), float(half.std(ddof=1) / math.sqrt(n)))


def local_dimension_estimate(kernel_sampler: Sampler, n: int, rng: np.random.Generator | int = 0) -> float:
    """Linear-functional upper bound on the local dimension.

    E||x - y||^2 divided by the largest E<x - y, e>^2 over unit e, which is the
    top eigenvalue of the second-moment matrix of x - y.
    """
    if n < 2:
        raise ValueError("need at least 2 pairs")
    rng = np.random.default_rng(rng)
    diff = np.asarray(kernel_sampler(n, rng), dtype=float) - np.asarray(kernel_sampler(n, rng), dtype=float)
    diff = diff.reshape(n, -1)
    second = diff.T @ diff / n
    top = float(np.linalg.eigvalsh(second)[-1])
    if top <= 0:
        raise ValueError("kernel has no spread")
    return float(np.trace(second)) / top
