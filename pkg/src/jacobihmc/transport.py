"""Empirical Wasserstein-1 distances and coarse Ricci curvature estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

MAX_POINTS = 4096

Metric = Callable[[np.ndarray, np.ndarray], np.ndarray]
Sampler = Callable[[int, np.random.Generator], np.ndarray]


class UndefinedCurvatureError(ValueError):
    pass


def euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cdist(a, b)


def sphere_geodesic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Great-circle distance between rows of unit vectors."""
    return np.arccos(np.clip(a @ b.T, -1.0, 1.0))


def scaled(metric: Metric, factor: float) -> Metric:
    """Metric multiplied by a constant, e.g. the Jacobi speed sqrt(d)."""
    return lambda a, b: factor * metric(a, b)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform weights on the rows of ``points``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("an empirical measure needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CouplingPlan:
    """Assignment coupling: mass 1/n moves from a[rows[k]] to b[cols[k]]."""

    rows: np.ndarray
    cols: np.ndarray
    distances: np.ndarray

    @property
    def cost(self) -> float:
        return float(np.mean(self.distances))

    def matrix(self) -> np.ndarray:
        n = len(self.rows)
        plan = np.zeros((n, n))
        plan[self.rows, self.cols] = 1.0 / n
        return plan


def wasserstein1(a: EmpiricalMeasure, b: EmpiricalMeasure, metric: Metric = euclidean) -> tuple[float, CouplingPlan]:
    """Exact W1 between equal-size empirical measures via optimal assignment."""
    if a.n != b.n:
        raise ValueError(f"measures must have equal sizes, got {a.n} and {b.n}")
    if a.n > MAX_POINTS:
        raise ValueError(f"at most {MAX_POINTS} points supported")
    cost = metric(a.points, b.points)
    rows, cols = linear_sum_assignment(cost)
    plan = CouplingPlan(rows=rows, cols=cols, distances=cost[rows, cols])
    return plan.cost, plan


class RicciEstimate(NamedTuple):
    kappa: float
    stderr: float
    ci_low: float
    ci_high: float
    w1: float


def coarse_ricci_empirical(
    sampler_x: Sampler,
    sampler_y: Sampler,
    rho: float,
    n: int,
    metric: Metric = euclidean,
    rng=0,
    *,
    n_boot: int = 20,
    common_random_numbers: bool = True,
) -> RicciEstimate:
    """kappa = 1 - W1(P_x, P_y)/rho from n-point samples of each kernel.

    With ``common_random_numbers`` both samplers receive generators built from
    the same seed, which couples the two samples and removes most of the
    finite-sample noise of W1. The bootstrap resamples pairs jointly.
    """
    if not rho > 0:
        raise UndefinedCurvatureError("rho(x, y) must be positive")
    if n_boot < 20:
        raise ValueError("use at least 20 bootstrap resamples")
    root = np.random.SeedSequence(int(rng.integers(2**63)) if isinstance(rng, np.random.Generator) else rng)
    sx, sy, sb = root.spawn(3)
    xs = np.asarray(sampler_x(n, np.random.default_rng(sx)), dtype=float)
    ys = np.asarray(sampler_y(n, np.random.default_rng(sx if common_random_numbers else sy)), dtype=float)
    w1, _ = wasserstein1(EmpiricalMeasure(xs), EmpiricalMeasure(ys), metric)
    kappa = 1.0 - w1 / rho
    brng = np.random.default_rng(sb)
    boots = np.empty(n_boot)
    for i in range(n_boot):
        idx = brng.integers(0, n, n)
        wb, _ = wasserstein1(EmpiricalMeasure(xs[idx]), EmpiricalMeasure(ys[idx]), metric)
        boots[i] = 1.0 - wb / rho
    se = float(np.std(boots, ddof=1))
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return RicciEstimate(kappa=kappa, stderr=se, ci_low=float(min(lo, kappa - 1.96 * se)),
                         ci_high=float(max(hi, kappa + 1.96 * se)), w1=w1)


def _check_sphere_args(r: float, d: int, eps: float | None = None):
    if not 0 < r < math.pi / 2:
        raise ValueError("r must lie in (0, pi/2)")
    if d < 2:
        raise ValueError("d must be at least 2")
    if eps is not None and not eps > 0:
        raise ValueError("eps must be positive")


def sphere_kernel_w1_bound(eps: float, r: float, d: int) -> float:
    """Leading-order upper bound on W1 between radius-r sphere kernels at distance eps.

    Valid modulo an O(sin^4 r) correction.
    """
    if r == 0:
        return float(eps)
    _check_sphere_args(r, d, eps)
    return eps * (1.0 - 0.5 * math.sin(r) ** 2 * (d - 1) / d)


class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float


def sphere_rotation_coupling_cost(eps: float, r: float, d: int, n: int, rng: np.random.Generator) -> MonteCarloEstimate:
    """Mean length of the parallel paths x' -> R_eps x' over the kernel of S^d.

    The latitude phi_1 has density proportional to sin^(d-2), which is the law of
    arccos(w_1) for w uniform on S^(d-1).
    """
    if r == 0:
        return MonteCarloEstimate(float(eps), 0.0)
    _check_sphere_args(r, d, eps)
    w = rng.standard_normal((n, d))
    w1 = w[:, 0] / np.linalg.norm(w, axis=1)
    lengths = eps * np.sqrt(1.0 - math.sin(r) ** 2 * (1.0 - w1**2))
    return MonteCarloEstimate(float(lengths.mean()), float(lengths.std(ddof=1) / math.sqrt(n)))


def rotation_matrix(dim: int, angle: float) -> np.ndarray:
    """Rotation by ``angle`` in the plane of the first two coordinates."""
    rot = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    rot[:2, :2] = [[c, -s], [s, c]]
    return rot


def sample_sphere_kernel(center: np.ndarray, r: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points at geodesic distance r from ``center`` on the unit sphere.

    A uniform unit tangent direction comes from orthonormalizing a Gaussian
    vector against the center, then we walk the great circle for length r.
    """
    center = np.asarray(center, dtype=float)
    g = rng.standard_normal((n, center.size))
    g -= np.outer(g @ center, center)
    tangent = g / np.linalg.norm(g, axis=1, keepdims=True)
    return math.cos(r) * center[None, :] + math.sin(r) * tangent


def sphere_kernel_pair(eps: float, r: float, d: int, n: int, rng: np.random.Generator):
    """Coupled samples of the kernels at x = e_1 and y = R_eps e_1 on S^d in R^(d+1).

    The y-sample is the rotated x-sample, a valid draw from P_y since the
    rotation is an isometry carrying x to y.
    """
    _check_sphere_args(r, d, eps)
    x = np.zeros(d + 1)
    x[0] = 1.0
    rot = rotation_matrix(d + 1, eps)
    xs = sample_sphere_kernel(x, r, n, rng)
    return xs, xs @ rot.T


def parallel_path_lengths(xs: np.ndarray, eps: float) -> np.ndarray:
    """Length of t -> R_t x' for t in [0, eps]: eps times the radius in the rotation plane."""
    return eps * np.hypot(xs[:, 0], xs[:, 1])
