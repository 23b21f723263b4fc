"""Bayesian B-spline registration: SSD likelihood, membrane prior, Gauss-Newton."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..geometry import sample_frames, sectional_curvatures, DegenerateMetricError
from ..hmc import ChainResult, HmcConfig, run_chain
from ..targets import TargetModel, _check_directions, _check_vector
from .bspline import SplineField, basis_matrix, membrane_precision
from .image import ImageGrid, bilinear_sample

log = logging.getLogger(__name__)

RIDGE = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class AffinePre:
    """Known affine map applied to fixed-grid coordinates before the spline field."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3) or not np.allclose(m[2], [0.0, 0.0, 1.0]):
            raise ValueError("affine matrix must be 3x3 with last row (0, 0, 1)")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffinePre":
        m = np.eye(3)
        m[0, 2], m[1, 2] = tx, ty
        return cls(m)

    def apply(self, x, y):
        m = self.matrix
        return m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2]


def _check_pair(fixed: ImageGrid, moving: ImageGrid):
    if fixed.shape != moving.shape:
        raise ValueError(f"image sizes differ: {fixed.shape} vs {moving.shape}")


class _Warper:
    """Precomputed spline basis on the fixed grid."""

    def __init__(self, fixed: ImageGrid, affine: AffinePre, field_: SplineField):
        self.x, self.y = fixed.pixel_coords()
        self.ax, self.ay = affine.apply(self.x, self.y)
        self.basis = basis_matrix(field_, self.x, self.y)
        self.n_points = field_.n_points

    def coords(self, q):
        n = self.n_points
        return self.ax + self.basis @ q[:n], self.ay + self.basis @ q[n:]


def warp(moving: ImageGrid, affine: AffinePre, field_: SplineField, fixed_shape=None):
    """Resample ``moving`` on the fixed grid; returns (warped image, validity mask)."""
    shape = moving.shape if fixed_shape is None else tuple(fixed_shape)
    grid = ImageGrid(np.zeros(shape))
    w = _Warper(grid, affine, field_)
    xw, yw = w.coords(field_.weights)
    vals, mask = bilinear_sample(moving, xw, yw)
    return ImageGrid(vals.reshape(shape)), mask.reshape(shape)


def _residual_parts(warper: _Warper, fixed: ImageGrid, moving: ImageGrid, q):
    xw, yw = warper.coords(q)
    vals, gx, gy, mask = bilinear_sample(moving, xw, yw, with_gradient=True)
    return vals - fixed.data.ravel(), gx, gy, mask


def _jacobian(basis: sp.csr_matrix, gx, gy) -> sp.csr_matrix:
    return sp.hstack([sp.diags(gx) @ basis, sp.diags(gy) @ basis], format="csr")


def residual_and_jacobian(fixed: ImageGrid, moving: ImageGrid, affine: AffinePre, field_: SplineField):
    """Residual r = M(x', y') - F(x, y) per pixel and its sparse Jacobian in the weights."""
    _check_pair(fixed, moving)
    w = _Warper(fixed, affine, field_)
    r, gx, gy, _ = _residual_parts(w, fixed, moving, field_.weights)
    return r, _jacobian(w.basis, gx, gy)


class RegistrationTarget(TargetModel):
    """Posterior over spline weights.

    V(q) = phi/2 ||r(q)||^2 + 1/2 q^T (lam * Lambda + ridge I) q. The Hessian is
    always the Gauss-Newton surrogate phi J^T J + lam * Lambda + ridge I.
    """

    def __init__(self, fixed: ImageGrid, moving: ImageGrid, field_: SplineField, phi: float = 1.0,
                 lam: float = 0.1, affine: AffinePre | None = None, prior_precision=None, ridge: float = RIDGE):
        _check_pair(fixed, moving)
        if not phi > 0 or not lam > 0:
            raise ValueError("phi and lam must be positive")
        if ridge < 0:
            raise ValueError("ridge must be non-negative")
        self.fixed, self.moving = fixed, moving
        self.field = field_
        self.affine = affine or AffinePre()
        self.phi, self.lam, self.ridge = float(phi), float(lam), float(ridge)
        prior = membrane_precision(field_.grid) if prior_precision is None else sp.csr_matrix(prior_precision)
        self.prior_precision = prior
        self.prior_total = (self.lam * prior + self.ridge * sp.identity(field_.size)).tocsr()
        self.dim = field_.size
        self._warper = _Warper(fixed, self.affine, field_)
        self._cache = (None, None)

    def residual_parts(self, q):
        q = _check_vector(q, self.dim)
        key = q.tobytes()
        cached_key, parts = self._cache
        if cached_key != key:
            parts = _residual_parts(self._warper, self.fixed, self.moving, q)
            self._cache = (key, parts)
        return parts

    def jacobian(self, q) -> sp.csr_matrix:
        _, gx, gy, _ = self.residual_parts(q)
        return _jacobian(self._warper.basis, gx, gy)

    def ssd(self, q) -> float:
        r = self.residual_parts(q)[0]
        return float(r @ r)

    def potential(self, q) -> float:
        q = _check_vector(q, self.dim)
        r = self.residual_parts(q)[0]
        return 0.5 * self.phi * float(r @ r) + 0.5 * float(q @ (self.prior_total @ q))

    def gradient(self, q) -> np.ndarray:
        q = _check_vector(q, self.dim)
        r, gx, gy, _ = self.residual_parts(q)
        basis_t = self._warper.basis.T
        jtr = np.concatenate([basis_t @ (gx * r), basis_t @ (gy * r)])
        return self.phi * jtr + self.prior_total @ q

    def hessian_quadratic_form(self, q, u):
        q = _check_vector(q, self.dim)
        u = _check_directions(u, self.dim)
        _, gx, gy, _ = self.residual_parts(q)
        n = self.field.n_points
        us = np.atleast_2d(u)
        basis = self._warper.basis
        ju = gx[:, None] * (basis @ us[:, :n].T) + gy[:, None] * (basis @ us[:, n:].T)
        data = np.einsum("ij,ij->j", ju, ju)
        prior = np.einsum("ij,ij->i", (self.prior_total @ us.T).T, us)
        out = self.phi * data + prior
        return float(out[0]) if u.ndim == 1 else out

    def gauss_newton_hessian(self, q) -> sp.csr_matrix:
        jac = self.jacobian(q)
        return (self.phi * (jac.T @ jac) + self.prior_total).tocsr()


@dataclass
class GaussNewtonTrace:
    weights: list[np.ndarray]
    ssd: list[float]
    potential: list[float]
    mean_sec: list[float]

    def rows(self):
        for k, (s, v, c) in enumerate(zip(self.ssd, self.potential, self.mean_sec)):
            yield k, s, v, c


def mean_sectional_curvature(model: TargetModel, q, rng: np.random.Generator, frames: int | None = None) -> float:
    """Mean Sec over ``frames`` frames (default d) with h from a fresh N(0, I) momentum."""
    frames = model.dim if frames is None else frames
    p = rng.standard_normal(model.dim)
    h = model.potential(q) + 0.5 * float(p @ p)
    u, v = sample_frames(model.dim, frames, rng)
    try:
        return float(np.mean(sectional_curvatures(model, q, h, u, v)))
    except DegenerateMetricError:
        return float("nan")


def gauss_newton_register(target: RegistrationTarget, q0=None, iters: int = 100, rng=0,
                          frames: int | None = None, tol: float = 0.0) -> GaussNewtonTrace:
    """Iterate q <- q - (phi J^T J + lam Lambda + ridge)^-1 grad V.

    Records SSD, V and a mean sectional curvature at every iterate, including q0.
    Stops early only if ``tol`` > 0 and the step norm falls below it.
    """
    rng = np.random.default_rng(rng)
    q = np.zeros(target.dim) if q0 is None else np.array(q0, dtype=float)
    trace = GaussNewtonTrace([], [], [], [])

    def record(q):
        trace.weights.append(q.copy())
        trace.ssd.append(target.ssd(q))
        trace.potential.append(target.potential(q))
        trace.mean_sec.append(mean_sectional_curvature(target, q, rng, frames))

    record(q)
    for _ in range(iters):
        hess = target.gauss_newton_hessian(q)
        if target.ridge == 0:
            hess = hess + RIDGE * sp.identity(target.dim, format="csr")
        try:
            step = splu(hess.tocsc()).solve(target.gradient(q))
        except RuntimeError as exc:
            raise SolverError(f"Gauss-Newton system is singular: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise SolverError("Gauss-Newton step is not finite")
        q = q - step
        record(q)
        if tol > 0 and np.linalg.norm(step) < tol:
            break
    return trace


def sample_registration_posterior(target: RegistrationTarget, cfg: HmcConfig, q0=None, **kwargs) -> ChainResult:
    """HMC on the registration posterior; the estimate ``posterior_mean`` is the mean weight vector."""
    q0 = np.zeros(target.dim) if q0 is None else np.asarray(q0, dtype=float)
    total = np.zeros(target.dim)
    count = [0]

    def accumulate(k, step):
        if k >= cfg.burn_in:
            total[:] += step.q
            count[0] += 1

    chain = run_chain(target, q0, cfg, callback=accumulate, **kwargs)
    chain.extra["posterior_mean"] = total / max(count[0], 1)
    return chain
