"""Target distributions expressed through their potential energy.

Every model exposes ``potential``, ``gradient`` and ``hessian_quadratic_form``
for ``V(q) = -log pi(q)`` with all normalizing constants dropped. Only
differences and derivatives of ``V`` are ever consumed.
"""
from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

SYMMETRY_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when a vector does not match the model dimension."""


def _check_vector(q, dim: int, name: str = "q") -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.shape[0] != dim:
        raise DimensionError(f"{name} must have shape ({dim},), got {q.shape}")
    return q


def _check_directions(u, dim: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != dim or u.ndim not in (1, 2):
        raise DimensionError(f"u must have shape ({dim},) or (k, {dim}), got {u.shape}")
    return u


def validate_precision(precision) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Check symmetry and positive definiteness; return (matrix, eigvals, eigvecs)."""
    lam = np.array(precision, dtype=float)
    if lam.ndim != 2 or lam.shape[0] != lam.shape[1] or lam.shape[0] == 0:
        raise ValueError(f"precision must be a non-empty square matrix, got shape {lam.shape}")
    scale = max(1.0, float(np.max(np.abs(lam))))
    if np.max(np.abs(lam - lam.T)) > SYMMETRY_TOL * scale:
        raise ValueError("precision matrix is not symmetric")
    eigvals, eigvecs = np.linalg.eigh(lam)
    if eigvals[0] <= 0:
        raise ValueError(f"precision matrix is not positive definite (min eigenvalue {eigvals[0]:.3g})")
    return lam, eigvals, eigvecs


def exp_sq_decay_covariance(dim: int) -> np.ndarray:
    """Covariance with entries exp(-|i-j|^2)."""
    idx = np.arange(dim)
    return np.exp(-np.subtract.outer(idx, idx) ** 2.0)


def precision_from_covariance(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    lam = np.linalg.inv(cov)
    return 0.5 * (lam + lam.T)


class TargetModel(ABC):
    """Differentiable potential with gradient and Hessian quadratic forms.

    ``hessian_quadratic_form`` accepts a single direction of shape ``(d,)`` or a
    stack of directions of shape ``(k, d)``, returning a scalar or ``(k,)``.
    """

    dim: int

    @abstractmethod
    def potential(self, q) -> float: ...

    @abstractmethod
    def gradient(self, q) -> np.ndarray: ...

    @abstractmethod
    def hessian_quadratic_form(self, q, u): ...


class GaussianTarget(TargetModel):
    """Centered multivariate normal with precision matrix ``Lambda``."""

    def __init__(self, precision):
        lam, eigvals, eigvecs = validate_precision(precision)
        self.precision = lam
        self.eigvals = eigvals
        self.eigvecs = eigvecs
        self.dim = lam.shape[0]
        self.precision.setflags(write=False)

    @classmethod
    def identity(cls, dim: int) -> "GaussianTarget":
        return cls(np.eye(dim))

    @classmethod
    def from_covariance(cls, cov) -> "GaussianTarget":
        return cls(precision_from_covariance(cov))

    @property
    def covariance(self) -> np.ndarray:
        return (self.eigvecs / self.eigvals) @ self.eigvecs.T

    @property
    def trace_precision(self) -> float:
        return float(np.sum(self.eigvals))

    def potential(self, q) -> float:
        q = _check_vector(q, self.dim)
        return 0.5 * float(q @ self.precision @ q)

    def gradient(self, q) -> np.ndarray:
        q = _check_vector(q, self.dim)
        return self.precision @ q

    def hessian_quadratic_form(self, q, u):
        _check_vector(q, self.dim)
        u = _check_directions(u, self.dim)
        if u.ndim == 1:
            return float(u @ self.precision @ u)
        return np.einsum("ij,ij->i", u @ self.precision, u)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Exact draws via the cached eigen-factorization."""
        shape = (self.dim,) if size is None else (size, self.dim)
        z = rng.standard_normal(shape)
        return (z / np.sqrt(self.eigvals)) @ self.eigvecs.T


class StudentTTarget(TargetModel):
    """Multivariate t with ``dof`` degrees of freedom and scale precision ``Sigma^-1``.

    V(q) = (nu + d)/2 * log(1 + Q(q)/nu), with Q(q) = q^T Sigma^-1 q.
    """

    def __init__(self, precision, dof: float):
        if not dof > 0:
            raise ValueError(f"dof must be positive, got {dof}")
        lam, eigvals, eigvecs = validate_precision(precision)
        self.precision = lam
        self.eigvals = eigvals
        self.eigvecs = eigvecs
        self.dof = float(dof)
        self.dim = lam.shape[0]
        self.precision.setflags(write=False)

    @classmethod
    def identity(cls, dim: int, dof: float) -> "StudentTTarget":
        return cls(np.eye(dim), dof)

    def _quad(self, q):
        aq = self.precision @ q
        return aq, float(q @ aq)

    def potential(self, q) -> float:
        q = _check_vector(q, self.dim)
        _, big_q = self._quad(q)
        return 0.5 * (self.dof + self.dim) * float(np.log1p(big_q / self.dof))

    def gradient(self, q) -> np.ndarray:
        q = _check_vector(q, self.dim)
        aq, big_q = self._quad(q)
        return (self.dof + self.dim) * aq / (big_q + self.dof)

    def hessian_quadratic_form(self, q, u):
        q = _check_vector(q, self.dim)
        u = _check_directions(u, self.dim)
        aq, big_q = self._quad(q)
        s = big_q + self.dof
        if u.ndim == 1:
            uau = float(u @ self.precision @ u)
            uaq = float(u @ aq)
        else:
            uau = np.einsum("ij,ij->i", u @ self.precision, u)
            uaq = u @ aq
        return (self.dof + self.dim) * (uau * s - 2.0 * uaq**2) / s**2
