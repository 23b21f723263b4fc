"""Sectional curvature of the Jacobi metric g_h = 2(h - V)<.,.> on R^d."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .hmc import ChainResult
from .targets import TargetModel

DEGENERACY_TOL = 1e-12
GRAD_ZERO_TOL = 1e-14
BLOCK_STEPS = 256


class DegenerateMetricError(ValueError):
    """h - V(q) is not positive, so the Jacobi metric is not Riemannian there."""


@dataclass(frozen=True)
class Frame2:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u, v = np.asarray(self.u, float), np.asarray(self.v, float)
        if u.shape != v.shape or u.ndim != 1:
            raise ValueError("frame vectors must be 1-d and of equal length")
        if abs(u @ u - 1) > 1e-10 or abs(v @ v - 1) > 1e-10 or abs(u @ v) > 1e-10:
            raise ValueError("frame is not orthonormal")


def sample_frames(d: int, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """k uniform orthonormal 2-frames in R^d as two (k, d) arrays.

    QR of a d x 2 Gaussian matrix with the sign of R's diagonal made positive,
    which makes Q Haar-distributed on the Stiefel manifold.
    """
    if d < 2:
        raise ValueError("frames need d >= 2")
    a = rng.standard_normal((k, d, 2))
    qmat, r = np.linalg.qr(a)
    diag = np.diagonal(r, axis1=1, axis2=2)
    bad = np.any(np.abs(diag) < 1e-12 * math.sqrt(d), axis=1)
    if np.any(bad):  # rank-deficient draw, probability zero
        u, v = sample_frames(d, int(bad.sum()), rng)
        qmat[bad, :, 0], qmat[bad, :, 1] = u, v
        diag = np.where(bad[:, None], 1.0, diag)
    qmat = qmat * np.sign(diag)[:, None, :]
    return qmat[:, :, 0], qmat[:, :, 1]


def sample_frame2(d: int, rng: np.random.Generator) -> Frame2:
    u, v = sample_frames(d, 1, rng)
    return Frame2(u[0], v[0])


def _curvature_terms(model: TargetModel, q, h: float, tol: float):
    v_q = model.potential(q)
    w = h - v_q
    if not w > tol:
        raise DegenerateMetricError(f"h - V = {w:.3g} is not above {tol:g}")
    g = model.gradient(q)
    return w, g, float(g @ g)


def sectional_curvatures(model: TargetModel, q, h: float, u, v, tol: float = DEGENERACY_TOL) -> np.ndarray:
    """Sec(u_i, v_i) for stacks of orthonormal frames ``u``, ``v`` of shape (k, d)."""
    w, g, g2 = _curvature_terms(model, q, h, tol)
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    hess = model.hessian_quadratic_form(q, u) + model.hessian_quadratic_form(q, v)
    if math.sqrt(g2) < GRAD_ZERO_TOL:
        cos_terms = 0.0
    else:
        # ||g||^2 cos^2(angle) for unit u
        cos_terms = (u @ g) ** 2 + (v @ g) ** 2
    return (2.0 * w * hess + 3.0 * cos_terms - g2) / (8.0 * w**3)


def sectional_curvature(model: TargetModel, q, h: float, frame: Frame2, tol: float = DEGENERACY_TOL) -> float:
    """Sectional curvature of the Jacobi metric in the plane of ``frame`` at ``q``."""
    return float(sectional_curvatures(model, q, h, frame.u[None, :], frame.v[None, :], tol)[0])


def jacobi_speed(h: float, V: float) -> float:
    """Length scale factor sqrt(2(h - V)) of the Jacobi metric."""
    if h < V:
        raise DegenerateMetricError(f"h = {h} is below V = {V}")
    return math.sqrt(2.0 * (h - V))


@dataclass
class CurvatureScan:
    """Curvature samples along a chain.

    ``samples`` has shape (steps, frames); rows of skipped steps are NaN.
    """

    dim: int
    samples: np.ndarray
    skipped: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.samples[~self.skipped]

    @property
    def n_skipped(self) -> int:
        return int(self.skipped.sum())

    @property
    def min(self) -> float:
        return float(np.min(self.valid))

    @property
    def mean(self) -> float:
        return float(np.mean(self.valid))

    @property
    def sd(self) -> float:
        return float(np.std(self.valid, ddof=1)) if self.valid.size > 1 else 0.0

    @property
    def step_min(self) -> np.ndarray:
        return np.min(self.samples, axis=1)

    @property
    def step_mean(self) -> np.ndarray:
        return np.mean(self.samples, axis=1)

    def summary(self) -> dict:
        d2 = self.dim**2
        return {
            "dim": self.dim,
            "steps": int(self.samples.shape[0]),
            "frames_per_step": int(self.samples.shape[1]),
            "skipped_steps": self.n_skipped,
            "min": self.min,
            "mean": self.mean,
            "sd": self.sd,
            "min_d2": self.min * d2,
            "mean_d2": self.mean * d2,
            "sd_d2": self.sd * d2,
            "histogram": {"bin_edges": self.bin_edges.tolist(), "counts": self.counts.tolist()},
        }


def _root_seed(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(2**63)))
    return np.random.SeedSequence(rng)


def _scan_block(model, positions, energies, frames, seed, tol):
    rng = np.random.default_rng(seed)
    out = np.full((len(energies), frames), np.nan)
    skipped = np.zeros(len(energies), dtype=bool)
    for i, (q, h) in enumerate(zip(positions, energies)):
        u, v = sample_frames(model.dim, frames, rng)
        try:
            out[i] = sectional_curvatures(model, q, h, u, v, tol)
        except DegenerateMetricError:
            skipped[i] = True
    return out, skipped


def scan_states(model: TargetModel, positions, energies, frames_per_step: int, rng=0,
                *, threads: int = 1, bins: int = 50, tol: float = DEGENERACY_TOL) -> CurvatureScan:
    """Evaluate curvature at ``frames_per_step`` fresh frames for each (q, h) pair.

    Steps are processed in fixed blocks, each with its own seed stream, so the
    result does not depend on ``threads``.
    """
    if int(frames_per_step) < 1:
        raise ValueError("frames_per_step must be at least 1")
    positions = np.asarray(positions, dtype=float)
    energies = np.asarray(energies, dtype=float)
    n = len(energies)
    starts = list(range(0, n, BLOCK_STEPS))
    seeds = _root_seed(rng).spawn(len(starts))
    jobs = [(positions[s:s + BLOCK_STEPS], energies[s:s + BLOCK_STEPS], frames_per_step, seeds[i], tol)
            for i, s in enumerate(starts)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _scan_block(model, *a), jobs))
    else:
        parts = [_scan_block(model, *a) for a in jobs]
    samples = np.vstack([p[0] for p in parts]) if parts else np.empty((0, frames_per_step))
    skipped = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, dtype=bool)
    valid = samples[~skipped].ravel()
    if valid.size == 0:
        raise DegenerateMetricError("every step had a degenerate metric")
    counts, edges = np.histogram(valid, bins=bins, range=(valid.min(), valid.max()))
    return CurvatureScan(dim=model.dim, samples=samples, skipped=skipped, bin_edges=edges, counts=counts)


def curvature_scan(model: TargetModel, chain: ChainResult, frames_per_step: int, rng=0, *,
                   at: str = "start", threads: int = 1, bins: int = 50) -> CurvatureScan:
    """Curvature along an HMC chain using each step's trajectory energy.

    ``at="start"`` evaluates at the trajectory's initial position; ``at="end"``
    at the proposal, with the same energy h.
    """
    if at == "start":
        positions = chain.starts
        energies = chain.energies
    elif at == "end":
        if chain.proposals is None:
            raise ValueError("chain was run without record_proposals")
        ok = np.all(np.isfinite(chain.proposals), axis=1)
        positions, energies = chain.proposals[ok], chain.energies[ok]
    else:
        raise ValueError("at must be 'start' or 'end'")
    return scan_states(model, positions, energies, frames_per_step, rng, threads=threads, bins=bins)
