"""Hamiltonian dynamics, the HMC transition kernel and chain running."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .targets import GaussianTarget, TargetModel

log = logging.getLogger(__name__)

INTEGRATORS = ("leapfrog", "exact")


class IntegrationError(RuntimeError):
    """Non-finite potential or gradient met while integrating."""

    def __init__(self, step: int, message: str = "non-finite potential or gradient"):
        super().__init__(f"{message} at leapfrog step {step}")
        self.step = step


class UnsupportedModelError(TypeError):
    pass


class TuningError(RuntimeError):
    def __init__(self, message: str, best_step: float, best_rate: float):
        super().__init__(f"{message} (best step {best_step:.6g}, acceptance {best_rate:.3f})")
        self.best_step = best_step
        self.best_rate = best_rate


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    p: np.ndarray
    V: float
    K: float
    h: float

    @classmethod
    def from_qp(cls, model: TargetModel, q, p) -> "PhaseState":
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        v = model.potential(q)
        k = 0.5 * float(p @ p)
        return cls(q=q, p=p, V=v, K=k, h=v + k)


@dataclass(frozen=True)
class HmcConfig:
    """Sampler settings.

    Attributes:
        trajectory_time: integration time t1 per step.
        step_size: leapfrog step; see :func:`step_schedule`.
        n_steps: chain length T.
        burn_in: T0, steps excluded from the estimator.
        seed: root seed for the chain's generator.
        integrator: "leapfrog" or "exact" (Gaussian targets only).
    """

    trajectory_time: float
    step_size: float
    n_steps: int
    burn_in: int = 0
    seed: int = 0
    integrator: str = "leapfrog"

    def __post_init__(self):
        if not self.trajectory_time > 0:
            raise ValueError("trajectory_time must be positive")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.step_size > self.trajectory_time * (1 + 1e-12):
            raise ValueError("step_size must not exceed trajectory_time")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be a positive integer")
        if int(self.burn_in) < 0 or self.burn_in >= self.n_steps:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_steps")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")

    @classmethod
    def for_dim(cls, dim: int, **overrides) -> "HmcConfig":
        """Defaults: t1 = d^-1/2 and step = t1/20."""
        t1 = overrides.pop("trajectory_time", dim**-0.5)
        eps = overrides.pop("step_size", t1 / 20.0)
        overrides.setdefault("n_steps", 1000)
        return cls(trajectory_time=t1, step_size=eps, **overrides)

    @property
    def n_leapfrog(self) -> int:
        return leapfrog_steps(self.trajectory_time, self.step_size)


def step_schedule(t1: float, eps: float) -> np.ndarray:
    """Step sizes covering exactly ``t1``: floor(t1/eps) full steps of ``eps``.

    A leftover time is split into two equal partial steps placed first and
    last. The schedule is a palindrome, so the composed map stays reversible.
    """
    n_full = int(t1 / eps + 1e-9)
    if n_full == 0:
        return np.array([float(t1)])
    rest = t1 - n_full * eps
    if rest <= 1e-9 * eps:
        return np.full(n_full, float(eps))
    return np.concatenate([[0.5 * rest], np.full(n_full, float(eps)), [0.5 * rest]])


def leapfrog_steps(t1: float, eps: float) -> int:
    """Number of gradient-evaluating substeps in one trajectory."""
    return len(step_schedule(t1, eps))


def _leapfrog(model: TargetModel, q, p, steps: np.ndarray, grad=None):
    """Kick-drift-kick over the given step sizes. Returns (q, p, grad)."""
    g = model.gradient(q) if grad is None else grad
    if not np.all(np.isfinite(g)):
        raise IntegrationError(0)
    p = p - 0.5 * steps[0] * g
    n = len(steps)
    for k in range(n):
        q = q + steps[k] * p
        g = model.gradient(q)
        if not np.all(np.isfinite(g)):
            raise IntegrationError(k + 1)
        kick = 0.5 * (steps[k] + steps[k + 1]) if k < n - 1 else 0.5 * steps[k]
        p = p - kick * g
    return q, p, g


def leapfrog_trajectory(model: TargetModel, start: PhaseState, t1: float, eps: float) -> PhaseState:
    """Integrate Hamilton's equations for time ``t1`` with the leapfrog scheme.

    See :func:`step_schedule` for how ``t1`` is split when ``eps`` does not
    divide it.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    steps = step_schedule(t1, eps)
    n = len(steps)
    q, p, _ = _leapfrog(model, start.q, start.p, steps)
    v = model.potential(q)
    if not math.isfinite(v):
        raise IntegrationError(n, "non-finite potential")
    k = 0.5 * float(p @ p)
    return PhaseState(q=q, p=p, V=v, K=k, h=v + k)


def exact_gaussian_flow(model: GaussianTarget, q, p, t: float):
    """Closed-form (q(t), p(t)) for V = q^T Lambda q / 2, in the eigenbasis of Lambda."""
    w = np.sqrt(model.eigvals)
    basis = model.eigvecs
    a = basis.T @ q
    b = basis.T @ p
    c, s = np.cos(w * t), np.sin(w * t)
    return basis @ (a * c + b * s / w), basis @ (b * c - a * w * s)


def exact_gaussian_trajectory(model: TargetModel, start: PhaseState, t: float) -> PhaseState:
    if not isinstance(model, GaussianTarget):
        raise UnsupportedModelError(f"exact flow needs a GaussianTarget, got {type(model).__name__}")
    q, p = exact_gaussian_flow(model, start.q, start.p, t)
    return PhaseState.from_qp(model, q, p)


@dataclass
class StepResult:
    q: np.ndarray
    accepted: bool
    h: float
    proposal: np.ndarray | None = None
    momentum: np.ndarray | None = None


def hmc_step(model: TargetModel, q, cfg: HmcConfig, rng: np.random.Generator, momentum=None) -> StepResult:
    """One HMC transition from ``q``.

    Draws p ~ N(0, I) (unless ``momentum`` is given), integrates for t1 and
    applies the Metropolis test. ``h`` is the energy at the trajectory start.
    The exact Gaussian flow conserves energy, so its proposals are always kept.
    """
    q = np.asarray(q, dtype=float)
    p = rng.standard_normal(model.dim) if momentum is None else np.asarray(momentum, dtype=float)
    start = PhaseState.from_qp(model, q, p)
    try:
        if cfg.integrator == "exact":
            end = exact_gaussian_trajectory(model, start, cfg.trajectory_time)
        else:
            end = leapfrog_trajectory(model, start, cfg.trajectory_time, cfg.step_size)
    except IntegrationError as exc:
        log.warning("trajectory rejected: %s", exc)
        rng.random()
        return StepResult(q=q, accepted=False, h=start.h, proposal=None, momentum=p)
    u = rng.random()
    if cfg.integrator == "exact":
        accepted = True
    else:
        log_alpha = start.h - end.h
        accepted = bool(math.isfinite(log_alpha) and (log_alpha >= 0 or u < math.exp(log_alpha)))
    return StepResult(q=end.q if accepted else q, accepted=accepted, h=start.h, proposal=end.q, momentum=p)


@dataclass(frozen=True)
class Observable:
    """Scalar function of the position together with its Euclidean Lipschitz constant."""

    name: str
    fn: Callable[[np.ndarray], float]
    euclidean_lipschitz: float

    def __call__(self, q) -> float:
        return float(self.fn(q))


def coordinate(i: int) -> Observable:
    return Observable(f"q{i}", lambda q: q[i], 1.0)


def constant(c: float) -> Observable:
    return Observable("const", lambda q: c, 0.0)


@dataclass
class ChainResult:
    """Output of :func:`run_chain`.

    ``samples[k]`` is the position after step k+1; the trajectory of step k
    started from ``starts[k]`` with total energy ``energies[k]``.
    """

    q0: np.ndarray
    config: HmcConfig
    accepted: np.ndarray
    energies: np.ndarray
    estimates: dict[str, float]
    samples: np.ndarray | None = None
    proposals: np.ndarray | None = None
    thin: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))

    @property
    def starts(self) -> np.ndarray:
        if self.samples is None or self.thin != 1:
            raise ValueError("trajectory starts need unthinned stored samples")
        return np.vstack([self.q0[None, :], self.samples[:-1]])


def chain_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(chain_index)])


def run_chain(
    model: TargetModel,
    q0,
    cfg: HmcConfig,
    observables: Sequence[Observable] = (),
    *,
    store_samples: bool = True,
    thin: int = 1,
    record_proposals: bool = False,
    chain_index: int = 0,
    callback: Callable[[int, StepResult], None] | None = None,
) -> ChainResult:
    """Run T steps of HMC from ``q0``.

    Observables are averaged over steps T0+1..T of the post-step positions.
    """
    q = np.array(q0, dtype=float)
    if q.shape != (model.dim,):
        raise ValueError(f"q0 must have shape ({model.dim},)")
    rng = chain_rng(cfg.seed, chain_index)
    T, T0 = int(cfg.n_steps), int(cfg.burn_in)
    accepted = np.zeros(T, dtype=bool)
    energies = np.empty(T)
    sums = np.zeros(len(observables))
    samples = np.empty(((T + thin - 1) // thin, model.dim)) if store_samples else None
    proposals = np.full((T, model.dim), np.nan) if record_proposals else None
    for k in range(T):
        step = hmc_step(model, q, cfg, rng)
        q = step.q
        accepted[k] = step.accepted
        energies[k] = step.h
        if samples is not None and k % thin == 0:
            samples[k // thin] = q
        if proposals is not None and step.proposal is not None:
            proposals[k] = step.proposal
        if k >= T0:
            for j, obs in enumerate(observables):
                sums[j] += obs(q)
        if callback is not None:
            callback(k, step)
    estimates = {obs.name: float(sums[j] / (T - T0)) for j, obs in enumerate(observables)}
    return ChainResult(
        q0=np.array(q0, dtype=float),
        config=cfg,
        accepted=accepted,
        energies=energies,
        estimates=estimates,
        samples=samples,
        proposals=proposals,
        thin=thin,
    )


def tune_step_size(
    model: TargetModel,
    q0,
    cfg: HmcConfig,
    target_accept: float = 0.65,
    *,
    tolerance: float = 0.05,
    pilot_steps: int = 500,
    max_pilots: int = 50,
) -> float:
    """Bisect log(step) over (0, t1] until a pilot run hits the target acceptance.

    Acceptance falls as the step grows. Each pilot uses the same seed, so the
    search is deterministic.
    """
    if not 0 < target_accept < 1:
        raise ValueError("target_accept must lie strictly between 0 and 1")
    if cfg.integrator == "exact":
        return cfg.step_size

    def pilot(eps: float) -> float:
        pcfg = replace(cfg, step_size=eps, n_steps=pilot_steps, burn_in=0)
        return run_chain(model, q0, pcfg, store_samples=False).acceptance_rate

    lo, hi = None, None
    eps = cfg.step_size
    best = (eps, -1.0)
    for _ in range(max_pilots):
        rate = pilot(eps)
        if abs(rate - target_accept) < abs(best[1] - target_accept):
            best = (eps, rate)
        if abs(rate - target_accept) <= tolerance:
            return eps
        if rate > target_accept:
            lo = eps
            if eps >= cfg.trajectory_time:
                break
            eps = math.sqrt(eps * hi) if hi is not None else min(2.0 * eps, cfg.trajectory_time)
        else:
            hi = eps
            eps = math.sqrt(lo * eps) if lo is not None else 0.5 * eps
    raise TuningError("could not reach target acceptance", best[0], best[1])
