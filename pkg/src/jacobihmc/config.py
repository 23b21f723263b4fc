"""Run configuration: nested dataclasses merged from defaults, a JSON file and flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from .targets import GaussianTarget, StudentTTarget, TargetModel, exp_sq_decay_covariance

MODEL_KINDS = ("gaussian", "student_t", "registration")
STRUCTURES = ("identity", "exp_sq_decay")


class ConfigError(ValueError):
    """Invalid or unreadable configuration; maps to exit code 2."""


@dataclass(frozen=True)
class ModelSpec:
    """Target description.

    ``structure`` picks a built-in precision; ``precision`` or ``covariance``
    (dense nested lists) override it for the Gaussian and t targets.
    """

    kind: str = "gaussian"
    dim: int = 100
    structure: str = "identity"
    precision: list | None = None
    covariance: list | None = None
    nu: float = 10.0

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
        if self.kind != "registration":
            if int(self.dim) < 1:
                raise ConfigError("model.dim must be at least 1")
            if self.structure not in STRUCTURES:
                raise ConfigError(f"model.structure must be one of {STRUCTURES}")
            if self.precision is not None and self.covariance is not None:
                raise ConfigError("give at most one of model.precision and model.covariance")
        if self.kind == "student_t" and not self.nu > 0:
            raise ConfigError("model.nu must be positive")

    def precision_matrix(self) -> np.ndarray:
        if self.precision is not None:
            return np.asarray(self.precision, dtype=float)
        if self.covariance is not None:
            return np.linalg.inv(np.asarray(self.covariance, dtype=float))
        if self.structure == "exp_sq_decay":
            return np.linalg.inv(exp_sq_decay_covariance(int(self.dim)))
        return np.eye(int(self.dim))

    def build(self) -> TargetModel:
        if self.kind == "registration":
            raise ConfigError("registration targets are built by the register command")
        if self.kind == "gaussian" and self.precision is None and self.covariance is not None:
            return GaussianTarget.from_covariance(np.asarray(self.covariance, dtype=float))
        lam = self.precision_matrix()
        if self.kind == "gaussian":
            return GaussianTarget(lam)
        return StudentTTarget(lam, self.nu)


@dataclass(frozen=True)
class ChainSpec:
    """Chain length and integrator; ``t1``/``eps`` default to d^-1/2 and t1/20."""

    T: int = 1000
    T0: int = 0
    t1: float | None = None
    eps: float | None = None
    integrator: str = "leapfrog"
    q0: str = "zero"  # "zero" or "stationary" (exact draw, Gaussian only)


@dataclass(frozen=True)
class ScanSpec:
    frames: int = 100
    at: str = "start"
    bins: int = 50


@dataclass(frozen=True)
class BoundSpec:
    """Ingredients left as None come from the Gaussian model spec."""

    kappa: float | None = None
    sigma2: float | None = None
    local_dim: float | None = None
    granularity: float | None = None
    lipschitz: float | None = None
    r: float = 0.25
    T0: int = 0
    T_min: float = 1e3
    T_max: float = 1e8
    per_decade: int = 1
    target: float = 1e-3


@dataclass(frozen=True)
class RegisterSpec:
    fixed: str | None = None
    moving: str | None = None
    synthetic: bool = False
    shift: float = 3.0
    size: int = 64
    grid: tuple = (12, 7)
    phi: float = 1.0
    lam: float = 0.1
    ridge: float = 1e-10
    iters: int = 100
    posterior_T: int = 0
    posterior_t1: float | None = None
    posterior_eps: float | None = None


@dataclass(frozen=True)
class RunConfig:
    command: str = "sample"
    seed: int = 0
    threads: int = 1
    out: str = "out"
    model: ModelSpec = field(default_factory=ModelSpec)
    chain: ChainSpec = field(default_factory=ChainSpec)
    scan: ScanSpec = field(default_factory=ScanSpec)
    bound: BoundSpec = field(default_factory=BoundSpec)
    register: RegisterSpec = field(default_factory=RegisterSpec)

    def to_dict(self) -> dict:
        return asdict(self)


def merge(obj, updates: dict, where: str = ""):
    """Return ``obj`` with ``updates`` applied recursively; unknown keys are rejected."""
    if not isinstance(updates, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, value in updates.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where + key!r}")
        current = getattr(obj, key)
        if is_dataclass(current):
            changes[key] = merge(current, value, f"{where}{key}.")
        else:
            changes[key] = tuple(value) if isinstance(current, tuple) else value
    return replace(obj, **changes)


def load_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def validate(cfg: RunConfig) -> RunConfig:
    cfg.model.validate()
    ch = cfg.chain
    if int(ch.T) < 1:
        raise ConfigError("chain.T must be a positive integer")
    if not 0 <= int(ch.T0) < int(ch.T):
        raise ConfigError("chain.T0 must satisfy 0 <= T0 < T")
    if ch.q0 not in ("zero", "stationary"):
        raise ConfigError("chain.q0 must be 'zero' or 'stationary'")
    if int(cfg.scan.frames) < 1:
        raise ConfigError("scan.frames must be at least 1")
    if cfg.scan.at not in ("start", "end"):
        raise ConfigError("scan.at must be 'start' or 'end'")
    if int(cfg.threads) < 1:
        raise ConfigError("threads must be at least 1")
    b = cfg.bound
    if not 1 <= b.T_min <= b.T_max or int(b.per_decade) < 1:
        raise ConfigError("bound sweep needs 1 <= T_min <= T_max and per_decade >= 1")
    reg = cfg.register
    if not reg.synthetic and cfg.command == "register" and (reg.fixed is None or reg.moving is None):
        raise ConfigError("register needs --fixed and --moving images, or --synthetic")
    if len(reg.grid) != 2 or min(reg.grid) < 4:
        raise ConfigError("register.grid must be two integers, each at least 4")
    if not reg.phi > 0 or not reg.lam > 0:
        raise ConfigError("register.phi and register.lam must be positive")
    return cfg
