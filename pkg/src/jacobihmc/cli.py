"""Command-line entry point: ``jacobihmc {sample,curvature,bound,register}``.

Configuration precedence is flags over the ``--config`` JSON file over
built-in defaults (with ``JHMC_THREADS`` supplying the default thread count).
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import concentration as conc
from .config import ConfigError, RunConfig, load_json, merge, validate
from .geometry import curvature_scan
from .hmc import HmcConfig, chain_rng, run_chain
from .targets import GaussianTarget

log = logging.getLogger("jacobihmc")

THREADS_ENV = "JHMC_THREADS"

SAMPLE_COLUMNS = """\
chain.csv columns:
  step      1-based HMC step k
  accepted  1 if the step's proposal was accepted, else 0
  h         total energy V(q) + |p|^2/2 at the trajectory start
  q0..q{d-1} position after step k
summary.json: resolved config, acceptance rate, posterior mean of q over steps T0+1..T.
"""

CURVATURE_COLUMNS = """\
scan.csv columns (one row per step and frame):
  step      1-based HMC step whose trajectory was scanned
  frame     frame index within the step
  h         trajectory energy used for the Jacobi metric
  sec       sectional curvature; empty if the step was skipped (h <= V)
histogram.json: resolved config, min/mean/sd (raw and times d^2), histogram
counts and bin edges, number of skipped steps.
"""

BOUND_COLUMNS = """\
bound.csv columns:
  T         chain length
  bound     upper bound on P(|I_hat - E I_hat| >= r ||f||_Lip), capped at 1
  regime    "gaussian" or "exponential" branch of the bound
summary.json: resolved config, ingredients, required T for --target and the
exceptional-set correction term, which the bound does not include.
"""

REGISTER_COLUMNS = """\
ssd.csv columns:
  iter      Gauss-Newton iteration (0 is the start)
  ssd       sum of squared intensity differences
  potential negative log posterior (up to a constant)
  mean_sec  mean sectional curvature over d random frames
field.csv columns:
  a, b      control point index along x and y (padded grid)
  qx, qy    x and y displacement weights
warped.pgm is the moving image warped by the final field. With --posterior-T,
chain.csv has the sample columns and summary.json the posterior mean norm.
"""

# flag dest -> dotted config path
FLAG_PATHS = {
    "seed": "seed", "threads": "threads", "out": "out",
    "dim": "model.dim", "structure": "model.structure", "nu": "model.nu",
    "T": "chain.T", "T0": "chain.T0", "t1": "chain.t1", "eps": "chain.eps",
    "integrator": "chain.integrator", "q0": "chain.q0",
    "frames": "scan.frames", "at": "scan.at", "bins": "scan.bins",
    "kappa": "bound.kappa", "sigma2": "bound.sigma2", "local_dim": "bound.local_dim",
    "granularity": "bound.granularity", "lipschitz": "bound.lipschitz", "r": "bound.r",
    "bound_T0": "bound.T0", "T_min": "bound.T_min", "T_max": "bound.T_max",
    "per_decade": "bound.per_decade", "target": "bound.target",
    "fixed": "register.fixed", "moving": "register.moving", "synthetic": "register.synthetic",
    "shift": "register.shift", "size": "register.size", "grid": "register.grid",
    "phi": "register.phi", "lam": "register.lam", "ridge": "register.ridge",
    "iters": "register.iters", "posterior_T": "register.posterior_T",
    "posterior_t1": "register.posterior_t1", "posterior_eps": "register.posterior_eps",
}


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


@contextlib.contextmanager
def config_stage():
    """Turn validation failures raised while building objects into config errors."""
    try:
        yield
    except ConfigError:
        raise
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(str(exc)) from exc


def _add_common(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON run config (flags override it)")
    p.add_argument("--model", default=S,
                   help="model kind (gaussian, student_t) or path to a JSON model spec")
    p.add_argument("--dim", type=int, default=S, help="dimension d (default 100)")
    p.add_argument("--structure", default=S, choices=("identity", "exp_sq_decay"),
                   help="built-in precision: identity or Sigma_ij = exp(-|i-j|^2)")
    p.add_argument("--nu", type=float, default=S, help="t-distribution degrees of freedom")
    p.add_argument("--seed", type=int, default=S, help="root seed (default 0)")
    p.add_argument("--threads", type=int, default=S, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--out", default=S, help="output directory (default ./out)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_chain(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--T", type=int, default=S, help="chain length (default 1000)")
    p.add_argument("--T0", type=int, default=S, help="burn-in steps excluded from estimates")
    p.add_argument("--t1", type=float, default=S, help="trajectory time (default d^-1/2)")
    p.add_argument("--eps", type=float, default=S, help="leapfrog step (default t1/20)")
    p.add_argument("--integrator", choices=("leapfrog", "exact"), default=S)
    p.add_argument("--q0", choices=("zero", "stationary"), default=S,
                   help="start at the origin or at an exact Gaussian draw")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="jacobihmc", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    sample = sub.add_parser("sample", help="run an HMC chain", epilog=SAMPLE_COLUMNS, formatter_class=fmt)
    _add_common(sample)
    _add_chain(sample)

    curv = sub.add_parser("curvature", help="Jacobi-metric curvature scan along a chain",
                          epilog=CURVATURE_COLUMNS, formatter_class=fmt)
    _add_common(curv)
    _add_chain(curv)
    curv.add_argument("--frames", type=int, default=S, help="random 2-frames per step (default 100)")
    curv.add_argument("--at", choices=("start", "end"), default=S, help="scan trajectory starts or proposals")
    curv.add_argument("--bins", type=int, default=S, help="histogram bins (default 50)")

    bound = sub.add_parser("bound", help="concentration bound sweep over T", epilog=BOUND_COLUMNS,
                           formatter_class=fmt)
    _add_common(bound)
    for name, helptext in [("kappa", "coarse Ricci curvature"), ("sigma2", "diffusion constant sup"),
                           ("local-dim", "local dimension n"), ("granularity", "sigma_inf"),
                           ("lipschitz", "observable Lipschitz norm"), ("r", "deviation radius (default 0.25)"),
                           ("target", "probability for the required-T report (default 1e-3)")]:
        bound.add_argument(f"--{name}", type=float, default=S, help=helptext)
    bound.add_argument("--T0", dest="bound_T0", type=int, default=S, help="burn-in T0 (default 0)")
    bound.add_argument("--T-min", type=float, default=S, help="smallest T (default 1e3)")
    bound.add_argument("--T-max", type=float, default=S, help="largest T (default 1e8)")
    bound.add_argument("--per-decade", type=int, default=S, help="sweep points per decade (default 1)")

    reg = sub.add_parser("register", help="B-spline registration by Gauss-Newton",
                         epilog=REGISTER_COLUMNS, formatter_class=fmt)
    _add_common(reg)
    reg.add_argument("--fixed", default=S, help="fixed image (binary PGM)")
    reg.add_argument("--moving", default=S, help="moving image (binary PGM)")
    reg.add_argument("--synthetic", action="store_const", const=True, default=S,
                     help="use a synthetic blob pair instead of image files")
    reg.add_argument("--shift", type=float, default=S, help="synthetic x shift in pixels (default 3)")
    reg.add_argument("--size", type=int, default=S, help="synthetic image side (default 64)")
    reg.add_argument("--grid", type=int, nargs=2, default=S, metavar=("NX", "NY"),
                     help="control grid (default 12 7)")
    reg.add_argument("--phi", type=float, default=S, help="likelihood precision (default 1)")
    reg.add_argument("--lam", type=float, default=S, help="prior weight (default 0.1)")
    reg.add_argument("--ridge", type=float, default=S, help="ridge added to the prior (default 1e-10)")
    reg.add_argument("--iters", type=int, default=S, help="Gauss-Newton iterations (default 100)")
    reg.add_argument("--posterior-T", type=int, default=S, help="HMC steps on the posterior (0 skips)")
    reg.add_argument("--posterior-t1", type=float, default=S, help="posterior trajectory time")
    reg.add_argument("--posterior-eps", type=float, default=S, help="posterior leapfrog step")
    return parser


def _nest(flat: dict) -> dict:
    out: dict = {}
    for dotted, value in flat.items():
        node = out
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    given = vars(args)
    cfg = RunConfig(command=args.command)
    env_threads = os.environ.get(THREADS_ENV)
    if env_threads:
        try:
            cfg = merge(cfg, {"threads": int(env_threads)})
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from exc
    if "config" in given:
        cfg = merge(cfg, load_json(given["config"]))
    if "model" in given:
        model = given["model"]
        if model in ("gaussian", "student_t", "registration"):
            cfg = merge(cfg, {"model": {"kind": model}})
        else:
            cfg = merge(cfg, {"model": load_json(model)})
    flags = {FLAG_PATHS[k]: v for k, v in given.items() if k in FLAG_PATHS}
    cfg = merge(cfg, _nest(flags))
    return validate(merge(cfg, {"command": args.command}))


def _hmc_config(cfg: RunConfig, dim: int) -> HmcConfig:
    ch = cfg.chain
    overrides = dict(n_steps=int(ch.T), burn_in=int(ch.T0), seed=int(cfg.seed), integrator=ch.integrator)
    if ch.t1 is not None:
        overrides["trajectory_time"] = float(ch.t1)
    if ch.eps is not None:
        overrides["step_size"] = float(ch.eps)
    return HmcConfig.for_dim(dim, **overrides)


def _start(cfg: RunConfig, model) -> np.ndarray:
    if cfg.chain.q0 == "stationary":
        if not isinstance(model, GaussianTarget):
            raise ConfigError("q0 = stationary needs a Gaussian model")
        return model.sample(chain_rng(cfg.seed, 1_000_000))
    return np.zeros(model.dim)


def _metadata(cfg: RunConfig, **results) -> dict:
    return {"config": cfg.to_dict(), "results": results}


def _chain_rows(chain):
    for k, (acc, h, q) in enumerate(zip(chain.accepted, chain.energies, chain.samples)):
        yield (k + 1, acc, h, *q)


def _chain_header(dim: int):
    return ["step", "accepted", "h"] + [f"q{i}" for i in range(dim)]


def cmd_sample(cfg: RunConfig, out: Path) -> int:
    with config_stage():
        model = cfg.model.build()
        hmc = _hmc_config(cfg, model.dim)
        q0 = _start(cfg, model)
    chain = run_chain(model, q0, hmc)
    write_csv(out / "chain.csv", _chain_header(model.dim), _chain_rows(chain))
    post = chain.samples[hmc.burn_in:]
    write_json(out / "summary.json", _metadata(
        cfg, acceptance_rate=chain.acceptance_rate, posterior_mean=post.mean(axis=0),
        n_leapfrog=hmc.n_leapfrog, trajectory_time=hmc.trajectory_time, step_size=hmc.step_size))
    return 0


def cmd_curvature(cfg: RunConfig, out: Path) -> int:
    with config_stage():
        model = cfg.model.build()
        hmc = _hmc_config(cfg, model.dim)
        q0 = _start(cfg, model)
    chain = run_chain(model, q0, hmc, record_proposals=cfg.scan.at == "end")
    scan = curvature_scan(model, chain, int(cfg.scan.frames), rng=[int(cfg.seed), 1],
                          at=cfg.scan.at, threads=int(cfg.threads), bins=int(cfg.scan.bins))
    if cfg.scan.at == "end":
        steps = np.flatnonzero(np.all(np.isfinite(chain.proposals), axis=1)) + 1
        energies = chain.energies[steps - 1]
    else:
        steps, energies = np.arange(1, hmc.n_steps + 1), chain.energies

    def rows():
        for k, h, secs in zip(steps, energies, scan.samples):
            for j, sec in enumerate(secs):
                yield k, j, h, "" if math.isnan(sec) else sec

    write_csv(out / "scan.csv", ["step", "frame", "h", "sec"], rows())
    write_json(out / "histogram.json", _metadata(cfg, acceptance_rate=chain.acceptance_rate, **scan.summary()))
    return 0


def _bound_inputs(cfg: RunConfig) -> tuple[conc.ConcentrationInputs, dict]:
    b = cfg.bound
    given = {"kappa": b.kappa, "sigma2": b.sigma2, "local_dim": b.local_dim,
             "granularity": b.granularity, "lipschitz": b.lipschitz}
    if any(v is None for v in given.values()):
        if cfg.model.kind != "gaussian":
            raise ConfigError("missing bound ingredients can only be derived for a Gaussian model")
        ing = conc.gaussian_ingredients(cfg.model.precision_matrix())
        for key in given:
            if given[key] is None:
                given[key] = getattr(ing, key)
    inp = conc.ConcentrationInputs(T=1, T0=0, r=float(b.r), **{k: float(v) for k, v in given.items()})
    return inp, given


def cmd_bound(cfg: RunConfig, out: Path) -> int:
    b = cfg.bound
    with config_stage():
        inp, ingredients = _bound_inputs(cfg)
    decades = math.log10(b.T_max) - math.log10(b.T_min)
    n_points = max(int(round(decades * int(b.per_decade))), 0) + 1
    Ts = sorted(set(int(round(t)) for t in np.logspace(math.log10(b.T_min), math.log10(b.T_max), n_points)))
    Ts = [T for T in Ts if T > int(b.T0)] if b.T0 else Ts
    base = conc.ConcentrationInputs(**{**inp.as_dict(), "T0": int(b.T0)})
    rows = conc.bound_sweep(base, Ts)
    write_csv(out / "bound.csv", ["T", "bound", "regime"], rows)
    write_json(out / "summary.json", _metadata(
        cfg, ingredients=ingredients, required_T=conc.required_T(base, float(b.target)),
        exceptional_set=conc.EXCEPTIONAL_SET_TERM,
        note="bound excludes the exceptional momentum set, whose probability is " + conc.EXCEPTIONAL_SET_TERM))
    print(f"bound at T={rows[-1][0]}: {rows[-1][1]:.6g} ({rows[-1][2]}); excludes {conc.EXCEPTIONAL_SET_TERM}")
    return 0


def cmd_register(cfg: RunConfig, out: Path) -> int:
    from .registration import (RegistrationTarget, SplineField, blob_pair, gauss_newton_register, read_pgm,
                               sample_registration_posterior, warp, write_pgm, AffinePre)
    reg = cfg.register
    with config_stage():
        if reg.synthetic:
            fixed, moving = blob_pair(int(reg.size), int(reg.size), float(reg.shift))
        else:
            fixed, moving = read_pgm(reg.fixed), read_pgm(reg.moving)
        if fixed.shape != moving.shape:
            raise ConfigError(f"fixed and moving image sizes differ: {fixed.shape} vs {moving.shape}")
        field_ = SplineField.covering(fixed.width, fixed.height, tuple(int(g) for g in reg.grid))
        target = RegistrationTarget(fixed, moving, field_, phi=reg.phi, lam=reg.lam, ridge=reg.ridge)
    trace = gauss_newton_register(target, iters=int(reg.iters), rng=np.random.SeedSequence([cfg.seed, 2]))
    write_csv(out / "ssd.csv", ["iter", "ssd", "potential", "mean_sec"], trace.rows())
    final = field_.with_weights(trace.weights[-1])
    warped, _ = warp(moving, AffinePre(), final)
    write_pgm(out / "warped.pgm", warped)
    if reg.synthetic:
        write_pgm(out / "fixed.pgm", fixed)
        write_pgm(out / "moving.pgm", moving)
    qx, qy = final.planes()
    write_csv(out / "field.csv", ["a", "b", "qx", "qy"],
              ((a, b, qx[a, b], qy[a, b]) for a in range(final.grid[0]) for b in range(final.grid[1])))
    results = dict(grid=list(final.grid), spacing=list(final.spacing), dim=target.dim,
                   ssd_initial=trace.ssd[0], ssd_final=trace.ssd[-1], mean_sec_final=trace.mean_sec[-1])
    if int(reg.posterior_T) > 0:
        overrides = dict(n_steps=int(reg.posterior_T), seed=int(cfg.seed))
        if reg.posterior_t1 is not None:
            overrides["trajectory_time"] = float(reg.posterior_t1)
        if reg.posterior_eps is not None:
            overrides["step_size"] = float(reg.posterior_eps)
        with config_stage():
            hmc = HmcConfig.for_dim(target.dim, **overrides)
        chain = sample_registration_posterior(target, hmc, q0=trace.weights[-1])
        write_csv(out / "chain.csv", _chain_header(target.dim), _chain_rows(chain))
        results.update(acceptance_rate=chain.acceptance_rate,
                       posterior_mean_norm=float(np.linalg.norm(chain.extra["posterior_mean"])))
    write_json(out / "summary.json", _metadata(cfg, **results))
    return 0


COMMANDS = {"sample": cmd_sample, "curvature": cmd_curvature, "bound": cmd_bound, "register": cmd_register}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[cfg.command](cfg, out)
    except conc.NegativeCurvatureError as exc:
        print(f"jacobihmc: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"jacobihmc: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        log.debug("runtime failure", exc_info=True)
        print(f"jacobihmc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
