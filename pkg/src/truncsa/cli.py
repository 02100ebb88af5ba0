"""Config-driven batch front end.

Subcommands: ``covariance`` (limit covariance plus quadrature cross-check),
``solve`` (one trajectory, truncated or plain), ``verify-clt`` (replication
fan-out and statistical verdict), ``compare`` (plain vs truncated from the
same seed).  All outputs are deterministic functions of the config file and
seed: rerunning a command reproduces every artifact byte for byte.

Exit codes: 0 success/pass, 1 verdict failure, 2 config error, 3 runtime or
divergence error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import problems as problems_mod
from .asymptotics import StabilityError, asymptotic_covariance, covariance_quadrature, eigh
from .model import GainSchedule, ResetPolicy, TruncationSequence
from .solver import DivergenceReport, run_plain, run_truncated
from .verify import (
    ReplicationError,
    Tolerances,
    clt_report,
    run_replications,
    samples_csv,
)

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

OUT_DIR_ENV = "TRUNC_SA_OUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem_spec: problems_mod.ProblemSpec
    schedule: GainSchedule
    trunc: TruncationSequence
    reset: ResetPolicy
    x0: np.ndarray
    horizon: int
    replications: int
    master_seed: int
    stride: int
    tolerances: Tolerances

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            problem_spec = problems_mod.ProblemSpec.from_dict(raw["problem"])
            gain = raw["gain"]
            schedule = GainSchedule(float(gain["gamma"]), float(gain["alpha"]))
            tr = raw["truncation"]
            trunc = TruncationSequence(np.asarray(tr["center"], dtype=float),
                                       float(tr["r0"]), float(tr["growth"]))
            reset_kind = tr.get("reset_kind", ResetPolicy.TO_INITIAL)
            if reset_kind == ResetPolicy.TO_FIXED_POINT:
                reset = ResetPolicy.to_fixed_point(np.asarray(tr["reset_target"], dtype=float))
            elif reset_kind == ResetPolicy.TO_INITIAL:
                reset = ResetPolicy.to_initial()
            else:
                raise ConfigError(f"unknown reset_kind {reset_kind!r}")
            run = raw["run"]
            x0 = np.asarray(run["x0"], dtype=float)
            horizon = int(run["horizon"])
            replications = int(run.get("replications", 0))
            master_seed = int(run["master_seed"])
            stride = int(run.get("stride", max(1, horizon // 100)))
            tol_raw = raw.get("tolerances", {})
            tolerances = Tolerances(
                cov_rel_err=float(tol_raw.get("cov_rel_err", 0.2)),
                ks_level=float(tol_raw.get("ks_level", 0.01)),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(problem_spec=problem_spec, schedule=schedule, trunc=trunc,
                   reset=reset, x0=x0, horizon=horizon,
                   replications=replications, master_seed=master_seed,
                   stride=stride, tolerances=tolerances)

    def to_dict(self) -> dict:
        tr = {
            "center": self.trunc.center.tolist(),
            "r0": self.trunc.r0,
            "growth": self.trunc.growth,
            "reset_kind": self.reset.kind,
        }
        if self.reset.target is not None:
            tr["reset_target"] = self.reset.target.tolist()
        return {
            "problem": self.problem_spec.to_dict(),
            "gain": {"gamma": self.schedule.gamma, "alpha": self.schedule.alpha},
            "truncation": tr,
            "run": {
                "x0": self.x0.tolist(),
                "horizon": self.horizon,
                "replications": self.replications,
                "master_seed": self.master_seed,
                "stride": self.stride,
            },
            "tolerances": {
                "cov_rel_err": self.tolerances.cov_rel_err,
                "ks_level": self.tolerances.ks_level,
            },
        }


def load_config(path, seed_override: Optional[int] = None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    cfg = RunConfig.from_dict(raw)
    if seed_override is not None:
        raw.setdefault("run", {})["master_seed"] = seed_override
        cfg = RunConfig.from_dict(raw)
    return cfg


def _dump_json(doc: dict, path: Path) -> str:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    path.write_text(text)
    return text


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_covariance(cfg: RunConfig, out_dir: Path) -> int:
    problem = problems_mod.from_spec(cfg.problem_spec)
    result = asymptotic_covariance(problem.jacobian_at_root,
                                   problem.noise_cov_at_root, cfg.schedule)
    # Cross-check the closed form against direct quadrature of the integral.
    if cfg.schedule.alpha == 1.0:
        b = cfg.schedule.gamma * problem.jacobian_at_root - 0.5 * np.eye(problem.dim)
    else:
        b = problem.jacobian_at_root
    mu_min = float(eigh(b).eigenvalues[0])
    t_max = 16.0 / mu_min
    steps = max(2000, int(np.ceil(200.0 * t_max / 2)) * 2)
    v_quad = covariance_quadrature(problem.jacobian_at_root,
                                   problem.noise_cov_at_root, cfg.schedule,
                                   t_max=t_max, steps=steps)
    v_norm = float(np.linalg.norm(result.v))
    quad_err = float(np.linalg.norm(v_quad - result.v)) / v_norm if v_norm else 0.0
    doc = {
        "v": result.v.tolist(),
        "regime": result.regime.value,
        "stability_margin": result.stability_margin,
        "lyapunov_residual": result.lyapunov_residual,
        "quadrature_check_err": quad_err,
    }
    text = _dump_json(doc, out_dir / "covariance.json")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out_dir: Path, plain: bool, engine: str) -> int:
    problem = problems_mod.from_spec(cfg.problem_spec)
    from .model import RngStream

    rng = RngStream(cfg.master_seed, 0)
    if plain:
        result = run_plain(problem, cfg.schedule, cfg.x0, cfg.horizon, rng,
                           stride=cfg.stride, engine=engine)
        if isinstance(result, DivergenceReport):
            text = _dump_json(result.to_json_dict(), out_dir / "divergence.json")
            sys.stdout.write(text)
            return EXIT_RUNTIME
        traj = result
    else:
        traj = run_truncated(problem, cfg.schedule, cfg.trunc, cfg.reset,
                             cfg.x0, cfg.horizon, rng, stride=cfg.stride,
                             engine=engine)
    traj.to_csv(out_dir / "trajectory.csv")
    traj.events_to_csv(out_dir / "truncations.csv")
    final = traj.final_state
    err = float(np.linalg.norm(final.x - problem.root))
    print(f"final_error={err:.17g} sigma={final.sigma}")
    return EXIT_OK


def cmd_verify_clt(cfg: RunConfig, out_dir: Path, workers: int, engine: str) -> int:
    problem = problems_mod.from_spec(cfg.problem_spec)
    cov = asymptotic_covariance(problem.jacobian_at_root,
                                problem.noise_cov_at_root, cfg.schedule)
    results = run_replications(problem, cfg.schedule, cfg.trunc, cfg.reset,
                               cfg.x0, cfg.horizon, cfg.replications,
                               cfg.master_seed, workers=workers, engine=engine)
    report = clt_report(results, cov.v, cfg.horizon, cfg.tolerances)
    _dump_json(report.to_json_dict(), out_dir / "clt_report.json")
    (out_dir / "samples.csv").write_text(samples_csv(results))
    (out_dir / "summary.csv").write_text(report.summary_csv())
    for name in ("covariance", "ks", "mardia", "truncation", "sufficient_sample"):
        print(f"check {name}: {'pass' if report.verdict[name] else 'FAIL'}")
    print(f"verdict: {'pass' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_VERDICT


def cmd_compare(cfg: RunConfig, out_dir: Path, engine: str) -> int:
    problem = problems_mod.from_spec(cfg.problem_spec)
    from .model import RngStream

    plain_result = run_plain(problem, cfg.schedule, cfg.x0, cfg.horizon,
                             RngStream(cfg.master_seed, 0), stride=cfg.stride,
                             engine=engine)
    truncated = run_truncated(problem, cfg.schedule, cfg.trunc, cfg.reset,
                              cfg.x0, cfg.horizon,
                              RngStream(cfg.master_seed, 0), stride=cfg.stride,
                              engine=engine)
    if isinstance(plain_result, DivergenceReport):
        plain_doc = {"diverged_at": plain_result.diverged_at,
                     "last_finite_norm": plain_result.last_finite_norm,
                     "threshold": plain_result.threshold}
    else:
        err = float(np.linalg.norm(plain_result.final_state.x - problem.root))
        plain_doc = {"final_error": err}
    trunc_err = float(np.linalg.norm(truncated.final_state.x - problem.root))
    doc = {
        "plain": plain_doc,
        "truncated": {
            "final_error": trunc_err,
            "sigma_final": truncated.final_state.sigma,
        },
    }
    text = _dump_json(doc, out_dir / "compare.json")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="truncsa",
        description="Truncated stochastic approximation: solve, predict, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("covariance", "limit covariance of the normalized error plus quadrature check"),
        ("solve", "run one trajectory and export it as CSV"),
        ("verify-clt", "Monte Carlo verification of the normal limit"),
        ("compare", "plain vs truncated recursion from the same seed"),
    ]:
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.master_seed")
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default ${OUT_DIR_ENV} or .)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="worker processes for replication fan-out")
        p.add_argument("--engine", choices=("auto", "compiled", "python"),
                       default="auto", help="iteration engine")
        if name == "solve":
            p.add_argument("--plain", action="store_true",
                           help="run the untruncated recursion")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        out_dir = _out_dir(args)
        if args.command == "covariance":
            return cmd_covariance(cfg, out_dir)
        if args.command == "solve":
            return cmd_solve(cfg, out_dir, plain=args.plain, engine=args.engine)
        if args.command == "verify-clt":
            return cmd_verify_clt(cfg, out_dir, workers=args.workers,
                                  engine=args.engine)
        if args.command == "compare":
            return cmd_compare(cfg, out_dir, engine=args.engine)
        raise AssertionError(f"unhandled command {args.command}")
    except StabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplicationError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
