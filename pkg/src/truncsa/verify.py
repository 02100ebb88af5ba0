"""Monte Carlo verification that the normalized error is asymptotically normal.

The harness fans out independent replications of the truncated recursion,
collects the final normalized errors, and compares their empirical law with
the predicted centered normal: covariance in relative Frobenius distance,
marginal normality of the whitened coordinates by one-sample
Kolmogorov-Smirnov tests, joint tail behaviour by the multivariate kurtosis
z-score, and absence of late truncations.  Every statistic is a pure
function of (configuration, master seed), so reports reproduce bit-for-bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import problems as problems_mod
from .asymptotics import as_sym_matrix, eigh, sym_inv_sqrt
from .model import GainSchedule, Problem, ResetPolicy, RngStream, TruncationSequence, as_vector
from .solver import run_truncated

__all__ = [
    "ReplicationError",
    "ReplicationResult",
    "Tolerances",
    "TruncationSummary",
    "KsResult",
    "CltReport",
    "run_replications",
    "empirical_covariance",
    "whiten",
    "ks_normal_test",
    "mardia_kurtosis",
    "truncation_stats",
    "clt_report",
    "samples_csv",
]

# Asymptotic one-sample Kolmogorov critical constants.
KS_CONST_5PCT = 1.358
KS_CONST_1PCT = 1.628

MIN_KS_SAMPLE = 20
MIN_MARDIA_SAMPLE = 50


class ReplicationError(RuntimeError):
    def __init__(self, stream_id: int, message: str):
        super().__init__(f"replication stream_id={stream_id}: {message}")
        self.stream_id = stream_id


@dataclass(frozen=True)
class ReplicationResult:
    stream_id: int
    delta_final: np.ndarray
    sigma_final: int
    last_truncation_step: Optional[int]


@dataclass(frozen=True)
class Tolerances:
    cov_rel_err: float = 0.2
    ks_level: float = 0.01
    mardia_z_max: float = 4.0

    def __post_init__(self):
        if not (self.cov_rel_err > 0):
            raise ValueError("cov_rel_err must be positive")
        if self.ks_level not in (0.01, 0.05):
            raise ValueError("ks_level must be 0.01 or 0.05")
        if not (self.mardia_z_max > 0):
            raise ValueError("mardia_z_max must be positive")


@dataclass(frozen=True)
class TruncationSummary:
    max_sigma: int
    mean_sigma: float
    late_truncation_count: int
    late_threshold: float


@dataclass(frozen=True)
class KsResult:
    d_stat: float
    critical_5pct: float
    critical_1pct: float


@dataclass(frozen=True)
class CltReport:
    m: int
    n: int
    v_theory: np.ndarray
    v_empirical: np.ndarray
    frob_rel_err: float
    ks_stats: list[float]
    ks_critical: float
    mardia_kurtosis_z: Optional[float]
    truncation_summary: TruncationSummary
    verdict: dict
    tolerances: Tolerances

    @property
    def passed(self) -> bool:
        return bool(self.verdict["overall"])

    def to_json_dict(self) -> dict:
        ts = self.truncation_summary
        return {
            "m": self.m,
            "n": self.n,
            "v_theory": self.v_theory.tolist(),
            "v_empirical": self.v_empirical.tolist(),
            "frob_rel_err": self.frob_rel_err,
            "ks_stats": list(self.ks_stats),
            "ks_critical": self.ks_critical,
            "mardia_kurtosis_z": self.mardia_kurtosis_z,
            "truncation_summary": {
                "max_sigma": ts.max_sigma,
                "mean_sigma": ts.mean_sigma,
                "late_truncation_count": ts.late_truncation_count,
                "late_threshold": ts.late_threshold,
            },
            "tolerances": {
                "cov_rel_err": self.tolerances.cov_rel_err,
                "ks_level": self.tolerances.ks_level,
                "mardia_z_max": self.tolerances.mardia_z_max,
            },
            "verdict": dict(self.verdict),
        }

    def summary_csv(self) -> str:
        header = ("m,n,frob_rel_err,ks_max,ks_critical,mardia_z,max_sigma,"
                  "mean_sigma,late_truncations,overall_pass")
        mardia = "" if self.mardia_kurtosis_z is None else "%.17g" % self.mardia_kurtosis_z
        ks_max = max(self.ks_stats) if self.ks_stats else float("nan")
        row = ",".join([
            str(self.m), str(self.n), "%.17g" % self.frob_rel_err,
            "%.17g" % ks_max, "%.17g" % self.ks_critical, mardia,
            str(self.truncation_summary.max_sigma),
            "%.17g" % self.truncation_summary.mean_sigma,
            str(self.truncation_summary.late_truncation_count),
            str(int(self.passed)),
        ])
        return header + "\n" + row + "\n"


def _one_replication(problem: Problem, schedule: GainSchedule,
                     trunc: TruncationSequence, reset: ResetPolicy,
                     x0, horizon: int, master_seed: int, stream_id: int,
                     engine: str) -> ReplicationResult:
    rng = RngStream(master_seed, stream_id)
    traj = run_truncated(problem, schedule, trunc, reset, x0, horizon, rng,
                         stride=horizon, engine=engine)
    final = traj.final_state
    gain_n = schedule.gain(horizon)
    delta_final = (final.x - problem.root) / math.sqrt(gain_n)
    if not np.all(np.isfinite(delta_final)):
        raise ReplicationError(stream_id, "non-finite normalized error")
    last = traj.truncation_events[-1].step if traj.truncation_events else None
    return ReplicationResult(stream_id=stream_id, delta_final=delta_final,
                             sigma_final=final.sigma, last_truncation_step=last)


def _replicate_from_spec(args) -> ReplicationResult:
    (spec_dict, gamma, alpha, center, r0, growth, reset_kind, reset_target,
     x0, horizon, master_seed, stream_id, engine) = args
    problem = problems_mod.from_spec(spec_dict)
    schedule = GainSchedule(gamma, alpha)
    trunc = TruncationSequence(np.asarray(center), r0, growth)
    if reset_kind == ResetPolicy.TO_FIXED_POINT:
        reset = ResetPolicy.to_fixed_point(np.asarray(reset_target))
    else:
        reset = ResetPolicy.to_initial()
    return _one_replication(problem, schedule, trunc, reset,
                            np.asarray(x0), horizon, master_seed, stream_id,
                            engine)


def run_replications(problem: Problem, schedule: GainSchedule,
                     trunc: TruncationSequence, reset: ResetPolicy, x0,
                     horizon: int, m: int, master_seed: int,
                     workers: int = 1,
                     engine: str = "auto") -> list[ReplicationResult]:
    """Run ``m`` independent replications, one random stream per replication.

    Replication i always uses stream (master_seed, i), so results do not
    depend on ``workers`` or execution order, and growing ``m`` leaves
    earlier replications untouched.
    """
    if m < 2:
        raise ValueError(f"need at least 2 replications, got {m}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    x0 = as_vector(x0, dim=problem.dim, name="x0")

    if workers > 1:
        if problem.spec is None:
            raise ValueError(
                "parallel replications need a spec-backed problem "
                "(built from problems.from_spec or a builtin constructor)"
            )
        spec_dict = problem.spec.to_dict()
        target = reset.target.tolist() if reset.target is not None else None
        args = [
            (spec_dict, schedule.gamma, schedule.alpha, trunc.center.tolist(),
             trunc.r0, trunc.growth, reset.kind, target, x0.tolist(), horizon,
             master_seed, i, engine)
            for i in range(m)
        ]
        chunk = max(1, m // (8 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_from_spec, args, chunksize=chunk))
        return results

    return [
        _one_replication(problem, schedule, trunc, reset, x0, horizon,
                         master_seed, i, engine)
        for i in range(m)
    ]


def empirical_covariance(samples) -> np.ndarray:
    """Mean-centered sample covariance with 1/(m-1) normalization."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    m = x.shape[0]
    if m < 2:
        raise ValueError(f"need at least 2 samples, got {m}")
    xc = x - x.mean(axis=0)
    cov = (xc.T @ xc) / (m - 1)
    return 0.5 * (cov + cov.T)


def whiten(samples, v) -> np.ndarray:
    """Map samples s to V^{-1/2} s; exact normal samples become standard."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    v = as_sym_matrix(v, "v")
    w = sym_inv_sqrt(v)
    return x @ w


def _std_normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def ks_normal_test(samples) -> KsResult:
    """One-sample Kolmogorov-Smirnov statistic against the standard normal.

    Critical values use the asymptotic Kolmogorov distribution constants
    1.358 (5%) and 1.628 (1%) over sqrt(m).
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    m = x.size
    if m == 0:
        raise ValueError("empty sample")
    cdf = np.array([_std_normal_cdf(float(t)) for t in x])
    i = np.arange(1, m + 1, dtype=np.float64)
    d_plus = float(np.max(i / m - cdf))
    d_minus = float(np.max(cdf - (i - 1.0) / m))
    d_stat = max(d_plus, d_minus)
    return KsResult(d_stat=d_stat,
                    critical_5pct=KS_CONST_5PCT / math.sqrt(m),
                    critical_1pct=KS_CONST_1PCT / math.sqrt(m))


def mardia_kurtosis(samples, v) -> float:
    """Multivariate kurtosis z-score: null value d(d+2), unit-normal scaling.

    b is the mean squared Mahalanobis norm under covariance ``v``; the
    z-score (b - d(d+2)) * sqrt(m / (8 d (d+2))) is asymptotically standard
    normal for exact N(0, v) data.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    m, d = x.shape
    if m < MIN_MARDIA_SAMPLE:
        raise ValueError(f"need at least {MIN_MARDIA_SAMPLE} samples, got {m}")
    v = as_sym_matrix(v, "v")
    dec = eigh(v)
    trace = float(np.sum(dec.eigenvalues))
    if float(dec.eigenvalues[0]) <= 1e-12 * trace:
        raise ValueError(f"v is near-singular (eigenvalue {dec.eigenvalues[0]:g})")
    v_inv = dec.eigenvectors @ np.diag(1.0 / dec.eigenvalues) @ dec.eigenvectors.T
    mahal = np.einsum("ij,jk,ik->i", x, v_inv, x)
    b = float(np.mean(mahal ** 2))
    return (b - d * (d + 2)) * math.sqrt(m / (8.0 * d * (d + 2)))


def truncation_stats(results, horizon: int) -> TruncationSummary:
    """Summarize reset counts; a truncation is late if it happens after N/10."""
    late_threshold = horizon / 10.0
    sigmas = [r.sigma_final for r in results]
    late = sum(
        1 for r in results
        if r.last_truncation_step is not None and r.last_truncation_step > late_threshold
    )
    max_sigma = max(sigmas) if sigmas else 0
    mean_sigma = float(np.mean(sigmas)) if sigmas else 0.0
    return TruncationSummary(max_sigma=max_sigma, mean_sigma=mean_sigma,
                             late_truncation_count=late,
                             late_threshold=late_threshold)


def clt_report(results, v_theory, horizon: int,
               tolerances: Tolerances = Tolerances()) -> CltReport:
    """Assemble all statistics and the pass/fail verdict for one experiment.

    The verdict passes iff the empirical covariance is close to the
    predicted one, every whitened coordinate passes its KS test, the
    kurtosis z-score is moderate, no replication truncated late, and the
    sample was large enough for those tests to mean anything.
    """
    if not results:
        raise ValueError("no replication results")
    v_theory = as_sym_matrix(v_theory, "v_theory")
    m = len(results)
    deltas = np.stack([r.delta_final for r in results])
    d = deltas.shape[1]

    v_emp = empirical_covariance(deltas)
    v_norm = float(np.linalg.norm(v_theory))
    frob_rel_err = float(np.linalg.norm(v_emp - v_theory)) / v_norm

    whitened = whiten(deltas, v_theory)
    ks_results = [ks_normal_test(whitened[:, j]) for j in range(d)]
    ks_stats = [r.d_stat for r in ks_results]
    ks_const = KS_CONST_1PCT if tolerances.ks_level == 0.01 else KS_CONST_5PCT
    ks_critical = ks_const / math.sqrt(m)

    # Kurtosis is measured against the sample covariance, so this check is
    # specific to tail shape; scale errors are the covariance check's job.
    mardia_z = mardia_kurtosis(deltas, v_emp) if m >= MIN_MARDIA_SAMPLE else None
    tr_summary = truncation_stats(results, horizon)

    sample_ok = m >= MIN_MARDIA_SAMPLE
    verdict = {
        "covariance": bool(frob_rel_err <= tolerances.cov_rel_err),
        "ks": bool(m >= MIN_KS_SAMPLE and all(s < ks_critical for s in ks_stats)),
        "mardia": bool(mardia_z is not None and abs(mardia_z) < tolerances.mardia_z_max),
        "truncation": bool(tr_summary.late_truncation_count == 0),
        "sufficient_sample": bool(sample_ok),
    }
    verdict["overall"] = all(verdict.values())
    if not sample_ok:
        verdict["reason"] = "insufficient sample"

    return CltReport(m=m, n=horizon, v_theory=v_theory, v_empirical=v_emp,
                     frob_rel_err=frob_rel_err, ks_stats=ks_stats,
                     ks_critical=ks_critical, mardia_kurtosis_z=mardia_z,
                     truncation_summary=tr_summary, verdict=verdict,
                     tolerances=tolerances)


def samples_csv(results) -> str:
    """Raw normalized-error samples as CSV: stream_id, delta_*, sigma_final."""
    if not results:
        raise ValueError("no replication results")
    d = results[0].delta_final.size
    header = "stream_id," + ",".join(f"delta_{i}" for i in range(d)) + ",sigma_final"
    lines = [header]
    for r in sorted(results, key=lambda r: r.stream_id):
        coords = ",".join("%.17g" % v for v in r.delta_final)
        lines.append(f"{r.stream_id},{coords},{r.sigma_final}")
    return "\n".join(lines) + "\n"
