"""Iteration engines for the truncated and plain stochastic recursions.

One step moves X_n to X_{n+1} with the gain gamma_{n+1}:

    candidate = X_n - gamma_{n+1} * (u(X_n) + noise)

The truncated recursion accepts the candidate while it stays in the current
compact K_sigma; otherwise it restarts from the reset target and enlarges
the compact.  The plain recursion always accepts and is only guarded by a
blow-up threshold.  Trajectories record every stride-th state plus every
truncation event, so million-step runs stay cheap to store.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _engine
from .model import (
    GainSchedule,
    Problem,
    ResetPolicy,
    RngStream,
    TruncationSequence,
    as_vector,
)

__all__ = [
    "IterateState",
    "TruncationEvent",
    "Trajectory",
    "DivergenceReport",
    "step_truncated",
    "truncation_term",
    "run_truncated",
    "run_plain",
    "delta",
]

_CSV_FMT = "%.17g"


@dataclass(frozen=True)
class IterateState:
    """Snapshot (n, X_n, sigma_n) of the recursion."""

    n: int
    x: np.ndarray
    sigma: int
    last_truncation_step: Optional[int] = None


@dataclass(frozen=True)
class TruncationEvent:
    """A rejected step: the escaping candidate and the correction term.

    ``p_term`` is the vector p with X_{n+1} = X_n - gain * obs + gain * p,
    i.e. p = obs + (reset_target - X_n) / gain.
    """

    step: int
    sigma_after: int
    pre_truncation_x: np.ndarray
    p_term: np.ndarray


@dataclass(frozen=True)
class DivergenceReport:
    """First detected blow-up of the plain recursion."""

    diverged_at: int
    last_finite_norm: float
    threshold: float

    def to_json_dict(self) -> dict:
        return {
            "diverged_at": self.diverged_at,
            "last_finite_norm": self.last_finite_norm,
            "threshold": self.threshold,
        }


@dataclass
class Trajectory:
    """Recorded evolution of a run: sparse states plus all truncation events."""

    problem_id: str
    schedule: GainSchedule
    states: list[IterateState]
    truncation_events: list[TruncationEvent]
    final_state: IterateState
    _by_step: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._by_step = {s.n: s for s in self.states}

    @property
    def horizon(self) -> int:
        return self.final_state.n

    def state_at(self, n: int) -> IterateState:
        try:
            return self._by_step[n]
        except KeyError:
            raise KeyError(f"no state recorded at step {n}") from None

    def recorded_steps(self) -> list[int]:
        return [s.n for s in self.states]

    def to_csv(self, path) -> None:
        d = self.final_state.x.size
        header = "step,sigma," + ",".join(f"x_{i}" for i in range(d))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for s in self.states:
                coords = ",".join(_CSV_FMT % v for v in s.x)
                fh.write(f"{s.n},{s.sigma},{coords}\n")

    def events_to_csv(self, path) -> None:
        d = self.final_state.x.size
        header = "step,sigma_after," + ",".join(f"p_{i}" for i in range(d))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for e in self.truncation_events:
                coords = ",".join(_CSV_FMT % v for v in e.p_term)
                fh.write(f"{e.step},{e.sigma_after},{coords}\n")


def truncation_term(state: IterateState, observation, gain_next: float,
                    reset_target) -> np.ndarray:
    """Correction p making the rejected step land on the reset target.

    Satisfies X_n - gain * observation + gain * p == reset_target up to
    rounding.
    """
    obs = as_vector(observation, name="observation")
    target = as_vector(reset_target, dim=obs.size, name="reset target")
    return obs + (target - state.x) / gain_next


def step_truncated(state: IterateState, observation, gain_next: float,
                   trunc: TruncationSequence, reset: ResetPolicy,
                   x0=None) -> tuple[IterateState, Optional[TruncationEvent]]:
    """Advance one step of the truncated recursion.

    ``observation`` is the caller-drawn noisy field value at ``state.x`` and
    ``gain_next`` the gain for this transition.  ``x0`` is only needed for
    the to_initial reset policy.
    """
    obs = as_vector(observation, dim=trunc.dim, name="observation")
    candidate = state.x - gain_next * obs
    if trunc.contains(state.sigma, candidate):
        new = IterateState(state.n + 1, candidate, state.sigma,
                           state.last_truncation_step)
        return new, None
    if reset.kind == ResetPolicy.TO_INITIAL and x0 is None:
        raise ValueError("to_initial reset requires the run's starting point x0")
    target = as_vector(reset.resolve(x0), dim=trunc.dim, name="reset target")
    p = truncation_term(state, obs, gain_next, target)
    event = TruncationEvent(state.n + 1, state.sigma + 1, candidate, p)
    new = IterateState(state.n + 1, target.copy(), state.sigma + 1, state.n + 1)
    return new, event


def _resolve_reset(reset: ResetPolicy, trunc: TruncationSequence,
                   x0: np.ndarray) -> np.ndarray:
    target = as_vector(reset.resolve(x0), dim=trunc.dim, name="reset target")
    if reset.kind == ResetPolicy.TO_FIXED_POINT and not trunc.contains(0, target):
        raise ValueError("fixed reset target lies outside K_0")
    return target


def run_truncated(problem: Problem, schedule: GainSchedule,
                  trunc: TruncationSequence, reset: ResetPolicy, x0,
                  horizon: int, rng: RngStream, stride: int = 1,
                  engine: str = "auto") -> Trajectory:
    """Run the truncated recursion for ``horizon`` steps.

    Deterministic given all arguments.  Problems carrying a native form run
    on the selected engine over pre-drawn normal deviates; other problems
    fall back to calling ``problem.observe`` once per step.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    x0 = as_vector(x0, dim=problem.dim, name="x0")
    if trunc.dim != problem.dim:
        raise ValueError("truncation sequence dimension does not match problem")
    if not trunc.contains(0, x0):
        raise ValueError("starting point x0 lies outside K_0")
    target = _resolve_reset(reset, trunc, x0)
    gains = schedule.gains(1, horizon + 1)

    nf = problem.native_form
    if nf is not None:
        normals = rng.standard_normal((horizon, problem.dim))
        loop = _engine.truncated_native(engine)
        out = loop(nf.a, nf.root, nf.cubic, nf.noise_chol, nf.state_dep_noise,
                   trunc.center, trunc.r0, trunc.growth, target, x0, gains,
                   normals, stride)
    else:
        out = _engine.pyloop.run_truncated_generic(
            problem.observe, rng, trunc.center, trunc.r0, trunc.growth,
            target, x0, gains, stride)
    rec_steps, rec_sigmas, rec_x, raw_events, x_final, sigma_final, last_trunc = out

    events = [
        TruncationEvent(step, sig, np.asarray(xh, dtype=np.float64),
                        np.asarray(p, dtype=np.float64))
        for step, sig, xh, p in raw_events
    ]
    # post-reset states at event steps all equal the reset target
    by_step = {0: (x0.copy(), 0)}
    for step, sig, xrow in zip(rec_steps, rec_sigmas, rec_x):
        by_step[int(step)] = (np.asarray(xrow, dtype=np.float64), int(sig))
    for ev in events:
        by_step[ev.step] = (target.copy(), ev.sigma_after)
    by_step[horizon] = (np.asarray(x_final, dtype=np.float64), int(sigma_final))

    trunc_steps = [ev.step for ev in events]
    states = []
    for n in sorted(by_step):
        x, sig = by_step[n]
        last = None
        for t in trunc_steps:
            if t <= n:
                last = t
            else:
                break
        states.append(IterateState(n, x, sig, last))

    final = states[-1]
    assert final.n == horizon
    return Trajectory(problem_id=problem.name, schedule=schedule,
                      states=states, truncation_events=events,
                      final_state=final)


def run_plain(problem: Problem, schedule: GainSchedule, x0, horizon: int,
              rng: RngStream, blowup_threshold: Optional[float] = None,
              stride: int = 1,
              engine: str = "auto") -> Union[Trajectory, DivergenceReport]:
    """Run the untruncated recursion, aborting at the blow-up threshold.

    The default threshold 1e6 * (1 + |x0|) keeps genuinely divergent runs
    from overflowing while leaving convergent ones untouched.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    x0 = as_vector(x0, dim=problem.dim, name="x0")
    if blowup_threshold is None:
        blowup_threshold = 1e6 * (1.0 + float(np.linalg.norm(x0)))
    if not blowup_threshold > 0:
        raise ValueError("blowup_threshold must be positive")
    gains = schedule.gains(1, horizon + 1)

    nf = problem.native_form
    if nf is not None:
        normals = rng.standard_normal((horizon, problem.dim))
        loop = _engine.plain_native(engine)
        out = loop(nf.a, nf.root, nf.cubic, nf.noise_chol, nf.state_dep_noise,
                   x0, gains, normals, stride, blowup_threshold)
    else:
        out = _engine.pyloop.run_plain_generic(
            problem.observe, rng, x0, gains, stride, blowup_threshold)
    rec_steps, rec_x, x_final, diverged_at, norm = out

    if diverged_at >= 0:
        return DivergenceReport(diverged_at=int(diverged_at),
                                last_finite_norm=float(norm),
                                threshold=float(blowup_threshold))

    by_step = {0: x0.copy()}
    for step, xrow in zip(rec_steps, rec_x):
        by_step[int(step)] = np.asarray(xrow, dtype=np.float64)
    by_step[horizon] = np.asarray(x_final, dtype=np.float64)
    states = [IterateState(n, by_step[n], 0) for n in sorted(by_step)]
    return Trajectory(problem_id=problem.name, schedule=schedule,
                      states=states, truncation_events=[],
                      final_state=states[-1])


def delta(trajectory: Trajectory, n: int, root) -> np.ndarray:
    """Normalized error (X_n - root) / sqrt(gain(n)) at a recorded step."""
    state = trajectory.state_at(n)
    root = as_vector(root, dim=state.x.size, name="root")
    return (state.x - root) / math.sqrt(trajectory.schedule.gain(n))
