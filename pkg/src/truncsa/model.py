"""Domain vocabulary for truncated stochastic approximation runs.

Vectors are 1-D float64 numpy arrays of a fixed dimension ``d >= 1``.  The
module defines the gain (step-size) schedule, the expanding family of
truncation balls, the reset rule applied when an iterate escapes, the
root-finding problem container, and the seeded random stream contract used
to make every run reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "as_vector",
    "GainSchedule",
    "TruncationSequence",
    "ResetPolicy",
    "NativeForm",
    "Problem",
    "RngStream",
]


def as_vector(x, dim: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float64 array, optionally checking its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size < 1:
        raise ValueError(f"{name} must have dimension >= 1")
    if dim is not None and v.size != dim:
        raise ValueError(f"{name} has dimension {v.size}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite components")
    return v


@dataclass(frozen=True)
class GainSchedule:
    """Step sizes gamma / (n+1)**alpha with 0.5 < alpha <= 1.

    ``gain(0) == gamma``; the update from step n to n+1 multiplies the
    observation by ``gain(n+1)``.  This range of ``alpha`` makes the gains
    non-summable while keeping their squares summable, which is what the
    convergence theory requires.
    """

    gamma: float
    alpha: float

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not (0.5 < self.alpha <= 1.0):
            raise ValueError(
                f"alpha must lie in (0.5, 1], got {self.alpha}"
            )

    def gain(self, n: int) -> float:
        if n < 0:
            raise ValueError(f"step index must be >= 0, got {n}")
        return self.gamma / (n + 1) ** self.alpha

    def gains(self, start: int, stop: int) -> np.ndarray:
        """Vector of gain(n) for n in [start, stop)."""
        idx = np.arange(start, stop, dtype=np.float64)
        return self.gamma / np.power(idx + 1.0, self.alpha)


@dataclass(frozen=True)
class TruncationSequence:
    """Nested closed Euclidean balls K_j = {x : |x - center| <= r0 * growth**j}.

    The radii grow geometrically, so the balls are strictly nested and cover
    all of R^d.  Boundary points count as inside (the balls are closed).
    """

    center: np.ndarray
    r0: float
    growth: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_vector(self.center, name="center"))
        if not (self.r0 > 0):
            raise ValueError(f"r0 must be positive, got {self.r0}")
        if not (self.growth > 1):
            raise ValueError(f"growth must exceed 1, got {self.growth}")

    @property
    def dim(self) -> int:
        return self.center.size

    def radius(self, j: int) -> float:
        if j < 0:
            raise ValueError(f"compact index must be >= 0, got {j}")
        # Iterated multiply matches the engines' running radius update
        # bit-for-bit (binary pow may differ in the last ulp).
        r = self.r0
        for _ in range(j):
            r *= self.growth
        return r

    def contains(self, j: int, x) -> bool:
        x = as_vector(x, dim=self.dim, name="point")
        d = x - self.center
        return math.sqrt(float(np.dot(d, d))) <= self.radius(j)

    def boundary_margin(self, j: int, x) -> float:
        """radius(j) - |x - center|: positive inside K_j, negative outside."""
        x = as_vector(x, dim=self.dim, name="point")
        d = x - self.center
        return self.radius(j) - math.sqrt(float(np.dot(d, d)))

    def root_margin(self, root) -> float:
        """Distance from ``root`` to the boundary of K_0.

        Because the radii increase, this is the worst-case distance from the
        root to any boundary of the family.  It must be positive for the
        normal-limit theory to apply; when the true root is unknown this
        cannot be checked and callers must choose K_0 generously.
        """
        return self.boundary_margin(0, root)


@dataclass(frozen=True)
class ResetPolicy:
    """Rule applied when a proposed iterate escapes the current compact.

    ``to_initial`` restarts from the run's starting point; ``to_fixed_point``
    restarts from a constant target, which must lie in K_0 so every restart
    lands in a fixed compact.
    """

    kind: str
    target: Optional[np.ndarray] = None

    TO_INITIAL = "to_initial"
    TO_FIXED_POINT = "to_fixed_point"

    def __post_init__(self):
        if self.kind not in (self.TO_INITIAL, self.TO_FIXED_POINT):
            raise ValueError(f"unknown reset kind {self.kind!r}")
        if self.kind == self.TO_FIXED_POINT:
            if self.target is None:
                raise ValueError("to_fixed_point reset requires a target")
            object.__setattr__(self, "target", as_vector(self.target, name="reset target"))
        elif self.target is not None:
            raise ValueError("to_initial reset takes no target")

    @classmethod
    def to_initial(cls) -> "ResetPolicy":
        return cls(cls.TO_INITIAL)

    @classmethod
    def to_fixed_point(cls, target) -> "ResetPolicy":
        return cls(cls.TO_FIXED_POINT, as_vector(target, name="reset target"))

    def resolve(self, x0: np.ndarray) -> np.ndarray:
        return x0 if self.kind == self.TO_INITIAL else self.target


@dataclass(frozen=True)
class NativeForm:
    """Structured observation model the compiled loops can execute directly.

    Covers observations of the form

        obs(x, z) = A (x - root) + [|x - root|^2 (x - root)]  (if cubic)
                    + s(x) * L z

    with z a standard normal vector and s(x) = 1 + min(|x - root|, 1) when
    ``state_dep_noise`` else 1.  All built-in problems fit this template.
    """

    a: np.ndarray
    root: np.ndarray
    cubic: bool
    noise_chol: np.ndarray
    state_dep_noise: bool

    def __post_init__(self):
        root = as_vector(self.root, name="root")
        d = root.size
        a = np.ascontiguousarray(self.a, dtype=np.float64)
        chol = np.ascontiguousarray(self.noise_chol, dtype=np.float64)
        if a.shape != (d, d) or chol.shape != (d, d):
            raise ValueError("native form matrices must be d x d")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "noise_chol", chol)


@dataclass(frozen=True)
class Problem:
    """A root-finding instance observed through additive zero-mean noise.

    ``mean_field`` is the deterministic field u whose root is sought;
    ``observe(x, rng)`` returns ``u(x) + noise`` with conditionally zero-mean
    noise.  ``jacobian_at_root`` and ``noise_cov_at_root`` are the ground
    truth (A, Sigma) entering the limit covariance formulas.  ``spec`` keeps
    the serializable recipe when the problem came from a named builder, and
    ``native_form`` unlocks the compiled iteration loops.
    """

    name: str
    dim: int
    root: np.ndarray
    mean_field: Callable[[np.ndarray], np.ndarray]
    jacobian_at_root: np.ndarray
    noise_cov_at_root: np.ndarray
    observe: Callable[[np.ndarray, "RngStream"], np.ndarray]
    spec: Optional[object] = None
    native_form: Optional[NativeForm] = None


_U64_MAX = 2**64 - 1


@dataclass
class RngStream:
    """Reproducible random stream keyed by (master_seed, stream_id).

    Streams with distinct ids under one master seed are statistically
    independent; the same key reproduces the identical sequence bit-for-bit
    on one platform.  A stream is mutable state owned by exactly one worker.
    """

    master_seed: int
    stream_id: int
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for label, value in (("master_seed", self.master_seed), ("stream_id", self.stream_id)):
            if not (0 <= value <= _U64_MAX):
                raise ValueError(f"{label} must be an unsigned 64-bit integer, got {value}")
        self._gen = np.random.default_rng((self.master_seed, self.stream_id))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)
