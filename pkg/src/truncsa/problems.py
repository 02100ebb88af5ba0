"""Built-in benchmark problems with known ground truth.

Three families span the behaviours the solver must handle:

* ``linear_gaussian`` -- purely linear field with i.i.d. Gaussian noise;
  the remainder beyond the Jacobian is identically zero.
* ``cubic`` -- linear plus cubic field whose norm outgrows |x|, so the
  untruncated recursion blows up from far starts while the truncated one
  converges.
* ``expectation_form`` -- cubic field observed through a single-draw
  estimator whose conditional noise covariance depends on the state and
  only settles to the identity at the root; exercises the case where only
  the covariance at the root matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import NativeForm, Problem, RngStream, as_vector

__all__ = [
    "ProblemSpec",
    "linear_gaussian",
    "cubic",
    "expectation_form",
    "from_spec",
    "builtin_names",
]

# Noise-scale profile names accepted by expectation_form.  "clamped" is
# s(x) = 1 + min(|x - root|, 1): state dependent, bounded, equal to 1 at
# the root.
NOISE_SCALE_CLAMPED = "clamped"


@dataclass(frozen=True)
class ProblemSpec:
    """Serializable recipe (builder name + JSON-friendly params) for a problem."""

    name: str
    params: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return cls(name=d["name"], params=dict(d["params"]))


def _check_spd(m, d: int, name: str, allow_zero: bool = False) -> np.ndarray:
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.shape != (d, d):
        raise ValueError(f"{name} must be {d}x{d}, got shape {m.shape}")
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if float(np.max(np.abs(m - m.T))) > 1e-12 * max(scale, 1.0):
        raise ValueError(f"{name} is not symmetric")
    if allow_zero and scale == 0.0:
        return m
    evals = np.linalg.eigvalsh(m)
    if evals[0] <= 0:
        raise ValueError(f"{name} is not positive definite (min eigenvalue {evals[0]:g})")
    return m


def _noise_chol(sigma: np.ndarray) -> np.ndarray:
    if float(np.max(np.abs(sigma))) == 0.0:
        return np.zeros_like(sigma)
    return np.linalg.cholesky(sigma)


def _polynomial_field(a: np.ndarray, root: np.ndarray, cubic_term: bool):
    def mean_field(x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64) - root
        u = a @ h
        if cubic_term:
            u = u + float(h @ h) * h
        return u

    return mean_field


def _gaussian_observe(mean_field, chol: np.ndarray, root: Optional[np.ndarray] = None):
    """Observation u(x) + s(x) * L z; state-dependent scale iff root given."""

    def observe(x: np.ndarray, rng: RngStream) -> np.ndarray:
        z = rng.standard_normal(chol.shape[0])
        noise = chol @ z
        if root is not None:
            dist = float(np.linalg.norm(np.asarray(x, dtype=np.float64) - root))
            noise = (1.0 + min(dist, 1.0)) * noise
        return mean_field(x) + noise

    return observe


def linear_gaussian(dim: int, a, sigma, root) -> Problem:
    """Field u(x) = A (x - root) observed with additive N(0, Sigma) noise.

    ``sigma`` may be the zero matrix, giving the deterministic noise-free
    variant used by the exact-recurrence oracles; otherwise it must be
    symmetric positive definite.
    """
    root = as_vector(root, dim=dim, name="root")
    a = _check_spd(a, dim, "a")
    sigma = _check_spd(sigma, dim, "sigma", allow_zero=True)
    chol = _noise_chol(sigma)
    mean_field = _polynomial_field(a, root, cubic_term=False)
    spec = ProblemSpec(
        "linear_gaussian",
        {"dim": dim, "a": a.tolist(), "sigma": sigma.tolist(), "root": root.tolist()},
    )
    return Problem(
        name="linear_gaussian",
        dim=dim,
        root=root,
        mean_field=mean_field,
        jacobian_at_root=a,
        noise_cov_at_root=sigma,
        observe=_gaussian_observe(mean_field, chol),
        spec=spec,
        native_form=NativeForm(a=a, root=root, cubic=False, noise_chol=chol, state_dep_noise=False),
    )


def cubic(dim: int, a, sigma, root) -> Problem:
    """Field u(x) = A (x - root) + |x - root|^2 (x - root) with Gaussian noise.

    The inner product (x - root) . u(x) equals (x-root)' A (x-root) +
    |x - root|^4 > 0, so the field points away from the root everywhere, yet
    |u(x)|/|x| is unbounded: the plain recursion diverges from far starts.
    """
    root = as_vector(root, dim=dim, name="root")
    a = _check_spd(a, dim, "a")
    sigma = _check_spd(sigma, dim, "sigma", allow_zero=True)
    chol = _noise_chol(sigma)
    mean_field = _polynomial_field(a, root, cubic_term=True)
    spec = ProblemSpec(
        "cubic",
        {"dim": dim, "a": a.tolist(), "sigma": sigma.tolist(), "root": root.tolist()},
    )
    return Problem(
        name="cubic",
        dim=dim,
        root=root,
        mean_field=mean_field,
        jacobian_at_root=a,
        noise_cov_at_root=sigma,
        observe=_gaussian_observe(mean_field, chol),
        spec=spec,
        native_form=NativeForm(a=a, root=root, cubic=True, noise_chol=chol, state_dep_noise=False),
    )


def expectation_form(dim: int, a, root, noise_scale: str = NOISE_SCALE_CLAMPED) -> Problem:
    """Cubic field observed via a one-draw estimator with state-dependent noise.

    The observation is u(x) + s(x) z with z standard normal and
    s(x) = 1 + min(|x - root|, 1), so the conditional covariance is
    (1 + min(|x - root|, 1))^2 I: it varies with the state, stays bounded,
    and converges to the identity as x approaches the root.  The limit
    covariance entering the normal approximation is therefore Sigma = I.
    """
    if noise_scale != NOISE_SCALE_CLAMPED:
        raise ValueError(f"unknown noise_scale {noise_scale!r}; available: {NOISE_SCALE_CLAMPED!r}")
    root = as_vector(root, dim=dim, name="root")
    a = _check_spd(a, dim, "a")
    sigma = np.eye(dim)
    mean_field = _polynomial_field(a, root, cubic_term=True)
    spec = ProblemSpec(
        "expectation_form",
        {"dim": dim, "a": a.tolist(), "root": root.tolist(), "noise_scale": noise_scale},
    )
    return Problem(
        name="expectation_form",
        dim=dim,
        root=root,
        mean_field=mean_field,
        jacobian_at_root=a,
        noise_cov_at_root=sigma,
        observe=_gaussian_observe(mean_field, np.eye(dim), root=root),
        spec=spec,
        native_form=NativeForm(
            a=a, root=root, cubic=True, noise_chol=np.eye(dim), state_dep_noise=True
        ),
    )


_BUILDERS = {
    "linear_gaussian": lambda p: linear_gaussian(p["dim"], p["a"], p["sigma"], p["root"]),
    "cubic": lambda p: cubic(p["dim"], p["a"], p["sigma"], p["root"]),
    "expectation_form": lambda p: expectation_form(
        p["dim"], p["a"], p["root"], p.get("noise_scale", NOISE_SCALE_CLAMPED)
    ),
}


def builtin_names() -> list[str]:
    return sorted(_BUILDERS)


def from_spec(spec) -> Problem:
    """Instantiate a built-in problem from a ProblemSpec or its dict form."""
    if isinstance(spec, dict):
        spec = ProblemSpec.from_dict(spec)
    try:
        builder = _BUILDERS[spec.name]
    except KeyError:
        raise ValueError(
            f"unknown problem {spec.name!r}; available: {', '.join(builtin_names())}"
        ) from None
    try:
        return builder(spec.params)
    except KeyError as exc:
        raise ValueError(f"problem {spec.name!r} is missing parameter {exc}") from None
