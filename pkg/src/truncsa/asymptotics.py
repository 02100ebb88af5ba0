"""Limit covariance of the normalized error, in closed form plus an oracle.

For gains gamma / (n+1)**alpha the normalized error (X_n - root)/sqrt(gain)
converges to a centered normal whose covariance V is

    alpha < 1:   integral_0^inf exp(-A t) Sigma exp(-A t) dt,
    alpha = 1:   gamma * integral_0^inf exp((I/2 - gamma A) t) Sigma
                                        exp((I/2 - gamma A) t) dt,

with A the symmetric positive-definite Jacobian of the mean field at the
root and Sigma the noise covariance there.  Both integrals are the unique
solutions of a Lyapunov equation B V + V B = C, solved here exactly in the
eigenbasis of B.  ``covariance_quadrature`` evaluates the same integrals by
composite Simpson quadrature with a series-based matrix exponential; it
shares no code with the eigendecomposition path, so the two routes fail
independently.

The alpha = 1 regime exists only while gamma * lambda_min(A) > 1/2; at or
below that boundary the error decays at a different rate and the formula is
meaningless, so those inputs are rejected.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import GainSchedule

__all__ = [
    "SymmetryError",
    "JacobiConvergenceError",
    "StabilityError",
    "Regime",
    "EigDecomposition",
    "CovarianceResult",
    "as_sym_matrix",
    "eigh",
    "sym_sqrt",
    "sym_inv_sqrt",
    "lyapunov_solve",
    "check_stability",
    "asymptotic_covariance",
    "covariance_quadrature",
    "expm_series",
]

MAX_DIM = 64
_JACOBI_SWEEPS = 100
_JACOBI_TOL = 1e-14


class SymmetryError(ValueError):
    pass


class JacobiConvergenceError(RuntimeError):
    pass


class StabilityError(ValueError):
    """Raised when alpha = 1 but gamma * lambda_min(A) <= 1/2."""


class Regime(enum.Enum):
    ALPHA_BELOW_ONE = "alpha_below_one"
    ALPHA_EQUAL_ONE = "alpha_equal_one"


@dataclass(frozen=True)
class EigDecomposition:
    """Orthogonal eigendecomposition m = U diag(eigenvalues) U', ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class CovarianceResult:
    v: np.ndarray
    regime: Regime
    lyapunov_residual: float
    stability_margin: float


def as_sym_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate a dense symmetric matrix and return it as float64."""
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if m.shape[0] > MAX_DIM:
        raise ValueError(f"{name} exceeds the supported dimension {MAX_DIM}")
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if scale > 0 and float(np.max(np.abs(m - m.T))) > 1e-12 * scale:
        raise SymmetryError(f"{name} is not symmetric")
    return m


def eigh(m) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm falls below 1e-14 times the
    input norm.  Robust and exact enough for the dimensions this package
    supports; not meant for large matrices.
    """
    m = as_sym_matrix(m)
    d = m.shape[0]
    a = m.copy()
    u = np.eye(d)
    base = float(np.linalg.norm(m))
    if base == 0.0 or d == 1:
        order = np.argsort(np.diag(a), kind="stable")
        return EigDecomposition(np.diag(a)[order].copy(), u[:, order].copy())

    tol = _JACOBI_TOL * base
    for _ in range(_JACOBI_SWEEPS):
        off = math.sqrt(max(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)), 0.0))
        if off <= tol:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                u_p = u[:, p].copy()
                u_q = u[:, q].copy()
                u[:, p] = c * u_p - s * u_q
                u[:, q] = s * u_p + c * u_q
    else:
        raise JacobiConvergenceError(
            f"Jacobi sweep limit {_JACOBI_SWEEPS} reached (off-diagonal norm {off:g})"
        )

    evals = np.diag(a).copy()
    order = np.argsort(evals, kind="stable")
    return EigDecomposition(evals[order], np.ascontiguousarray(u[:, order]))


def _sym_power(m, exponent: float, floor: float = 0.0) -> np.ndarray:
    dec = eigh(m)
    if floor > 0.0:
        cutoff = floor * max(float(np.sum(dec.eigenvalues)), 0.0)
        if float(dec.eigenvalues[0]) <= cutoff:
            raise ValueError(
                f"matrix is near-singular (eigenvalue {dec.eigenvalues[0]:g})"
            )
    scaled = np.power(dec.eigenvalues, exponent)
    v = dec.eigenvectors @ np.diag(scaled) @ dec.eigenvectors.T
    return 0.5 * (v + v.T)


def sym_sqrt(m) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix."""
    return _sym_power(m, 0.5)


def sym_inv_sqrt(m, singular_floor: float = 1e-12) -> np.ndarray:
    """Symmetric inverse square root; rejects near-singular inputs."""
    return _sym_power(m, -0.5, floor=singular_floor)


def lyapunov_solve(b, c) -> np.ndarray:
    """Unique V with B V + V B = C for symmetric positive-definite B.

    Solved in the eigenbasis of B: with B = U diag(mu) U', the transformed
    right-hand side divides entrywise by mu_i + mu_j.
    """
    b = as_sym_matrix(b, "b")
    c = as_sym_matrix(c, "c")
    if b.shape != c.shape:
        raise ValueError("b and c must have matching shapes")
    dec = eigh(b)
    mu = dec.eigenvalues
    if float(mu[0]) <= 0.0:
        raise ValueError(f"b is not positive definite (eigenvalue {mu[0]:g})")
    u = dec.eigenvectors
    c_tilde = u.T @ c @ u
    v_hat = c_tilde / (mu[:, None] + mu[None, :])
    v = u @ v_hat @ u.T
    return 0.5 * (v + v.T)


def check_stability(a, schedule: GainSchedule) -> tuple[bool, float]:
    """Whether the covariance formula applies for this gain schedule.

    For alpha = 1 returns (gamma * lambda_min > 1/2, gamma * lambda_min - 1/2);
    for alpha < 1 positive definiteness of A is all that is required and the
    margin is lambda_min itself.
    """
    a = as_sym_matrix(a, "a")
    lam_min = float(eigh(a).eigenvalues[0])
    if schedule.alpha == 1.0:
        margin = schedule.gamma * lam_min - 0.5
        return margin > 0.0, margin
    return True, lam_min


def asymptotic_covariance(a, sigma, schedule: GainSchedule) -> CovarianceResult:
    """Limit covariance of the normalized error for the given gain schedule."""
    a = as_sym_matrix(a, "a")
    sigma = as_sym_matrix(sigma, "sigma")
    if a.shape != sigma.shape:
        raise ValueError("a and sigma must have matching shapes")
    ok, margin = check_stability(a, schedule)
    if schedule.alpha == 1.0:
        if not ok:
            raise StabilityError(
                f"gamma * lambda_min(a) - 1/2 = {margin:.6g} <= 0: this gain "
                "sits at or below the boundary between two convergence "
                "regimes; the sqrt-gain normal limit requires "
                "gamma * lambda_min(a) > 1/2"
            )
        b = schedule.gamma * a - 0.5 * np.eye(a.shape[0])
        c = schedule.gamma * sigma
        regime = Regime.ALPHA_EQUAL_ONE
    else:
        if not ok:
            raise StabilityError("a must be positive definite")
        b = a
        c = sigma
        regime = Regime.ALPHA_BELOW_ONE
    v = lyapunov_solve(b, c)
    res = float(np.linalg.norm(b @ v + v @ b - c))
    c_norm = float(np.linalg.norm(c))
    residual = res / c_norm if c_norm > 0 else res
    return CovarianceResult(v=v, regime=regime, lyapunov_residual=residual,
                            stability_margin=margin)


def expm_series(m) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring of the Taylor series.

    Deliberately avoids any eigendecomposition so quadrature results are
    independent of the closed-form path.
    """
    m = np.asarray(m, dtype=np.float64)
    d = m.shape[0]
    norm = float(np.linalg.norm(m, 1))
    squarings = 0
    if norm > 0.5:
        squarings = int(math.ceil(math.log2(norm / 0.5)))
    t = m / (2.0 ** squarings)
    result = np.eye(d)
    term = np.eye(d)
    for k in range(1, 40):
        term = term @ t / k
        result = result + term
        if float(np.linalg.norm(term, 1)) <= 1e-18 * float(np.linalg.norm(result, 1)):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def covariance_quadrature(a, sigma, schedule: GainSchedule, t_max: float,
                          steps: int) -> np.ndarray:
    """Direct Simpson quadrature of the limit-covariance integral.

    ``t_max`` must be large enough that the integrand's tail is negligible
    (exp(-2 * mu_min * t_max) below the target accuracy); ``steps`` must be
    even.  Serves as the independent check on ``asymptotic_covariance``.
    """
    a = as_sym_matrix(a, "a")
    sigma = as_sym_matrix(sigma, "sigma")
    if steps < 2 or steps % 2 != 0:
        raise ValueError(f"steps must be a positive even integer, got {steps}")
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    ok, margin = check_stability(a, schedule)
    if schedule.alpha == 1.0:
        if not ok:
            raise StabilityError(
                f"gamma * lambda_min(a) - 1/2 = {margin:.6g} <= 0: integral "
                "diverges at or below the regime boundary"
            )
        b = schedule.gamma * a - 0.5 * np.eye(a.shape[0])
        c = schedule.gamma * sigma
    else:
        b = a
        c = sigma

    h = t_max / steps
    step_exp = expm_series(-b * h)
    p = np.eye(b.shape[0])  # exp(-b * 0)
    total = c.copy()  # weight 1 at t = 0
    for i in range(1, steps):
        p = p @ step_exp
        weight = 4.0 if i % 2 == 1 else 2.0
        total = total + weight * (p @ c @ p)
    p = p @ step_exp
    total = total + p @ c @ p  # weight 1 at t = t_max
    v = (h / 3.0) * total
    return 0.5 * (v + v.T)
