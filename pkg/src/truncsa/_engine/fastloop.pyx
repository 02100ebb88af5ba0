# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled iteration loops for the structured Gaussian observation model.

Operation order matches ``pyloop`` exactly; together with pre-drawn normal
deviates and -ffp-contract=off this makes both engines bit-identical.
"""

from libc.math cimport isfinite, sqrt

import numpy as np


def run_truncated_native(double[:, ::1] a, double[::1] root, bint cubic,
                         double[:, ::1] chol, bint state_dep,
                         double[::1] center, double r0, double growth,
                         double[::1] reset_target, double[::1] x0,
                         double[::1] gains, double[:, ::1] normals,
                         Py_ssize_t stride):
    """Iterate the truncated recursion for ``len(gains)`` steps.

    Returns (rec_steps, rec_sigmas, rec_x, events, x_final, sigma_final,
    last_truncation_step) where the record arrays hold every stride-th state
    and events is a list of (step, sigma_after, pre_truncation_x, p_term).
    """
    cdef Py_ssize_t n = gains.shape[0]
    cdef Py_ssize_t d = root.shape[0]
    cdef Py_ssize_t k, i, j, nrec = 0
    cdef long sigma = 0
    cdef long last_trunc = -1
    cdef double radius = r0
    cdef double r2, acc, scale, dist, g, esc2, diff, v

    x_arr = np.array(x0, dtype=np.float64, copy=True)
    xr_arr = np.empty(d, dtype=np.float64)
    obs_arr = np.empty(d, dtype=np.float64)
    xh_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] xr = xr_arr
    cdef double[::1] obs = obs_arr
    cdef double[::1] xh = xh_arr

    rec_steps_arr = np.empty(n // stride + 1, dtype=np.int64)
    rec_sigmas_arr = np.empty(n // stride + 1, dtype=np.int64)
    rec_x_arr = np.empty((n // stride + 1, d), dtype=np.float64)
    cdef long[::1] rec_steps = rec_steps_arr
    cdef long[::1] rec_sigmas = rec_sigmas_arr
    cdef double[:, ::1] rec_x = rec_x_arr
    events = []

    for k in range(n):
        r2 = 0.0
        for i in range(d):
            diff = x[i] - root[i]
            xr[i] = diff
            r2 += diff * diff
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += a[i, j] * xr[j]
            obs[i] = acc
        if cubic:
            for i in range(d):
                obs[i] = obs[i] + r2 * xr[i]
        scale = 1.0
        if state_dep:
            dist = sqrt(r2)
            if dist < 1.0:
                scale = 1.0 + dist
            else:
                scale = 2.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += chol[i, j] * normals[k, j]
            obs[i] = obs[i] + scale * acc
        g = gains[k]
        esc2 = 0.0
        for i in range(d):
            v = x[i] - g * obs[i]
            xh[i] = v
            diff = v - center[i]
            esc2 += diff * diff
        if not isfinite(esc2):
            raise ValueError(f"non-finite update at step {k + 1}")
        if sqrt(esc2) <= radius:
            for i in range(d):
                x[i] = xh[i]
        else:
            p = [obs[i] + (reset_target[i] - x[i]) / g for i in range(d)]
            events.append((k + 1, sigma + 1, [xh[i] for i in range(d)], p))
            for i in range(d):
                x[i] = reset_target[i]
            sigma += 1
            radius *= growth
            last_trunc = k + 1
        if (k + 1) % stride == 0:
            rec_steps[nrec] = k + 1
            rec_sigmas[nrec] = sigma
            for i in range(d):
                rec_x[nrec, i] = x[i]
            nrec += 1

    return (rec_steps_arr[:nrec].copy(), rec_sigmas_arr[:nrec].copy(),
            rec_x_arr[:nrec].copy(), events, x_arr, int(sigma), int(last_trunc))


def run_plain_native(double[:, ::1] a, double[::1] root, bint cubic,
                     double[:, ::1] chol, bint state_dep,
                     double[::1] x0, double[::1] gains,
                     double[:, ::1] normals, Py_ssize_t stride,
                     double threshold):
    """Iterate the untruncated recursion, stopping at the blow-up threshold.

    Returns (rec_steps, rec_x, x_final, diverged_at, diverge_norm); the run
    diverged iff diverged_at >= 0.
    """
    cdef Py_ssize_t n = gains.shape[0]
    cdef Py_ssize_t d = root.shape[0]
    cdef Py_ssize_t k, i, j, nrec = 0
    cdef double r2, acc, scale, dist, g, diff, norm2, norm, prev_norm

    x_arr = np.array(x0, dtype=np.float64, copy=True)
    xr_arr = np.empty(d, dtype=np.float64)
    obs_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] xr = xr_arr
    cdef double[::1] obs = obs_arr

    rec_steps_arr = np.empty(n // stride + 1, dtype=np.int64)
    rec_x_arr = np.empty((n // stride + 1, d), dtype=np.float64)
    cdef long[::1] rec_steps = rec_steps_arr
    cdef double[:, ::1] rec_x = rec_x_arr

    norm2 = 0.0
    for i in range(d):
        norm2 += x[i] * x[i]
    prev_norm = sqrt(norm2)

    for k in range(n):
        r2 = 0.0
        for i in range(d):
            diff = x[i] - root[i]
            xr[i] = diff
            r2 += diff * diff
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += a[i, j] * xr[j]
            obs[i] = acc
        if cubic:
            for i in range(d):
                obs[i] = obs[i] + r2 * xr[i]
        scale = 1.0
        if state_dep:
            dist = sqrt(r2)
            if dist < 1.0:
                scale = 1.0 + dist
            else:
                scale = 2.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += chol[i, j] * normals[k, j]
            obs[i] = obs[i] + scale * acc
        g = gains[k]
        norm2 = 0.0
        for i in range(d):
            x[i] = x[i] - g * obs[i]
            norm2 += x[i] * x[i]
        if not isfinite(norm2):
            return (rec_steps_arr[:nrec].copy(), rec_x_arr[:nrec].copy(),
                    x_arr, k + 1, prev_norm)
        norm = sqrt(norm2)
        if norm >= threshold:
            return (rec_steps_arr[:nrec].copy(), rec_x_arr[:nrec].copy(),
                    x_arr, k + 1, norm)
        prev_norm = norm
        if (k + 1) % stride == 0:
            rec_steps[nrec] = k + 1
            for i in range(d):
                rec_x[nrec, i] = x[i]
            nrec += 1

    return (rec_steps_arr[:nrec].copy(), rec_x_arr[:nrec].copy(),
            x_arr, -1, prev_norm)
