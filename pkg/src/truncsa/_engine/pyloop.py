"""Pure-Python iteration loops.

``run_truncated_native`` and ``run_plain_native`` mirror the compiled
kernels in ``fastloop.pyx`` operation for operation, so both engines produce
bit-identical trajectories.  The ``*_generic`` variants drive an arbitrary
observation callable and are the only path for problems without a structured
native form.
"""

from __future__ import annotations

import math

import numpy as np


def run_truncated_native(a, root, cubic, chol, state_dep, center, r0, growth,
                         reset_target, x0, gains, normals, stride):
    a = [[float(v) for v in row] for row in np.asarray(a)]
    chol = [[float(v) for v in row] for row in np.asarray(chol)]
    root = [float(v) for v in np.asarray(root)]
    center = [float(v) for v in np.asarray(center)]
    reset_target = [float(v) for v in np.asarray(reset_target)]
    x = [float(v) for v in np.asarray(x0)]
    gains_l = [float(v) for v in np.asarray(gains)]
    normals_l = np.asarray(normals).tolist()
    n = len(gains_l)
    d = len(root)

    sigma = 0
    last_trunc = -1
    radius = float(r0)
    growth = float(growth)

    rec_steps = []
    rec_sigmas = []
    rec_x = []
    events = []

    for k in range(n):
        z = normals_l[k]
        r2 = 0.0
        xr = [0.0] * d
        for i in range(d):
            diff = x[i] - root[i]
            xr[i] = diff
            r2 += diff * diff
        obs = [0.0] * d
        for i in range(d):
            acc = 0.0
            row = a[i]
            for j in range(d):
                acc += row[j] * xr[j]
            obs[i] = acc
        if cubic:
            for i in range(d):
                obs[i] = obs[i] + r2 * xr[i]
        scale = 1.0
        if state_dep:
            dist = math.sqrt(r2)
            if dist < 1.0:
                scale = 1.0 + dist
            else:
                scale = 2.0
        for i in range(d):
            acc = 0.0
            row = chol[i]
            for j in range(d):
                acc += row[j] * z[j]
            obs[i] = obs[i] + scale * acc
        g = gains_l[k]
        esc2 = 0.0
        xh = [0.0] * d
        for i in range(d):
            v = x[i] - g * obs[i]
            xh[i] = v
            diff = v - center[i]
            esc2 += diff * diff
        if not math.isfinite(esc2):
            raise ValueError(f"non-finite update at step {k + 1}")
        if math.sqrt(esc2) <= radius:
            x = xh
        else:
            p = [obs[i] + (reset_target[i] - x[i]) / g for i in range(d)]
            events.append((k + 1, sigma + 1, list(xh), p))
            x = list(reset_target)
            sigma += 1
            radius *= growth
            last_trunc = k + 1
        if (k + 1) % stride == 0:
            rec_steps.append(k + 1)
            rec_sigmas.append(sigma)
            rec_x.append(list(x))

    return (np.asarray(rec_steps, dtype=np.int64),
            np.asarray(rec_sigmas, dtype=np.int64),
            np.asarray(rec_x, dtype=np.float64).reshape(len(rec_steps), d),
            events, np.asarray(x, dtype=np.float64), sigma, last_trunc)


def run_plain_native(a, root, cubic, chol, state_dep, x0, gains, normals,
                     stride, threshold):
    a = [[float(v) for v in row] for row in np.asarray(a)]
    chol = [[float(v) for v in row] for row in np.asarray(chol)]
    root = [float(v) for v in np.asarray(root)]
    x = [float(v) for v in np.asarray(x0)]
    gains_l = [float(v) for v in np.asarray(gains)]
    normals_l = np.asarray(normals).tolist()
    threshold = float(threshold)
    n = len(gains_l)
    d = len(root)

    rec_steps = []
    rec_x = []

    def _result(diverged_at, norm):
        return (np.asarray(rec_steps, dtype=np.int64),
                np.asarray(rec_x, dtype=np.float64).reshape(len(rec_steps), d),
                np.asarray(x, dtype=np.float64), diverged_at, norm)

    norm2 = 0.0
    for i in range(d):
        norm2 += x[i] * x[i]
    prev_norm = math.sqrt(norm2)

    for k in range(n):
        z = normals_l[k]
        r2 = 0.0
        xr = [0.0] * d
        for i in range(d):
            diff = x[i] - root[i]
            xr[i] = diff
            r2 += diff * diff
        obs = [0.0] * d
        for i in range(d):
            acc = 0.0
            row = a[i]
            for j in range(d):
                acc += row[j] * xr[j]
            obs[i] = acc
        if cubic:
            for i in range(d):
                obs[i] = obs[i] + r2 * xr[i]
        scale = 1.0
        if state_dep:
            dist = math.sqrt(r2)
            if dist < 1.0:
                scale = 1.0 + dist
            else:
                scale = 2.0
        for i in range(d):
            acc = 0.0
            row = chol[i]
            for j in range(d):
                acc += row[j] * z[j]
            obs[i] = obs[i] + scale * acc
        g = gains_l[k]
        norm2 = 0.0
        for i in range(d):
            x[i] = x[i] - g * obs[i]
            norm2 += x[i] * x[i]
        if not math.isfinite(norm2):
            return _result(k + 1, prev_norm)
        norm = math.sqrt(norm2)
        if norm >= threshold:
            return _result(k + 1, norm)
        prev_norm = norm
        if (k + 1) % stride == 0:
            rec_steps.append(k + 1)
            rec_x.append(list(x))

    return _result(-1, prev_norm)


def run_truncated_generic(observe, rng, center, r0, growth, reset_target, x0,
                          gains, stride):
    """Truncated loop driving an arbitrary ``observe(x, rng)`` callable."""
    center = np.asarray(center, dtype=np.float64)
    reset_target = np.asarray(reset_target, dtype=np.float64)
    x = np.array(x0, dtype=np.float64, copy=True)
    d = x.size
    n = len(gains)

    sigma = 0
    last_trunc = -1
    radius = float(r0)

    rec_steps = []
    rec_sigmas = []
    rec_x = []
    events = []

    for k in range(n):
        obs = np.asarray(observe(x, rng), dtype=np.float64)
        if obs.shape != (d,) or not np.all(np.isfinite(obs)):
            raise ValueError(f"observation model returned a bad value at step {k + 1}")
        g = float(gains[k])
        xh = x - g * obs
        diff = xh - center
        if math.sqrt(float(diff @ diff)) <= radius:
            x = xh
        else:
            p = obs + (reset_target - x) / g
            events.append((k + 1, sigma + 1, xh.tolist(), p.tolist()))
            x = reset_target.copy()
            sigma += 1
            radius *= growth
            last_trunc = k + 1
        if (k + 1) % stride == 0:
            rec_steps.append(k + 1)
            rec_sigmas.append(sigma)
            rec_x.append(x.tolist())

    return (np.asarray(rec_steps, dtype=np.int64),
            np.asarray(rec_sigmas, dtype=np.int64),
            np.asarray(rec_x, dtype=np.float64).reshape(len(rec_steps), d),
            events, x, sigma, last_trunc)


def run_plain_generic(observe, rng, x0, gains, stride, threshold):
    """Untruncated loop driving an arbitrary ``observe(x, rng)`` callable."""
    x = np.array(x0, dtype=np.float64, copy=True)
    d = x.size
    n = len(gains)
    threshold = float(threshold)

    rec_steps = []
    rec_x = []

    def _result(diverged_at, norm):
        return (np.asarray(rec_steps, dtype=np.int64),
                np.asarray(rec_x, dtype=np.float64).reshape(len(rec_steps), d),
                x, diverged_at, norm)

    prev_norm = math.sqrt(float(x @ x))

    for k in range(n):
        obs = np.asarray(observe(x, rng), dtype=np.float64)
        g = float(gains[k])
        x = x - g * obs
        norm2 = float(x @ x)
        if not math.isfinite(norm2):
            return _result(k + 1, prev_norm)
        norm = math.sqrt(norm2)
        if norm >= threshold:
            return _result(k + 1, norm)
        prev_norm = norm
        if (k + 1) % stride == 0:
            rec_steps.append(k + 1)
            rec_x.append(x.tolist())

    return _result(-1, prev_norm)
