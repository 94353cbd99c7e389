"""Compiled per-replica simulation kernels.

Every replica reseeds the (thread-local) numba generator from its own seed
before drawing anything, so results do not depend on how replicas are
spread over threads.
"""

import math

import numpy as np
from numba import config, njit, prange

# the bundled TBB is often too old; prefer OpenMP, fall back to workqueue
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

OU = 0
WEAKDRIFT = 1

DIVERGE_LIMIT = 1e150


@njit(cache=True)
def eval_f(code, a, x):
    if code == 0:
        return 1.0
    if code == 1:
        return 0.0
    if code == 2:
        return 1.0 if x <= a else 0.0
    if code == 3:
        return min(x * x, a)
    if x > a:
        return a
    if x < -a:
        return -a
    return x


@njit(cache=True)
def _drift(model, p0, p1, p2, x):
    # weak drift: b(x) = -r sign(x) |x|**l / (|x| + eps)
    if model == OU:
        return -p0 * x
    ax = abs(x)
    if ax == 0.0:
        return 0.0
    v = p0 * ax ** (p1 + 1.0) / (ax + p2) / ax
    return -v if x > 0 else v


@njit(cache=True)
def _advance(model, p0, p1, p2, x, dt):
    """One transition over ``dt``: exact for OU, Euler otherwise."""
    if model == OU:
        e = math.exp(-p0 * dt)
        sd = math.sqrt(-p1 * p1 * math.expm1(-2.0 * p0 * dt) / (2.0 * p0))
        return x * e + sd * np.random.standard_normal()
    return x + _drift(model, p0, p1, p2, x) * dt + math.sqrt(dt) * np.random.standard_normal()


@njit(cache=True)
def _skeleton_one(model, p0, p1, p2, x0, horizon, step, fcodes, fparams, checkpoints,
                  jt, xs, ws, cumf, cpf):
    """Simulate one replica. Returns (number of skeleton points, divergence time or -1).

    ``jt[0] = 0`` and ``xs[0] = x0``; further entries are the rate-1 Poisson
    jump times up to the horizon with the state there. ``cumf[n, j]`` is the
    trapezoid integral of ``f_j`` over ``[0, jt[n]]``; ``cpf[c, j]`` the same at
    ``checkpoints[c]``. Returns -2 as count when the buffers overflow.
    """
    cap = jt.shape[0]
    nf = fcodes.shape[0]
    ncp = checkpoints.shape[0]
    t = 0.0
    x = x0
    cum = np.zeros(nf)
    fx = np.empty(nf)
    inc = np.empty(nf)
    for j in range(nf):
        fx[j] = eval_f(fcodes[j], fparams[j], x)
    jt[0] = 0.0
    xs[0] = x0
    ws[0] = np.random.random()
    for j in range(nf):
        cumf[0, j] = 0.0
    n = 1
    next_jump = np.random.exponential(1.0)
    ic = 0
    while ic < ncp and checkpoints[ic] <= 0.0:
        for j in range(nf):
            cpf[ic, j] = 0.0
        ic += 1
    k = 0
    while t < horizon:
        k += 1
        t_grid = min(k * step, horizon)
        if model == OU:
            # exact sub-steps through every event time inside the grid step
            while True:
                t_evt = t_grid
                is_jump = False
                if next_jump <= t_evt:
                    t_evt = next_jump
                    is_jump = True
                if ic < ncp and checkpoints[ic] < t_evt:
                    t_evt = checkpoints[ic]
                    is_jump = False
                dt = t_evt - t
                if dt > 0.0:
                    xn = _advance(model, p0, p1, p2, x, dt)
                    if not (abs(xn) < DIVERGE_LIMIT):
                        return n, t_evt
                    for j in range(nf):
                        fn = eval_f(fcodes[j], fparams[j], xn)
                        cum[j] += 0.5 * dt * (fx[j] + fn)
                        fx[j] = fn
                    x = xn
                    t = t_evt
                if ic < ncp and checkpoints[ic] == t_evt:
                    for j in range(nf):
                        cpf[ic, j] = cum[j]
                    ic += 1
                if is_jump:
                    if n >= cap:
                        return -2, -1.0
                    jt[n] = t
                    xs[n] = x
                    ws[n] = np.random.random()
                    for j in range(nf):
                        cumf[n, j] = cum[j]
                    n += 1
                    next_jump = t + np.random.exponential(1.0)
                if t_evt >= t_grid and not is_jump:
                    break
                if t >= t_grid:
                    break
        else:
            dt = t_grid - t
            xn = _advance(model, p0, p1, p2, x, dt)
            if not (abs(xn) < DIVERGE_LIMIT):
                return n, t_grid
            for j in range(nf):
                fn = eval_f(fcodes[j], fparams[j], xn)
                inc[j] = 0.5 * dt * (fx[j] + fn)
                fx[j] = fn
            # events in (t, t_grid]: state from the left grid point,
            # cumulative integrals interpolated linearly
            while True:
                take_cp = ic < ncp and checkpoints[ic] <= t_grid and checkpoints[ic] <= next_jump
                if take_cp:
                    frac = (checkpoints[ic] - t) / dt
                    for j in range(nf):
                        cpf[ic, j] = cum[j] + frac * inc[j]
                    ic += 1
                elif next_jump <= t_grid:
                    if n >= cap:
                        return -2, -1.0
                    frac = (next_jump - t) / dt
                    jt[n] = next_jump
                    xs[n] = x
                    ws[n] = np.random.random()
                    for j in range(nf):
                        cumf[n, j] = cum[j] + frac * inc[j]
                    n += 1
                    next_jump = next_jump + np.random.exponential(1.0)
                else:
                    break
            for j in range(nf):
                cum[j] += inc[j]
            x = xn
            t = t_grid
    while ic < ncp:
        for j in range(nf):
            cpf[ic, j] = cum[j]
        ic += 1
    return n, -1.0


@njit(parallel=True, cache=True)
def skeleton_batch(model, p0, p1, p2, x0s, horizon, step, seeds, cap, fcodes, fparams, checkpoints):
    reps = x0s.shape[0]
    nf = fcodes.shape[0]
    ncp = checkpoints.shape[0]
    jt = np.full((reps, cap), np.nan)
    xs = np.full((reps, cap), np.nan)
    ws = np.full((reps, cap), np.nan)
    cumf = np.full((reps, cap, nf), np.nan)
    cpf = np.full((reps, ncp, nf), np.nan)
    counts = np.zeros(reps, dtype=np.int64)
    diverged = np.full(reps, -1.0)
    for i in prange(reps):
        np.random.seed(seeds[i])
        c, d = _skeleton_one(model, p0, p1, p2, x0s[i], horizon, step, fcodes, fparams,
                             checkpoints, jt[i], xs[i], ws[i], cumf[i], cpf[i])
        counts[i] = c
        diverged[i] = d
    return jt, xs, ws, cumf, cpf, counts, diverged


@njit(parallel=True, cache=True)
def path_batch(model, p0, p1, p2, x0s, n_steps, step, seeds):
    """States on the uniform grid ``k * step``; NaN after divergence."""
    reps = x0s.shape[0]
    out = np.full((reps, n_steps + 1), np.nan)
    for i in prange(reps):
        np.random.seed(seeds[i])
        x = x0s[i]
        out[i, 0] = x
        for k in range(1, n_steps + 1):
            x = _advance(model, p0, p1, p2, x, step)
            if not (abs(x) < DIVERGE_LIMIT):
                break
            out[i, k] = x
    return out


@njit(parallel=True, cache=True)
def hitting_batch(model, p0, p1, p2, x0s, delta, radius, step, max_time, seeds):
    """First grid time ``t >= delta`` with ``|X_t| <= radius``; NaN if not reached."""
    reps = x0s.shape[0]
    out = np.full(reps, np.nan)
    for i in prange(reps):
        np.random.seed(seeds[i])
        x = x0s[i]
        t = 0.0
        k = 0
        if delta <= 0.0 and abs(x) <= radius:
            out[i] = 0.0
            continue
        while t < max_time:
            k += 1
            t_new = k * step
            x = _advance(model, p0, p1, p2, x, t_new - t)
            t = t_new
            if not (abs(x) < DIVERGE_LIMIT):
                break
            if t >= delta - 1e-12 * step and abs(x) <= radius:
                out[i] = t
                break
    return out


@njit(cache=True)
def schedule_indices(jt, bells, n):
    """Skeleton indices of (S_k, R_k).

    ``S`` is the first bell strictly after the previous ``R`` (``R_0 = 0``),
    ``R`` the next skeleton point; a trailing bell with no successor is dropped.
    """
    s_idx = np.empty(n, dtype=np.int64)
    r_idx = np.empty(n, dtype=np.int64)
    m = 0
    last_r = 0.0
    for k in range(n):
        if bells[k] and jt[k] > last_r:
            if k + 1 >= n:
                break
            s_idx[m] = k
            r_idx[m] = k + 1
            last_r = jt[k + 1]
            m += 1
    return s_idx[:m], r_idx[:m]
