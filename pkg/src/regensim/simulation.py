"""Path and skeleton simulation.

OU paths are exact on every time node. The weak-drift diffusion and the
jump SDE use Euler steps; skeleton states of Euler paths are read at the
nearest grid point to the left of each jump time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import DomainError, SimulationDivergedError, UnsupportedModelError
from .functions import BoundedFunction, pack
from .models import JumpSdeModel, OuModel, WeakDriftDiffusionModel

log = logging.getLogger(__name__)

# a run fails when more than this fraction of replicas diverge
MAX_DIVERGED_FRACTION = 1e-4


def replica_seeds(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    """32-bit seeds for replicas ``start..stop-1``, independent of batching."""
    return np.array(
        [np.random.SeedSequence([int(seed), int(stream), i]).generate_state(1)[0] for i in range(start, stop)],
        dtype=np.int64,
    )


def kernel_params(model):
    """``(code, p0, p1, p2)`` understood by the compiled kernels."""
    if isinstance(model, OuModel):
        return K.OU, float(model.theta), float(model.sigma), 0.0
    if isinstance(model, WeakDriftDiffusionModel) and model.dim == 1:
        return K.WEAKDRIFT, float(model.r_drift), float(model.l_exp), float(model.smoothing)
    raise UnsupportedModelError(f"no compiled kernel for {getattr(model, 'kind', model)} (dim {getattr(model, 'dim', '?')})")


@dataclass
class Path:
    times: np.ndarray
    states: np.ndarray


@dataclass
class Skeleton:
    """Rate-1 Poisson skeleton: ``jump_times[0] = 0`` and the states there."""

    jump_times: np.ndarray
    states: np.ndarray
    colour_uniforms: np.ndarray | None = None


def _check_step(horizon, step):
    if not step > 0:
        raise DomainError("step must be positive")
    if not horizon >= 0:
        raise DomainError("horizon must be nonnegative")


def sample_path(model, x0, horizon: float, step: float, seed: int = 0) -> Path:
    """Simulate ``X`` on the grid ``0, step, ..., horizon``."""
    _check_step(horizon, step)
    n_steps = int(round(horizon / step))
    times = np.arange(n_steps + 1) * step
    if isinstance(model, JumpSdeModel):
        states = _jump_path(model, float(x0), n_steps, step, np.random.default_rng(seed))
    elif isinstance(model, WeakDriftDiffusionModel) and model.dim > 1:
        states = _multi_dim_euler(model, np.asarray(x0, dtype=float), n_steps, step, np.random.default_rng(seed))
    else:
        code, p0, p1, p2 = kernel_params(model)
        seeds = replica_seeds(seed, 0, 0, 1)
        states = K.path_batch(code, p0, p1, p2, np.array([float(x0)]), n_steps, step, seeds)[0]
    bad = ~np.isfinite(states) if states.ndim == 1 else ~np.all(np.isfinite(states), axis=-1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise SimulationDivergedError(f"path diverged at t={times[k]:.6g}", time=float(times[k]))
    return Path(times, states)


def _multi_dim_euler(model, x0, n_steps, step, rng):
    if x0.shape != (model.dim,):
        raise DomainError(f"x0 must have shape ({model.dim},)")
    out = np.full((n_steps + 1, model.dim), np.nan)
    x = x0.copy()
    out[0] = x
    sq = math.sqrt(step)
    for k in range(1, n_steps + 1):
        x = x + model.drift(x) * step + sq * rng.standard_normal(model.dim)
        if not np.all(np.abs(x) < K.DIVERGE_LIMIT):
            break
        out[k] = x
    return out


def jump_euler_step(model: JumpSdeModel, x: np.ndarray, dt: float, rng: np.random.Generator) -> np.ndarray:
    """One Euler step for many states: drift, compensator, then the jumps in ``(0, dt]``."""
    x = np.asarray(x, dtype=float)
    comp = model.compensator(0.0) if np.all(x == x.flat[0]) else None
    if comp is None:
        comp_vals = np.array([model.compensator(float(v)) for v in x.ravel()]).reshape(x.shape)
    else:
        comp_vals = comp
    mass = model.levy.total_mass
    y = x + (model.drift(x) - comp_vals) * dt
    counts = rng.poisson(mass * dt, size=x.shape)
    k = 0
    while np.any(counts > k):
        idx = np.nonzero(counts > k)
        u = model.levy.sample_jumps(len(idx[0]), rng)
        y[idx] = y[idx] + model.jump_coeff(y[idx], u)
        k += 1
    return y


def _jump_path(model, x0, n_steps, step, rng):
    out = np.full(n_steps + 1, np.nan)
    x = np.array([x0])
    out[0] = x0
    for k in range(1, n_steps + 1):
        x = jump_euler_step(model, x, step, rng)
        if not abs(x[0]) < K.DIVERGE_LIMIT:
            break
        out[k] = x[0]
    return out


def mc_generator_estimate(model: JumpSdeModel, V, x: float, h: float, n: int, seed: int = 0):
    """Monte-Carlo ``(E_x V(X_h) - V(x)) / h`` with its standard error."""
    rng = np.random.default_rng(seed)
    xs = np.full(n, float(x))
    y = jump_euler_step(model, xs, h, rng)
    diff = (np.asarray(V(y)) - float(V(np.asarray(x)))) / h
    return float(np.mean(diff)), float(np.std(diff, ddof=1) / math.sqrt(n))


def sample_skeleton(model, x0, horizon: float, step: float, seed: int = 0) -> Skeleton:
    """Skeleton of one path; gaps are i.i.d. Exp(1), independent of the path."""
    _check_step(horizon, step)
    batch = run_skeletons(model, np.array([float(x0)]), horizon, step, replica_seeds(seed, 0, 0, 1))
    if batch.diverged[0] >= 0:
        raise SimulationDivergedError(f"path diverged at t={batch.diverged[0]:.6g}", time=float(batch.diverged[0]))
    n = batch.counts[0]
    return Skeleton(batch.jump_times[0, :n].copy(), batch.states[0, :n].copy(), batch.uniforms[0, :n].copy())


@dataclass
class SkeletonBatch:
    """Raw kernel output for a batch of replicas (rows padded with NaN)."""

    jump_times: np.ndarray
    states: np.ndarray
    uniforms: np.ndarray
    cum_f: np.ndarray
    checkpoint_f: np.ndarray
    counts: np.ndarray
    diverged: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.diverged < 0


def skeleton_capacity(horizon: float) -> int:
    return int(horizon + 10.0 * math.sqrt(horizon) + 50)


def run_skeletons(model, x0s, horizon, step, seeds, functions=(), checkpoints=()) -> SkeletonBatch:
    """Simulate one skeleton per seed with integrals of ``functions`` along the path."""
    _check_step(horizon, step)
    code, p0, p1, p2 = kernel_params(model)
    fs = list(functions) or [BoundedFunction("one")]
    fcodes, fparams = pack(fs)
    cps = np.asarray(sorted(checkpoints), dtype=float)
    if len(cps) and cps[-1] > horizon * (1 + 1e-12):
        raise DomainError("checkpoints must not exceed the horizon")
    cap = skeleton_capacity(horizon)
    x0s = np.asarray(x0s, dtype=float)
    out = K.skeleton_batch(code, p0, p1, p2, x0s, float(horizon), float(step), np.asarray(seeds, dtype=np.int64),
                           cap, fcodes, fparams, cps)
    batch = SkeletonBatch(*out)
    if np.any(batch.counts == -2):
        raise SimulationDivergedError("skeleton buffer overflow (more jumps than capacity)")
    return batch


def check_divergence(n_diverged: int, n_total: int, first_time: float | None = None):
    """Raise when too many replicas diverged; otherwise log the count."""
    if n_diverged == 0:
        return
    if n_diverged > MAX_DIVERGED_FRACTION * n_total:
        raise SimulationDivergedError(
            f"{n_diverged} of {n_total} replicas diverged", time=first_time)
    log.warning("%d of %d replicas diverged and were dropped", n_diverged, n_total)


def hitting_times(model, x0s, delta, radius, step, max_time, seeds) -> np.ndarray:
    """Grid hitting times ``tau_B(delta)`` of the ball ``|x| <= radius``."""
    _check_step(max_time, step)
    code, p0, p1, p2 = kernel_params(model)
    return K.hitting_batch(code, p0, p1, p2, np.asarray(x0s, dtype=float), float(delta), float(radius),
                           float(step), float(max_time), np.asarray(seeds, dtype=np.int64))
