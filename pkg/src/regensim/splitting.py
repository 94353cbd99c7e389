"""Minorization of the resolvent kernel, the split kernel and regeneration times.

Bells are drawn retrospectively: given a skeleton visit ``x`` in ``C`` followed
by ``x'``, the visit rings with probability ``alpha nu(x') / u1(x, x')``. This
is the conditional law of the colour event ``{colour <= alpha}`` given both
endpoints when the next state is drawn from the split kernel, so the joint
law of path, skeleton and bells is the split-chain law.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import _kernels as K
from .errors import DegenerateMinorizationError, DomainError, RejectionStallError
from .resolvent import invert_piecewise_linear, resolvent_density, resolvent_kernel, sample_resolvent

log = logging.getLogger(__name__)

MIN_ALPHA = 1e-3
DEFLATE = 0.99


@dataclass(eq=False)
class Minorization:
    """``u1(x, y) >= alpha 1_C(x) nu(y)`` with ``C = [-c_radius, c_radius]``.

    ``nu`` is tabulated on ``nu_grid`` (uniform on the window) and linearly
    interpolated; it vanishes outside the window.
    """

    model: object
    c_radius: float
    window: float
    alpha: float
    alpha_raw: float
    nu_grid: np.ndarray
    nu_values: np.ndarray
    clamp_count: int = field(default=0)

    def __post_init__(self):
        self._cdf = np.concatenate(
            [[0.0], np.cumsum(0.5 * (self.nu_values[1:] + self.nu_values[:-1]) * np.diff(self.nu_grid))]
        )

    @property
    def set_c(self) -> tuple[float, float]:
        return (-self.c_radius, self.c_radius)

    def in_c(self, x):
        return np.abs(np.asarray(x, dtype=float)) <= self.c_radius

    def nu(self, y):
        y = np.asarray(y, dtype=float)
        out = np.interp(y, self.nu_grid, self.nu_values, left=0.0, right=0.0)
        return float(out) if out.ndim == 0 else out

    def nu_cdf(self, y):
        y = np.asarray(y, dtype=float)
        g, d, c = self.nu_grid, self.nu_values, self._cdf
        idx = np.clip(np.searchsorted(g, y, side="right") - 1, 0, len(g) - 2)
        z = np.clip(y - g[idx], 0.0, g[idx + 1] - g[idx])
        slope = (d[idx + 1] - d[idx]) / (g[idx + 1] - g[idx])
        out = c[idx] + d[idx] * z + 0.5 * slope * z * z
        out = np.where(y < g[0], 0.0, np.where(y >= g[-1], c[-1], out))
        return float(out) if out.ndim == 0 else out

    @property
    def nu_mass(self) -> float:
        return float(self._cdf[-1])

    def sample_nu(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Exact draws from the piecewise-linear ``nu`` table."""
        return invert_piecewise_linear(self.nu_grid, self.nu_values, self._cdf, rng.random(n) * self._cdf[-1])

    def u1(self, x, y):
        return resolvent_kernel(self.model)(x, y)

    def verify(self, n_x: int = 64, n_y: int | None = None, exact: bool = True) -> float:
        """Smallest ``u1(x, y) - alpha nu(y)`` over a C-by-window grid.

        ``exact`` evaluates ``u1`` with :func:`resolvent_density` rather than
        the tabulated fast accessor.
        """
        xs = np.linspace(-self.c_radius, self.c_radius, n_x)
        ys = self.nu_grid if n_y is None else np.linspace(-self.window, self.window, n_y)
        dens = resolvent_density if exact else (lambda m, a, b: self.u1(a, b))
        u = dens(self.model, xs[:, None], ys[None, :])
        return float(np.min(u - self.alpha * self.nu(ys)[None, :]))


def compute_minorization(model, c_radius: float, window: float = 8.0, n_grid: int = 4096,
                         n_c: int = 65, alpha_cap: float = 0.99) -> Minorization:
    """Build ``(alpha, nu)`` from the infimum of ``u1(x, .)`` over a grid of ``C``.

    ``alpha_raw = int inf_x u1(x, y) dy`` over the window, ``nu`` is the
    normalised infimum and ``alpha = min(alpha_cap, 0.99 alpha_raw)``.
    """
    if not c_radius > 0:
        raise DomainError("C must be a nonempty interval (c_radius > 0)")
    if not window > 0:
        raise DomainError("window half-width must be positive")
    if not (0 < alpha_cap < 1):
        raise DomainError("alpha_cap must lie in (0, 1)")
    ys = np.linspace(-window, window, n_grid)
    xs = np.linspace(-c_radius, c_radius, n_c)
    u = resolvent_density(model, xs[:, None], ys[None, :])
    low = np.min(u, axis=0)
    alpha_raw = float(trapezoid(low, ys))
    if alpha_raw < MIN_ALPHA:
        raise DegenerateMinorizationError(
            f"minorization mass {alpha_raw:.3g} < {MIN_ALPHA} (C too large or window too small)")
    alpha = min(alpha_cap, DEFLATE * alpha_raw)
    return Minorization(model, float(c_radius), float(window), alpha, alpha_raw, ys, low / alpha_raw)


def bell_probability(x, x_next, mz: Minorization):
    """``alpha nu(x') / u1(x, x')`` on C-visits, 0 elsewhere; clamped to [0, 1].

    Clamps that actually bind are added to ``mz.clamp_count``.
    """
    x = np.asarray(x, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    x, x_next = np.broadcast_arrays(x, x_next)
    out = np.zeros(x.shape)
    nu = mz.nu(x_next)
    live = mz.in_c(x) & (nu > 0)
    if np.any(live):
        u = np.asarray(mz.u1(x[live], x_next[live]), dtype=float)
        p = mz.alpha * nu[live] / u
        over = p > 1.0
        if np.any(over):
            mz.clamp_count += int(np.count_nonzero(over))
            log.warning("bell probability clamped at %d points", int(np.count_nonzero(over)))
        out[live] = np.clip(p, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _colours(uniforms, probs, in_c, alpha):
    """Realised colours: bells map to ``[0, alpha]``, other C-visits to ``(alpha, 1]``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bell = in_c & (uniforms < probs)
        ring = alpha * uniforms / probs
        quiet = alpha + (1.0 - alpha) * (uniforms - probs) / (1.0 - probs)
    col = np.where(bell, ring, np.where(in_c, quiet, uniforms))
    return bell, np.clip(col, 0.0, 1.0)


@dataclass
class SplitSkeleton:
    jump_times: np.ndarray
    states: np.ndarray
    colours: np.ndarray
    bells: np.ndarray
    c_visit_indices: np.ndarray


@dataclass
class RegenerationSchedule:
    s_times: np.ndarray
    r_times: np.ndarray
    r_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def complete_cycles(self) -> int:
        return max(len(self.r_times) - 1, 0)


def colour_skeleton(skel, mz: Minorization, rng: np.random.Generator | None = None) -> SplitSkeleton:
    """Attach colours and bells to a skeleton.

    Uses the skeleton's own uniforms when present (set by the simulator),
    otherwise draws them from ``rng``.
    """
    times = np.asarray(skel.jump_times, dtype=float)
    states = np.asarray(skel.states, dtype=float)
    n = len(times)
    if n < 2:
        raise DomainError("colouring needs at least two skeleton points")
    w = getattr(skel, "colour_uniforms", None)
    if w is None:
        if rng is None:
            raise DomainError("no colour uniforms on the skeleton and no rng given")
        w = rng.random(n)
    probs = np.zeros(n)
    probs[:-1] = bell_probability(states[:-1], states[1:], mz)
    in_c = mz.in_c(states)
    # the last point has no successor inside the horizon and cannot ring
    in_c_live = in_c.copy()
    in_c_live[-1] = False
    bells, colours = _colours(np.asarray(w, dtype=float), probs, in_c_live, mz.alpha)
    return SplitSkeleton(times, states, colours, bells, np.nonzero(in_c)[0])


def regeneration_schedule(ss: SplitSkeleton) -> RegenerationSchedule:
    """``S_{n+1}``: first bell strictly after ``R_n`` (``R_0 = 0``); ``R_{n+1}``: the next skeleton point."""
    times = np.asarray(ss.jump_times, dtype=float)
    bells = np.asarray(ss.bells, dtype=np.bool_)
    s_idx, r_idx = K.schedule_indices(times, bells, len(times))
    return RegenerationSchedule(times[s_idx], times[r_idx], r_idx)


def counting_process(rs: RegenerationSchedule, t):
    """``N_t = #{n >= 1 : R_n <= t}``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("t must be nonnegative")
    out = np.searchsorted(rs.r_times, t_arr, side="right")
    return int(out) if out.ndim == 0 else out


def batch_bells(batch, mz: Minorization) -> np.ndarray:
    """Bell flags for every skeleton point of a :class:`SkeletonBatch`."""
    xs = batch.states
    nxt = np.full_like(xs, np.nan)
    nxt[:, :-1] = xs[:, 1:]
    valid = np.isfinite(xs) & np.isfinite(nxt) & mz.in_c(np.nan_to_num(xs, nan=np.inf))
    bells = np.zeros(xs.shape, dtype=np.bool_)
    if np.any(valid):
        p = bell_probability(xs[valid], nxt[valid], mz)
        bells[valid] = batch.uniforms[valid] < p
    return bells


def split_kernel_sample(x: float, u, mz: Minorization, rng: np.random.Generator,
                        max_proposals: int = 100_000) -> np.ndarray:
    """Draw the next skeleton state from the split kernel for each colour in ``u``.

    ``x`` in C and ``u <= alpha``: ``nu``; ``x`` in C and ``u > alpha``: the
    residual ``(u1(x, .) - alpha nu) / (1 - alpha)`` by rejection from
    ``u1(x, .)``; ``x`` outside C: ``u1(x, .)``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((u < 0) | (u > 1)):
        raise DomainError("colour must lie in [0, 1]")
    out = np.empty(len(u))
    if not mz.in_c(x):
        out[:] = sample_resolvent(mz.model, x, len(u), rng)
        return out
    ring = u <= mz.alpha
    out[ring] = mz.sample_nu(int(ring.sum()), rng)
    need = int((~ring).sum())
    got = []
    proposals = accepted = 0
    while need > 0:
        batch = max(64, int(need / max(1.0 - mz.alpha, 1e-3) * 1.2))
        y = sample_resolvent(mz.model, x, batch, rng)
        acc = rng.random(batch) * mz.u1(np.full(batch, x), y) >= mz.alpha * mz.nu(y)
        proposals += batch
        take = y[acc][:need]
        accepted += int(acc.sum())
        got.append(take)
        need -= len(take)
        if proposals >= max_proposals and accepted < 1e-4 * proposals:
            raise RejectionStallError(f"residual acceptance {accepted}/{proposals}")
    if got:
        out[~ring] = np.concatenate(got)
    return out
