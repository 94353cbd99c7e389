"""Cycle statistics, occupation estimates, moment envelopes and deviation curves."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from .errors import DomainError, HorizonExhaustedError, NoCyclesError, UnsupportedModelError
from .functions import BoundedFunction
from .models import OuModel, stationary_mean
from .rates import PhiSpec, RatePoly, rate_integral
from .simulation import check_divergence, hitting_times, replica_seeds, run_skeletons
from .splitting import Minorization, batch_bells

log = logging.getLogger(__name__)

# seed streams keep independent experiments from sharing random numbers
STREAM_CYCLES = 1
STREAM_ENVELOPE = 2
STREAM_HITTING = 3
STREAM_DEVIATION = 4
STREAM_CALIBRATION = 5
STREAM_TIME_AVERAGE = 6

MIN_EXCEEDANCES = 20
DEFAULT_CHUNK = 500


def _chunks(n, size):
    for start in range(0, n, size):
        yield start, min(n, start + size)


def wilson_interval(k, n, z: float = 1.96):
    """Wilson score interval for a binomial proportion (vectorised)."""
    k = np.asarray(k, dtype=float)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


@dataclass
class CycleSample:
    """Complete regeneration cycles pooled over replicas.

    ``f_integrals`` has one column per function. ``replica`` tags each cycle
    with its replica index (cycles of one replica are consecutive).
    """

    durations: np.ndarray
    f_integrals: np.ndarray
    r_integrals_first: np.ndarray
    start_states: np.ndarray
    replica: np.ndarray
    first_r_times: np.ndarray
    functions: tuple = ()
    n_replicas: int = 0
    diverged: int = 0
    c_visits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    skeleton_gaps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_cycles(self) -> int:
        return len(self.durations)


def _replica_schedules(batch, bells):
    """Yield ``(row, r_idx)`` for replicas that did not diverge."""
    for i in range(batch.counts.shape[0]):
        if batch.diverged[i] >= 0:
            continue
        n = int(batch.counts[i])
        _, r_idx = K.schedule_indices(batch.jump_times[i, :n], bells[i, :n], n)
        yield i, r_idx


def harvest_cycles(model, mz: Minorization, f, rate: RatePoly | None, horizon: float, replicas: int,
                   seed: int = 0, step: float = 1e-3, x0: float = 0.0, chunk: int = DEFAULT_CHUNK,
                   stream: int = STREAM_CYCLES, max_gaps: int = 10_000) -> CycleSample:
    """Simulate ``replicas`` paths of length ``horizon`` and collect complete cycles.

    Also keeps the C-visit counts before each bell and up to ``max_gaps``
    skeleton gaps (from the first replicas) for diagnostics.
    """
    if replicas < 1:
        raise DomainError("replicas must be >= 1")
    functions = tuple(f) if isinstance(f, (list, tuple)) else (f,)
    durs, fints, starts, reps, first_r, visits, gaps = [], [], [], [], [], [], []
    n_gaps = 0
    diverged = 0
    for a, b in _chunks(replicas, chunk):
        seeds = replica_seeds(seed, stream, a, b)
        batch = run_skeletons(model, np.full(b - a, float(x0)), horizon, step, seeds, functions)
        diverged += int(np.count_nonzero(~batch.ok))
        bells = batch_bells(batch, mz)
        visits.append(c_visits_before_bell(batch, bells, mz))
        for i, r_idx in _replica_schedules(batch, bells):
            if n_gaps < max_gaps:
                g = np.diff(batch.jump_times[i, : batch.counts[i]])[: max_gaps - n_gaps]
                gaps.append(g)
                n_gaps += len(g)
            if len(r_idx) == 0:
                continue
            first_r.append(batch.jump_times[i, r_idx[0]])
            if len(r_idx) < 2:
                continue
            t = batch.jump_times[i, r_idx]
            durs.append(np.diff(t))
            fints.append(np.diff(batch.cum_f[i, r_idx, :], axis=0))
            starts.append(batch.states[i, r_idx[:-1]])
            reps.append(np.full(len(r_idx) - 1, a + i))
    check_divergence(diverged, replicas)
    if not durs:
        raise NoCyclesError("no complete regeneration cycle within the horizon")
    first_r = np.asarray(first_r)
    r_first = rate_integral(rate, first_r) if rate is not None else np.full(len(first_r), np.nan)
    return CycleSample(np.concatenate(durs), np.concatenate(fints), np.atleast_1d(r_first),
                       np.concatenate(starts), np.concatenate(reps), first_r, functions, replicas, diverged,
                       np.concatenate(visits), np.concatenate(gaps) if gaps else np.zeros(0))


def _lag1_cov(x, replica):
    """Lag-1 autocovariance using only pairs from the same replica."""
    same = replica[1:] == replica[:-1]
    if not np.any(same):
        return 0.0
    xc = x - x.mean()
    return float(np.sum(xc[1:][same] * xc[:-1][same]) / len(x))


@dataclass
class MuEstimate:
    ell: float
    mu_f: float
    se_ell: float
    se_mu: float
    n_cycles: int


def estimate_mu(cs: CycleSample, which: int = 0) -> MuEstimate:
    """Ratio estimator ``mu(f) = sum xi_k / sum tau_k`` and ``ell = 1 / mean tau``.

    Standard errors come from the delta method; consecutive cycles share a
    skeleton gap, so the lag-1 covariance is included.
    """
    n = cs.n_cycles
    if n < 2:
        raise NoCyclesError("need at least two complete cycles")
    tau = cs.durations
    xi = cs.f_integrals[:, which]
    mt = tau.mean()
    mu = xi.sum() / tau.sum()
    z = xi - mu * tau
    var_z = (np.var(z) + 2.0 * _lag1_cov(z, cs.replica)) / n
    var_t = (np.var(tau) + 2.0 * _lag1_cov(tau, cs.replica)) / n
    se_mu = math.sqrt(max(var_z, 0.0)) / mt
    se_ell = math.sqrt(max(var_t, 0.0)) / mt**2
    return MuEstimate(1.0 / mt, float(mu), se_ell, se_mu, n)


def cycle_moment(cs: CycleSample, p: float):
    """``mean(durations**p)`` with its jackknife standard error."""
    if p < 1:
        raise DomainError("moment order must be >= 1")
    d = cs.durations**p
    n = len(d)
    est = float(d.mean())
    if n < 2:
        return est, float("nan")
    loo = (d.sum() - d) / (n - 1)
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return est, se


def c_visits_before_bell(batch, bells, mz: Minorization):
    """Per regeneration: the number of C-visits strictly after ``R_n`` up to and including the bell."""
    out = []
    in_c = mz.in_c(np.nan_to_num(batch.states, nan=np.inf))
    for i, _ in _replica_schedules(batch, bells):
        n = int(batch.counts[i])
        s_idx, r_idx = K.schedule_indices(batch.jump_times[i, :n], bells[i, :n], n)
        prev = 0
        for s, r in zip(s_idx, r_idx):
            out.append(int(np.count_nonzero(in_c[i, prev + 1 : s + 1])))
            prev = r
    return np.asarray(out, dtype=np.int64)


def linear_fit(x, y):
    """Least-squares line: (slope, intercept, r2)."""
    res = stats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return float(res.slope), float(res.intercept), float(res.rvalue**2)


@dataclass
class EnvelopeReport:
    x: np.ndarray
    v: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    slope: float
    intercept: float
    r2: float


def first_regeneration_times(model, mz: Minorization, x0: float, replicas: int, seed: int, step: float,
                             horizon: float = 50.0, stream: int = STREAM_ENVELOPE, chunk: int = DEFAULT_CHUNK,
                             max_horizon: float = 1e5) -> np.ndarray:
    """``R_1`` for ``replicas`` paths from ``x0``; the horizon doubles for replicas that need it."""
    out = np.full(replicas, np.nan)
    todo = np.arange(replicas)
    h = horizon
    while len(todo) and h <= max_horizon:
        for a, b in _chunks(len(todo), chunk):
            idx = todo[a:b]
            seeds = np.array([replica_seeds(seed, stream, int(j), int(j) + 1)[0] for j in idx])
            batch = run_skeletons(model, np.full(len(idx), float(x0)), h, step, seeds)
            bells = batch_bells(batch, mz)
            for i, r_idx in _replica_schedules(batch, bells):
                if len(r_idx):
                    out[idx[i]] = batch.jump_times[i, r_idx[0]]
        todo = np.nonzero(np.isnan(out))[0]
        h *= 4
    if len(todo):
        raise HorizonExhaustedError(f"{len(todo)} replicas without a regeneration before t={max_horizon:g}")
    return out


def regen_moment_envelope(model, mz: Minorization, rate: RatePoly, x_grid, V, replicas: int, seed: int = 0,
                          step: float = 1e-3) -> EnvelopeReport:
    """Estimate ``E_x int_0^{R_1} r(s) ds`` per start ``x`` and regress it on ``V(x)``."""
    xs = np.asarray(x_grid, dtype=float)
    if len(xs) == 0:
        raise DomainError("x_grid must be nonempty")
    means, ses = [], []
    for k, x in enumerate(xs):
        r1 = first_regeneration_times(model, mz, float(x), replicas, seed * 1000 + k, step)
        vals = rate_integral(rate, r1)
        means.append(vals.mean())
        ses.append(vals.std(ddof=1) / math.sqrt(len(vals)))
    v = np.asarray(V(xs), dtype=float)
    slope, intercept, r2 = linear_fit(v, means)
    return EnvelopeReport(xs, v, np.asarray(means), np.asarray(ses), slope, intercept, r2)


@dataclass
class HittingRow:
    x: float
    estimate: float
    se: float
    bound: float
    passed: bool


def hitting_bound(V, x, phi: PhiSpec, b_hat: float, delta: float, v_scale: float = 1.0,
                  b_scale: float = 1.0) -> float:
    """``V(x) - 1 + (b / Phi(1)) int_0^delta r``; the scales build falsification controls."""
    rp = phi.rate()
    return float(v_scale * V(np.asarray(x)) - 1.0 + (b_scale * b_hat / phi(1.0)) * rate_integral(rp, delta))


def hitting_moment_check(model, radius: float, delta: float, x_grid, V, phi: PhiSpec, b_hat: float,
                         replicas: int, seed: int = 0, step: float = 1e-3, max_time: float = 1e3,
                         v_scale: float = 1.0, b_scale: float = 1.0) -> list[HittingRow]:
    """Compare ``E_x int_0^{tau_B(delta)} r(s) ds`` with its drift bound for each start.

    A start passes when ``estimate - 3 SE <= bound``.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    rp = phi.rate()
    rows = []
    for k, x in enumerate(np.asarray(x_grid, dtype=float)):
        seeds = replica_seeds(seed, STREAM_HITTING, k * replicas, (k + 1) * replicas)
        tau = hitting_times(model, np.full(replicas, x), delta, radius, step, max_time, seeds)
        missing = int(np.count_nonzero(np.isnan(tau)))
        if missing > 1e-3 * replicas:
            raise HorizonExhaustedError(f"{missing} of {replicas} replicas did not hit B before t={max_time:g}")
        vals = rate_integral(rp, tau[~np.isnan(tau)])
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
        bound = hitting_bound(V, x, phi, b_hat, delta, v_scale, b_scale)
        rows.append(HittingRow(float(x), est, se, bound, est - 3.0 * se <= bound))
    return rows


@dataclass
class DeviationReport:
    t_grid: np.ndarray
    epsilon: float
    probabilities: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    exceedances: np.ndarray
    fitted_slope: float
    replicas: int
    p_order: float
    center: float
    diverged: int = 0

    def rows(self):
        return zip(self.t_grid, [self.epsilon] * len(self.t_grid), self.probabilities, self.ci_lo, self.ci_hi)


def fit_slope(t_grid, exceedances, replicas: int) -> float:
    """Log-log least-squares slope over points with at least 20 exceedances."""
    t = np.asarray(t_grid, dtype=float)
    k = np.asarray(exceedances)
    use = k >= MIN_EXCEEDANCES
    if np.count_nonzero(use) < 2:
        return float("nan")
    slope, _, _ = linear_fit(np.log(t[use]), np.log(k[use] / replicas))
    return slope


def _report(t_grid, eps, hits, replicas, p_order, center, diverged):
    hits = np.asarray(hits)
    p = hits / replicas
    lo, hi = wilson_interval(hits, replicas)
    return DeviationReport(np.asarray(t_grid, dtype=float), float(eps), p, lo, hi, hits,
                           fit_slope(t_grid, hits, replicas), replicas, p_order, center, diverged)


def calibrate(model, mz: Minorization | None, f: BoundedFunction | None, t_max: float, replicas: int = 200,
              seed: int = 0, step: float = 1e-3, x0: float = 0.0, factor: float = 10.0):
    """Long calibration run (separate seed stream): ``(ell, mu_f)`` or ``None`` entries.

    ``ell`` needs ``mz``; ``mu_f`` is the pooled time average of ``f``.
    """
    horizon = factor * t_max
    functions = (f,) if f is not None else (BoundedFunction("one"),)
    cs = None
    if mz is not None:
        cs = harvest_cycles(model, mz, list(functions), None, horizon, replicas, seed, step, x0,
                            stream=STREAM_CALIBRATION)
        est = estimate_mu(cs)
        return est.ell, (est.mu_f if f is not None else None)
    total = 0.0
    for a, b in _chunks(replicas, DEFAULT_CHUNK):
        seeds = replica_seeds(seed, STREAM_CALIBRATION, a, b)
        batch = run_skeletons(model, np.full(b - a, float(x0)), horizon, step, seeds, functions, [horizon])
        total += float(np.nansum(batch.checkpoint_f[:, -1, 0]))
    return None, total / (horizon * replicas)


def reference_mu(model, f: BoundedFunction) -> float | None:
    """Analytic ``mu(f)`` when the invariant law is known in closed form (OU)."""
    if isinstance(model, OuModel):
        return stationary_mean(model, f)
    return None


@dataclass
class DeviationStudy:
    additive: DeviationReport | None
    counting: DeviationReport | None
    ell: float | None
    mu_f: float | None


def deviation_study(model, mz: Minorization | None, f: BoundedFunction | None, epsilon: float, t_grid,
                    replicas: int, seed: int = 0, step: float = 1e-3, x0: float = 0.0, p_order: float = float("nan"),
                    mu_f: float | None = None, ell: float | None = None, epsilon_n: float | None = None,
                    calibration_replicas: int = 200, chunk: int = DEFAULT_CHUNK) -> DeviationStudy:
    """Exceedance curves of the additive functional and of ``N_t`` from one simulation.

    ``f`` or ``mz`` may be ``None`` to skip the corresponding curve.
    """
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    if len(t_grid) == 0 or t_grid[0] <= 0:
        raise DomainError("t_grid must contain positive times")
    eps_n = epsilon if epsilon_n is None else epsilon_n
    if f is not None and not (0 < epsilon < f.sup_norm):
        raise DomainError(f"epsilon must lie in (0, ||f||_inf = {f.sup_norm:g})")
    if mz is not None and not (0 < eps_n < 1):
        raise DomainError("epsilon for the counting process must lie in (0, 1)")
    t_max = float(t_grid[-1])
    if f is not None and mu_f is None:
        mu_f = reference_mu(model, f)
    need_ell = mz is not None and ell is None
    if need_ell or (f is not None and mu_f is None):
        cal_ell, cal_mu = calibrate(model, mz if need_ell else None, f if mu_f is None else None, t_max,
                                    calibration_replicas, seed, step, x0)
        ell = cal_ell if need_ell else ell
        mu_f = cal_mu if mu_f is None else mu_f
    functions = (f,) if f is not None else (BoundedFunction("one"),)
    hits_f = np.zeros(len(t_grid), dtype=np.int64)
    hits_n = np.zeros(len(t_grid), dtype=np.int64)
    diverged = 0
    for a, b in _chunks(replicas, chunk):
        seeds = replica_seeds(seed, STREAM_DEVIATION, a, b)
        batch = run_skeletons(model, np.full(b - a, float(x0)), t_max, step, seeds, functions, t_grid)
        ok = batch.ok
        diverged += int(np.count_nonzero(~ok))
        if f is not None:
            avg = batch.checkpoint_f[ok, :, 0] / t_grid[None, :]
            hits_f += np.count_nonzero(np.abs(avg - mu_f) > epsilon, axis=0)
        if mz is not None:
            bells = batch_bells(batch, mz)
            for i, r_idx in _replica_schedules(batch, bells):
                n_t = np.searchsorted(batch.jump_times[i, r_idx], t_grid, side="right")
                hits_n += np.abs(n_t / t_grid - ell) > ell * eps_n
    check_divergence(diverged, replicas)
    used = replicas - diverged
    add = _report(t_grid, epsilon, hits_f, used, p_order, mu_f, diverged) if f is not None else None
    cnt = _report(t_grid, eps_n, hits_n, used, p_order, ell, diverged) if mz is not None else None
    return DeviationStudy(add, cnt, ell, mu_f)


def deviation_probability(model, mz, f: BoundedFunction, epsilon: float, t_grid, replicas: int, seed: int = 0,
                          **kwargs) -> DeviationReport:
    """``P(|t^-1 int_0^t f(X_s) ds - mu(f)| > epsilon)`` on ``t_grid``."""
    return deviation_study(model, None, f, epsilon, t_grid, replicas, seed, **kwargs).additive


def nt_deviation(model, mz: Minorization, epsilon: float, t_grid, replicas: int, seed: int = 0,
                 **kwargs) -> DeviationReport:
    """``P(|N_t / t - ell| > ell epsilon)`` on ``t_grid``."""
    return deviation_study(model, mz, None, epsilon, t_grid, replicas, seed, **kwargs).counting


def time_average(model, functions, horizon: float, replicas: int = 1, seed: int = 0, step: float = 1e-3,
                 x0: float = 0.0):
    """Per-replica time averages ``t^-1 int_0^t f(X_s) ds`` (one column per function)."""
    seeds = replica_seeds(seed, STREAM_TIME_AVERAGE, 0, replicas)
    batch = run_skeletons(model, np.full(replicas, float(x0)), horizon, step, seeds, list(functions), [horizon])
    return batch.checkpoint_f[batch.ok, -1, :] / horizon
