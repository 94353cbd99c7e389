"""Fuk-Nagaev bound for two-dependent centred sequences and its empirical check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

STREAM_FN = 7
FN_CHUNK = 1000


@dataclass(frozen=True)
class FnParams:
    n: int
    lam: float
    p: float
    sigma2: float
    m_p: float

    def __post_init__(self):
        if not (self.n >= 1 and self.lam > 0 and self.sigma2 > 0 and self.m_p > 0):
            raise DomainError("n, lambda, sigma2 and m_p must be positive")
        if not self.p >= 2:
            raise DomainError("p must be >= 2")

    @property
    def r(self) -> float:
        return 2.0 * (self.p - 1.0)


def fn_bound_explicit(fp: FnParams) -> float:
    """Fully explicit bound on ``P(max_{k<=n} |S_k| >= 4 lambda)``, clipped to 1.

    ``4 (1 + lam^2 / (3 n r sigma2))^(-r/2)`` plus
    ``(4 n / lam) m_p^(1/p) (2^p m_p (lam/r)^-p)^(1-1/p) / (1 - 1/p)`` with
    ``r = 2 (p - 1)``; both terms are evaluated through logarithms.
    """
    n, lam, p, s2, mp = float(fp.n), fp.lam, fp.p, fp.sigma2, fp.m_p
    r = fp.r
    log_gauss = math.log(4.0) - 0.5 * r * math.log1p(lam * lam / (3.0 * n * r * s2))
    q = 1.0 - 1.0 / p
    log_tail = (math.log(4.0 * n) - math.log(lam) + math.log(mp) / p
                + q * (p * math.log(2.0) + math.log(mp) - p * math.log(lam / r)) - math.log(q))
    hi = max(log_gauss, log_tail)
    if hi > 1.0:
        return 1.0
    return min(1.0, math.exp(log_gauss) + math.exp(log_tail))


def fn_statement_bound(fp: FnParams, c_p: float) -> float:
    """``C(p) (sigma^(2(p-1)) lam^(-2(p-1)) n^(p-1) + m_p n lam^-p)`` for a caller-supplied ``C(p)``."""
    if c_p < 0:
        raise DomainError("C(p) must be nonnegative")
    p = fp.p
    first = (fp.sigma2 / fp.lam**2) ** (p - 1.0) * float(fp.n) ** (p - 1.0)
    second = fp.m_p * fp.n * fp.lam ** (-p)
    return c_p * (first + second)


@dataclass(frozen=True)
class TwoDepSpec:
    """Moving average ``X_k = w0 z_k + w1 z_{k+1} + w2 z_{k+2}`` of i.i.d. symmetric innovations.

    ``law`` is ``"student_t"`` (parameter ``dof``) or ``"uniform"`` on
    ``[-half_width, half_width]``. The innovations are centred, so ``E X_k = 0``.
    """

    law: str = "student_t"
    dof: float = 5.0
    half_width: float = 1.0
    weights: tuple = (1.0, 0.5, 0.25)

    def __post_init__(self):
        if self.law not in ("student_t", "uniform"):
            raise DomainError(f"unknown innovation law {self.law!r}")
        if self.law == "student_t" and not self.dof > 2:
            raise DomainError("Student-t innovations need dof > 2 for a finite variance")
        if len(self.weights) != 3:
            raise DomainError("exactly three window weights are required")

    @property
    def innovation_var(self) -> float:
        if self.law == "student_t":
            return self.dof / (self.dof - 2.0)
        return self.half_width**2 / 3.0

    @property
    def sigma2(self) -> float:
        return float(np.sum(np.square(self.weights))) * self.innovation_var

    @property
    def sup_abs(self) -> float:
        """``sup |X_k|`` (infinite for Student-t innovations)."""
        if self.law == "student_t":
            return math.inf
        return float(np.sum(np.abs(self.weights))) * self.half_width

    def m_p(self, p: float, n_mc: int = 2_000_000, seed: int = 12345) -> float:
        """``E |X_1|^p``: exact for ``p = 2``, otherwise a large fixed-seed Monte-Carlo estimate."""
        if self.law == "student_t" and not self.dof > p:
            raise DomainError("E|X|^p is infinite unless dof > p")
        if p == 2:
            return self.sigma2
        x = self.sample(1, n_mc, np.random.default_rng(seed))[0]
        return float(np.mean(np.abs(x) ** p))

    def innovations(self, shape, rng: np.random.Generator) -> np.ndarray:
        if self.law == "student_t":
            return rng.standard_t(self.dof, size=shape)
        return rng.uniform(-self.half_width, self.half_width, size=shape)

    def sample(self, replicas: int, n: int, rng: np.random.Generator) -> np.ndarray:
        z = self.innovations((replicas, n + 2), rng)
        w0, w1, w2 = self.weights
        return w0 * z[:, :n] + w1 * z[:, 1 : n + 1] + w2 * z[:, 2 : n + 2]


@dataclass
class FnEmpirical:
    lam: np.ndarray
    probabilities: np.ndarray
    se: np.ndarray
    replicas: int

    @property
    def ci_hi(self) -> np.ndarray:
        return self.probabilities + 3.0 * self.se


def fn_running_max(spec: TwoDepSpec, n: int, replicas: int, seed: int = 0) -> np.ndarray:
    """``max_{k<=n} |S_k|`` per replica; chunks have their own seeds so the result is batch-invariant."""
    out = np.empty(replicas)
    for c, start in enumerate(range(0, replicas, FN_CHUNK)):
        stop = min(replicas, start + FN_CHUNK)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), STREAM_FN, c]))
        x = spec.sample(stop - start, n, rng)
        out[start:stop] = np.max(np.abs(np.cumsum(x, axis=1)), axis=1)
    return out


def fn_empirical(spec: TwoDepSpec, n: int, lambda_grid, replicas: int, seed: int = 0) -> FnEmpirical:
    """Fraction of replicas with ``max_{k<=n} |S_k| >= 4 lambda`` for each ``lambda``."""
    if n < 1 or replicas < 1:
        raise DomainError("n and replicas must be >= 1")
    lam = np.asarray(lambda_grid, dtype=float)
    m = fn_running_max(spec, n, replicas, seed)
    p = np.mean(m[:, None] >= 4.0 * lam[None, :], axis=0)
    se = np.sqrt(p * (1.0 - p) / replicas)
    return FnEmpirical(lam, p, se, replicas)
