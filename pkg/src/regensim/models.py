"""Markov process models, their densities, generators and drift checks."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import DomainError, QuadratureError, UnsupportedModelError
from .rates import PhiSpec

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class OuModel:
    """``dX = -theta X dt + sigma dW`` on the real line."""

    theta: float
    sigma: float

    kind = "ou"
    dim = 1

    def __post_init__(self):
        if not (self.theta > 0 and self.sigma > 0):
            raise DomainError("OU needs theta > 0 and sigma > 0")

    @property
    def diffusion_var(self) -> float:
        return self.sigma**2

    def drift(self, x):
        return -self.theta * np.asarray(x, dtype=float)

    def transition_moments(self, t, x):
        """Mean and variance of ``X_t`` given ``X_0 = x``."""
        t = np.asarray(t, dtype=float)
        mean = np.asarray(x, dtype=float) * np.exp(-self.theta * t)
        var = -self.sigma**2 * np.expm1(-2.0 * self.theta * t) / (2.0 * self.theta)
        return mean, var

    @property
    def stationary_var(self) -> float:
        return self.sigma**2 / (2.0 * self.theta)


@dataclass(frozen=True)
class WeakDriftDiffusionModel:
    """Unit-diffusion SDE with radial drift ``<b(x), x> = -r |x|**l / (1 + eps/|x|)``.

    ``l_exp = 0`` gives a polynomially (not geometrically) ergodic process,
    the interesting case for finite moment orders.
    """

    r_drift: float
    l_exp: float
    smoothing: float = 1.0
    dim: int = 1

    kind = "weakdrift"
    diffusion_var = 1.0

    def __post_init__(self):
        if not self.r_drift > 0:
            raise DomainError("weak-drift model needs r > 0")
        if not (0.0 <= self.l_exp < 2.0):
            raise DomainError("weak-drift exponent l must lie in [0, 2)")
        if self.smoothing < 0:
            raise DomainError("smoothing must be >= 0")
        if self.smoothing == 0 and self.l_exp < 1:
            raise DomainError("l < 1 needs smoothing > 0 (the drift is singular at the origin)")
        if not (1 <= self.dim <= 3):
            raise DomainError("dimension must be 1, 2 or 3")

    def radial_factor(self, rho):
        """``<b(x), x>`` as a function of ``rho = |x|``."""
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -self.r_drift * rho ** (self.l_exp + 1.0) / (rho + self.smoothing)
        return np.where(rho > 0, out, 0.0)

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and x.ndim <= 1:
            rho = np.abs(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = self.radial_factor(rho) / np.where(rho > 0, rho * rho, 1.0) * x
            return np.where(rho > 0, out, 0.0)
        rho = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.radial_factor(rho) / np.where(rho > 0, rho * rho, 1.0) * x
        return np.where(rho > 0, out, 0.0)


@dataclass(frozen=True)
class LevySpec:
    """Symmetric Levy measure on the real line, truncated to ``delta_min <= |u| <= u_max``.

    ``gaussian``: ``intensity * N(0, scale^2)`` density; ``power``:
    ``intensity * |u|**-(1 + tail_index)``.
    """

    kind: str = "gaussian"
    intensity: float = 1.0
    scale: float = 1.0
    tail_index: float = 1.5
    delta_min: float = 1e-3
    u_max: float = 10.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "power"):
            raise DomainError(f"unknown Levy kind {self.kind!r}")
        if not (0 < self.delta_min < self.u_max):
            raise DomainError("need 0 < delta_min < u_max")
        if not (self.intensity > 0 and self.scale > 0 and self.tail_index > 0):
            raise DomainError("Levy intensity, scale and tail index must be positive")

    def density(self, u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        if self.kind == "gaussian":
            d = self.intensity * np.exp(-0.5 * (a / self.scale) ** 2) / (self.scale * SQRT_2PI)
        else:
            with np.errstate(divide="ignore"):
                d = self.intensity * a ** (-(1.0 + self.tail_index))
        return np.where((a >= self.delta_min) & (a <= self.u_max), d, 0.0)

    def _abs_integral(self, g, lo, hi):
        lo, hi = max(lo, self.delta_min), min(hi, self.u_max)
        if hi <= lo:
            return 0.0
        val, _ = integrate.quad(lambda a: g(a) * float(self.density(a)), lo, hi, limit=200)
        return 2.0 * val

    @property
    def total_mass(self) -> float:
        return self._abs_integral(lambda a: 1.0, 0.0, np.inf)

    def large_jump_moment(self, m: float) -> float:
        """``int_{|u| >= 1} |u|**m nu(du)`` on the truncated support."""
        return self._abs_integral(lambda a: a**m, 1.0, np.inf)

    def small_jump_second_moment(self) -> float:
        return self._abs_integral(lambda a: a * a, 0.0, 1.0)

    def abs_table(self, n: int = 4097):
        """Grid of ``|u|`` with the cumulative distribution of the jump size."""
        grid = np.geomspace(self.delta_min, self.u_max, n)
        dens = 2.0 * self.density(grid)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        return grid, cdf / cdf[-1]

    def sample_jumps(self, n: int, rng: np.random.Generator) -> np.ndarray:
        grid, cdf = self.abs_table()
        mags = np.interp(rng.random(n), cdf, grid)
        signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return signs * mags


@dataclass(frozen=True)
class JumpSdeModel:
    """One-dimensional SDE driven by a truncated Poisson random measure.

    ``dX = b(X) dt + int_{|u|<=1} c(X-, u) (mu - dt nu)(dt, du) + int_{|u|>1} c(X-, u) mu(dt, du)``
    with ``c = c1 + c2``. Coefficients are vectorised callables.
    """

    drift_fn: Callable
    c1: Callable
    c2: Callable
    levy: LevySpec
    dim_x: int = 1
    dim_u: int = 1
    params: dict = field(default_factory=dict, compare=False)

    kind = "jumpsde"
    diffusion_var = 0.0

    def __post_init__(self):
        if self.dim_x != 1 or self.dim_u != 1:
            raise DomainError("jump SDE model is implemented for dim_x = dim_u = 1")

    @property
    def dim(self) -> int:
        return self.dim_x

    def drift(self, x):
        return self.drift_fn(np.asarray(x, dtype=float))

    def jump_coeff(self, x, u):
        return self.c1(x, u) + self.c2(x, u)

    def compensator(self, x) -> float:
        """``int_{delta_min <= |u| <= 1} c(x, u) nu(du)`` (zero for odd ``c`` in ``u``)."""
        lo, hi = self.levy.delta_min, min(1.0, self.levy.u_max)
        if hi <= lo:
            return 0.0
        g = lambda u: float(self.jump_coeff(x, u) * self.levy.density(u))
        right, _ = integrate.quad(g, lo, hi, limit=200)
        left, _ = integrate.quad(g, -hi, -lo, limit=200)
        return left + right

    @classmethod
    def standard(
        cls,
        r_drift: float,
        l_exp: float,
        gamma: float,
        levy: LevySpec,
        smoothing: float = 1.0,
        contraction: float = 0.0,
    ) -> "JumpSdeModel":
        """Drift ``<b, x> = -r |x|**(1+l) / (1 + eps/|x|)``, ``c1 = gamma |x|**l u`` and
        ``c2 = -contraction * x`` on ``|u| > 1``."""
        if not (0 <= contraction <= 2):
            raise DomainError("contraction must lie in [0, 2] so that |x + c2| <= |x|")

        def drift_fn(x):
            a = np.abs(x)
            return -r_drift * np.sign(x) * a ** (1.0 + l_exp) / (a + smoothing)

        def c1(x, u):
            return gamma * np.abs(x) ** l_exp * u

        def c2(x, u):
            return np.where(np.abs(u) > 1.0, -contraction * x * np.ones_like(u), 0.0)

        params = dict(r=r_drift, l=l_exp, gamma=gamma, smoothing=smoothing, contraction=contraction)
        return cls(drift_fn, c1, c2, levy, params=params)


Model = OuModel | WeakDriftDiffusionModel | JumpSdeModel


@dataclass(frozen=True)
class LyapunovV:
    """Radial Lyapunov function ``V(x) = |x|**m``, floored to 1 near the origin.

    ``floor_radius = 0`` keeps the pure power. Otherwise ``V = 1`` on
    ``|x| <= floor_radius/2``, ``V = |x|**m`` beyond ``floor_radius`` and a C2
    smootherstep blend in between; ``floor_radius >= 2`` ensures ``V >= 1``.
    """

    m_power: float
    floor_radius: float = 0.0

    def __post_init__(self):
        if self.m_power < 1:
            raise DomainError("Lyapunov power must be >= 1")
        if self.floor_radius != 0 and self.floor_radius < 2:
            raise DomainError("floor radius must be 0 or >= 2")

    def radial(self, rho):
        """``(g, g'/rho, g'')`` where ``V(x) = g(|x|)``."""
        rho = np.asarray(rho, dtype=float)
        m = self.m_power
        with np.errstate(divide="ignore", invalid="ignore"):
            g = rho**m
            g1 = m * rho ** (m - 2.0)
            g2 = m * (m - 1.0) * rho ** (m - 2.0)
        if m == 2.0:
            g1 = np.full_like(rho, 2.0)
            g2 = np.full_like(rho, 2.0)
        if self.floor_radius == 0:
            return g, g1, g2
        half = 0.5 * self.floor_radius
        s = np.clip((rho - half) / half, 0.0, 1.0)
        w = s**3 * (10.0 - 15.0 * s + 6.0 * s * s)
        dw = 30.0 * s * s * (1.0 - s) ** 2 / half
        d2w = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / half**2
        with np.errstate(divide="ignore", invalid="ignore"):
            gp = m * rho ** (m - 1.0)
            blend = w * g + (1.0 - w)
            blend_p = dw * (g - 1.0) + w * gp
            blend_pp = d2w * (g - 1.0) + 2.0 * dw * gp + w * g2
            blend_1 = np.where(rho > 0, blend_p / rho, 0.0)
        inner = rho <= half
        outer = rho >= self.floor_radius
        g_out = np.where(inner, 1.0, np.where(outer, g, blend))
        g1_out = np.where(inner, 0.0, np.where(outer, g1, blend_1))
        g2_out = np.where(inner, 0.0, np.where(outer, g2, blend_pp))
        return g_out, g1_out, g2_out

    def __call__(self, x):
        return self.radial(_norm(x))[0]


def _norm(x):
    x = np.asarray(x, dtype=float)
    return np.abs(x) if x.ndim <= 1 else np.linalg.norm(x, axis=-1)


@dataclass(frozen=True)
class RecurrenceParams:
    """Constants of the polynomial drift condition derived for a model."""

    M: float
    beta: float
    gamma: float
    l_exp: float
    r_drift: float
    kappa: float
    m_power: float
    r_tilde: float
    phi: PhiSpec

    @property
    def p_order(self) -> float:
        return self.phi.p_order


def diffusion_recurrence(model: WeakDriftDiffusionModel, M: float, kappa: float) -> RecurrenceParams:
    """Drift-condition constants for a unit-diffusion model outside ``|x| > M``.

    ``beta = sup |x|**-(2+l) <x, a x>`` and ``gamma = sup |x|**-l tr a`` are
    reported at the chosen ``M``; the effective drift constant is
    ``r M / (M + eps)`` because of the smoothing.
    """
    if not M > 0:
        raise DomainError("M must be positive")
    l = model.l_exp
    beta = M ** (-l)
    gamma = model.dim * M ** (-l)
    r_eff = model.r_drift * M / (M + model.smoothing)
    upper = l + (2.0 * r_eff - gamma) / beta
    if not (0 < kappa < upper):
        raise DomainError(f"kappa must lie in (0, {upper:.6g}) for these parameters")
    m = 2.0 - l + kappa
    r_tilde = r_eff - 0.5 * (gamma + (m - 2.0) * beta)
    alpha = (2.0 - l) / m
    phi = PhiSpec(c=m * r_tilde, phi_exponent=1.0 - alpha)
    return RecurrenceParams(M, beta, gamma, l, r_eff, kappa, m, r_tilde, phi)


def kappa_for_order(p: float, l_exp: float) -> float:
    """``kappa`` giving moment order ``p = 1 + kappa/(2-l)`` in the diffusion case."""
    return (p - 1.0) * (2.0 - l_exp)


def jump_recurrence(model: JumpSdeModel, M: float, levy_moment_order: float) -> RecurrenceParams:
    """Drift constants for :meth:`JumpSdeModel.standard` models.

    ``levy_moment_order`` is the Levy moment order; it also serves as the
    Lyapunov power ``m_power``.
    """
    p = model.params
    if not p:
        raise UnsupportedModelError("jump recurrence needs a JumpSdeModel.standard model")
    m = float(levy_moment_order)
    l = p["l"]
    if not (0 < l < 1):
        raise DomainError("jump recurrence needs 0 < l < 1")
    r_eff = p["r"] * M / (M + p["smoothing"])
    r_tilde = r_eff - 2.0 * p["gamma"] * model.levy.large_jump_moment(m)
    if not r_tilde > 0:
        raise DomainError("drift too weak: r <= 2 gamma int_{|u|>1} |u|^m nu(du)")
    alpha = (1.0 - l) / m
    phi = PhiSpec(c=m * r_tilde, phi_exponent=1.0 - alpha)
    return RecurrenceParams(M, 0.0, p["gamma"], l, r_eff, 0.0, m, r_tilde, phi)


def transition_density(model, t: float, x, y):
    """Gaussian transition density of the OU model."""
    if not isinstance(model, OuModel):
        raise UnsupportedModelError(f"no closed-form transition density for {model.kind}")
    if not t > 0:
        raise DomainError("transition density needs t > 0")
    mean, var = model.transition_moments(t, x)
    y = np.asarray(y, dtype=float)
    out = np.exp(-0.5 * (y - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
    return float(out) if out.ndim == 0 else out


def generator_value(model, V: LyapunovV, x):
    """Extended generator applied to ``V`` at ``x`` (scalar or array of points)."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, JumpSdeModel):
        return _jump_generator(model, V, x)
    if isinstance(model, OuModel) or model.dim == 1:
        rho = np.abs(x)
        _, g1, g2 = V.radial(rho)
        bx = model.drift(x) * x
        out = g1 * bx + 0.5 * model.diffusion_var * g2
    else:
        pts = x.reshape(-1, model.dim)
        rho = np.linalg.norm(pts, axis=-1)
        _, g1, g2 = V.radial(rho)
        bx = np.sum(model.drift(pts) * pts, axis=-1)
        out = g1 * bx + 0.5 * model.diffusion_var * (g2 + (model.dim - 1) * g1)
        out = out.reshape(x.shape[:-1])
    return float(out) if np.ndim(out) == 0 else out


def _jump_generator(model: JumpSdeModel, V: LyapunovV, x):
    flat = np.atleast_1d(x).astype(float)
    out = np.empty_like(flat)
    lv = model.levy
    for i, xi in enumerate(flat):
        g, g1, _ = V.radial(abs(xi))
        grad = float(g1) * xi
        vx = float(g)

        def integrand(u, xi=xi, grad=grad, vx=vx):
            c = float(model.jump_coeff(xi, u))
            small = grad * c if abs(u) <= 1.0 else 0.0
            return (float(V(xi + c)) - vx - small) * float(lv.density(u))

        total = 0.0
        pieces = [(lv.delta_min, min(1.0, lv.u_max)), (max(1.0, lv.delta_min), lv.u_max)]
        for lo, hi in pieces:
            if hi <= lo:
                continue
            for a, b in ((lo, hi), (-hi, -lo)):
                with warnings.catch_warnings():
                    warnings.simplefilter("error", integrate.IntegrationWarning)
                    try:
                        val, _ = integrate.quad(integrand, a, b, limit=400, epsabs=1e-11, epsrel=1e-10)
                    except integrate.IntegrationWarning as exc:
                        raise QuadratureError(f"jump integral failed at x={xi}: {exc}") from exc
                total += val
        out[i] = grad * float(model.drift(xi)) + total
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


@dataclass
class DriftReport:
    x: np.ndarray
    av: np.ndarray
    phi_v: np.ndarray
    margin: np.ndarray
    worst_margin: float
    m0: float | None
    b_hat: float | None

    def rows(self):
        return zip(self.x, self.av, self.phi_v, self.margin)


def verify_drift(model, params, V: LyapunovV, region: tuple[float, float], n_grid: int = 200, n_inner: int | None = None) -> DriftReport:
    """Tabulate ``margin(x) = -AV(x) - Phi(V(x))`` over radii in ``region``.

    Never raises on negative margins. ``m0`` is the smallest grid radius
    beyond which every margin is nonnegative; ``b_hat`` is the drift constant
    ``max(0, sup_{|x| <= m0} (AV + Phi(V)))`` estimated on an inner grid
    (``2 n_grid`` points unless ``n_inner`` is given).
    ``params`` is a :class:`RecurrenceParams` or a bare :class:`PhiSpec`.
    """
    phi = getattr(params, "phi", params)
    lo, hi = region
    if not (0 <= lo < hi):
        raise DomainError("region must satisfy 0 <= min < max")
    if V.floor_radius and lo < V.floor_radius:
        raise DomainError("region must start outside the floor radius of V")
    radii = np.linspace(lo, hi, n_grid)
    dim = getattr(model, "dim", 1)

    def points(r):
        if dim == 1:
            return np.concatenate([-r[::-1], r])
        pts = np.zeros((len(r), dim))
        pts[:, 0] = r
        return pts

    def evaluate(r):
        pts = points(r)
        av = np.asarray(generator_value(model, V, pts), dtype=float)
        phi_v = np.asarray(phi(V(pts)), dtype=float)
        return pts, av, phi_v

    pts, av, phi_v = evaluate(radii)
    margin = -av - phi_v
    xs = pts if dim == 1 else pts[:, 0]

    # tail-nonnegative radius
    rad_margin = margin if dim > 1 else np.minimum(margin[: n_grid][::-1], margin[n_grid:])
    m0 = None
    ok = rad_margin >= 0
    if ok[-1]:
        bad = np.nonzero(~ok)[0]
        m0 = float(radii[bad[-1] + 1]) if len(bad) else float(radii[0])
    b_hat = None
    if m0 is not None:
        _, av_in, phi_in = evaluate(np.linspace(0.0, m0, n_inner or 2 * n_grid))
        b_hat = float(max(0.0, np.max(av_in + phi_in)))
    return DriftReport(xs, av, phi_v, margin, float(np.min(margin)), m0, b_hat)


def stationary_density(model, y):
    """Invariant density of a one-dimensional diffusion (normalised numerically)."""
    if isinstance(model, OuModel):
        s2 = model.stationary_var
        y = np.asarray(y, dtype=float)
        return np.exp(-0.5 * y * y / s2) / math.sqrt(2.0 * math.pi * s2)
    if isinstance(model, WeakDriftDiffusionModel) and model.dim == 1:
        unnorm = _weakdrift_speed(model)
        total = 2.0 * integrate.quad(unnorm, 0.0, np.inf, limit=400)[0]
        y = np.asarray(y, dtype=float)
        return np.vectorize(unnorm)(y) / total
    raise UnsupportedModelError(f"no stationary density for {model.kind}")


def _weakdrift_speed(model: WeakDriftDiffusionModel):
    # speed density exp(2 int_0^|y| b) for unit diffusion, by quadrature of the radial drift
    def unnorm(y):
        a = abs(float(y))
        if a == 0:
            return 1.0
        integral, _ = integrate.quad(lambda s: float(model.radial_factor(s)) / s, 0.0, a, limit=200)
        return math.exp(2.0 * integral)

    return unnorm


def stationary_mean(model, f) -> float:
    """``mu(f)`` for a one-dimensional diffusion by quadrature of the invariant density."""
    if isinstance(model, OuModel):
        s = math.sqrt(model.stationary_var)
        lim = 40.0 * s
    elif isinstance(model, WeakDriftDiffusionModel) and model.dim == 1:
        lim = np.inf
    else:
        raise UnsupportedModelError(f"no stationary law for {model.kind}")
    dens = lambda y: float(stationary_density(model, y))
    g = lambda y: float(f(np.asarray(y))) * dens(y)
    left = integrate.quad(g, -lim, 0.0, limit=400)[0]
    right = integrate.quad(g, 0.0, lim, limit=400)[0]
    return left + right
