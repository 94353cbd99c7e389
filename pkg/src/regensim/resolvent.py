"""Resolvent densities ``u1(x, y) = int_0^inf exp(-t) p_t(x, y) dt``.

Two independent routes are provided:

* :func:`ou_resolvent_quadrature` integrates the Gaussian OU transition
  density over time (substituting ``t = s**2`` to remove the ``t**-1/2``
  singularity) on geometrically graded Gauss-Legendre panels, with an
  embedded lower-order rule as error estimate and an explicit tail bound.
* :class:`GreenResolvent` uses the Green's function of ``1 - L`` for a
  one-dimensional diffusion with constant diffusion coefficient, built
  from the increasing/decreasing eigenfunctions through their Riccati
  (log-derivative) equations.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainError, QuadratureError, UnsupportedModelError
from .models import OuModel, WeakDriftDiffusionModel

log = logging.getLogger(__name__)

T_CUT = 40.0
_S_MIN = 1e-6


def _panels(s_max: float, s_min: float = _S_MIN, ratio: float = 2.0) -> np.ndarray:
    k = int(math.ceil(math.log(s_max / s_min) / math.log(ratio)))
    edges = s_max / ratio ** np.arange(k, -1, -1)
    return np.concatenate([[0.0], edges])


def _composite_rule(edges: np.ndarray, order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    s = 0.5 * (b - a) * nodes[None, :] + 0.5 * (a + b)
    w = 0.5 * (b - a) * weights[None, :]
    return s.ravel(), w.ravel()


def _refine(edges: np.ndarray, k: int) -> np.ndarray:
    pts = edges[:-1, None] + (edges[1:] - edges[:-1])[:, None] * np.arange(k)[None, :] / k
    return np.concatenate([pts.ravel(), edges[-1:]])


_EDGES = _panels(math.sqrt(T_CUT))
_HI = _composite_rule(_EDGES, 20)
_LO = _composite_rule(_EDGES, 12)
# fallback for sharply peaked integrands (starting points far from y)
_FINE_EDGES = _refine(_EDGES, 8)
_FINE_HI = _composite_rule(_FINE_EDGES, 20)
_FINE_LO = _composite_rule(_FINE_EDGES, 12)


def _ou_integrand(model: OuModel, s, x, y):
    t = s * s
    mean, var = model.transition_moments(t, x)
    dens = np.exp(-0.5 * (y - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
    return 2.0 * s * np.exp(-t) * dens


def ou_resolvent_quadrature(model: OuModel, x, y, tol: float = 1e-9, atol: float = 1e-12, chunk: int = 4096):
    """OU resolvent density at broadcast pairs ``(x, y)``.

    Pairs whose embedded error estimate exceeds ``tol * |value| + atol`` are
    recomputed on panels split eightfold; :class:`QuadratureError` is raised
    if that also fails.
    """
    xb, yb = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    xf, yf = xb.ravel(), yb.ravel()
    out = np.empty(xf.shape)
    worst = 0.0
    for start in range(0, len(xf), chunk):
        xs = xf[start : start + chunk, None]
        ys = yf[start : start + chunk, None]
        hi = _ou_integrand(model, _HI[0][None, :], xs, ys) @ _HI[1]
        lo = _ou_integrand(model, _LO[0][None, :], xs, ys) @ _LO[1]
        err = np.abs(hi - lo) / (tol * np.abs(hi) + atol)
        bad = err > 1.0
        if np.any(bad):
            xb_, yb_ = xs[bad], ys[bad]
            hi[bad] = _ou_integrand(model, _FINE_HI[0][None, :], xb_, yb_) @ _FINE_HI[1]
            lo_f = _ou_integrand(model, _FINE_LO[0][None, :], xb_, yb_) @ _FINE_LO[1]
            err[bad] = np.abs(hi[bad] - lo_f) / (tol * np.abs(hi[bad]) + atol)
        worst = max(worst, float(err.max(initial=0.0)))
        out[start : start + chunk] = hi
    if worst > 1.0:
        raise QuadratureError(f"OU resolvent quadrature did not converge (error {worst:.3g} x tolerance)")
    # tail beyond T_CUT: e^{-T} * max density at T
    _, var_cut = model.transition_moments(T_CUT, 0.0)
    tail = math.exp(-T_CUT) / math.sqrt(2.0 * math.pi * float(var_cut))
    if tail > tol * max(float(out.min(initial=1.0)), 1e-300) and tail > 1e-15:
        log.debug("OU resolvent tail bound %.3g", tail)
    out = out.reshape(xb.shape)
    return float(out) if out.ndim == 0 else out


class GreenResolvent:
    """Resolvent density of a 1D diffusion ``dX = b(X) dt + s dW`` (constant ``s``).

    With ``q_+`` / ``q_-`` the log-derivatives of the increasing / decreasing
    solutions of ``(a/2) psi'' + b psi' = lam psi`` and ``Q_pm`` their
    antiderivatives,

    ``u(x, y) = (2/a) / (q_+(y) - q_-(y)) * exp(Q_+(x) - Q_+(y))``  for ``x <= y``

    and with ``Q_-`` in place of ``Q_+`` for ``x > y``.
    Valid on ``[-half_width, half_width]``.
    """

    def __init__(self, drift, diffusion_var: float, half_width: float = 25.0, lam: float = 1.0,
                 grid_step: float = 2e-3, breakpoints=(0.0,)):
        self.a = float(diffusion_var)
        self.lam = float(lam)
        self.half_width = float(half_width)
        self._drift = drift
        L = self.half_width
        n_half = int(math.ceil(L / grid_step))
        self.grid = np.linspace(-L, L, 2 * n_half + 1)
        bps = sorted(b for b in breakpoints if -L < b < L)
        self._bps = bps
        self._plus = self._solve(+1, bps)
        self._minus = self._solve(-1, bps)

    def _rhs(self, x, state):
        q = state[0]
        b = float(self._drift(x))
        return [2.0 / self.a * (self.lam - b * q) - q * q, q]

    def _root(self, x, sign):
        b = float(self._drift(x))
        return (-b + sign * math.sqrt(b * b + 2.0 * self.a * self.lam)) / self.a

    def _solve(self, sign, bps):
        """Tabulate (q, Q) on the grid as piecewise Hermite splines split at ``bps``."""
        L = self.half_width
        edges = [-L] + list(bps) + [L]
        if sign < 0:
            edges = edges[::-1]
        state = [self._root(edges[0], sign), 0.0]
        pieces = []
        for a, b in zip(edges[:-1], edges[1:]):
            lo, hi = min(a, b), max(a, b)
            mask = (self.grid >= lo) & (self.grid <= hi)
            pts = self.grid[mask]
            t_eval = pts if sign > 0 else pts[::-1]
            sol = solve_ivp(self._rhs, (a, b), state, method="DOP853", t_eval=t_eval,
                            rtol=1e-12, atol=1e-13)
            if not sol.success:
                raise QuadratureError(f"Riccati integration failed: {sol.message}")
            xs, q, Q = sol.t, sol.y[0], sol.y[1]
            if sign < 0:
                xs, q, Q = xs[::-1], q[::-1], Q[::-1]
            # one-sided derivatives evaluated with the drift of this piece
            mid = 0.5 * (lo + hi)
            eps = 1e-12 * max(1.0, abs(mid))
            drift_vals = np.array([float(self._drift(min(max(xv, lo + eps), hi - eps))) for xv in xs])
            dq = 2.0 / self.a * (self.lam - drift_vals * q) - q * q
            pieces.append((lo, hi, CubicHermiteSpline(xs, q, dq), CubicHermiteSpline(xs, Q, q)))
            state = [sol.y[0][-1], sol.y[1][-1]]
        # normalise Q so that Q(0) = 0 for readability; only differences matter
        return sorted(pieces, key=lambda p: p[0])

    def _eval(self, pieces, x):
        x = np.asarray(x, dtype=float)
        q = np.empty_like(x)
        Q = np.empty_like(x)
        for i, (lo, hi, qs, Qs) in enumerate(pieces):
            m = (x >= lo) & ((x < hi) if i < len(pieces) - 1 else (x <= hi))
            if np.any(m):
                q[m] = qs(x[m])
                Q[m] = Qs(x[m])
        return q, Q

    def __call__(self, x, y):
        xb, yb = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        L = self.half_width
        if np.any(np.abs(xb) > L) or np.any(np.abs(yb) > L):
            raise DomainError(f"Green resolvent evaluated outside [-{L}, {L}]")
        qp_y, Qp_y = self._eval(self._plus, yb)
        qm_y, Qm_y = self._eval(self._minus, yb)
        _, Qp_x = self._eval(self._plus, xb)
        _, Qm_x = self._eval(self._minus, xb)
        expo = np.where(xb <= yb, Qp_x - Qp_y, Qm_x - Qm_y)
        out = (2.0 / self.a) / (qp_y - qm_y) * np.exp(expo)
        return float(out) if out.ndim == 0 else out

    def cdf_table(self, x: float, n: int = 16385):
        """Grid and cumulative distribution of ``u1(x, .)`` over the valid window."""
        grid = np.linspace(-self.half_width, self.half_width, n)
        grid = np.unique(np.concatenate([grid, [x]]))
        dens = self(x, grid)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        return grid, dens, cdf

    def sample(self, x: float, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw from ``u1(x, .)`` by inverting the tabulated distribution."""
        grid, dens, cdf = self.cdf_table(x)
        return invert_piecewise_linear(grid, dens, cdf, rng.random(n) * cdf[-1])


def invert_piecewise_linear(grid, dens, cdf, targets):
    """Exact inverse of the CDF of a piecewise-linear density."""
    idx = np.clip(np.searchsorted(cdf, targets, side="right") - 1, 0, len(grid) - 2)
    x0 = grid[idx]
    h = grid[idx + 1] - x0
    d0 = dens[idx]
    slope = (dens[idx + 1] - d0) / h
    rem = targets - cdf[idx]
    # solve d0 z + slope z^2 / 2 = rem for z in [0, h]
    disc = np.maximum(d0 * d0 + 2.0 * slope * rem, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(np.abs(slope) > 1e-14 * np.maximum(d0, 1e-300),
                     2.0 * rem / (d0 + np.sqrt(disc)),
                     rem / np.maximum(d0, 1e-300))
    return x0 + np.clip(np.nan_to_num(z), 0.0, h)


def green_resolvent(model, half_width: float = 25.0, **kwargs) -> GreenResolvent:
    """Green-function resolvent for a one-dimensional diffusion model."""
    if isinstance(model, OuModel):
        drift = lambda x: -model.theta * x
        return GreenResolvent(drift, model.diffusion_var, half_width, breakpoints=(), **kwargs)
    if isinstance(model, WeakDriftDiffusionModel) and model.dim == 1:
        return GreenResolvent(lambda x: float(model.drift(x)), 1.0, half_width, **kwargs)
    raise UnsupportedModelError(f"no resolvent density for {getattr(model, 'kind', model)}")


_GREEN_CACHE: dict = {}


def resolvent_kernel(model, half_width: float = 25.0):
    """Fast vectorised ``u1`` evaluator for a model (cached per model)."""
    key = (model, half_width)
    if key not in _GREEN_CACHE:
        _GREEN_CACHE[key] = green_resolvent(model, half_width)
    return _GREEN_CACHE[key]


def resolvent_density(model, x, y):
    """``u1(x, y)``: time quadrature for OU, Green's function for the 1D weak-drift model."""
    if isinstance(model, OuModel):
        return ou_resolvent_quadrature(model, x, y)
    if isinstance(model, WeakDriftDiffusionModel) and model.dim == 1:
        return resolvent_kernel(model)(x, y)
    raise UnsupportedModelError(f"no resolvent density for {getattr(model, 'kind', model)}")


def sample_resolvent(model, x: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` samples from ``u1(x, .)``."""
    if isinstance(model, OuModel):
        t = rng.exponential(1.0, n)
        mean, var = model.transition_moments(t, x)
        return mean + np.sqrt(var) * rng.standard_normal(n)
    return resolvent_kernel(model).sample(x, n, rng)
