"""Polynomial rate functions induced by a concave drift function.

For ``Phi(v) = c * v**phi`` with ``0 <= phi < 1`` every quantity has a
closed form:

* ``H(u) = (u**(1-phi) - 1) / (c (1-phi))``
* ``H^{-1}(s) = (1 + c (1-phi) s) ** (1/(1-phi))``
* ``r(s) = Phi(H^{-1}(s)) = c (1 + c (1-phi) s) ** kappa``, ``kappa = phi/(1-phi)``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class PhiSpec:
    """Concave drift function ``Phi(v) = c * v**phi_exponent`` on ``[1, inf)``."""

    c: float
    phi_exponent: float

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise DomainError(f"Phi scale c must be positive, got {self.c}")
        if not (0.0 <= self.phi_exponent < 1.0):
            raise DomainError(f"Phi exponent must lie in [0, 1), got {self.phi_exponent}")

    def __call__(self, v):
        return self.c * np.power(v, self.phi_exponent)

    def derivative(self, v):
        return self.c * self.phi_exponent * np.power(v, self.phi_exponent - 1.0)

    @property
    def p_order(self) -> float:
        """Highest polynomial moment order ``1/(1-phi)`` granted by the drift."""
        return 1.0 / (1.0 - self.phi_exponent)

    def rate(self) -> "RatePoly":
        return RatePoly.from_phi(self)


@dataclass(frozen=True)
class RatePoly:
    c: float
    phi_exponent: float
    kappa: float

    @classmethod
    def from_phi(cls, spec: PhiSpec) -> "RatePoly":
        phi = spec.phi_exponent
        return cls(c=spec.c, phi_exponent=phi, kappa=phi / (1.0 - phi))

    @property
    def phi(self) -> PhiSpec:
        return PhiSpec(self.c, self.phi_exponent)


def _as_out(values, like):
    return float(values) if np.ndim(like) == 0 else values


def h_phi(spec: PhiSpec, u):
    """``H(u) = int_1^u ds / Phi(s)``; vectorised over ``u >= 1``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr >= 1.0)):
        raise DomainError("h_phi requires u >= 1")
    one_minus = 1.0 - spec.phi_exponent
    if spec.phi_exponent == 0.0:
        out = (u_arr - 1.0) / spec.c
    else:
        # expm1/log keeps relative accuracy for u close to 1
        out = np.expm1(one_minus * np.log(u_arr)) / (spec.c * one_minus)
    return _as_out(out, u)


def h_phi_inv(spec: PhiSpec, s):
    """Inverse of :func:`h_phi`; maps ``[0, inf)`` onto ``[1, inf)``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(~(s_arr >= 0.0)):
        raise DomainError("h_phi_inv requires s >= 0")
    one_minus = 1.0 - spec.phi_exponent
    out = np.exp(np.log1p(spec.c * one_minus * s_arr) / one_minus)
    return _as_out(out, s)


def rate(rp: RatePoly, s):
    """``r(s) = c (1 + c (1-phi) s)**kappa`` for ``s >= 0``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(~(s_arr >= 0.0)):
        raise DomainError("rate requires s >= 0")
    one_minus = 1.0 - rp.phi_exponent
    out = rp.c * np.exp(rp.kappa * np.log1p(rp.c * one_minus * s_arr))
    return _as_out(out, s)


def rate_integral(rp: RatePoly, t):
    """``int_0^t r(s) ds``.

    The antiderivative of ``c (1 + a s)**kappa`` with ``a = c (1-phi)`` is
    ``(1 + a s)**(kappa+1) / ((1-phi)(kappa+1))``; ``(1-phi)(kappa+1) = 1``
    so the integral reduces to ``H^{-1}(t) - 1``.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(~(t_arr >= 0.0)):
        raise DomainError("rate_integral requires t >= 0")
    one_minus = 1.0 - rp.phi_exponent
    out = np.expm1(np.log1p(rp.c * one_minus * t_arr) / one_minus)
    return _as_out(out, t)


def subadditivity_constant(rp: RatePoly) -> float:
    """Constant ``c'`` with ``r(t+s) <= c' (r(t) + r(s))``."""
    return 2.0**rp.kappa + 1.0


def lower_order_constant(rp: RatePoly) -> float:
    """Constant ``k`` with ``r(s) >= k s**kappa`` for ``s >= 1``."""
    one_minus = 1.0 - rp.phi_exponent
    return rp.c * min(1.0, (rp.c * one_minus) ** rp.kappa)
