"""Bounded test functions usable inside the compiled simulation kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# integer codes understood by ``_kernels.eval_f``
KIND_CODES = {
    "one": 0,
    "zero": 1,
    "indicator_le": 2,
    "clipped_square": 3,
    "clipped_identity": 4,
}


@dataclass(frozen=True)
class BoundedFunction:
    """A bounded function of a scalar state.

    ``indicator_le``: ``1{x <= a}``; ``clipped_square``: ``min(x**2, a)``;
    ``clipped_identity``: ``clip(x, -a, a)``.
    """

    kind: str
    a: float = 0.0

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise DomainError(f"unknown function kind {self.kind!r}")
        if self.kind in ("clipped_square", "clipped_identity") and not self.a > 0:
            raise DomainError(f"{self.kind} needs a positive clip level")

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def sup_norm(self) -> float:
        return {
            "one": 1.0,
            "zero": 0.0,
            "indicator_le": 1.0,
            "clipped_square": self.a,
            "clipped_identity": self.a,
        }[self.kind]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "one":
            return np.ones_like(x)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "indicator_le":
            return (x <= self.a).astype(float)
        if self.kind == "clipped_square":
            return np.minimum(x * x, self.a)
        return np.clip(x, -self.a, self.a)

    @classmethod
    def parse(cls, text: str) -> "BoundedFunction":
        """Parse ``"kind"`` or ``"kind:a"``, e.g. ``"clipped_square:25"``."""
        name, _, arg = text.partition(":")
        return cls(name.strip(), float(arg) if arg else 0.0)

    def __str__(self):
        return self.kind if self.kind in ("one", "zero") else f"{self.kind}:{self.a:g}"


def pack(functions) -> tuple[np.ndarray, np.ndarray]:
    """Kernel encoding of a sequence of functions: (codes, params)."""
    codes = np.array([f.code for f in functions], dtype=np.int64)
    params = np.array([f.a for f in functions], dtype=np.float64)
    return codes, params
