"""Stochastic interpolant definition: latent scale families and the point map.

The interpolant bridges two endpoint laws through

    x_t = (1 - t) x0 + t x1 + gamma(t) z          (two-sided)
    x_t = t x1 + sqrt(1 - t^2) z                  (one-sided, variance preserving)

with z ~ N(0, I).  gamma-dot alone diverges at the endpoints for the
Brownian-bridge family, so the only derivative quantity exposed is the finite
product gamma(t) * gamma_dot(t) = 0.5 * d/dt[gamma^2(t)], which is exactly what
the velocity decomposition b = v + (gamma gamma_dot) s consumes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError


class GammaKind(enum.Enum):
    BROWNIAN_BRIDGE = "brownian-bridge"
    VARIANCE_PRESERVING = "variance-preserving"
    NONE = "none"


class InterpolantMode(enum.Enum):
    TWO_SIDED = "two-sided"
    ONE_SIDED_VP = "one-sided-vp"


@dataclass(frozen=True)
class GammaSchedule:
    """Latent scale family gamma(t).

    Brownian bridge: gamma^2(t) = 2 a t (1 - t), so gamma(0) = gamma(1) = 0.
    Variance preserving: gamma(t) = sqrt(1 - t^2), so gamma(0) = 1, gamma(1) = 0.
    None: gamma identically zero (deterministic linear bridge).
    """

    kind: GammaKind = GammaKind.BROWNIAN_BRIDGE
    a: float = 1.0

    def __post_init__(self):
        if self.kind is GammaKind.BROWNIAN_BRIDGE and not self.a > 0:
            raise DomainError(f"Brownian-bridge scale a must be > 0, got {self.a}")

    def gamma_sq(self, t):
        """gamma^2(t); valid on [0, 1]."""
        t = np.asarray(t, dtype=float)
        if self.kind is GammaKind.BROWNIAN_BRIDGE:
            return 2.0 * self.a * t * (1.0 - t)
        if self.kind is GammaKind.VARIANCE_PRESERVING:
            return 1.0 - t * t
        return np.zeros_like(t)

    def gamma(self, t):
        return np.sqrt(self.gamma_sq(t))

    def gamma_dgamma(self, t):
        """gamma(t) * gamma_dot(t) = 0.5 * d/dt[gamma^2(t)]; finite on (0, 1)."""
        t = np.asarray(t, dtype=float)
        if self.kind is GammaKind.BROWNIAN_BRIDGE:
            return self.a * (1.0 - 2.0 * t)
        if self.kind is GammaKind.VARIANCE_PRESERVING:
            return -t
        return np.zeros_like(t)


@dataclass(frozen=True)
class InterpolantSpec:
    """Interpolant mode plus its latent scale.

    One-sided VP fixes gamma to the variance-preserving family (the x0 endpoint
    is absorbed into the latent: rho(0) = N(0, I)).
    """

    mode: InterpolantMode = InterpolantMode.TWO_SIDED
    gamma: GammaSchedule = GammaSchedule()

    def __post_init__(self):
        if (
            self.mode is InterpolantMode.ONE_SIDED_VP
            and self.gamma.kind is not GammaKind.VARIANCE_PRESERVING
        ):
            object.__setattr__(
                self, "gamma", GammaSchedule(kind=GammaKind.VARIANCE_PRESERVING)
            )


def gamma_eval(spec: InterpolantSpec, t: float) -> tuple[float, float]:
    """Return (gamma(t), gamma(t)*gamma_dot(t)) for t in the open interval (0, 1)."""
    if not 0.0 < t < 1.0:
        raise DomainError(f"t must lie in (0, 1), got {t}")
    g = spec.gamma
    return float(g.gamma(t)), float(g.gamma_dgamma(t))


def interp_point(
    spec: InterpolantSpec,
    t: float,
    x0: np.ndarray,
    x1: np.ndarray,
    z: np.ndarray,
) -> np.ndarray:
    """Evaluate the interpolant x_t for one draw (x0, x1, z).

    Accepts (d,) vectors or (n, d) batches; all three arrays must share a shape.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    z = np.asarray(z, dtype=float)
    if x0.shape != x1.shape or x0.shape != z.shape:
        raise ShapeError(
            f"x0/x1/z shapes differ: {x0.shape}, {x1.shape}, {z.shape}"
        )
    if spec.mode is InterpolantMode.ONE_SIDED_VP:
        return t * x1 + np.sqrt(max(1.0 - t * t, 0.0)) * z
    g = float(spec.gamma.gamma(t))
    return (1.0 - t) * x0 + t * x1 + g * z
