"""Named endpoint-distribution presets for the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mixtures import GaussianMixture, isotropic_mixture

PRESET_NAMES = (
    "symmetric",
    "shift",
    "bimodal-1d",
    "grid-checker-2d",
    "iso-mix-d",
)


@dataclass(frozen=True)
class Task:
    name: str
    rho0: GaussianMixture
    rho1: GaussianMixture

    @property
    def dim(self) -> int:
        return self.rho1.dim


def _checker_means() -> np.ndarray:
    """Centers of the 8 alternating cells of a 4x4 grid over [-2, 2]^2."""
    centers = np.array([-1.5, -0.5, 0.5, 1.5])
    means = [
        (cx, cy)
        for i, cx in enumerate(centers)
        for j, cy in enumerate(centers)
        if (i + j) % 2 == 0
    ]
    return np.array(means)


def _ring_means(k: int = 8, radius: float = 2.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(k) / k
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def make_task(name: str, d: int | None = None) -> Task:
    """Instantiate a named preset; `d` applies to the d-parametrized ones."""
    if name == "symmetric":
        dim = d or 1
        std = isotropic_mixture(np.zeros((1, dim)), 1.0)
        return Task(name, std, std)
    if name == "shift":
        dim = d or 1
        mu = np.zeros((1, dim))
        nu = np.zeros((1, dim))
        nu[0, 0] = 2.0
        return Task(name, isotropic_mixture(mu, 1.0), isotropic_mixture(nu, 1.0))
    if name == "bimodal-1d":
        if d not in (None, 1):
            raise ConfigError("bimodal-1d is one-dimensional")
        rho0 = isotropic_mixture(np.zeros((1, 1)), 1.0)
        rho1 = isotropic_mixture(np.array([[-1.5], [1.5]]), 0.25)
        return Task(name, rho0, rho1)
    if name == "grid-checker-2d":
        if d not in (None, 2):
            raise ConfigError("grid-checker-2d is two-dimensional")
        rho0 = isotropic_mixture(_ring_means(), 0.09)
        rho1 = isotropic_mixture(_checker_means(), 0.10)
        return Task(name, rho0, rho1)
    if name == "iso-mix-d":
        dim = d or 2
        # +/-1 in every coordinate: the component separation grows like
        # sqrt(d), the bounded-per-dimension regime where the Lipschitz
        # constant (and hence the fixed-h TV error) grows with d.
        ones = np.ones((1, dim))
        mix = isotropic_mixture(np.concatenate([-ones, ones]), 1.0)
        return Task(name, mix, mix)
    raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
