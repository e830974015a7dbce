"""Gaussian mixtures: endpoint laws and the closed-form time-t marginal.

Under the independent coupling of two mixtures, every (source component,
target component) pair contributes one Gaussian component to the law of x_t,
with moments

    m_ij = (1-t) mu_i + t nu_j
    C_ij = (1-t)^2 Sigma_i + t^2 Gamma_j + gamma^2(t) I
    A_ij = t Gamma_j - (1-t) Sigma_i + gamma(t) gamma_dot(t) I

A_ij is the cross-covariance between x_t and its time derivative given the
pair, which is what the conditional-expectation velocity needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .interpolants import InterpolantMode, InterpolantSpec

MAX_PAIRS = 4096

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianComponent:
    """One weighted Gaussian; the covariance is validated SPD at construction."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(len(mean))
        if cov.shape != (len(mean), len(mean)):
            raise ShapeError(f"cov shape {cov.shape} does not match dim {len(mean)}")
        if not self.weight > 0:
            raise ConfigError(f"component weight must be > 0, got {self.weight}")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("component covariance is not SPD") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return len(self.mean)


class GaussianMixture:
    """Weighted Gaussian mixture with Cholesky-factored components."""

    def __init__(self, components: list[GaussianComponent]):
        if not components:
            raise ConfigError("mixture needs at least one component")
        dim = components[0].dim
        if any(c.dim != dim for c in components):
            raise ShapeError("all components must share one dimension")
        total = sum(c.weight for c in components)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"weights must sum to 1 (got {total!r})")
        self.components = tuple(components)
        self.dim = dim
        self.weights = np.array([c.weight for c in components])
        self.means = np.stack([c.mean for c in components])
        self.covs = np.stack([c.cov for c in components])
        self.chols = np.linalg.cholesky(self.covs)
        self.inv_chols = np.linalg.inv(self.chols)
        # log N(x; mu, Sigma) = -0.5*|L^-1 (x-mu)|^2 - logdet(L) - d/2 log(2pi)
        self._log_norm = (
            np.log(np.diagonal(self.chols, axis1=1, axis2=2)).sum(axis=1)
            + 0.5 * dim * _LOG_2PI
        )

    @property
    def n_components(self) -> int:
        return len(self.components)

    def component_logpdfs(self, x: np.ndarray) -> np.ndarray:
        """(n, K) log densities of each component at each row of x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ShapeError(f"points have dim {x.shape[1]}, mixture has {self.dim}")
        diff = x[:, None, :] - self.means[None, :, :]  # (n, K, d)
        y = np.einsum("kde,nke->nkd", self.inv_chols, diff)
        return -0.5 * np.einsum("nkd,nkd->nk", y, y) - self._log_norm[None, :]

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """log of the mixture density, computed with log-sum-exp."""
        comp = self.component_logpdfs(x) + np.log(self.weights)[None, :]
        m = comp.max(axis=1)
        return m + np.log(np.exp(comp - m[:, None]).sum(axis=1))

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def score(self, x: np.ndarray) -> np.ndarray:
        """Gradient of log density, (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        logw = self.component_logpdfs(x) + np.log(self.weights)[None, :]
        logw -= logw.max(axis=1, keepdims=True)
        r = np.exp(logw)
        r /= r.sum(axis=1, keepdims=True)
        diff = x[:, None, :] - self.means[None, :, :]
        y = np.einsum("kde,nke->nkd", self.inv_chols, diff)
        g = -np.einsum("ked,nke->nkd", self.inv_chols, y)  # -Sigma^-1 (x - mu)
        return np.einsum("nk,nkd->nd", r, g)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ConfigError(f"sample count must be >= 1, got {n}")
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[idx] + np.einsum("nij,nj->ni", self.chols[idx], z)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means


def gmm_logpdf(gmm: GaussianMixture, x: np.ndarray) -> np.ndarray | float:
    out = gmm.logpdf(x)
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def gmm_sample(gmm: GaussianMixture, n: int, seed: int) -> np.ndarray:
    """i.i.d. draws, deterministic in `seed`."""
    return gmm.sample(n, np.random.default_rng(seed))


def isotropic_mixture(means: np.ndarray, var: float, weights=None) -> GaussianMixture:
    means = np.atleast_2d(np.asarray(means, dtype=float))
    k, d = means.shape
    if weights is None:
        weights = np.full(k, 1.0 / k)
    comps = [
        GaussianComponent(w, m, var * np.eye(d)) for w, m in zip(weights, means)
    ]
    return GaussianMixture(comps)


def mixture_from_json(obj: dict) -> GaussianMixture:
    """Parse {"dim": d, "components": [{"weight", "mean", "cov"}]}.

    "cov" is either a dense d x d matrix or the shorthand {"iso": variance}.
    """
    try:
        dim = int(obj["dim"])
        raw = obj["components"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed mixture spec: {exc}") from exc
    comps = []
    for c in raw:
        mean = np.asarray(c["mean"], dtype=float)
        if mean.shape != (dim,):
            raise ConfigError(f"mean {c['mean']} does not have dim {dim}")
        cov = c.get("cov", {"iso": 1.0})
        if isinstance(cov, dict):
            cov = float(cov["iso"]) * np.eye(dim)
        else:
            cov = np.asarray(cov, dtype=float)
        comps.append(GaussianComponent(float(c["weight"]), mean, cov))
    return GaussianMixture(comps)


def mixture_to_json(gmm: GaussianMixture) -> dict:
    return {
        "dim": gmm.dim,
        "components": [
            {"weight": float(c.weight), "mean": c.mean.tolist(), "cov": c.cov.tolist()}
            for c in gmm.components
        ],
    }


@dataclass(frozen=True)
class PairMoments:
    """Sufficient statistics of the pair-conditional law of (x_t, xdot_t).

    Arrays are stacked over the K = K0*K1 component pairs (or K1 components in
    the one-sided VP mode): means (K, d), covs/A (K, d, d), log_weights (K,).
    drift_gains holds A C^-1, the linear response of the conditional velocity.
    """

    t: float
    means: np.ndarray
    covs: np.ndarray
    cross: np.ndarray  # A: Cov(xdot_t, x_t | pair)
    drift_means: np.ndarray  # E[xdot_t | pair] = nu_j - mu_i (or nu_j for VP)
    log_weights: np.ndarray
    chols: np.ndarray
    inv_chols: np.ndarray
    cov_invs: np.ndarray
    drift_gains: np.ndarray
    log_norms: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.log_weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def pair_logpdfs(self, x: np.ndarray) -> np.ndarray:
        """(n, K) array of log[w_ij N(x; m_ij, C_ij)]."""
        diff = np.atleast_2d(x)[None, :, :] - self.means[:, None, :]  # (K, n, d)
        y = diff @ self.inv_chols.transpose(0, 2, 1)
        quad = np.einsum("knd,knd->kn", y, y)
        return (self.log_weights[:, None] - 0.5 * quad - self.log_norms[:, None]).T


def _check_t(spec: InterpolantSpec, t: float) -> None:
    if spec.mode is InterpolantMode.ONE_SIDED_VP:
        if not 0.0 <= t < 1.0:
            raise DomainError(f"one-sided VP marginal needs t in [0, 1), got {t}")
    elif not 0.0 < t < 1.0:
        raise DomainError(f"two-sided marginal needs t in (0, 1), got {t}")


def pair_moments(
    rho0: GaussianMixture | None,
    rho1: GaussianMixture,
    spec: InterpolantSpec,
    t: float,
) -> PairMoments:
    """Moments of every component pair at time t (see module docstring)."""
    _check_t(spec, t)
    d = rho1.dim
    eye = np.eye(d)
    g2 = float(spec.gamma.gamma_sq(t))
    gdg = float(spec.gamma.gamma_dgamma(t))

    if spec.mode is InterpolantMode.ONE_SIDED_VP:
        means = t * rho1.means
        covs = t * t * rho1.covs + g2 * eye
        cross = t * rho1.covs + gdg * eye
        drift = rho1.means.copy()
        logw = np.log(rho1.weights)
    else:
        if rho0 is None:
            raise ConfigError("two-sided interpolant needs a source mixture")
        if rho0.dim != d:
            raise ShapeError(f"endpoint dims differ: {rho0.dim} vs {d}")
        k0, k1 = rho0.n_components, rho1.n_components
        if k0 * k1 > MAX_PAIRS:
            raise ConfigError(
                f"{k0}x{k1} component pairs exceed the cap of {MAX_PAIRS}"
            )
        s = 1.0 - t
        means = (s * rho0.means[:, None, :] + t * rho1.means[None, :, :]).reshape(
            -1, d
        )
        covs = (
            s * s * rho0.covs[:, None] + t * t * rho1.covs[None, :] + g2 * eye
        ).reshape(-1, d, d)
        cross = (t * rho1.covs[None, :] - s * rho0.covs[:, None] + gdg * eye).reshape(
            -1, d, d
        )
        drift = (rho1.means[None, :, :] - rho0.means[:, None, :]).reshape(-1, d)
        logw = (
            np.log(rho0.weights)[:, None] + np.log(rho1.weights)[None, :]
        ).reshape(-1)

    try:
        chols = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise DomainError(
            f"pair covariance degenerate at t={t} (gamma^2={g2})"
        ) from exc
    inv_chols = np.linalg.inv(chols)
    cov_invs = np.einsum("kea,keb->kab", inv_chols, inv_chols)
    gains = np.einsum("kab,kbc->kac", cross, cov_invs)
    log_norms = (
        np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
        + 0.5 * d * _LOG_2PI
    )
    return PairMoments(
        t, means, covs, cross, drift, logw, chols, inv_chols, cov_invs, gains,
        log_norms,
    )


def marginal_mixture(
    rho0: GaussianMixture | None,
    rho1: GaussianMixture,
    spec: InterpolantSpec,
    t: float,
) -> GaussianMixture:
    """Exact law of x_t as a Gaussian mixture over component pairs."""
    pm = pair_moments(rho0, rho1, spec, t)
    w = np.exp(pm.log_weights)
    comps = [
        GaussianComponent(w[k], pm.means[k], pm.covs[k]) for k in range(pm.n_pairs)
    ]
    return GaussianMixture(comps)
