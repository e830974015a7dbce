"""Velocity fields: closed-form mixture drift, score, Jacobian, and oracles.

The drift of the transport ODE is the conditional expectation of the
interpolant's time derivative.  For Gaussian-mixture endpoints under the
independent coupling this is a responsibility-weighted sum over component
pairs:

    r_ij(x)  proportional to  w_i v_j N(x; m_ij, C_ij)
    b_ij(x)  =  (nu_j - mu_i) + A_ij C_ij^-1 (x - m_ij)
    b(t, x)  =  sum_ij r_ij(x) b_ij(x)

Scores and Jacobians follow by differentiating the same expression:

    g_ij(x)  =  -C_ij^-1 (x - m_ij)          s = sum r_ij g_ij
    grad b   =  sum r_ij [ A_ij C_ij^-1 + b_ij (g_ij - s)^T ]

Responsibilities are computed in log space and shifted by the row maximum, so
far-tail points degrade to the nearest-pair limit instead of NaN.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, ShapeError
from .interpolants import InterpolantMode, InterpolantSpec
from .mixtures import GaussianMixture, PairMoments, marginal_mixture, pair_moments

FAR_TAIL_LOG_WEIGHT = -700.0


@dataclass(frozen=True)
class VelocityEval:
    """Closed-form field evaluation at one (t, x)."""

    b: np.ndarray
    jacobian: np.ndarray | None = None
    divergence: float | None = None
    score: np.ndarray | None = None
    far_tail: bool = False


class VelocityField:
    """Batched field interface shared by integrators and probes.

    `velocity` and `jacobian` accept (n, d) batches; `sample_marginal` supplies
    probe points at time t (standard normal unless the field knows its law).
    """

    dim: int
    supports_jacobian: bool = True

    def velocity(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def divergence(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.trace(self.jacobian(t, x), axis1=-2, axis2=-1)

    def sample_marginal(self, t: float, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim))


class MixtureVelocityField(VelocityField):
    """Exact velocity field of a Gaussian-mixture interpolation problem."""

    def __init__(
        self,
        rho0: GaussianMixture | None,
        rho1: GaussianMixture,
        spec: InterpolantSpec,
    ):
        self.rho0 = rho0
        self.rho1 = rho1
        self.spec = spec
        self.dim = rho1.dim
        self._pm_cache: dict[float, PairMoments] = {}

    def pair_moments_at(self, t: float) -> PairMoments:
        # keyed by exact t; entries are pure values, safe to share across threads
        pm = self._pm_cache.get(t)
        if pm is None:
            pm = pair_moments(self.rho0, self.rho1, self.spec, t)
            if len(self._pm_cache) > 65536:
                self._pm_cache.clear()
            self._pm_cache[t] = pm
        return pm

    def marginal(self, t: float) -> GaussianMixture:
        return marginal_mixture(self.rho0, self.rho1, self.spec, t)

    def sample_marginal(self, t, n, rng):
        return self.marginal(t).sample(n, rng)

    def _responsibilities(self, pm: PairMoments, x: np.ndarray):
        logw = pm.pair_logpdfs(x)
        top = logw.max(axis=1)
        r = np.exp(logw - top[:, None])
        r /= r.sum(axis=1, keepdims=True)
        return r, top

    def evaluate(
        self,
        t: float,
        x: np.ndarray,
        want_jacobian: bool = False,
        want_divergence: bool = False,
        want_score: bool = False,
    ) -> dict:
        """Batched evaluation; returns arrays keyed b/jacobian/divergence/score."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ShapeError(f"points have dim {x.shape[1]}, field has {self.dim}")
        pm = self.pair_moments_at(t)
        r, top = self._responsibilities(pm, x)
        diff = x[None, :, :] - pm.means[:, None, :]  # (K, n, d)
        b_pairs = pm.drift_means[:, None, :] + diff @ pm.drift_gains.transpose(0, 2, 1)
        out = {
            "b": np.einsum("nk,kna->na", r, b_pairs),
            "far_tail": top < FAR_TAIL_LOG_WEIGHT,
        }
        if not (want_jacobian or want_divergence or want_score):
            return out
        g_pairs = -(diff @ pm.cov_invs)  # C^-1 symmetric
        score = np.einsum("nk,kna->na", r, g_pairs)
        if want_score:
            out["score"] = score
        if want_jacobian:
            centered = g_pairs - score[None, :, :]
            jac = (r @ pm.drift_gains.reshape(pm.n_pairs, -1)).reshape(
                x.shape[0], self.dim, self.dim
            )
            # sum_k r_k b_k (g_k - s)^T as one batched (n,d,K)@(n,K,d) product
            weighted = (r.T[:, :, None] * b_pairs).transpose(1, 2, 0)
            jac += weighted @ centered.transpose(1, 0, 2)
            out["jacobian"] = jac
            if want_divergence:
                out["divergence"] = np.trace(jac, axis1=-2, axis2=-1)
        elif want_divergence:
            # trace of the Jacobian accumulated without forming it
            centered = g_pairs - score[None, :, :]
            gain_traces = np.trace(pm.drift_gains, axis1=-2, axis2=-1)
            out["divergence"] = r @ gain_traces + np.einsum(
                "nk,kna,kna->n", r, b_pairs, centered
            )
        return out

    def velocity(self, t, x):
        squeeze = np.asarray(x).ndim == 1
        b = self.evaluate(t, x)["b"]
        return b[0] if squeeze else b

    def jacobian(self, t, x):
        squeeze = np.asarray(x).ndim == 1
        jac = self.evaluate(t, x, want_jacobian=True)["jacobian"]
        return jac[0] if squeeze else jac

    def divergence(self, t, x):
        squeeze = np.asarray(x).ndim == 1
        div = self.evaluate(t, x, want_divergence=True)["divergence"]
        return div[0] if squeeze else div

    def score(self, t, x):
        squeeze = np.asarray(x).ndim == 1
        s = self.evaluate(t, x, want_score=True)["score"]
        return s[0] if squeeze else s


def velocity(
    rho0: GaussianMixture | None,
    rho1: GaussianMixture,
    spec: InterpolantSpec,
    t: float,
    x: np.ndarray,
    jacobian: bool = False,
    divergence: bool = False,
    score: bool = False,
) -> VelocityEval:
    """One-shot closed-form evaluation at a single point."""
    field = MixtureVelocityField(rho0, rho1, spec)
    res = field.evaluate(
        t, x, want_jacobian=jacobian, want_divergence=divergence, want_score=score
    )
    return VelocityEval(
        b=res["b"][0],
        jacobian=res["jacobian"][0] if jacobian else None,
        divergence=float(res["divergence"][0]) if divergence else None,
        score=res["score"][0] if score else None,
        far_tail=bool(res["far_tail"][0]),
    )


@dataclass(frozen=True)
class OracleEstimate:
    """Self-normalized Monte-Carlo estimate of the conditional velocity."""

    b_hat: np.ndarray
    stderr: np.ndarray
    ess: float
    n: int
    low_ess: bool


def oracle_velocity_mc(
    rho0: GaussianMixture | None,
    rho1: GaussianMixture,
    spec: InterpolantSpec,
    t: float,
    x: np.ndarray,
    n: int,
    seed: int,
) -> OracleEstimate:
    """Estimate b(t, x) directly from the conditional-expectation definition.

    Draws endpoint pairs from the independent coupling, weights them by the
    Gaussian likelihood of landing at x, and averages the per-draw velocity
    (x1 - x0) + (gamma gamma_dot / gamma^2)(x - I).  The latent z integrates
    out analytically, which is what makes this estimator cheap enough to be
    the validation oracle.
    """
    if n < 10_000:
        raise DomainError(f"oracle needs n >= 1e4 draws, got {n}")
    g2 = float(spec.gamma.gamma_sq(t))
    if not g2 > 0:
        raise DomainError(f"oracle needs gamma(t) > 0, got gamma^2={g2} at t={t}")
    if not 0.0 < t < 1.0:
        raise DomainError(f"oracle needs t in (0, 1), got {t}")
    gdg = float(spec.gamma.gamma_dgamma(t))
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)

    x1 = rho1.sample(n, rng)
    if spec.mode is InterpolantMode.ONE_SIDED_VP:
        interp = t * x1
        drift = x1
    else:
        x0 = rho0.sample(n, rng)
        interp = (1.0 - t) * x0 + t * x1
        drift = x1 - x0

    resid = x[None, :] - interp
    logw = -0.5 * np.einsum("nd,nd->n", resid, resid) / g2
    logw -= logw.max()
    w = np.exp(logw)
    wsum = w.sum()
    wbar = w / wsum
    ess = float(wsum**2 / np.square(w).sum())

    f = drift + (gdg / g2) * resid
    b_hat = wbar @ f
    dev = f - b_hat[None, :]
    stderr = np.sqrt(np.einsum("n,nd->d", wbar**2, dev**2))
    return OracleEstimate(b_hat, stderr, ess, n, ess < 100.0)


def lipschitz_probe(
    field: VelocityField,
    schedule,
    probes_per_step: int,
    seed: int,
) -> float:
    """Empirical sup of the Jacobian Frobenius norm over the schedule's grid."""
    if not field.supports_jacobian:
        raise DomainError("field does not support Jacobian evaluation")
    rng = np.random.default_rng(seed)
    l_hat = 0.0
    for t in schedule.times:
        x = field.sample_marginal(float(t), probes_per_step, rng)
        jac = field.jacobian(float(t), x)
        norms = np.sqrt(np.einsum("nab,nab->n", jac, jac))
        l_hat = max(l_hat, float(norms.max()))
    return l_hat


class PerturbMode(enum.Enum):
    CONSTANT_SHIFT = "constant-shift"
    SINUSOIDAL_IN_X = "sinusoidal-in-x"


class PerturbedField(VelocityField):
    """Base field plus a bounded analytic disturbance eta with ||eta|| <= magnitude."""

    def __init__(self, base: VelocityField, magnitude: float, mode: PerturbMode):
        if magnitude < 0:
            raise DomainError(f"perturbation magnitude must be >= 0, got {magnitude}")
        self.base = base
        self.magnitude = float(magnitude)
        self.mode = PerturbMode(mode)
        self.dim = base.dim
        self.supports_jacobian = base.supports_jacobian
        self._scale = self.magnitude / np.sqrt(self.dim)

    def _eta(self, x: np.ndarray) -> np.ndarray:
        if self.mode is PerturbMode.CONSTANT_SHIFT:
            eta = np.zeros_like(x)
            eta[..., 0] = self.magnitude
            return eta
        return self._scale * np.sin(x)

    def velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.base.velocity(t, x) + self._eta(x)

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        jac = np.array(self.base.jacobian(t, x), copy=True)
        if self.mode is PerturbMode.SINUSOIDAL_IN_X:
            idx = np.arange(self.dim)
            jac[..., idx, idx] += self._scale * np.cos(x)
        return jac

    def sample_marginal(self, t, n, rng):
        return self.base.sample_marginal(t, n, rng)

    def marginal(self, t):
        # initialization and truth densities still come from the clean problem
        if not hasattr(self.base, "marginal"):
            raise ContractError("base field has no known time-t marginal")
        return self.base.marginal(t)


def perturb_field(
    field: VelocityField, magnitude: float, mode: PerturbMode | str
) -> VelocityField:
    """Wrap a field with a controlled drift error for sensitivity studies."""
    if magnitude == 0:
        return field
    return PerturbedField(field, magnitude, PerturbMode(mode))


class ConstantField(VelocityField):
    """b(t, x) = c; exact for both integrators, Jacobian zero."""

    def __init__(self, c: np.ndarray):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.dim = len(self.c)

    def velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.c, x.shape).copy()

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (self.dim, self.dim)
        return np.zeros(shape)


class LinearField(VelocityField):
    """b(t, x) = M x; Jacobian constant equal to M."""

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.dim = self.matrix.shape[0]

    def velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (self.dim, self.dim)
        return np.broadcast_to(self.matrix, shape).copy()
