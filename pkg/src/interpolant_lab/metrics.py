"""Total-variation estimators and convergence-order fitting.

Two TV estimators with complementary regimes:

* histogram: binned L1 distance between two sample sets, usable up to d = 3;
  stderr from a 20-fold sample-split jackknife.
* density-ratio: E_{y ~ rho_hat}[(1 - rho(y)/rho_hat(y))_+] with rho_hat
  exact from change of variables along the discrete scheme; unbiased up to
  Monte-Carlo noise and dimension-free, so it is the primary estimator.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, DomainError, EstimatorError
from .interpolants import InterpolantSpec
from .mixtures import GaussianMixture, marginal_mixture

# Log-density differences below this count as exact ties: per-step logdet
# accumulation carries ~N*eps of roundoff, so smaller gaps are FP dust, and
# keeping their positive part would bias the b=0 null case away from zero.
LOG_RATIO_FLOOR = 1e-12

JACKKNIFE_FOLDS = 20

# two-sided 95% t quantiles by degrees of freedom (capped at 30 -> normal)
_T95 = {
    1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447, 7: 2.365,
    8: 2.306, 9: 2.262, 10: 2.228, 15: 2.131, 20: 2.086, 30: 2.042,
}


class MetricKind(enum.Enum):
    HISTOGRAM = "histogram"
    DENSITY_RATIO = "density-ratio"


@dataclass(frozen=True)
class TVEstimate:
    value: float
    stderr: float
    method: MetricKind
    n_used: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise DomainError(f"TV estimate outside [0, 1]: {self.value}")


@dataclass(frozen=True)
class HistogramGrid:
    """Axis-aligned binning grid; out-of-range points clamp to the edge bins."""

    lower: np.ndarray
    upper: np.ndarray
    bins_per_dim: int

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or np.any(upper <= lower):
            raise DomainError("grid needs upper > lower componentwise")
        if self.bins_per_dim < 1:
            raise DomainError("bins_per_dim must be >= 1")
        if self.bins_per_dim ** len(lower) > 10_000_000:
            raise DomainError("grid exceeds the 1e7 total-bin cap")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def total_bins(self) -> int:
        return self.bins_per_dim ** self.dim

    def bin_indices(self, x: np.ndarray) -> np.ndarray:
        """Flattened bin index per point, clamping overflow to edge bins."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        width = (self.upper - self.lower) / self.bins_per_dim
        idx = np.floor((x - self.lower) / width).astype(np.int64)
        np.clip(idx, 0, self.bins_per_dim - 1, out=idx)
        flat = idx[:, 0]
        for j in range(1, self.dim):
            flat = flat * self.bins_per_dim + idx[:, j]
        return flat


def default_grid(reference_samples: np.ndarray, bins_per_dim: int | None = None) -> HistogramGrid:
    """Grid spanning the reference samples, padded by three bin widths."""
    x = np.atleast_2d(np.asarray(reference_samples, dtype=float))
    d = x.shape[1]
    if bins_per_dim is None:
        bins_per_dim = {1: 100, 2: 60, 3: 30}.get(d, 30)
    lo, hi = x.min(axis=0), x.max(axis=0)
    width = (hi - lo) / bins_per_dim
    return HistogramGrid(lo - 3 * width, hi + 3 * width, bins_per_dim)


def tv_histogram(
    samples_p: np.ndarray,
    samples_q: np.ndarray,
    grid: HistogramGrid,
) -> TVEstimate:
    """0.5 * sum_bins |p_hat - q_hat| with jackknife stderr."""
    p = np.atleast_2d(np.asarray(samples_p, dtype=float))
    q = np.atleast_2d(np.asarray(samples_q, dtype=float))
    if p.shape[1] != q.shape[1] or p.shape[1] != grid.dim:
        raise EstimatorError("sample/grid dimensions disagree")
    if grid.dim > 3:
        raise EstimatorError(
            "histogram TV is limited to d <= 3; use the density-ratio estimator"
        )
    if len(p) < 1000 or len(q) < 1000:
        raise EstimatorError("histogram TV needs at least 1e3 samples per side")

    ip, iq = grid.bin_indices(p), grid.bin_indices(q)
    nbins = grid.total_bins

    # per-fold histograms so the leave-one-fold-out TVs come cheap
    folds_p = np.stack([
        np.bincount(ip[f::JACKKNIFE_FOLDS], minlength=nbins)
        for f in range(JACKKNIFE_FOLDS)
    ])
    folds_q = np.stack([
        np.bincount(iq[f::JACKKNIFE_FOLDS], minlength=nbins)
        for f in range(JACKKNIFE_FOLDS)
    ])
    tot_p, tot_q = folds_p.sum(axis=0), folds_q.sum(axis=0)

    def tv_of(cp, cq):
        return 0.5 * float(np.abs(cp / cp.sum() - cq / cq.sum()).sum())

    value = tv_of(tot_p, tot_q)
    loo = np.array([
        tv_of(tot_p - folds_p[f], tot_q - folds_q[f])
        for f in range(JACKKNIFE_FOLDS)
    ])
    k = JACKKNIFE_FOLDS
    stderr = math.sqrt((k - 1) / k * float(np.square(loo - loo.mean()).sum()))
    return TVEstimate(value, stderr, MetricKind.HISTOGRAM, len(p) + len(q))


def tv_density_ratio(ensemble, true_logpdf: Callable[[np.ndarray], np.ndarray]) -> TVEstimate:
    """TV via the identity TV = E_{y~rho_hat}[(1 - rho(y)/rho_hat(y))_+].

    `ensemble` must carry density tracking (log_det_sums and
    initial_log_density); `true_logpdf` is the closed-form log density of the
    exact marginal at the terminal time.
    """
    if ensemble.log_det_sums is None or ensemble.initial_log_density is None:
        raise ContractError("density-ratio TV needs an ensemble with density tracking")
    log_rho_hat = ensemble.rho_hat_logpdf()
    log_rho = np.asarray(true_logpdf(ensemble.terminal_points), dtype=float)
    delta = log_rho - log_rho_hat
    delta[np.abs(delta) < LOG_RATIO_FLOOR] = 0.0
    # (1 - rho/rho_hat)_+ = 1 - exp(delta) on {delta < 0}, else 0
    vals = -np.expm1(np.minimum(delta, 0.0))
    n = len(vals)
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return TVEstimate(min(value, 1.0), stderr, MetricKind.DENSITY_RATIO, n)


def continuity_residual(
    rho0: GaussianMixture | None,
    rho1: GaussianMixture,
    spec: InterpolantSpec,
    t: float,
    x: np.ndarray,
    fd_step: float = 1e-4,
) -> float:
    """|d/dt rho + div(rho b)| at (t, x); d/dt by central differences.

    The analytic part uses div(rho b) = rho * (div b + s . b).
    """
    from .fields import MixtureVelocityField

    if not (0.0 < t - fd_step and t + fd_step < 1.0):
        raise DomainError(f"t +/- fd_step must stay inside (0, 1), got t={t}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rho_plus = marginal_mixture(rho0, rho1, spec, t + fd_step).pdf(x[None, :])[0]
    rho_minus = marginal_mixture(rho0, rho1, spec, t - fd_step).pdf(x[None, :])[0]
    d_rho_dt = (rho_plus - rho_minus) / (2.0 * fd_step)

    field = MixtureVelocityField(rho0, rho1, spec)
    res = field.evaluate(t, x[None, :], want_divergence=True, want_score=True)
    rho_t = float(field.marginal(t).pdf(x[None, :])[0])
    div_term = rho_t * (
        float(res["divergence"][0]) + float(res["score"][0] @ res["b"][0])
    )
    return abs(float(d_rho_dt) + div_term)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    slope_stderr: float = float("nan")

    def ci95_halfwidth(self) -> float:
        df = self.n_points - 2
        if df < 1 or not math.isfinite(self.slope_stderr):
            return float("inf")
        keys = sorted(_T95)
        key = next((k for k in keys if df <= k), 30)
        return _T95[key] * self.slope_stderr


def fit_loglog_slope(pairs: list[tuple[float, float]]) -> SlopeFit:
    """OLS of log(err) on log(h)."""
    if len(pairs) < 3:
        raise DomainError(f"need at least 3 (h, err) pairs, got {len(pairs)}")
    h = np.array([p[0] for p in pairs], dtype=float)
    e = np.array([p[1] for p in pairs], dtype=float)
    if np.any(h <= 0) or np.any(e <= 0):
        raise DomainError("slope fit needs strictly positive h and err")
    if len(np.unique(h)) != len(h):
        raise DomainError("h values must be distinct")
    lx, ly = np.log(h), np.log(e)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.square(ly - pred).sum())
    ss_tot = float(np.square(ly - ly.mean()).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    df = len(h) - 2
    if df > 0:
        sxx = float(np.square(lx - lx.mean()).sum())
        slope_se = math.sqrt(ss_res / df / sxx) if sxx > 0 else float("nan")
    else:
        slope_se = float("nan")
    return SlopeFit(float(slope), float(intercept), float(r2), len(h), slope_se)
