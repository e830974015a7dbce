"""Time-grid schedules for the integrators.

Geometric grids keep h_k proportional to the infimum of gamma^2 over the step,
which is what makes the per-step error uniform when the latent scale vanishes
at the endpoints.  Grids are built from exact powers of (1 - h), never by
accumulating increments, so long grids carry no drift.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .interpolants import GammaSchedule

MAX_GRID_POINTS = 10_000_000


class ScheduleKind(enum.Enum):
    UNIFORM = "uniform"
    GEOMETRIC_MID = "geometric-mid"
    GEOMETRIC_VP = "geometric-vp"


@dataclass(frozen=True)
class Schedule:
    """Strictly increasing time grid t_0 < t_1 < ... < t_N inside [0, 1)."""

    times: np.ndarray
    kind: ScheduleKind
    h: float = field(default=float("nan"))

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ConfigError("schedule needs at least two time points")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("schedule times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def step_sizes(self) -> np.ndarray:
        return np.diff(self.times)

    def gamma_bar(self, gamma: GammaSchedule) -> np.ndarray:
        """Per-step inf of gamma over [t_k, t_{k+1}].

        Both supported families have concave gamma^2, so the infimum over any
        subinterval sits at one of its endpoints.
        """
        g = gamma.gamma(self.times)
        return np.minimum(g[:-1], g[1:])


def _check_h(h: float) -> None:
    if not 0.0 < h < 1.0:
        raise ConfigError(f"step scale h must lie in (0, 1), got {h}")


def _check_delta(name: str, value: float) -> None:
    if not 0.0 < value < 0.5:
        raise ConfigError(f"{name} must lie in (0, 0.5), got {value}")


def make_schedule(
    kind: ScheduleKind | str,
    h: float,
    delta_start: float = 1e-2,
    delta_end: float = 1e-2,
) -> Schedule:
    """Build a time grid.

    geometric-mid: t_k = (1-h)^(m-k)/2 up to the midpoint, mirrored above it;
        m is minimal with (1-h)^m/2 <= delta_start; the tail is truncated at
        the first point with 1 - t_k <= delta_end; both endpoints are then
        clamped to exactly delta_start and 1 - delta_end.
    geometric-vp: t_k = 1 - (1-h)^k from t_0 = 0, truncated at the first point
        with 1 - t_k <= delta_end (no start clamp: rho(0) is exact).
    uniform: ceil((t_N - t_0)/h) equal steps on [delta_start, 1 - delta_end].
    """
    kind = ScheduleKind(kind)
    _check_h(h)
    _check_delta("delta_start", delta_start)
    _check_delta("delta_end", delta_end)

    if kind is ScheduleKind.UNIFORM:
        t0, t_end = delta_start, 1.0 - delta_end
        n = max(1, math.ceil((t_end - t0) / h - 1e-12))
        times = np.linspace(t0, t_end, n + 1)
        return Schedule(times, kind, h)

    q = 1.0 - h
    if kind is ScheduleKind.GEOMETRIC_VP:
        # smallest K with (1-h)^K <= delta_end
        n = math.ceil(math.log(delta_end) / math.log(q) - 1e-12)
        if n + 1 > MAX_GRID_POINTS:
            raise ConfigError(f"schedule would need {n} points; h too small")
        times = 1.0 - q ** np.arange(n + 1)
        return Schedule(times, kind, h)

    # geometric-mid
    m = max(1, math.ceil(math.log(2.0 * delta_start) / math.log(q) - 1e-12))
    # mirrored tail: smallest j >= 1 with 1 - t_{m+j} = (1-h)^j / 2 <= delta_end
    j = max(1, math.ceil(math.log(2.0 * delta_end) / math.log(q) - 1e-12))
    if m + j + 1 > MAX_GRID_POINTS:
        raise ConfigError(f"schedule would need {m + j} points; h too small")
    lower = 0.5 * q ** np.arange(m, 0, -1)  # t_0 .. t_{m-1}
    upper = 1.0 - 0.5 * q ** np.arange(1, j + 1)  # t_{m+1} .. t_{m+j}
    times = np.concatenate([lower, [0.5], upper])
    times[0] = delta_start
    times[-1] = 1.0 - delta_end
    return Schedule(times, kind, h)


def refine_schedule(schedule: Schedule, factor: int) -> Schedule:
    """Split every step of `schedule` into `factor` equal substeps."""
    if factor < 1:
        raise ConfigError(f"refinement factor must be >= 1, got {factor}")
    t = schedule.times
    pieces = [
        np.linspace(t[k], t[k + 1], factor + 1)[:-1] for k in range(len(t) - 1)
    ]
    times = np.concatenate(pieces + [t[-1:]])
    return Schedule(times, schedule.kind, schedule.h / factor)


def schedule_stats(schedule: Schedule, gamma: GammaSchedule) -> dict:
    """Summary used by `ilab schedule`: N, max h_k, max h_k / gamma_bar_k^2."""
    h_k = schedule.step_sizes
    gbar = schedule.gamma_bar(gamma)
    with np.errstate(divide="ignore"):
        ratio = np.where(gbar > 0, h_k / np.maximum(gbar, 1e-300) ** 2, np.inf)
    return {
        "n_steps": schedule.n_steps,
        "t0": schedule.t0,
        "t_end": schedule.t_end,
        "max_h": float(h_k.max()),
        "max_h_over_gamma_bar_sq": float(ratio.max()),
    }
