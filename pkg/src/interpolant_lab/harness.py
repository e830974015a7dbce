"""Experiment harness: TV measurement runs, sweeps, and validation panels.

Everything here is deterministic given the config seed; per-run seeds are
derived by hashing (master seed, integrator, h, d) so that matching runs in
different commands reproduce each other exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError
from .fields import MixtureVelocityField, VelocityField, oracle_velocity_mc
from .metrics import (
    MetricKind,
    SlopeFit,
    TVEstimate,
    continuity_residual,
    default_grid,
    fit_loglog_slope,
    tv_density_ratio,
    tv_histogram,
)
from .numdiff import gradient as fd_gradient, jacobian as fd_jacobian
from .schedules import Schedule, schedule_stats
from .solvers import IntegratorKind, push_ensemble

# Panel tolerances (pinned; the acceptance suite asserts at exactly these).
ORACLE_SIGMAS = 4.0
JAC_RTOL = 1e-5
JAC_ATOL = 1e-6
SCORE_RTOL = 1e-5
SCORE_ATOL = 1e-6
DIV_TRACE_TOL = 1e-10
CONTINUITY_REL_TOL = 1e-4
FD_STEP = 1e-5
CONTINUITY_FD_STEP = 1e-4
FLOOR_SIGMAS = 5.0

CSV_COLUMNS = (
    "config_hash",
    "preset",
    "integrator",
    "schedule_kind",
    "h",
    "N",
    "d",
    "metric",
    "tv",
    "tv_stderr",
    "n_samples",
    "seed",
)


def derive_seed(master: int, *parts) -> int:
    """Stable sub-seed from the master seed and run coordinates."""
    text = ":".join([str(master)] + [repr(p) for p in parts])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class RunRow:
    config_hash: str
    preset: str
    integrator: str
    schedule_kind: str
    h: float
    n_steps: int
    d: int
    metric: str
    tv: float
    tv_stderr: float
    n_samples: int
    seed: int

    def as_csv(self) -> list:
        return [
            self.config_hash, self.preset, self.integrator, self.schedule_kind,
            f"{self.h:.10g}", self.n_steps, self.d, self.metric,
            f"{self.tv:.10e}", f"{self.tv_stderr:.10e}", self.n_samples, self.seed,
        ]


def measure_tv(
    run_field: VelocityField,
    truth_field: MixtureVelocityField,
    schedule: Schedule,
    integrator: IntegratorKind,
    n: int,
    seed: int,
    metric: MetricKind,
    threads: int | None = None,
) -> tuple[TVEstimate, object]:
    """Push an ensemble and estimate TV against the exact terminal marginal."""
    t_end = schedule.t_end
    if metric is MetricKind.DENSITY_RATIO:
        ensemble = push_ensemble(
            run_field, schedule, n, integrator, seed, track_logdet=True,
            threads=threads,
        )
        true_marginal = truth_field.marginal(t_end)
        return tv_density_ratio(ensemble, true_marginal.logpdf), ensemble
    ensemble = push_ensemble(
        run_field, schedule, n, integrator, seed, track_logdet=False,
        threads=threads,
    )
    target = truth_field.marginal(t_end).sample(
        n, np.random.default_rng(derive_seed(seed, "target"))
    )
    grid = default_grid(target)
    return tv_histogram(ensemble.terminal_points, target, grid), ensemble


def _truth_field(cfg: ExperimentConfig, d: int | None = None) -> MixtureVelocityField:
    task = cfg.task(d)
    return MixtureVelocityField(task.rho0, task.rho1, cfg.interpolant_spec())


@dataclass
class SweepResult:
    rows: list[RunRow]
    fits: dict[str, SlopeFit | None]
    floor: dict[str, bool] = dc_field(default_factory=dict)


def sweep_convergence(cfg: ExperimentConfig, threads: int | None = None) -> SweepResult:
    """TV-vs-h sweep: one row per (integrator, h), slope fit per integrator."""
    hs = cfg.h_list
    if hs is None or len(hs) < 4:
        raise ConfigError("convergence sweep needs schedule.h_list with >= 4 values")
    if max(hs) / min(hs) < 8.0:
        raise ConfigError("h_list must span at least a factor of 8")
    metric = MetricKind(cfg.metric)
    chash = cfg.config_hash()
    truth = _truth_field(cfg)
    run_field = cfg.field()
    d = truth.dim

    rows: list[RunRow] = []
    fits: dict[str, SlopeFit | None] = {}
    floor: dict[str, bool] = {}
    for name in cfg.integrators:
        kind = IntegratorKind(name)
        pairs = []
        for h in hs:
            schedule = cfg.schedule(h)
            seed = derive_seed(cfg.seed, name, h, d)
            est, _ = measure_tv(
                run_field, truth, schedule, kind, cfg.n_samples, seed, metric,
                threads,
            )
            rows.append(RunRow(
                chash, cfg.preset_name, name, cfg.schedule_kind.value, h,
                schedule.n_steps, d, metric.value, est.value, est.stderr,
                cfg.n_samples, seed,
            ))
            if est.value > 0:
                pairs.append((h, est.value))
        sub = [r for r in rows if r.integrator == name]
        floor[name] = all(r.tv <= FLOOR_SIGMAS * r.tv_stderr for r in sub)
        fits[name] = fit_loglog_slope(pairs) if len(pairs) >= 3 and not floor[name] else None
    return SweepResult(rows, fits, floor)


def sweep_dims(cfg: ExperimentConfig, threads: int | None = None) -> SweepResult:
    """TV-vs-d sweep at fixed h; growth exponent fitted in log d."""
    dims = cfg.dims
    if dims is None or len(dims) < 3:
        raise ConfigError("dimension sweep needs a 'dims' list with >= 3 values")
    if any(b <= a for a, b in zip(dims, dims[1:])):
        raise ConfigError("dims must be strictly increasing")
    if max(dims) > 64:
        raise ConfigError("density tracking is capped at d <= 64")
    if MetricKind(cfg.metric) is not MetricKind.DENSITY_RATIO:
        raise ConfigError("dimension sweep requires the density-ratio metric")
    h = cfg.h
    if h is None:
        raise ConfigError("dimension sweep needs a fixed schedule.h")
    chash = cfg.config_hash()
    schedule = cfg.schedule(h)

    rows: list[RunRow] = []
    fits: dict[str, SlopeFit | None] = {}
    for name in cfg.integrators:
        kind = IntegratorKind(name)
        pairs = []
        for d in dims:
            truth = _truth_field(cfg, d)
            run_field = cfg.field(d)
            seed = derive_seed(cfg.seed, name, h, d)
            est, _ = measure_tv(
                run_field, truth, schedule, kind, cfg.n_samples, seed,
                MetricKind.DENSITY_RATIO, threads,
            )
            rows.append(RunRow(
                chash, cfg.preset_name, name, cfg.schedule_kind.value, h,
                schedule.n_steps, d, MetricKind.DENSITY_RATIO.value, est.value,
                est.stderr, cfg.n_samples, seed,
            ))
            if est.value > 0:
                pairs.append((d, est.value))
        fits[name] = fit_loglog_slope(pairs) if len(pairs) >= 3 else None
    return SweepResult(rows, fits)


# -- velocity validation panels ---------------------------------------------


@dataclass
class ProbeResult:
    panel: str
    index: int
    t: float
    value: float
    bound: float
    passed: bool


@dataclass
class ValidationReport:
    probes: list[ProbeResult]
    passed: bool

    def failing(self) -> list[ProbeResult]:
        return [p for p in self.probes if not p.passed]


def _draw_probes(field: MixtureVelocityField, n: int, rng, t_lo=0.15, t_hi=0.85):
    out = []
    for _ in range(n):
        t = float(rng.uniform(t_lo, t_hi))
        x = field.marginal(t).sample(1, rng)[0]
        out.append((t, x))
    return out


def velocity_check(
    cfg: ExperimentConfig,
    oracle_n: int | None = None,
    oracle_probes: int | None = None,
    deriv_probes: int = 50,
    continuity_probes: int = 30,
) -> ValidationReport:
    """Closed-form-vs-oracle, derivative-vs-FD, and transport-residual panels."""
    opts = cfg.raw.get("oracle", {})
    oracle_n = oracle_n or int(opts.get("n", 1_000_000))
    oracle_probes = oracle_probes or int(opts.get("probes", 20))
    task = cfg.task()
    spec = cfg.interpolant_spec()
    truth = _truth_field(cfg)
    run_field = cfg.field()  # includes any configured perturbation
    rng = np.random.default_rng(derive_seed(cfg.seed, "velocity-check"))
    probes: list[ProbeResult] = []

    # oracle panel: closed form within ORACLE_SIGMAS standard errors
    for i, (t, x) in enumerate(_draw_probes(truth, oracle_probes, rng)):
        est = oracle_velocity_mc(
            task.rho0, task.rho1, spec, t, x, oracle_n,
            derive_seed(cfg.seed, "oracle", i),
        )
        b = np.atleast_1d(run_field.velocity(t, x))
        gap = np.abs(b - est.b_hat)
        bound = ORACLE_SIGMAS * est.stderr
        # worst coordinate, normalized so 1.0 is the pass/fail line
        ratio = float((gap / np.maximum(bound, 1e-300)).max())
        probes.append(ProbeResult("oracle", i, t, ratio, 1.0, ratio <= 1.0))

    # derivative panel: Jacobian and score against central differences
    for i, (t, x) in enumerate(_draw_probes(truth, deriv_probes, rng)):
        jac = run_field.jacobian(t, x)
        jac_fd = fd_jacobian(lambda y: run_field.velocity(t, y), x, FD_STEP)
        err = np.abs(jac - jac_fd)
        tol = np.maximum(JAC_ATOL, JAC_RTOL * np.abs(jac_fd))
        ratio = float((err / tol).max())
        probes.append(ProbeResult("jacobian", i, t, ratio, 1.0, ratio <= 1.0))

        if hasattr(run_field, "score"):
            s = run_field.score(t, x)
            marg = truth.marginal(t)
            s_fd = fd_gradient(lambda y: float(marg.logpdf(y[None, :])[0]), x, FD_STEP)
            err_s = np.abs(s - s_fd)
            tol_s = np.maximum(SCORE_ATOL, SCORE_RTOL * np.abs(s_fd))
            ratio_s = float((err_s / tol_s).max())
            probes.append(ProbeResult("score", i, t, ratio_s, 1.0, ratio_s <= 1.0))

        if hasattr(run_field, "evaluate"):
            res = run_field.evaluate(t, x[None, :], want_divergence=True)
            div_fast = float(res["divergence"][0])
            div_trace = float(np.trace(jac))
            gap_div = abs(div_fast - div_trace)
            probes.append(ProbeResult(
                "divergence", i, t, gap_div, DIV_TRACE_TOL, gap_div <= DIV_TRACE_TOL
            ))

    # continuity panel: transport-equation residual
    for i, (t, x) in enumerate(_draw_probes(truth, continuity_probes, rng)):
        resid = continuity_residual(
            task.rho0, task.rho1, spec, t, x, CONTINUITY_FD_STEP
        )
        rho = float(truth.marginal(t).pdf(x[None, :])[0])
        bound = CONTINUITY_REL_TOL * max(rho, 1e-12)
        probes.append(ProbeResult("continuity", i, t, resid, bound, resid <= bound))

    return ValidationReport(probes, all(p.passed for p in probes))


def sample_run(cfg: ExperimentConfig, threads: int | None = None):
    """Push one ensemble and draw matching exact target samples."""
    schedule = cfg.schedule()
    run_field = cfg.field()
    truth = _truth_field(cfg)
    name = cfg.integrators[0]
    seed = derive_seed(cfg.seed, name, schedule.h, truth.dim)
    ensemble = push_ensemble(
        run_field, schedule, cfg.n_samples, IntegratorKind(name), seed,
        track_logdet=True, threads=threads,
    )
    target = truth.marginal(schedule.t_end).sample(
        cfg.n_samples, np.random.default_rng(derive_seed(seed, "target"))
    )
    return ensemble, target


def schedule_report(cfg: ExperimentConfig) -> dict:
    """Grid statistics plus the step-size conditions of the two integrators."""
    h = cfg.h if cfg.h is not None else (cfg.h_list or [None])[0]
    schedule = cfg.schedule(h)
    spec = cfg.interpolant_spec()
    stats = schedule_stats(schedule, spec.gamma)
    report = {"kind": cfg.schedule_kind.value, "h": h, **stats,
              "times": schedule.times}
    if not cfg.raw.get("task"):
        return report
    task = cfg.task()
    from .fields import lipschitz_probe

    field = _truth_field(cfg)
    l_hat = lipschitz_probe(field, schedule, 64, derive_seed(cfg.seed, "lhat"))
    rng = np.random.default_rng(derive_seed(cfg.seed, "m6"))
    x0 = task.rho0.sample(20_000, rng)
    x1 = task.rho1.sample(20_000, rng)
    m6 = float(np.mean(np.sum((x0 - x1) ** 2, axis=1) ** 3))
    h_max = stats["max_h"]
    gbar = schedule.gamma_bar(spec.gamma)
    gb2_min = float((gbar**2).min()) if np.all(gbar > 0) else 0.0
    report.update({
        "l_hat": l_hat,
        "euler_step_ok": l_hat == 0 or h_max <= 1 / (2 * l_hat),
        "heun_step_ok": l_hat == 0 or h_max <= 1 / (4 * l_hat),
        "m6_estimate": m6,
        "heun_moment_ok": h_max <= m6 ** (-1 / 3) if m6 > 0 else True,
        "heun_gamma_ok": bool(
            np.all(schedule.step_sizes <= gbar**2 / field.dim)
        ) if gb2_min > 0 else False,
    })
    return report
