"""`ilab` command line: validation panels, sweeps, sampling, schedule stats.

Exit codes: 0 success, 1 tolerance failure, 2 config error, 3 numerical
failure.  All commands read a JSON config; CSV output is byte-identical for
identical config + seed apart from the timestamped comment line.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    EstimatorError,
    IntegrationError,
    ShapeError,
)
from .harness import (
    CSV_COLUMNS,
    sample_run,
    schedule_report,
    sweep_convergence,
    sweep_dims,
    velocity_check,
)

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _open_csv(path: Path, cfg: ExperimentConfig, command: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = path.open("w", newline="")
    fh.write(
        f"# interpolant-lab {command} generated={datetime.now(timezone.utc).isoformat()}"
        f" config_hash={cfg.config_hash()}\n"
    )
    return fh, csv.writer(fh)


def _write_rows(path: Path, cfg: ExperimentConfig, command: str, rows) -> None:
    fh, writer = _open_csv(path, cfg, command)
    with fh:
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.raw["seed"] = int(args.seed)
    return cfg


def _threads(args) -> int:
    if args.threads is not None:
        return int(args.threads)
    return int(os.environ.get("ILAB_THREADS", "1"))


def cmd_velocity_check(args) -> int:
    cfg = _load(args)
    report = velocity_check(cfg)
    out = Path(args.out)
    fh, writer = _open_csv(out / "velocity_check.csv", cfg, "velocity-check")
    with fh:
        writer.writerow(["panel", "probe", "t", "value", "bound", "passed"])
        for p in report.probes:
            writer.writerow([
                p.panel, p.index, f"{p.t:.6f}", f"{p.value:.6e}",
                f"{p.bound:.6e}", int(p.passed),
            ])
    by_panel: dict[str, list] = {}
    for p in report.probes:
        by_panel.setdefault(p.panel, []).append(p)
    for panel, items in by_panel.items():
        bad = [p for p in items if not p.passed]
        worst = max(p.value / p.bound if p.bound else p.value for p in items)
        status = "ok" if not bad else f"FAIL ({len(bad)}/{len(items)} probes)"
        print(f"{panel:12s} {status:24s} worst ratio {worst:.3g}")
    if not report.passed:
        for p in report.failing():
            print(f"  failed: panel={p.panel} probe={p.index} t={p.t:.4f} "
                  f"value={p.value:.4e} bound={p.bound:.4e}")
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = _load(args)
    result = sweep_convergence(cfg, _threads(args))
    out = Path(args.out)
    _write_rows(out / "convergence.csv", cfg, "convergence", result.rows)
    for name, fit in result.fits.items():
        if result.floor.get(name):
            print(f"{name}: at the estimator noise floor (no slope fit)")
        elif fit is None:
            print(f"{name}: not enough positive TV points to fit a slope")
        else:
            print(f"{name}: TV ~ h^{fit.slope:.3f}  (R^2={fit.r_squared:.4f})")
    if args.svg:
        from .plots import convergence_figure

        convergence_figure(
            result.rows, result.fits, out / "convergence.svg",
            title=f"TV vs h ({cfg.preset_name})",
        )
    return EXIT_OK


def cmd_dim_sweep(args) -> int:
    cfg = _load(args)
    result = sweep_dims(cfg, _threads(args))
    out = Path(args.out)
    _write_rows(out / "dim_sweep.csv", cfg, "dim-sweep", result.rows)
    for name, fit in result.fits.items():
        if fit is None:
            print(f"{name}: not enough positive TV points to fit an exponent")
            continue
        ci = fit.ci95_halfwidth()
        print(f"{name}: TV ~ d^{fit.slope:.3f} +/- {ci:.3f} (95% CI)")
    if args.svg:
        from .plots import dim_sweep_figure

        dim_sweep_figure(
            result.rows, result.fits, out / "dim_sweep.svg",
            title=f"TV vs d ({cfg.preset_name}, h={cfg.h})",
        )
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _load(args)
    ensemble, target = sample_run(cfg, _threads(args))
    out = Path(args.out)
    d = ensemble.terminal_points.shape[1]
    coord_names = [f"y_{j + 1}" for j in range(d)]

    fh, writer = _open_csv(out / "samples.csv", cfg, "sample")
    with fh:
        writer.writerow(["idx"] + coord_names + ["logdet_sum", "rho0_logpdf"])
        for i, idx in enumerate(ensemble.kept_indices):
            row = [int(idx)]
            row += [f"{v:.10e}" for v in ensemble.terminal_points[i]]
            row += [
                f"{ensemble.log_det_sums[i]:.10e}",
                f"{ensemble.initial_log_density[i]:.10e}",
            ]
            writer.writerow(row)

    fh, writer = _open_csv(out / "target_samples.csv", cfg, "sample")
    with fh:
        writer.writerow(["idx"] + coord_names)
        for i, point in enumerate(target):
            writer.writerow([i] + [f"{v:.10e}" for v in point])

    print(f"pushed {len(ensemble.kept_indices)}/{ensemble.n_requested} points "
          f"to t={ensemble.t_end:.4f} ({ensemble.n_dropped} dropped)")
    if args.svg:
        from .plots import sample_figure

        sample_figure(
            ensemble.terminal_points, target, out / "samples.svg",
            title=f"terminal samples ({cfg.preset_name})",
        )
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = _load(args)
    report = schedule_report(cfg)
    times = report.pop("times")
    print(f"kind={report['kind']} h={report['h']} N={report['n_steps']} "
          f"[{report['t0']:.6g}, {report['t_end']:.6g}]")
    print("times:", np.array2string(np.asarray(times), precision=6,
                                    threshold=20, edgeitems=5))
    print(f"max h_k = {report['max_h']:.6g}")
    print(f"max h_k / gamma_bar_k^2 = {report['max_h_over_gamma_bar_sq']:.6g}")
    if "l_hat" in report:
        print(f"L_hat = {report['l_hat']:.4g}; "
              f"h <= 1/(2L): {report['euler_step_ok']}, "
              f"h <= 1/(4L): {report['heun_step_ok']}")
        print(f"Heun side conditions: h <= E|x0-x1|^6^(-1/3): "
              f"{report['heun_moment_ok']}, h_k <= gamma_bar^2/d: "
              f"{report['heun_gamma_ok']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ilab",
        description="stochastic-interpolant ODE laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "velocity-check": cmd_velocity_check,
        "convergence": cmd_convergence,
        "dim-sweep": cmd_dim_sweep,
        "sample": cmd_sample,
        "schedule": cmd_schedule,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default="ilab-out", help="output directory")
        p.add_argument("--svg", action="store_true", help="render SVG figures")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (or env ILAB_THREADS)")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, ShapeError, EstimatorError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
