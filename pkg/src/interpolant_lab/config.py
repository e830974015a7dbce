"""JSON experiment configuration: parsing, validation, hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fields import MixtureVelocityField, PerturbMode, VelocityField, perturb_field
from .interpolants import GammaKind, GammaSchedule, InterpolantMode, InterpolantSpec
from .mixtures import mixture_from_json
from .presets import Task, make_task
from .schedules import Schedule, ScheduleKind, make_schedule

DEFAULTS = {
    "interpolant": {"mode": "two-sided", "gamma": "brownian-bridge", "a": 1.0},
    "schedule": {"kind": "geometric-mid", "delta_start": 1e-2, "delta_end": 1e-2},
    "integrators": ["euler", "heun"],
    "n_samples": 100_000,
    "seed": 0,
    "metric": "density-ratio",
}


@dataclass
class ExperimentConfig:
    raw: dict
    path: str | None = None
    _task_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls(raw, str(path))

    def __post_init__(self):
        if not isinstance(self.raw, dict):
            raise ConfigError("config root must be a JSON object")
        merged = {**DEFAULTS, **self.raw}
        merged["interpolant"] = {**DEFAULTS["interpolant"], **merged.get("interpolant", {})}
        merged["schedule"] = {**DEFAULTS["schedule"], **merged.get("schedule", {})}
        self.raw = merged
        for name in self.integrators:
            if name not in ("euler", "heun"):
                raise ConfigError(f"unknown integrator {name!r}")
        if self.raw["metric"] not in ("density-ratio", "histogram"):
            raise ConfigError(f"unknown metric {self.raw['metric']!r}")
        if self.h_list is not None:
            hs = self.h_list
            if any(b >= a for a, b in zip(hs, hs[1:])):
                raise ConfigError("h_list must be strictly decreasing")

    # -- accessors ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def n_samples(self) -> int:
        return int(self.raw["n_samples"])

    @property
    def integrators(self) -> list[str]:
        return list(self.raw["integrators"])

    @property
    def metric(self) -> str:
        return self.raw["metric"]

    @property
    def h_list(self) -> list[float] | None:
        hs = self.raw["schedule"].get("h_list")
        return [float(h) for h in hs] if hs is not None else None

    @property
    def h(self) -> float | None:
        h = self.raw["schedule"].get("h")
        return float(h) if h is not None else None

    @property
    def dims(self) -> list[int] | None:
        ds = self.raw.get("dims")
        return [int(d) for d in ds] if ds is not None else None

    @property
    def schedule_kind(self) -> ScheduleKind:
        return ScheduleKind(self.raw["schedule"]["kind"])

    @property
    def preset_name(self) -> str:
        task = self.raw.get("task", {})
        return task.get("preset", "custom")

    def interpolant_spec(self) -> InterpolantSpec:
        cfg = self.raw["interpolant"]
        try:
            mode = InterpolantMode(cfg["mode"])
            gamma = GammaSchedule(GammaKind(cfg["gamma"]), float(cfg.get("a", 1.0)))
        except ValueError as exc:
            raise ConfigError(f"bad interpolant section: {exc}") from exc
        return InterpolantSpec(mode, gamma)

    def task(self, d: int | None = None) -> Task:
        key = d
        if key not in self._task_cache:
            section = self.raw.get("task", {})
            if "preset" in section:
                self._task_cache[key] = make_task(
                    section["preset"], d or section.get("d")
                )
            elif "rho0" in section and "rho1" in section:
                self._task_cache[key] = Task(
                    "custom",
                    mixture_from_json(section["rho0"]),
                    mixture_from_json(section["rho1"]),
                )
            else:
                raise ConfigError(
                    "config.task needs either a preset name or rho0/rho1 mixtures"
                )
        return self._task_cache[key]

    def field(self, d: int | None = None) -> VelocityField:
        task = self.task(d)
        base = MixtureVelocityField(task.rho0, task.rho1, self.interpolant_spec())
        pert = self.raw.get("perturbation")
        if pert:
            return perturb_field(
                base, float(pert["magnitude"]), PerturbMode(pert["mode"])
            )
        return base

    def schedule(self, h: float | None = None) -> Schedule:
        sec = self.raw["schedule"]
        h = h if h is not None else self.h
        if h is None:
            raise ConfigError("schedule section needs 'h' (or 'h_list' for sweeps)")
        return make_schedule(
            self.schedule_kind,
            h,
            float(sec["delta_start"]),
            float(sec["delta_end"]),
        )

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]
