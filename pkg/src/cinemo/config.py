"""Run configuration: one JSON document collecting every module's knobs.

Parsing is strict (unknown keys are rejected) and CLI flags override file
values; the effective merged config is written next to command outputs so a
run can always be reproduced from its sidecar.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .denoiser import DenoiserConfig
from .dctinit import RefineConfig
from .diffusion import (DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_GUIDANCE_SCALE,
                        DEFAULT_SAMPLER_STEPS, DEFAULT_T, NoiseSchedule, make_schedule)
from .training import TrainConfig
from .video_io import DEFAULT_CLASS_NAMES, DatasetSpec, MotionClass


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


@dataclass
class ScheduleConfig:
    t_steps: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    def build(self) -> NoiseSchedule:
        return make_schedule(self.t_steps, self.beta_start, self.beta_end)


@dataclass
class SamplerSettings:
    steps: int = DEFAULT_SAMPLER_STEPS
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    refine: RefineConfig = field(default_factory=RefineConfig)
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        # keep derived model fields consistent with the dataset
        self.model.n_classes = len(self.dataset.motion_classes)
        self.model.in_channels = self.dataset.channels * self.model.patch**2

    def validate(self) -> None:
        try:
            self.dataset.validate()
            self.model.validate()
            self.train.validate()
            self.schedule.build()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.sampler.steps < 1 or self.sampler.steps > self.schedule.t_steps:
            raise ConfigError(f"sampler steps {self.sampler.steps} outside [1, T]")
        if self.sampler.guidance_scale < 0:
            raise ConfigError("guidance scale must be >= 0")

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "dataset": asdict(self.dataset),
            "schedule": asdict(self.schedule),
            "sampler": asdict(self.sampler),
            "refine": asdict(self.refine),
            "model": asdict(self.model),
            "train": asdict(self.train),
        }
        d["dataset"]["motion_classes"] = [mc.name for mc in self.dataset.motion_classes]
        return d


def _pop_section(doc: dict, name: str) -> dict:
    section = doc.pop(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return dict(section)


def _build(cls, section: dict, name: str, **coerced):
    allowed = {f for f in cls.__dataclass_fields__}
    unknown = set(section) - allowed - set(coerced)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    kwargs = {k: v for k, v in section.items() if k not in coerced}
    kwargs.update(coerced)
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad {name!r} section: {e}") from e


def run_config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    seed = doc.pop("seed", 0)

    ds_sec = _pop_section(doc, "dataset")
    coerced = {}
    if "motion_classes" in ds_sec:
        names = ds_sec.pop("motion_classes")
        coerced["motion_classes"] = [MotionClass(i, n) for i, n in enumerate(names)]
    for key in ("resolution", "speed_range", "shape_half_range"):
        if key in ds_sec:
            ds_sec[key] = tuple(ds_sec[key])
    dataset = _build(DatasetSpec, ds_sec, "dataset", **coerced)

    schedule = _build(ScheduleConfig, _pop_section(doc, "schedule"), "schedule")
    sampler = _build(SamplerSettings, _pop_section(doc, "sampler"), "sampler")

    ref_sec = _pop_section(doc, "refine")
    if "filter" in ref_sec:  # CLI name for filter_kind
        ref_sec["filter_kind"] = ref_sec.pop("filter")
    refine = _build(RefineConfig, ref_sec, "refine")

    model = _build(DenoiserConfig, _pop_section(doc, "model"), "model")
    train = _build(TrainConfig, _pop_section(doc, "train"), "train")

    if doc:
        raise ConfigError(f"unknown top-level keys: {sorted(doc)}")
    cfg = RunConfig(seed=seed, dataset=dataset, schedule=schedule, sampler=sampler,
                    refine=refine, model=model, train=train)
    cfg.validate()
    return cfg


def load_run_config(path=None) -> RunConfig:
    """Load a JSON config file; no path means all defaults."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return run_config_from_dict(doc)


def write_sidecar(path, command: str, cfg: RunConfig, extra: dict | None = None) -> None:
    """Record the effective merged config next to a command's outputs."""
    doc = {"command": command, "config": cfg.to_dict()}
    if extra:
        doc.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
