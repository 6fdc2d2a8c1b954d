"""Experiment configuration: a single TOML file drives an end-to-end run.

Grammar (all sections optional unless noted):

    seed = 42                      # required
    output_dir = "out"             # overridable via OVERSUB_OUTPUT_DIR

    [generator]                    # either this or [trace]
    preset = "quickstart"          # quickstart | complementary | noisy | benchmark
    n_vms = 400                    # preset-dependent overrides
    days = 4
    n_servers = 16

    [trace]                        # parse an existing trace instead
    vms = "vms.csv"
    util = "util.csv"
    servers = "servers.csv"

    [prediction]
    min_group_size = 5
    train_days = 2                 # model trained on VMs starting before this

    [policies]
    run = ["none", "single", "coach", "aggr"]

    [characterize]
    enabled = true
    window_hours = 4
    threshold_pct = 5.0
    fill_cores = 1.0
    fill_gb = 4.0
    oversub_mode = "none"
    stride_s = 3600

    [mitigation]
    tier = "extend"                # none | trim | extend | migrate
    trigger = "reactive"           # reactive | proactive

    [contention]                   # ContentionConfig field overrides
    cpu_demand_frac = 0.5
    cold_fraction = 0.3

    [report]
    figures = true
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .presets import PRESETS
from .simulate import MITIGATION_TIERS, TRIGGER_MODES, ContentionConfig
from .scheduler import POLICY_KINDS


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class CharacterizeSettings:
    enabled: bool = True
    window_hours: int = 4
    threshold_pct: float = 5.0
    fill_cores: float = 1.0
    fill_gb: float = 4.0
    oversub_mode: str = "none"
    stride_s: int = 3600
    savings_window_hours: tuple = (1, 2, 4, 6, 8, 12, 24)


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: Path
    generator_preset: str | None = None
    generator_overrides: dict = field(default_factory=dict)
    trace_files: dict | None = None
    policies: list[str] = field(default_factory=lambda: ["none", "single", "coach", "aggr"])
    min_group_size: int = 5
    train_days: int = 2
    characterize: CharacterizeSettings = field(default_factory=CharacterizeSettings)
    mitigation_tier: str = "extend"
    mitigation_trigger: str = "reactive"
    contention: ContentionConfig = field(default_factory=ContentionConfig)
    figures: bool = True

    def validate(self) -> None:
        if (self.generator_preset is None) == (self.trace_files is None):
            raise ConfigError("exactly one of [generator] and [trace] must be given")
        if self.generator_preset is not None and self.generator_preset not in PRESETS:
            raise ConfigError(f"unknown generator preset {self.generator_preset!r}; "
                              f"choose from {sorted(PRESETS)}")
        if self.trace_files is not None:
            for key in ("vms", "util", "servers"):
                if key not in self.trace_files:
                    raise ConfigError(f"[trace] missing file entry {key!r}")
                if not Path(self.trace_files[key]).exists():
                    raise ConfigError(f"trace file does not exist: {self.trace_files[key]}")
        if not self.policies:
            raise ConfigError("at least one policy must be listed")
        for policy in self.policies:
            if policy not in POLICY_KINDS:
                raise ConfigError(f"unknown policy {policy!r}")
        if "none" not in self.policies:
            raise ConfigError("policy list must include the 'none' baseline")
        if self.mitigation_tier not in MITIGATION_TIERS:
            raise ConfigError(f"unknown mitigation tier {self.mitigation_tier!r}")
        if self.mitigation_trigger not in TRIGGER_MODES:
            raise ConfigError(f"unknown trigger {self.mitigation_trigger!r}")
        if self.train_days < 1:
            raise ConfigError("train_days must be >= 1")
        if self.characterize.oversub_mode not in ("none", "cpu_only", "cpu_mem"):
            raise ConfigError(f"unknown oversub_mode {self.characterize.oversub_mode!r}")
        try:
            self.contention.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if "seed" not in raw:
        raise ConfigError("config must set a seed")
    base_dir = Path(base_dir) if base_dir else Path.cwd()

    output_dir = os.environ.get("OVERSUB_OUTPUT_DIR") or raw.get("output_dir", "out")
    output_dir = Path(output_dir)
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    generator_preset = None
    generator_overrides: dict = {}
    trace_files = None
    if "generator" in raw:
        gen = dict(raw["generator"])
        generator_preset = gen.pop("preset", "quickstart")
        generator_overrides = gen
    if "trace" in raw:
        trace_files = {key: str(base_dir / value) if not Path(value).is_absolute()
                       else value
                       for key, value in raw["trace"].items()}

    prediction = raw.get("prediction", {})
    policies = raw.get("policies", {}).get("run",
                                           ["none", "single", "coach", "aggr"])

    char_raw = raw.get("characterize", {})
    characterize = CharacterizeSettings(
        enabled=char_raw.get("enabled", True),
        window_hours=char_raw.get("window_hours", 4),
        threshold_pct=char_raw.get("threshold_pct", 5.0),
        fill_cores=char_raw.get("fill_cores", 1.0),
        fill_gb=char_raw.get("fill_gb", 4.0),
        oversub_mode=char_raw.get("oversub_mode", "none"),
        stride_s=char_raw.get("stride_s", 3600),
        savings_window_hours=tuple(char_raw.get("savings_window_hours",
                                                (1, 2, 4, 6, 8, 12, 24))),
    )

    mitigation = raw.get("mitigation", {})
    contention_raw = raw.get("contention", {})
    known = {f.name for f in dataclasses.fields(ContentionConfig)}
    unknown = set(contention_raw) - known
    if unknown:
        raise ConfigError(f"unknown [contention] keys: {sorted(unknown)}")
    contention = ContentionConfig(**contention_raw)

    config = ExperimentConfig(
        seed=int(raw["seed"]),
        output_dir=output_dir,
        generator_preset=generator_preset,
        generator_overrides=generator_overrides,
        trace_files=trace_files,
        policies=list(policies),
        min_group_size=prediction.get("min_group_size", 5),
        train_days=prediction.get("train_days", 2),
        characterize=characterize,
        mitigation_tier=mitigation.get("tier", "extend"),
        mitigation_trigger=mitigation.get("trigger", "reactive"),
        contention=contention,
        figures=raw.get("report", {}).get("figures", True),
    )
    config.validate()
    return config
