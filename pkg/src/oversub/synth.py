"""Synthetic workload generation with controllable temporal patterns.

Each VM's utilization follows a daily template: a step curve over hour-of-day
segments plus a per-VM constant level offset and per-minute jitter. The
template is evaluated at 1-minute resolution and each stored sample is the
maximum over its 5-minute interval, matching the max-sampled telemetry
semantics of real traces.

Two configuration styles are supported:

* explicit ``groups`` -- full control over (subscription, config, template)
  groups, used to craft complementary or disjoint-peak fleets;
* sampled mode -- ``n_vms`` VMs spread over ``n_subscriptions`` subscriptions
  with Zipf-distributed sizes, so small groups exercise predictor fallbacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .resources import RESOURCE_ORDER, SAMPLE_SECONDS, Resource, ResourceVector
from .trace import ServerSpec, TraceSet, UtilizationSeries, VMRecord

MINUTES_PER_SAMPLE = SAMPLE_SECONDS // 60
MINUTES_PER_DAY = 1440


class GeneratorError(ValueError):
    """Invalid generator configuration."""


@dataclass(frozen=True)
class TemplateSpec:
    """Daily utilization shape: ``segments`` are (start_hour, end_hour, level_pct)."""

    segments: tuple[tuple[int, int, float], ...]
    jitter_pct: float = 0.0
    level_spread_pct: float = 0.0

    def validate(self) -> None:
        hours = 0
        for start, end, level in self.segments:
            if start != hours or end <= start:
                raise GeneratorError(f"template segments must tile [0,24): {self.segments}")
            if not 0 <= level <= 100:
                raise GeneratorError(f"template level {level} out of [0,100]")
            hours = end
        if hours != 24:
            raise GeneratorError(f"template segments must end at hour 24: {self.segments}")
        if self.jitter_pct < 0 or self.level_spread_pct < 0:
            raise GeneratorError("jitter and level spread must be >= 0")

    def minute_levels(self) -> np.ndarray:
        """Level for each minute of the day, before offsets and jitter."""
        levels = np.empty(MINUTES_PER_DAY, dtype=np.float64)
        for start, end, level in self.segments:
            levels[start * 60:end * 60] = level
        return levels


def flat_template(level: float) -> TemplateSpec:
    return TemplateSpec(segments=((0, 24, level),))


def peak_template(peak_start: int, peak_end: int, peak: float, valley: float,
                  jitter: float = 0.0, spread: float = 0.0) -> TemplateSpec:
    """Single daily peak window between ``peak_start`` and ``peak_end`` hours."""
    segments = []
    if peak_start > 0:
        segments.append((0, peak_start, valley))
    segments.append((peak_start, peak_end, peak))
    if peak_end < 24:
        segments.append((peak_end, 24, valley))
    return TemplateSpec(tuple(segments), jitter_pct=jitter, level_spread_pct=spread)


def shift_template(template: TemplateSpec, delta: float) -> TemplateSpec:
    """Same shape, levels moved by ``delta`` (clamped to [0, 100])."""
    segments = tuple((start, end, float(np.clip(level + delta, 0.0, 100.0)))
                     for start, end, level in template.segments)
    return TemplateSpec(segments, template.jitter_pct, template.level_spread_pct)


@dataclass(frozen=True)
class SizeSpec:
    name: str
    cpu: float
    mem: float
    net: float
    ssd: float
    weight: float = 1.0

    def requested(self) -> ResourceVector:
        return ResourceVector(self.cpu, self.mem, self.net, self.ssd)


@dataclass(frozen=True)
class GroupSpec:
    """A (subscription, vm_config) group whose VMs share templates."""

    subscription_id: str
    vm_config: str
    n_vms: int
    templates: dict[Resource, TemplateSpec]
    offering: str = "iaas"
    duration_days: tuple[int, ...] = ()  # empty: VMs span the whole horizon
    start_day: int = 0                   # earliest arrival day offset


@dataclass(frozen=True)
class FleetSpec:
    n_servers: int
    capacity: ResourceVector
    n_clusters: int = 1


@dataclass
class GeneratorConfig:
    start_unix: int
    days: int
    fleet: FleetSpec
    sizes: dict[str, SizeSpec]
    groups: list[GroupSpec] = field(default_factory=list)
    # sampled mode (used when groups is empty)
    n_vms: int = 0
    n_subscriptions: int = 0
    zipf_s: float = 1.2
    template_library: list[TemplateSpec] = field(default_factory=list)
    duration_days_choices: tuple[int, ...] = (1, 2, 3, 7)
    duration_weights: tuple[float, ...] = (0.35, 0.3, 0.2, 0.15)

    def validate(self) -> None:
        if self.start_unix % SAMPLE_SECONDS:
            raise GeneratorError("start_unix must be 5-minute aligned")
        if self.days <= 0:
            raise GeneratorError("days must be positive")
        if self.fleet.n_servers <= 0:
            raise GeneratorError("fleet must have at least one server")
        if not self.sizes:
            raise GeneratorError("at least one size must be defined")
        for template in self.template_library:
            template.validate()
        if self.groups:
            for group in self.groups:
                if group.vm_config not in self.sizes:
                    raise GeneratorError(f"group {group.subscription_id}: unknown "
                                         f"vm_config {group.vm_config}")
                if group.n_vms <= 0:
                    raise GeneratorError("group n_vms must be positive")
                for template in group.templates.values():
                    template.validate()
        else:
            if self.n_vms <= 0 or self.n_subscriptions <= 0:
                raise GeneratorError("sampled mode needs n_vms and n_subscriptions")
            if not self.template_library:
                raise GeneratorError("sampled mode needs a template library")
            if len(self.duration_days_choices) != len(self.duration_weights):
                raise GeneratorError("duration choices and weights must align")
            if abs(sum(self.duration_weights) - 1.0) > 1e-9:
                raise GeneratorError("duration weights must sum to 1")


def _vm_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _series_values(rng: np.random.Generator, template: TemplateSpec,
                   level_offset: float, start_unix: int, n_samples: int) -> np.ndarray:
    """Sample a VM's series: per-minute template + jitter, then 5-minute maxima."""
    n_minutes = n_samples * MINUTES_PER_SAMPLE
    start_minute = (start_unix // 60) % MINUTES_PER_DAY
    day_levels = template.minute_levels()
    idx = (start_minute + np.arange(n_minutes)) % MINUTES_PER_DAY
    minutes = day_levels[idx] + level_offset
    if template.jitter_pct > 0:
        minutes = minutes + rng.uniform(-template.jitter_pct, template.jitter_pct,
                                        size=n_minutes)
    np.clip(minutes, 0.0, 100.0, out=minutes)
    return minutes.reshape(n_samples, MINUTES_PER_SAMPLE).max(axis=1).astype(np.float32)


def _sampled_groups(config: GeneratorConfig, rng: np.random.Generator) -> list[GroupSpec]:
    """Materialize Zipf-sized subscription groups from the sampled-mode knobs."""
    ranks = np.arange(1, config.n_subscriptions + 1, dtype=np.float64)
    probs = ranks ** (-config.zipf_s)
    probs /= probs.sum()
    counts = rng.multinomial(config.n_vms, probs)
    size_names = sorted(config.sizes)
    size_weights = np.array([config.sizes[n].weight for n in size_names], dtype=np.float64)
    size_weights /= size_weights.sum()
    groups = []
    for sub_idx, count in enumerate(counts):
        if count == 0:
            continue
        size_name = size_names[rng.choice(len(size_names), p=size_weights)]
        base = config.template_library[sub_idx % len(config.template_library)]
        # per-resource variants: memory keeps the template, cpu gets the next
        # pattern in the library so resources are correlated but not identical
        alt = config.template_library[(sub_idx + 1) % len(config.template_library)]
        templates = {
            Resource.CPU: alt,
            Resource.MEM: base,
            Resource.NET: base,
            Resource.SSD: flat_template(base.segments[0][2]),
        }
        offering = "iaas" if rng.random() < 0.8 else "paas"
        # a hot minority widens the gap between the group's P95 and its max,
        # which is where the oversubscribed (demand-backed) slice comes from
        n_hot = int(count) // 10
        if n_hot:
            hot_templates = {r: shift_template(t, 20.0) for r, t in templates.items()}
            groups.append(GroupSpec(
                subscription_id=f"sub-{sub_idx:04d}",
                vm_config=size_name,
                n_vms=n_hot,
                templates=hot_templates,
                offering=offering,
                duration_days=config.duration_days_choices,
            ))
        groups.append(GroupSpec(
            subscription_id=f"sub-{sub_idx:04d}",
            vm_config=size_name,
            n_vms=int(count) - n_hot,
            templates=templates,
            offering=offering,
            duration_days=config.duration_days_choices,
        ))
    return groups


def generate_synthetic_trace(config: GeneratorConfig, seed: int) -> TraceSet:
    """Deterministically synthesize a TraceSet from ``(config, seed)``."""
    config.validate()
    horizon_end = config.start_unix + config.days * 86400
    assembly_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    groups = config.groups if config.groups else _sampled_groups(config, assembly_rng)

    vms: dict[str, VMRecord] = {}
    series: dict[tuple[str, Resource], UtilizationSeries] = {}
    vm_index = 0
    for group in groups:
        size = config.sizes[group.vm_config]
        requested = size.requested()
        for _ in range(group.n_vms):
            vm_index += 1
            rng = _vm_rng(seed, vm_index)
            if group.duration_days:
                weights = None
                if config.duration_weights and len(config.duration_weights) == len(group.duration_days):
                    weights = np.asarray(config.duration_weights, dtype=np.float64)
                duration = int(group.duration_days[rng.choice(len(group.duration_days),
                                                              p=weights)]) * 86400
            else:
                duration = (config.days - group.start_day) * 86400
            earliest = config.start_unix + group.start_day * 86400
            latest = max(earliest, horizon_end - duration)
            slots = (latest - earliest) // SAMPLE_SECONDS
            start = earliest + int(rng.integers(0, slots + 1)) * SAMPLE_SECONDS
            end = min(start + duration, horizon_end)
            vm_id = f"vm-{vm_index:06d}"
            vm = VMRecord(vm_id, group.subscription_id, group.vm_config,
                          requested, start, end, group.offering)
            vms[vm_id] = vm
            for resource in RESOURCE_ORDER:
                template = group.templates.get(resource, flat_template(20.0))
                offset = 0.0
                if template.level_spread_pct > 0:
                    offset = float(rng.uniform(-template.level_spread_pct,
                                               template.level_spread_pct))
                values = _series_values(rng, template, offset, start, vm.n_samples)
                series[(vm_id, resource)] = UtilizationSeries(vm_id, resource, start, values)

    servers = []
    for i in range(config.fleet.n_servers):
        cluster = f"cl-{i % config.fleet.n_clusters:02d}"
        servers.append(ServerSpec(f"srv-{i:04d}", cluster, config.fleet.capacity))

    trace = TraceSet(vms, series, servers)
    trace.validate()
    return trace
