"""Bundled generator configurations.

These cover the shapes the experiments need: a small mixed fleet for smoke
runs, a complementary-pattern fleet where groups peak in disjoint windows
(multiplexing headroom), a calibrated noisy fleet (memory predictable, CPU
fluctuating), and a large benchmark fleet.
"""

from __future__ import annotations

from .resources import Resource, ResourceVector
from .synth import (FleetSpec, GeneratorConfig, GroupSpec, SizeSpec,
                    TemplateSpec, flat_template, peak_template)

# 2024-10-04 00:00 UTC; any midnight-aligned epoch works
BASE_UNIX = 1_728_000_000

STD_SIZES = {
    "std-4-16": SizeSpec("std-4-16", 4, 16, 1.0, 64, weight=3.0),
    "std-8-32": SizeSpec("std-8-32", 8, 32, 2.0, 128, weight=2.0),
    "mem-4-32": SizeSpec("mem-4-32", 4, 32, 1.0, 64, weight=1.0),
    "small-2-8": SizeSpec("small-2-8", 2, 8, 0.5, 32, weight=2.0),
}


def _library() -> list[TemplateSpec]:
    return [
        peak_template(8, 16, 60, 25, jitter=2.0, spread=4.0),
        peak_template(16, 24, 55, 20, jitter=2.0, spread=4.0),
        peak_template(0, 8, 50, 20, jitter=2.0, spread=4.0),
        peak_template(12, 20, 65, 30, jitter=2.0, spread=4.0),
        flat_template(35.0),
    ]


def quickstart_config(n_vms: int = 600, days: int = 5,
                      n_servers: int = 8) -> GeneratorConfig:
    return GeneratorConfig(
        start_unix=BASE_UNIX,
        days=days,
        fleet=FleetSpec(n_servers, ResourceVector(40, 128, 10, 1000), n_clusters=2),
        sizes=dict(STD_SIZES),
        n_vms=n_vms,
        n_subscriptions=max(6, n_vms // 30),
        zipf_s=1.2,
        template_library=_library(),
        duration_days_choices=(1, 2, 3),
        duration_weights=(0.4, 0.4, 0.2),
    )


def benchmark_config(n_vms: int = 10_000, days: int = 14,
                     n_servers: int = 100) -> GeneratorConfig:
    return GeneratorConfig(
        start_unix=BASE_UNIX,
        days=days,
        fleet=FleetSpec(n_servers, ResourceVector(64, 256, 40, 4000), n_clusters=4),
        sizes=dict(STD_SIZES),
        n_vms=n_vms,
        n_subscriptions=max(10, n_vms // 40),
        zipf_s=1.1,
        template_library=_library(),
        duration_days_choices=(1, 3, 7, 14),
        duration_weights=(0.3, 0.3, 0.25, 0.15),
    )


def complementary_config(vms_per_group: int = 20, n_servers: int = 20,
                         train_vms_per_group: int = 19) -> GeneratorConfig:
    """Six groups peaking in disjoint 4-hour windows.

    Each group's history holds ``train_vms_per_group`` steady VMs plus one
    high outlier, so the P95 window prediction sits at the steady peak while
    the predicted max covers the outlier: every VM carries an oversubscribed
    slice concentrated in its group's window, and groups multiplex cleanly.
    """
    size = SizeSpec("mem-8-32", 8, 32, 1.0, 100)
    groups = []
    for g in range(6):
        mem_normal = peak_template(4 * g, 4 * (g + 1), 55, 25)
        mem_outlier = peak_template(4 * g, 4 * (g + 1), 80, 25)
        cpu = peak_template(4 * g, 4 * (g + 1), 30, 15)
        low = flat_template(5.0)
        # training population: arrives exactly at day 0 (empty duration spec
        # means "span the horizon"), so the whole group sits in the train range
        groups.append(GroupSpec(
            subscription_id=f"grp-{g}", vm_config=size.name,
            n_vms=train_vms_per_group,
            templates={Resource.MEM: mem_normal, Resource.CPU: cpu,
                       Resource.NET: low, Resource.SSD: low}))
        groups.append(GroupSpec(
            subscription_id=f"grp-{g}", vm_config=size.name, n_vms=1,
            templates={Resource.MEM: mem_outlier, Resource.CPU: cpu,
                       Resource.NET: low, Resource.SSD: low}))
        # evaluation population: arrives from day 2, same behavior
        groups.append(GroupSpec(
            subscription_id=f"grp-{g}", vm_config=size.name,
            n_vms=vms_per_group,
            templates={Resource.MEM: mem_normal, Resource.CPU: cpu,
                       Resource.NET: low, Resource.SSD: low},
            duration_days=(2,), start_day=2))
    return GeneratorConfig(
        start_unix=BASE_UNIX,
        days=5,
        fleet=FleetSpec(n_servers, ResourceVector(40, 104, 10, 1000)),
        sizes={size.name: size},
        groups=groups,
    )


def noisy_config(vms_per_group: int = 30, n_groups: int = 6,
                 n_servers: int = 40) -> GeneratorConfig:
    """Calibrated asymmetric noise: memory stable, CPU fluctuating.

    Memory patterns sit in a narrow band, so group quantiles plus 5% bucket
    rounding cover nearly every new VM; CPU wanders more. A small share of
    arriving VMs runs hotter than the group history that predicts them (the
    usual source of under-predictions), with the CPU excursions both more
    frequent and larger than the memory ones.
    """
    from .synth import shift_template

    size = SizeSpec("std-8-32", 8, 32, 1.0, 100)
    low = flat_template(5.0)
    groups = []
    eval_normal = max(1, vms_per_group // 2)
    for g in range(n_groups):
        start_hr = (4 * g) % 24
        mem = peak_template(start_hr, start_hr + 4, 55, 25, jitter=1.0, spread=2.0)
        cpu = peak_template(start_hr, start_hr + 4, 50, 20, jitter=9.0, spread=7.0)
        templates = {Resource.MEM: mem, Resource.CPU: cpu,
                     Resource.NET: low, Resource.SSD: low}
        groups.append(GroupSpec(
            subscription_id=f"noisy-{g}", vm_config=size.name,
            n_vms=vms_per_group, templates=templates,
            duration_days=(2,), start_day=0))
        groups.append(GroupSpec(
            subscription_id=f"noisy-{g}", vm_config=size.name,
            n_vms=eval_normal, templates=templates,
            duration_days=(2,), start_day=2))
        # one VM per group turns CPU-hot relative to its history
        groups.append(GroupSpec(
            subscription_id=f"noisy-{g}", vm_config=size.name, n_vms=1,
            templates={**templates, Resource.CPU: shift_template(cpu, 22.0)},
            duration_days=(2,), start_day=2))
        # memory excursions are rarer and smaller
        if g % 2 == 0:
            groups.append(GroupSpec(
                subscription_id=f"noisy-{g}", vm_config=size.name, n_vms=1,
                templates={**templates, Resource.MEM: shift_template(mem, 9.0)},
                duration_days=(2,), start_day=2))
    return GeneratorConfig(
        start_unix=BASE_UNIX,
        days=5,
        fleet=FleetSpec(n_servers, ResourceVector(64, 256, 10, 1000)),
        sizes={size.name: size},
        groups=groups,
    )


PRESETS = {
    "quickstart": quickstart_config,
    "complementary": complementary_config,
    "noisy": noisy_config,
    "benchmark": benchmark_config,
}
