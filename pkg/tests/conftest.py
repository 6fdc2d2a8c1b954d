"""Shared fixtures and trace builders."""

from __future__ import annotations

import numpy as np
import pytest

from oversub.resources import RESOURCE_ORDER, Resource, ResourceVector
from oversub.trace import ServerSpec, TraceSet, UtilizationSeries, VMRecord

BASE = 1_728_000_000  # midnight-aligned epoch
DAY = 86400
STEP = 300


def make_vm(vm_id, start, end, sub="sub-a", cfg="std-4-32", cpu=4.0, mem=32.0,
            net=1.0, ssd=50.0, offering="iaas") -> VMRecord:
    return VMRecord(vm_id, sub, cfg, ResourceVector(cpu, mem, net, ssd),
                    start, end, offering)


def make_series(vm: VMRecord, resource: Resource, values) -> UtilizationSeries:
    values = np.asarray(values, dtype=np.float32)
    assert len(values) == vm.n_samples
    return UtilizationSeries(vm.vm_id, resource, vm.start, values)


def flat_series(vm: VMRecord, resource: Resource, level: float) -> UtilizationSeries:
    return make_series(vm, resource, np.full(vm.n_samples, level, dtype=np.float32))


def build_trace(vm_values: dict, servers=None) -> TraceSet:
    """vm_values: {VMRecord: {Resource: values-or-scalar}} (missing -> flat 10)."""
    vms = {}
    series = {}
    for vm, per_resource in vm_values.items():
        vms[vm.vm_id] = vm
        for resource in RESOURCE_ORDER:
            spec = per_resource.get(resource, 10.0)
            if np.isscalar(spec):
                series[(vm.vm_id, resource)] = flat_series(vm, resource, float(spec))
            else:
                series[(vm.vm_id, resource)] = make_series(vm, resource, spec)
    if servers is None:
        servers = [ServerSpec("srv-0", "cl-0", ResourceVector(64, 256, 10, 1000))]
    trace = TraceSet(vms, series, list(servers))
    trace.validate()
    return trace


def window_level_series(vm: VMRecord, resource: Resource,
                        day_levels_by_window: list[float],
                        window_hours: int) -> UtilizationSeries:
    """Series whose value is constant within each hour-of-day window."""
    per_window = window_hours * 3600 // STEP
    day = np.repeat(np.asarray(day_levels_by_window, dtype=np.float32), per_window)
    offset = (vm.start // STEP) % len(day)
    idx = (offset + np.arange(vm.n_samples)) % len(day)
    return make_series(vm, resource, day[idx])


@pytest.fixture
def day_vm() -> VMRecord:
    return make_vm("vm-day", BASE, BASE + DAY)
