"""Guaranteed/oversubscribed allocation math and server-side accounting.

A VM's resource is split into a guaranteed portion, sized as the maximum over
time windows of the predicted percentile utilization, and a per-window
oversubscribed demand, sized as the predicted window max above the guaranteed
amount:

    guaranteed      = max_t(p_x[t])                      (per VM)
    oversub[t]      = max(0, peak[t] - guaranteed)       (per VM, per window)
    guaranteed_sum  = sum_i guaranteed_i                 (per server)
    oversub_pool    = max_t(sum_i oversub_i[t])          (per server, multiplexed)

Admission packs one vector of windows+1 slots per resource: the per-window
predicted totals plus a static slot holding the guaranteed sum. Memory is
non-fungible, so its window slots carry ``guaranteed + oversub[t]`` and its
static slot is enforced against capacity; fully fungible resources (cpu, net,
ssd) are checked on their per-window predicted peaks only.

Amounts are rounded up to the resource management granularity (1GB memory,
0.25 core, 0.1 Gbps, 1GB SSD by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .predict import TimeWindowProfile
from .resources import (DEFAULT_GRANULARITY, N_RESOURCES, RESOURCE_ORDER,
                        Granularity, Resource, ResourceVector, ceil_to_grain,
                        ceil_to_grain_array)

MEM_IDX = RESOURCE_ORDER.index(Resource.MEM)
FIT_TOL = 1e-9

# Memory pages are statically mapped; everything else can be reassigned quickly.
DEFAULT_FUNGIBLE = {
    Resource.CPU: True,
    Resource.MEM: False,
    Resource.NET: True,
    Resource.SSD: True,
}


class ScheduleError(ValueError):
    """Raised on window-schema mismatches and invariant violations."""


def pa_demand(profile: TimeWindowProfile, resource: Resource, requested: float,
              granularity: Granularity = DEFAULT_GRANULARITY) -> float:
    """Guaranteed amount: max over windows of the percentile prediction."""
    pct = float(np.max(profile.p_x[resource]))
    return ceil_to_grain(pct / 100.0 * requested, granularity.get(resource))


def va_demand(profile: TimeWindowProfile, pa: float, resource: Resource,
              requested: float,
              granularity: Granularity = DEFAULT_GRANULARITY) -> np.ndarray:
    """Per-window oversubscribed demand above the guaranteed amount."""
    peaks = profile.p_max[resource] / 100.0 * requested
    return va_from_peaks(peaks, pa, granularity.get(resource))


def va_from_peaks(peaks_abs: np.ndarray, pa: float, grain: float) -> np.ndarray:
    return ceil_to_grain_array(np.maximum(0.0, np.asarray(peaks_abs) - pa), grain)


@dataclass
class HybridAllocation:
    """One VM's admission-time demands: guaranteed, per-window oversub, peaks."""

    windows: int
    requested: ResourceVector
    guaranteed: np.ndarray   # (4,)
    va: np.ndarray           # (4, windows)
    peak: np.ndarray         # (4, windows), granularity-rounded absolute window max
    predicted: bool
    fungible: dict[Resource, bool] = field(default_factory=lambda: dict(DEFAULT_FUNGIBLE))

    def demand_matrix(self) -> np.ndarray:
        """(4, windows+1) packing contribution; last slot is the guaranteed amount.

        Cached: allocations are never mutated after construction.
        """
        cached = getattr(self, "_demand_cache", None)
        if cached is not None:
            return cached
        out = np.empty((N_RESOURCES, self.windows + 1))
        for i, resource in enumerate(RESOURCE_ORDER):
            if self.fungible[resource]:
                out[i, :self.windows] = self.peak[i]
            else:
                out[i, :self.windows] = self.guaranteed[i] + self.va[i]
        out[:, self.windows] = self.guaranteed
        object.__setattr__(self, "_demand_cache", out)
        return out

    def validate(self, granularity: Granularity = DEFAULT_GRANULARITY) -> None:
        if self.va.shape != (N_RESOURCES, self.windows):
            raise ScheduleError("va shape mismatch")
        if np.any(self.va < -FIT_TOL):
            raise ScheduleError("va demands must be >= 0")
        for i, resource in enumerate(RESOURCE_ORDER):
            cap = ceil_to_grain(self.requested.get(resource), granularity.get(resource))
            if self.guaranteed[i] + self.va[i].max(initial=0.0) > cap + FIT_TOL:
                raise ScheduleError(
                    f"{resource.value}: guaranteed + max oversub demand exceeds request")
        if not self.predicted:
            if np.any(self.va != 0):
                raise ScheduleError("no-prediction allocation must have zero oversub demand")
            for i, resource in enumerate(RESOURCE_ORDER):
                req = ceil_to_grain(self.requested.get(resource), granularity.get(resource))
                if self.guaranteed[i] != req:
                    raise ScheduleError("no-prediction allocation must guarantee the request")


def build_allocation(profile: TimeWindowProfile | None, requested: ResourceVector,
                     windows: int,
                     granularity: Granularity = DEFAULT_GRANULARITY,
                     fungible: dict[Resource, bool] | None = None) -> HybridAllocation:
    """Derive a VM's allocation from its profile (or full reservation if None)."""
    fungible = dict(DEFAULT_FUNGIBLE if fungible is None else fungible)
    guaranteed = np.zeros(N_RESOURCES)
    va = np.zeros((N_RESOURCES, windows))
    peak = np.zeros((N_RESOURCES, windows))
    if profile is None:
        for i, resource in enumerate(RESOURCE_ORDER):
            req = ceil_to_grain(requested.get(resource), granularity.get(resource))
            guaranteed[i] = req
            peak[i, :] = req
        return HybridAllocation(windows, requested, guaranteed, va, peak,
                                predicted=False, fungible=fungible)
    if profile.windows != windows:
        raise ScheduleError(f"profile has {profile.windows} windows, expected {windows}")
    for i, resource in enumerate(RESOURCE_ORDER):
        req = requested.get(resource)
        grain = granularity.get(resource)
        req_g = ceil_to_grain(req, grain)
        pa = min(pa_demand(profile, resource, req, granularity), req_g)
        peaks_abs = profile.p_max[resource] / 100.0 * req
        guaranteed[i] = pa
        va[i] = np.minimum(va_from_peaks(peaks_abs, pa, grain), req_g - pa)
        peak[i] = np.minimum(ceil_to_grain_array(peaks_abs, grain), req_g)
    alloc = HybridAllocation(windows, requested, guaranteed, va, peak,
                             predicted=True, fungible=fungible)
    alloc.validate(granularity)
    return alloc


def allocation_from_absolute(requested: ResourceVector, windows: int,
                             guaranteed: dict[Resource, float],
                             peaks: dict[Resource, np.ndarray],
                             granularity: Granularity = DEFAULT_GRANULARITY,
                             fungible: dict[Resource, bool] | None = None) -> HybridAllocation:
    """Build an allocation from absolute guaranteed amounts and window peaks."""
    fungible = dict(DEFAULT_FUNGIBLE if fungible is None else fungible)
    g = np.zeros(N_RESOURCES)
    va = np.zeros((N_RESOURCES, windows))
    pk = np.zeros((N_RESOURCES, windows))
    for i, resource in enumerate(RESOURCE_ORDER):
        if resource not in peaks and resource not in guaranteed:
            continue
        grain = granularity.get(resource)
        g[i] = guaranteed.get(resource, 0.0)
        if resource not in peaks:
            continue
        res_peaks = np.asarray(peaks[resource], dtype=np.float64)
        if len(res_peaks) != windows:
            raise ScheduleError("peak vector length must equal window count")
        va[i] = va_from_peaks(res_peaks, g[i], grain)
        pk[i] = ceil_to_grain_array(res_peaks, grain)
    return HybridAllocation(windows, requested, g, va, pk,
                            predicted=True, fungible=fungible)


def server_pools(allocations) -> tuple[np.ndarray, np.ndarray]:
    """(guaranteed_sum, oversub_pool) per resource over a set of allocations.

    The pool multiplexes complementary windows: it is the max over windows of
    the summed per-window oversubscribed demands, not the sum of per-VM maxima.
    """
    allocations = list(allocations)
    if not allocations:
        return np.zeros(N_RESOURCES), np.zeros(N_RESOURCES)
    windows = allocations[0].windows
    for alloc in allocations:
        if alloc.windows != windows:
            raise ScheduleError("allocations disagree on window schema")
    guaranteed = np.sum([a.guaranteed for a in allocations], axis=0)
    va_total = np.sum([a.va for a in allocations], axis=0)
    return guaranteed, va_total.max(axis=1)


@dataclass
class FitResult:
    fits: bool
    slack: np.ndarray  # (4, windows+1): capacity minus post-placement totals


class ServerState:
    """Per-server admission accounting.

    Pools and per-window totals are recomputed from the placed set (in vm_id
    order) on every placement and removal, so remove-then-re-add restores the
    exact prior state.
    """

    def __init__(self, server_id: str, capacity: ResourceVector, windows: int,
                 fungible: dict[Resource, bool] | None = None):
        self.server_id = server_id
        self.capacity = capacity
        self.windows = windows
        self.fungible = dict(DEFAULT_FUNGIBLE if fungible is None else fungible)
        self.cap_array = np.array(capacity.as_tuple())
        self.placed: dict[str, HybridAllocation] = {}
        self.demand = np.zeros((N_RESOURCES, windows + 1))
        self.guaranteed_sum = np.zeros(N_RESOURCES)
        self.oversub_pool = np.zeros(N_RESOURCES)
        self.enforced = np.zeros((N_RESOURCES, windows + 1), dtype=bool)
        self.enforced[:, :windows] = True
        for i, resource in enumerate(RESOURCE_ORDER):
            if not self.fungible[resource]:
                self.enforced[i, windows] = True

    def _recompute(self) -> None:
        if not self.placed:
            self.demand = np.zeros((N_RESOURCES, self.windows + 1))
            self.guaranteed_sum = np.zeros(N_RESOURCES)
            self.oversub_pool = np.zeros(N_RESOURCES)
            return
        allocations = [self.placed[v] for v in sorted(self.placed)]
        self.demand = np.sum([a.demand_matrix() for a in allocations], axis=0)
        self.guaranteed_sum, self.oversub_pool = server_pools(allocations)

    def place(self, vm_id: str, allocation: HybridAllocation) -> None:
        if allocation.windows != self.windows:
            raise ScheduleError(f"server {self.server_id}: window schema mismatch "
                                f"({allocation.windows} != {self.windows})")
        if vm_id in self.placed:
            raise ScheduleError(f"vm {vm_id} already placed on {self.server_id}")
        self.placed[vm_id] = allocation
        self._recompute()

    def place_all(self, items) -> None:
        """Bulk placement with a single recompute (initial state loading)."""
        for vm_id, allocation in items:
            if allocation.windows != self.windows:
                raise ScheduleError(f"server {self.server_id}: window schema mismatch")
            if vm_id in self.placed:
                raise ScheduleError(f"vm {vm_id} already placed on {self.server_id}")
            self.placed[vm_id] = allocation
        self._recompute()

    def remove(self, vm_id: str) -> HybridAllocation:
        allocation = self.placed.pop(vm_id, None)
        if allocation is None:
            raise ScheduleError(f"vm {vm_id} not placed on {self.server_id}")
        self._recompute()
        return allocation

    def fit_check(self, candidate: HybridAllocation) -> FitResult:
        """Would the candidate fit? Returns per-slot slack for scoring."""
        if candidate.windows != self.windows:
            raise ScheduleError(f"server {self.server_id}: window schema mismatch "
                                f"({candidate.windows} != {self.windows})")
        post = self.demand + candidate.demand_matrix()
        slack = self.cap_array[:, None] - post
        fits = bool(np.all(slack[self.enforced] >= -FIT_TOL))
        return FitResult(fits, slack)

    def check_invariants(self) -> None:
        """Admission-time safety: enforced totals within capacity; memory pools
        (guaranteed + multiplexed oversubscribed) physically backed."""
        slack = self.cap_array[:, None] - self.demand
        if np.any(slack[self.enforced] < -FIT_TOL):
            raise ScheduleError(f"server {self.server_id}: window totals exceed capacity")
        mem_cap = self.cap_array[MEM_IDX]
        if self.guaranteed_sum[MEM_IDX] + self.oversub_pool[MEM_IDX] > mem_cap + FIT_TOL:
            raise ScheduleError(f"server {self.server_id}: memory pools exceed capacity")
