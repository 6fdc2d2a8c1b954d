"""Event-driven cluster admission under selectable oversubscription policies.

Replays VM arrivals and departures in time order. On arrival, the VM's
allocation is derived from its predicted profile (or the full request when
the policy does not oversubscribe or no prediction is available) and placed
on the best-fit feasible server: the one with the minimum post-placement
dominant-resource slack, ties broken by lowest server id. Rejections are
terminal. Departures release exactly what was placed and pools are
recomputed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .hybrid import (HybridAllocation, ScheduleError, ServerState,
                     build_allocation)
from .predict import GroupModel, predict_profile
from .resources import (DEFAULT_GRANULARITY, RESOURCE_ORDER, Granularity,
                        Resource)
from .trace import ServerSpec, TraceSet

POLICY_KINDS = ("none", "single", "coach", "aggr")


@dataclass(frozen=True)
class Policy:
    """Admission policy: which percentile profile, over how many windows.

    * ``none``   -- no oversubscription, full requests.
    * ``single`` -- one 24h window at P95: a static rate per VM.
    * ``coach``  -- P95 over six 4-hour windows (the default configuration).
    * ``aggr``   -- P50 over six 4-hour windows.
    """

    kind: str
    percentile_x: int | None
    window_hours: int

    @property
    def windows(self) -> int:
        return 24 // self.window_hours

    @property
    def oversubscribes(self) -> bool:
        return self.kind != "none"

    @classmethod
    def preset(cls, kind: str, percentile_x: int | None = None,
               window_hours: int | None = None) -> "Policy":
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {kind!r}, expected {POLICY_KINDS}")
        defaults = {
            "none": (None, 24),
            "single": (95, 24),
            "coach": (95, 4),
            "aggr": (50, 4),
        }
        default_pct, default_wh = defaults[kind]
        pct = default_pct if percentile_x is None else percentile_x
        wh = default_wh if window_hours is None else window_hours
        if kind == "none":
            pct = None
        if 24 % wh:
            raise ValueError(f"window_hours must divide 24, got {wh}")
        return cls(kind, pct, wh)


@dataclass(frozen=True)
class PlacementRecord:
    time: int
    vm_id: str
    server_id: str | None          # None means REJECTED
    allocation: HybridAllocation


@dataclass
class PlacementLog:
    policy: Policy
    trace_hash: str
    windows: int
    records: list[PlacementRecord] = field(default_factory=list)
    placements: dict[str, tuple[str, HybridAllocation]] = field(default_factory=dict)
    hosted_count: int = 0
    rejected_count: int = 0
    servers_touched: int = 0
    peak_nonempty_servers: int = 0

    def summary_dict(self) -> dict:
        return {
            "schema_version": 1,
            "policy": self.policy.kind,
            "percentile_x": self.policy.percentile_x,
            "window_hours": self.policy.window_hours,
            "trace_hash": self.trace_hash,
            "hosted_vms": self.hosted_count,
            "rejected_vms": self.rejected_count,
            "servers_touched": self.servers_touched,
            "peak_nonempty_servers": self.peak_nonempty_servers,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            header = ["time", "vm_id", "decision", "server_id", "predicted"]
            header += [f"guaranteed_{r.value}" for r in RESOURCE_ORDER]
            writer.writerow(header)
            for rec in self.records:
                decision = "REJECTED" if rec.server_id is None else "placed"
                row = [rec.time, rec.vm_id, decision, rec.server_id or "",
                       int(rec.allocation.predicted)]
                row += [repr(float(g)) for g in rec.allocation.guaranteed]
                writer.writerow(row)


class Fleet:
    """Vectorized mirror of per-server admission state for fast fit scans."""

    def __init__(self, servers: list[ServerSpec], windows: int,
                 fungible: dict[Resource, bool] | None = None):
        if not servers:
            raise ScheduleError("fleet is empty")
        ordered = sorted(servers, key=lambda s: s.server_id)
        self.states = [ServerState(s.server_id, s.capacity, windows, fungible)
                       for s in ordered]
        self.ids = [s.server_id for s in ordered]
        self.index = {sid: i for i, sid in enumerate(self.ids)}
        self.windows = windows
        self.cap = np.stack([st.cap_array for st in self.states])       # (S, 4)
        self.demand = np.zeros((len(ordered), 4, windows + 1))
        self.enforced = self.states[0].enforced                         # (4, w+1)
        cap_slots = np.repeat(self.cap[:, :, None], windows + 1, axis=2)
        self.cap_masked = cap_slots[:, self.enforced]                  # (S, n_slots)

    def find_best(self, candidate: HybridAllocation) -> int | None:
        """Lowest-id server minimizing post-placement dominant-resource slack."""
        cand = candidate.demand_matrix()
        post = self.demand + cand
        slack = self.cap[:, :, None] - post
        slack_m = slack[:, self.enforced]
        feasible = np.all(slack_m >= -1e-9, axis=1)
        if not feasible.any():
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            norm = np.where(self.cap_masked > 0, slack_m / self.cap_masked, np.inf)
        score = norm.min(axis=1)
        score[~feasible] = np.inf
        return int(np.argmin(score))

    def place(self, idx: int, vm_id: str, allocation: HybridAllocation) -> None:
        self.states[idx].place(vm_id, allocation)
        self.demand[idx] = self.states[idx].demand

    def remove(self, idx: int, vm_id: str) -> HybridAllocation:
        allocation = self.states[idx].remove(vm_id)
        self.demand[idx] = self.states[idx].demand
        return allocation


def schedule(trace: TraceSet, model: GroupModel | None, policy: Policy,
             granularity: Granularity = DEFAULT_GRANULARITY,
             fungible: dict[Resource, bool] | None = None,
             vm_ids=None, validate: bool = False,
             fleet: Fleet | None = None) -> PlacementLog:
    """Replay arrivals/departures and place VMs under the given policy."""
    if policy.oversubscribes:
        if model is None:
            raise ScheduleError(f"policy {policy.kind} requires a trained model")
        if model.window_hours != policy.window_hours:
            raise ScheduleError(f"model windows ({model.window_hours}h) do not match "
                                f"policy windows ({policy.window_hours}h)")
    if fleet is None:
        fleet = Fleet(trace.servers, policy.windows, fungible)

    ids = sorted(vm_ids) if vm_ids is not None else sorted(trace.vms)
    events = []
    for vm_id in ids:
        vm = trace.vms[vm_id]
        events.append((vm.start, 1, vm_id))
        events.append((vm.end, 0, vm_id))
    # departures before arrivals at equal timestamps: capacity frees first
    events.sort()

    log = PlacementLog(policy, trace.content_hash(), policy.windows)
    placed_at: dict[str, int] = {}
    nonempty = 0
    for time, kind, vm_id in events:
        if kind == 0:
            idx = placed_at.pop(vm_id, None)
            if idx is not None:
                fleet.remove(idx, vm_id)
                if not fleet.states[idx].placed:
                    nonempty -= 1
            continue
        vm = trace.vms[vm_id]
        profile = None
        if policy.oversubscribes:
            profile = predict_profile(model, vm, policy.percentile_x)
        allocation = build_allocation(profile, vm.requested, policy.windows,
                                      granularity, fungible)
        idx = fleet.find_best(allocation)
        if idx is None:
            log.rejected_count += 1
            log.records.append(PlacementRecord(time, vm_id, None, allocation))
            continue
        if not fleet.states[idx].placed:
            nonempty += 1
        fleet.place(idx, vm_id, allocation)
        placed_at[vm_id] = idx
        log.hosted_count += 1
        log.placements[vm_id] = (fleet.ids[idx], allocation)
        log.records.append(PlacementRecord(time, vm_id, fleet.ids[idx], allocation))
        log.peak_nonempty_servers = max(log.peak_nonempty_servers, nonempty)
        if validate:
            fleet.states[idx].check_invariants()
            allocation.validate(granularity)
    log.servers_touched = len({sid for sid, _ in log.placements.values()})
    return log


@dataclass(frozen=True)
class CapacityRow:
    policy: str
    hosted_vms: int
    resource_hours: dict[str, float]
    gain_vms_pct: float
    gain_resource_hours_pct: dict[str, float]


def hosted_resource_hours(log: PlacementLog, trace: TraceSet) -> dict[str, float]:
    totals = {r.value: 0.0 for r in RESOURCE_ORDER}
    for vm_id in log.placements:
        vm = trace.vms[vm_id]
        hours = vm.duration_seconds / 3600.0
        for resource in RESOURCE_ORDER:
            totals[resource.value] += vm.requested.get(resource) * hours
    return totals


def capacity_gain(logs: Mapping[str, PlacementLog], trace: TraceSet,
                  baseline: str = "none") -> list[CapacityRow]:
    """Hosted capacity per policy, relative to the no-oversubscription baseline."""
    if baseline not in logs:
        raise ValueError(f"baseline policy {baseline!r} missing from logs")
    hashes = {log.trace_hash for log in logs.values()}
    if len(hashes) != 1 or trace.content_hash() not in hashes:
        raise ValueError("placement logs were produced from different traces")
    base = logs[baseline]
    base_rh = hosted_resource_hours(base, trace)
    rows = []
    for name in logs:
        log = logs[name]
        rh = hosted_resource_hours(log, trace)
        gain_vms = (100.0 * (log.hosted_count - base.hosted_count) / base.hosted_count
                    if base.hosted_count else 0.0)
        gain_rh = {}
        for key, value in rh.items():
            gain_rh[key] = (100.0 * (value - base_rh[key]) / base_rh[key]
                            if base_rh[key] else 0.0)
        rows.append(CapacityRow(name, log.hosted_count, rh, gain_vms, gain_rh))
    return rows
