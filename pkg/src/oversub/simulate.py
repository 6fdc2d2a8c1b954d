"""Utilization replay, contention detection, and mitigation.

Replays actual 5-minute max utilization over a placement at step granularity.
Within a step demand is held at the sample value and the 20-second monitoring
loop runs 15 sub-ticks, so mitigation latencies land at their modeled times
without fabricating sub-5-minute workload dynamics.

Memory is the mitigated resource: demand above a VM's guaranteed amount
draws on the server's backed oversubscribed pool, and a draw exceeding the
backed amount is a violation (page-fault proxy). Mitigations escalate within
an episode: trim cold backed memory (1.1 GB/s), extend the pool from
unallocated capacity (15.7 GB/s), evict (a no-op unless the trace carries
priorities), then migrate the busiest-per-GB VM (footprint / bandwidth plus
a fixed setup time). Reactive runs act on observed violations; proactive
runs also act on short-horizon predictions (EWMA plus a seasonal/trend
forecast, 24h warm-up).

CPU contention (demand above a configurable fraction of capacity) is
detected and reported; CPU is fungible, so no memory-style mitigation
applies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hybrid import MEM_IDX
from .predict import ewma_converge
from .resources import RESOURCE_ORDER, SAMPLE_SECONDS
from .scheduler import Fleet, PlacementLog
from .trace import TraceSet

CPU_IDX = 0
SUBTICKS = SAMPLE_SECONDS // 20
TOL = 1e-9

MITIGATION_TIERS = ("none", "trim", "extend", "migrate")
TRIGGER_MODES = ("reactive", "proactive")


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class ContentionConfig:
    cpu_demand_frac: float = 0.5        # CPU violation: demand > frac * capacity
    cpu_wait_trigger_pct: float = 0.1   # reactive CPU monitor threshold ...
    cpu_util_trigger_pct: float = 20.0  # ... applied only above this utilization
    monitor_period_s: int = 20
    backing_ratio: float = 1.0          # physical backing of the oversub pool
    cold_fraction: float = 0.3          # share of idle backed memory that is cold
    trim_gbps: float = 1.1
    extend_gbps: float = 15.7
    migration_gbps: float = 1.0
    migration_setup_s: float = 30.0
    slowdown_penalty: float = 8.0
    ewma_alpha: float = 0.5

    def validate(self) -> None:
        if self.cpu_demand_frac <= 0 or self.cpu_wait_trigger_pct <= 0:
            raise SimulationError("contention thresholds must be positive")
        if self.monitor_period_s <= 0 or SAMPLE_SECONDS % self.monitor_period_s:
            raise SimulationError("monitor period must divide the 5-minute step")
        if not 0 < self.backing_ratio <= 1.0:
            raise SimulationError("backing_ratio must be in (0, 1]")
        if not 0 <= self.cold_fraction <= 1.0:
            raise SimulationError("cold_fraction must be in [0, 1]")
        for bw in (self.trim_gbps, self.extend_gbps, self.migration_gbps):
            if bw <= 0:
                raise SimulationError("bandwidths must be positive")


@dataclass
class MitigationEvent:
    time: float
    server_id: str
    kind: str                  # trim | extend | evict | migrate
    trigger: str               # reactive | proactive
    completion_time: float
    amount_gb: float | None = None
    vm_id: str | None = None
    status: str = "done"       # done | blocked

    @property
    def latency(self) -> float:
        return self.completion_time - self.time


@dataclass
class ContentionEpisode:
    server_id: str
    trigger: str
    start: float
    end: float = 0.0
    violation_seconds: float = 0.0
    first_violation: float | None = None
    last_violation: float | None = None
    actions: list[MitigationEvent] = field(default_factory=list)
    resolved_by: str = "none"


@dataclass
class AllocationErrorStats:
    mean_over_error_pct: float     # mean positive (allocated - observed peak)/requested
    under_vm_rate_pct: float       # share of VMs with any under-allocated step
    under_step_rate_pct: float     # share of VM-steps under-allocated
    windows_evaluated: int


@dataclass
class SimReport:
    tier: str
    trigger: str
    seed: int
    policy: str
    trace_hash: str
    steps: int
    server_steps_nonempty: int
    violation_seconds: dict[str, float]
    violation_share_pct: dict[str, float]
    cpu_monitor_trigger_seconds: float
    mem_episodes: list[ContentionEpisode]
    cpu_episode_durations: list[float]
    mitigation_events: list[MitigationEvent]
    allocation_error: dict[str, AllocationErrorStats]
    slowdown_max: float
    slowdown_mean: float
    timeline: list[dict]

    def mitigation_summary(self) -> dict:
        summary: dict[str, dict] = {}
        for kind in ("trim", "extend", "evict", "migrate"):
            events = [e for e in self.mitigation_events
                      if e.kind == kind and e.status == "done"]
            latencies = [e.latency for e in events]
            summary[kind] = {
                "count": len(events),
                "mean_latency_s": float(np.mean(latencies)) if latencies else 0.0,
                "max_latency_s": float(np.max(latencies)) if latencies else 0.0,
            }
        summary["blocked_migrations"] = sum(1 for e in self.mitigation_events
                                            if e.status == "blocked")
        return summary

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "policy": self.policy,
            "mitigation_tier": self.tier,
            "trigger": self.trigger,
            "seed": self.seed,
            "trace_hash": self.trace_hash,
            "steps": self.steps,
            "server_steps_nonempty": self.server_steps_nonempty,
            "violation_seconds": self.violation_seconds,
            "violation_share_pct": self.violation_share_pct,
            "cpu_monitor_trigger_seconds": self.cpu_monitor_trigger_seconds,
            "mem_episodes": [
                {"server_id": e.server_id, "trigger": e.trigger, "start": e.start,
                 "end": e.end, "violation_seconds": e.violation_seconds,
                 "resolved_by": e.resolved_by,
                 "actions": [a.kind for a in e.actions]}
                for e in self.mem_episodes
            ],
            "cpu_episode_durations": self.cpu_episode_durations,
            "mitigations": self.mitigation_summary(),
            "allocation_error": {
                key: {"mean_over_error_pct": stats.mean_over_error_pct,
                      "under_vm_rate_pct": stats.under_vm_rate_pct,
                      "under_step_rate_pct": stats.under_step_rate_pct,
                      "windows_evaluated": stats.windows_evaluated}
                for key, stats in self.allocation_error.items()
            },
            "slowdown_max": self.slowdown_max,
            "slowdown_mean": self.slowdown_mean,
        }


# ---------------------------------------------------------------------------
# Mitigation primitives
# ---------------------------------------------------------------------------

def apply_trim(vm_order: list[tuple[str, int]], cold_available: np.ndarray,
               needed_gb: float, trim_gbps: float) -> tuple[float, float, list]:
    """Plan a trim: greedily take cold memory, largest cold donors first.

    Returns (freed_gb, latency_s, [(vm_index, take_gb), ...]); freed may be 0.
    """
    remaining = needed_gb
    plan = []
    for _, idx in vm_order:
        if remaining <= TOL:
            break
        take = min(remaining, float(cold_available[idx]))
        if take > TOL:
            plan.append((idx, take))
            remaining -= take
    freed = needed_gb - remaining
    return freed, freed / trim_gbps, plan


def apply_extend(needed_gb: float, unallocated_gb: float,
                 extend_gbps: float) -> tuple[float, float]:
    """Grant unallocated memory to the pool; returns (granted_gb, latency_s)."""
    granted = max(0.0, min(needed_gb, unallocated_gb))
    return granted, granted / extend_gbps


def migration_latency(footprint_gb: float, config: ContentionConfig) -> float:
    return footprint_gb / config.migration_gbps + config.migration_setup_s


def choose_migration_candidate(candidates: list[tuple[str, int]],
                               draws: np.ndarray,
                               footprints: np.ndarray) -> list[tuple[str, int]]:
    """Order candidates by pool draw per footprint GB (busiest first)."""
    def key(item):
        _, idx = item
        ratio = draws[idx] / footprints[idx] if footprints[idx] > 0 else 0.0
        return (-ratio, item[0])
    return sorted((c for c in candidates if draws[c[1]] > TOL), key=key)


def apply_migrate(fleet: Fleet, source: int, server_vms, draws, footprints,
                  placements, config: ContentionConfig):
    """Pick the migration that best relieves the source server.

    Chooses the VM with the highest pool draw per footprint GB that has a
    feasible destination; returns (vm_id, vm_index, destination_index,
    latency_s) or None when no candidate can move.
    """
    for vm_id, idx in choose_migration_candidate(server_vms, draws, footprints):
        dest = find_destination(fleet, source, placements[vm_id][1])
        if dest is not None:
            return vm_id, idx, dest, migration_latency(float(footprints[idx]), config)
    return None


def find_destination(fleet: Fleet, source: int, allocation) -> int | None:
    """Best-fit destination for a migration, excluding the source server."""
    cand = allocation.demand_matrix()
    post = fleet.demand + cand
    slack = fleet.cap[:, :, None] - post
    slack_m = slack[:, fleet.enforced]
    feasible = np.all(slack_m >= -TOL, axis=1)
    feasible[source] = False
    if not feasible.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.where(fleet.cap_masked > 0, slack_m / fleet.cap_masked, np.inf)
    score = norm.min(axis=1)
    score[~feasible] = np.inf
    return int(np.argmin(score))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class _SimState:
    """Mutable per-run state shared between the step loop and the sub-tick engine."""

    def __init__(self, fleet: Fleet, n_vms: int, windows: int,
                 contention: ContentionConfig):
        self.fleet = fleet
        n_servers = len(fleet.ids)
        self.cap_mem = fleet.cap[:, MEM_IDX].copy()
        self.pool_mem = np.zeros(n_servers)
        self.g_mem = np.zeros(n_servers)
        self.ext = np.zeros(n_servers)
        self.trimmed = np.zeros(n_vms)
        self.contention = contention
        self.open_episode: dict[int, ContentionEpisode] = {}
        self.inflight: dict[int, list] = {}
        self.blocked_in_episode: set[int] = set()
        self.episodes: list[ContentionEpisode] = []
        self.events: list[MitigationEvent] = []
        self.mem_violation_seconds = np.zeros(n_servers)

    def sync_server(self, s: int) -> None:
        state = self.fleet.states[s]
        self.pool_mem[s] = state.oversub_pool[MEM_IDX]
        self.g_mem[s] = state.guaranteed_sum[MEM_IDX]
        backed = self.pool_mem[s] * self.contention.backing_ratio
        self.ext[s] = min(self.ext[s],
                          max(0.0, self.cap_mem[s] - self.g_mem[s] - backed))

    def unallocated(self, s: int) -> float:
        backed = self.pool_mem[s] * self.contention.backing_ratio
        return max(0.0, self.cap_mem[s] - self.g_mem[s] - backed - self.ext[s])


def run_simulation(log: PlacementLog, trace: TraceSet, tier: str = "none",
                   trigger: str = "reactive",
                   contention: ContentionConfig = ContentionConfig(),
                   seed: int = 0, validate: bool = False) -> SimReport:
    """Replay utilization over a placement and mitigate memory contention."""
    if tier not in MITIGATION_TIERS:
        raise SimulationError(f"unknown mitigation tier {tier!r}")
    if trigger not in TRIGGER_MODES:
        raise SimulationError(f"unknown trigger mode {trigger!r}")
    contention.validate()
    tier_rank = MITIGATION_TIERS.index(tier)
    proactive = trigger == "proactive"

    vm_ids = sorted(log.placements)
    n = len(vm_ids)
    windows = log.windows
    window_seconds = log.policy.window_hours * 3600

    for vm_id in vm_ids:
        if vm_id not in trace.vms:
            raise SimulationError(f"vm {vm_id}: not present in trace")
        for resource in RESOURCE_ORDER:
            if (vm_id, resource) not in trace.series:
                raise SimulationError(f"vm {vm_id}: missing utilization series")

    fleet = Fleet(trace.servers, windows)
    n_servers = len(fleet.ids)
    cap_cpu = fleet.cap[:, CPU_IDX].copy()

    if n == 0:
        zero = {r.value: 0.0 for r in RESOURCE_ORDER}
        return SimReport(tier, trigger, seed, log.policy.kind, log.trace_hash,
                         0, 0, dict(zero), dict(zero), 0.0, [], [], [], {},
                         1.0, 1.0, [])

    starts = np.array([trace.vms[v].start for v in vm_ids], dtype=np.int64)
    ends = np.array([trace.vms[v].end for v in vm_ids], dtype=np.int64)
    req = np.array([[trace.vms[v].requested.get(r) for r in RESOURCE_ORDER]
                    for v in vm_ids])
    pa_mem = np.array([log.placements[v][1].guaranteed[MEM_IDX] for v in vm_ids])
    footprint = np.ceil(req[:, MEM_IDX])
    alloc_w = np.stack([log.placements[v][1].demand_matrix()[:, :windows]
                        for v in vm_ids])  # (n, 4, windows)
    for vm_id in vm_ids:
        if log.placements[vm_id][0] not in fleet.index:
            raise SimulationError(f"vm {vm_id}: placed on unknown server "
                                  f"{log.placements[vm_id][0]}")
    vm_server = np.array([fleet.index[log.placements[v][0]] for v in vm_ids],
                         dtype=np.int64)

    lengths = (ends - starts) // SAMPLE_SECONDS
    offsets = np.zeros(n, dtype=np.int64)
    offsets[1:] = np.cumsum(lengths)[:-1]
    flat = {}
    for r_idx, resource in enumerate(RESOURCE_ORDER):
        arr = np.empty(int(lengths.sum()), dtype=np.float32)
        for i, vm_id in enumerate(vm_ids):
            arr[offsets[i]:offsets[i] + lengths[i]] = trace.series[(vm_id, resource)].values
        flat[r_idx] = arr

    t0 = int(starts.min())
    t1 = int(ends.max())
    step_times = range(t0, t1, SAMPLE_SECONDS)

    arrivals_at: dict[int, list[int]] = {}
    departures_at: dict[int, list[int]] = {}
    for i in range(n):
        arrivals_at.setdefault(int(starts[i]), []).append(i)
        departures_at.setdefault(int(ends[i]), []).append(i)

    st = _SimState(fleet, n, windows, contention)

    # runtime predictor state (memory), vectorized across VMs
    ewma = np.full(n, np.nan)
    recent = np.full((n, 5), np.nan)
    ring = np.full((n, windows), np.nan)
    ring_ok = np.zeros(n, dtype=bool)
    curmax = np.full(n, -np.inf)
    samples_seen = np.zeros(n, dtype=np.int64)
    trend_w = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])

    cpu_violation_seconds = np.zeros(n_servers)
    cpu_trigger_seconds = 0.0
    cpu_run_start = np.full(n_servers, -1, dtype=np.int64)
    cpu_episodes: list[float] = []
    under_flags = np.zeros((n, 4), dtype=bool)
    under_steps = np.zeros((n, 4), dtype=np.int64)
    alive_step_count = np.zeros(n, dtype=np.int64)
    obs_peak = np.full((n, 4, windows), -np.inf)
    slowdown_max = np.ones(n)
    slowdown_sum = 0.0
    slowdown_count = 0
    server_steps_nonempty = 0
    timeline: list[dict] = []

    alive = np.zeros(n, dtype=bool)
    prev_window = None

    for t in step_times:
        touched = set()
        for i in departures_at.get(t, ()):
            s = int(vm_server[i])
            if vm_ids[i] in fleet.states[s].placed:
                fleet.remove(s, vm_ids[i])
                touched.add(s)
            alive[i] = False
            st.trimmed[i] = 0.0
        for i in arrivals_at.get(t, ()):
            s = int(vm_server[i])
            fleet.place(s, vm_ids[i], log.placements[vm_ids[i]][1])
            touched.add(s)
            alive[i] = True
        for s in sorted(touched):
            st.sync_server(s)

        if not alive.any():
            continue

        idx_alive = np.flatnonzero(alive)
        sample_pos = offsets[idx_alive] + (t - starts[idx_alive]) // SAMPLE_SECONDS
        pct = np.zeros((4, n))
        demand = np.zeros((4, n))
        for r_idx in range(4):
            pct[r_idx, idx_alive] = flat[r_idx][sample_pos]
            demand[r_idx, idx_alive] = pct[r_idx, idx_alive] / 100.0 * req[idx_alive, r_idx]

        sv = vm_server[idx_alive]
        server_alive = np.bincount(sv, minlength=n_servers) > 0
        server_steps_nonempty += int(server_alive.sum())

        server_demand = np.zeros((4, n_servers))
        for r_idx in range(4):
            server_demand[r_idx] = np.bincount(sv, weights=demand[r_idx, idx_alive],
                                               minlength=n_servers)

        # ---- CPU contention (reported; fungible, so no memory-style action) ----
        cpu_viol = server_demand[CPU_IDX] > contention.cpu_demand_frac * cap_cpu + TOL
        cpu_violation_seconds[cpu_viol] += SAMPLE_SECONDS
        with np.errstate(divide="ignore", invalid="ignore"):
            cpu_wait = np.where(server_demand[CPU_IDX] > 0,
                                100.0 * np.maximum(0.0, server_demand[CPU_IDX] - cap_cpu)
                                / server_demand[CPU_IDX], 0.0)
            cpu_util = np.where(cap_cpu > 0,
                                100.0 * server_demand[CPU_IDX] / cap_cpu, 0.0)
        cpu_trig = (cpu_wait > contention.cpu_wait_trigger_pct) & \
                   (cpu_util > contention.cpu_util_trigger_pct)
        cpu_trigger_seconds += float(cpu_trig.sum()) * SAMPLE_SECONDS
        for s in np.flatnonzero(cpu_viol & (cpu_run_start < 0)):
            cpu_run_start[s] = t
        for s in np.flatnonzero(~cpu_viol & (cpu_run_start >= 0)):
            cpu_episodes.append(float(t - cpu_run_start[s]))
            cpu_run_start[s] = -1

        # ---- memory draw and availability --------------------------------------
        draw = np.zeros(n)
        draw[idx_alive] = np.maximum(0.0, demand[MEM_IDX, idx_alive] - pa_mem[idx_alive])
        coldcap = np.zeros(n)
        coldcap[idx_alive] = contention.cold_fraction * np.maximum(
            0.0, pa_mem[idx_alive] - demand[MEM_IDX, idx_alive])
        np.minimum(st.trimmed, coldcap, out=st.trimmed)  # re-accessed cold pages fault back
        pool_draw = np.bincount(sv, weights=draw[idx_alive], minlength=n_servers)
        trim_sum = np.bincount(sv, weights=st.trimmed[idx_alive], minlength=n_servers)
        pool_backed = st.pool_mem * contention.backing_ratio
        avail = pool_backed + st.ext + trim_sum

        if validate and np.any(st.g_mem + pool_backed + st.ext > st.cap_mem + 1e-6):
            raise SimulationError("conservation violated: backed memory exceeds capacity")

        # ---- runtime predictions (memory) ---------------------------------------
        obs = pct[MEM_IDX]
        fresh = alive & np.isnan(ewma)
        ewma[fresh] = obs[fresh]
        seasoned = alive & ~fresh
        ewma[seasoned] = ewma_converge(ewma[seasoned], obs[seasoned],
                                       contention.ewma_alpha, SUBTICKS)
        recent[idx_alive, :-1] = recent[idx_alive, 1:]
        recent[idx_alive, -1] = obs[idx_alive]
        window_now = (t % 86400) // window_seconds
        if prev_window is not None and window_now != prev_window:
            has_obs = curmax > -np.inf
            stale = np.isnan(ring[:, prev_window])
            ring[has_obs & stale, prev_window] = curmax[has_obs & stale]
            upd = has_obs & ~stale
            ring[upd, prev_window] = np.maximum(ring[upd, prev_window], curmax[upd])
            curmax[:] = -np.inf
            ring_ok = ~np.isnan(ring).any(axis=1)
        prev_window = window_now
        curmax[idx_alive] = np.maximum(curmax[idx_alive], obs[idx_alive])
        samples_seen[idx_alive] += 1

        pred = ewma.copy()
        ready = (samples_seen >= 288) & ring_ok & alive
        if ready.any():
            window_next = int(((t + SAMPLE_SECONDS) % 86400) // window_seconds)
            idx_r = np.flatnonzero(ready)
            trend = recent[idx_r].mean(axis=1) + 3.0 * (recent[idx_r] @ trend_w) / 10.0
            horizon = np.maximum(ring[idx_r, window_next], trend)
            pred[idx_r] = np.maximum(pred[idx_r], np.clip(horizon, 0.0, 100.0))
        pred_draw = np.zeros(n)
        pred_draw[idx_alive] = np.maximum(
            0.0, pred[idx_alive] / 100.0 * req[idx_alive, MEM_IDX] - pa_mem[idx_alive])
        pred_pool_draw = np.bincount(sv, weights=pred_draw[idx_alive],
                                     minlength=n_servers)

        # ---- allocation error accounting ----------------------------------------
        w_alloc = int((t % 86400) // window_seconds)
        cur_alloc = alloc_w[idx_alive, :, w_alloc]      # (n_alive, 4)
        d_alive = demand[:, idx_alive].T                # (n_alive, 4)
        under_now = d_alive > cur_alloc + 1e-6
        under_flags[idx_alive] |= under_now
        under_steps[idx_alive] += under_now
        alive_step_count[idx_alive] += 1
        obs_peak[idx_alive, :, w_alloc] = np.maximum(obs_peak[idx_alive, :, w_alloc],
                                                     d_alive)

        # ---- slowdown proxy -------------------------------------------------------
        mem_short = np.maximum(0.0, pool_draw - avail)
        cpu_over = np.maximum(0.0, server_demand[CPU_IDX] - cap_cpu)
        da = demand[MEM_IDX, idx_alive]
        dc = demand[CPU_IDX, idx_alive]
        with np.errstate(divide="ignore", invalid="ignore"):
            mem_unmet = np.where(pool_draw[sv] > 0,
                                 mem_short[sv] * draw[idx_alive] / pool_draw[sv], 0.0)
            mem_frac = np.where(da > 0, mem_unmet / da, 0.0)
            cpu_unmet = np.where(server_demand[CPU_IDX][sv] > 0,
                                 cpu_over[sv] * dc / server_demand[CPU_IDX][sv], 0.0)
            cpu_frac = np.where(dc > 0, cpu_unmet / dc, 0.0)
        step_slow = np.ones(n)
        step_slow[idx_alive] = 1.0 + contention.slowdown_penalty * np.maximum(mem_frac,
                                                                              cpu_frac)
        slowdown_max = np.maximum(slowdown_max, step_slow)
        slowdown_sum += float(step_slow[idx_alive].sum())
        slowdown_count += len(idx_alive)

        # ---- memory contention machinery ------------------------------------------
        viol_now = pool_draw > avail + TOL
        predicted = (pred_pool_draw > avail + TOL) if proactive \
            else np.zeros(n_servers, dtype=bool)
        needs_machine = viol_now | (predicted & server_alive)
        machine_servers = sorted(set(np.flatnonzero(needs_machine).tolist())
                                 | set(st.open_episode) | set(st.inflight))

        if tier_rank == 0:
            st.mem_violation_seconds[viol_now] += SAMPLE_SECONDS
            for s in np.flatnonzero(viol_now):
                ep = st.open_episode.get(int(s))
                if ep is None:
                    ep = ContentionEpisode(fleet.ids[s], trigger, float(t))
                    st.open_episode[int(s)] = ep
                ep.violation_seconds += SAMPLE_SECONDS
                if ep.first_violation is None:
                    ep.first_violation = float(t)
                ep.last_violation = float(t)
            for s in sorted(st.open_episode):
                if not viol_now[s]:
                    ep = st.open_episode.pop(s)
                    ep.end = float(t)
                    ep.resolved_by = "demand_receded"
                    st.episodes.append(ep)
        else:
            for s in machine_servers:
                _run_subticks(st, int(s), t, vm_ids, vm_server, alive, demand, draw,
                              coldcap, pool_draw, pred_pool_draw, predicted,
                              tier_rank, trigger, proactive, footprint, log)

        for s in machine_servers:
            on_server = (vm_server == s) & alive
            timeline.append({
                "time": t, "server_id": fleet.ids[s],
                "pool_backed_gb": float(st.pool_mem[s] * contention.backing_ratio),
                "extension_gb": float(st.ext[s]),
                "trimmed_gb": float(np.sum(st.trimmed[on_server])),
                "pool_draw_gb": float(pool_draw[s]),
                "available_gb": float(st.pool_mem[s] * contention.backing_ratio
                                      + st.ext[s] + np.sum(st.trimmed[on_server])
                                      - pool_draw[s]),
                "violation": bool(viol_now[s]),
            })

    for s in np.flatnonzero(cpu_run_start >= 0):
        cpu_episodes.append(float(t1 - cpu_run_start[s]))
    for s in sorted(st.open_episode):
        ep = st.open_episode[s]
        ep.end = float(t1)
        if ep.resolved_by == "none" and ep.first_violation is not None:
            ep.resolved_by = "demand_receded"
        st.episodes.append(ep)
    st.episodes.sort(key=lambda e: (e.start, e.server_id))

    violation_seconds = {
        "cpu": float(cpu_violation_seconds.sum()),
        "mem": float(st.mem_violation_seconds.sum()),
        "net": 0.0,
        "ssd": 0.0,
    }
    denom = server_steps_nonempty * SAMPLE_SECONDS
    violation_share_pct = {
        key: (100.0 * value / denom if denom else 0.0)
        for key, value in violation_seconds.items()
    }

    allocation_error = {}
    for r_idx, resource in enumerate(RESOURCE_ORDER):
        lived = obs_peak[:, r_idx, :] > -np.inf
        if lived.any():
            err = (alloc_w[:, r_idx, :] - obs_peak[:, r_idx, :]) / req[:, [r_idx]]
            mean_over = float(np.maximum(0.0, err[lived]).mean()) * 100.0
        else:
            mean_over = 0.0
        total_steps = int(alive_step_count.sum())
        allocation_error[resource.value] = AllocationErrorStats(
            mean_over_error_pct=mean_over,
            under_vm_rate_pct=100.0 * float(under_flags[:, r_idx].mean()),
            under_step_rate_pct=(100.0 * float(under_steps[:, r_idx].sum()) / total_steps
                                 if total_steps else 0.0),
            windows_evaluated=int(lived.sum()),
        )

    return SimReport(
        tier, trigger, seed, log.policy.kind, log.trace_hash, len(step_times),
        server_steps_nonempty, violation_seconds, violation_share_pct,
        cpu_trigger_seconds, st.episodes, sorted(cpu_episodes), st.events,
        allocation_error, float(slowdown_max.max()),
        float(slowdown_sum / slowdown_count) if slowdown_count else 1.0,
        timeline)


def allocation_error(log: PlacementLog, trace: TraceSet):
    """Over/under-allocation statistics for a placement, per resource.

    Ideal per window is the actually observed peak; the positive gap between
    the allocated amount and that peak is resource that could have been
    saved, and any step whose demand exceeds the allocation is an
    under-allocation event. Derived from a mitigation-free replay.
    """
    report = run_simulation(log, trace, tier="none", trigger="reactive")
    return report.allocation_error


def _run_subticks(st: _SimState, s: int, t: int, vm_ids, vm_server, alive,
                  demand, draw, coldcap, pool_draw, pred_pool_draw, predicted,
                  tier_rank, trigger, proactive, footprint, log) -> None:
    """20-second monitor/mitigation loop for one server within one step."""
    contention = st.contention
    fleet = st.fleet
    backing = contention.backing_ratio

    def refresh_server_vms():
        return [(vm_ids[i], int(i)) for i in np.flatnonzero((vm_server == s) & alive)]

    server_vms = refresh_server_vms()

    for k in range(SUBTICKS):
        tick = float(t + k * contention.monitor_period_s)

        pending = st.inflight.get(s, [])
        completed = [p for p in pending if p[0] <= tick]
        if completed:
            st.inflight[s] = [p for p in pending if p[0] > tick]
            if not st.inflight[s]:
                del st.inflight[s]
            for completion, kind, payload in sorted(completed,
                                                    key=lambda p: (p[0], p[1])):
                if kind == "trim":
                    for idx, take in payload:
                        room = max(0.0, coldcap[idx] - st.trimmed[idx])
                        st.trimmed[idx] += min(take, room)
                elif kind == "extend":
                    st.ext[s] += min(payload, st.unallocated(s))
                elif kind == "migrate":
                    vm_id, idx, dest = payload
                    if vm_id in fleet.states[s].placed:
                        fleet.remove(s, vm_id)
                        st.sync_server(s)
                    vm_server[idx] = dest
                    pool_draw[s] -= draw[idx]
                    pool_draw[dest] += draw[idx]
                    st.trimmed[idx] = 0.0  # cold pages are paged in before moving
                    server_vms = refresh_server_vms()

        trim_sum_s = float(sum(st.trimmed[i] for _, i in server_vms))
        avail = st.pool_mem[s] * backing + st.ext[s] + trim_sum_s
        viol = pool_draw[s] > avail + TOL
        trig = viol or (proactive and bool(predicted[s]))

        ep = st.open_episode.get(s)
        if trig and ep is None:
            ep = ContentionEpisode(fleet.ids[s], trigger, tick)
            st.open_episode[s] = ep

        if viol:
            st.mem_violation_seconds[s] += contention.monitor_period_s
            if ep is not None:
                ep.violation_seconds += contention.monitor_period_s
                if ep.first_violation is None:
                    ep.first_violation = tick
                ep.last_violation = tick

        if ep is not None and s not in st.inflight and tier_rank >= 1:
            target_draw = pool_draw[s]
            if proactive:
                target_draw = max(target_draw, pred_pool_draw[s])
            needed = target_draw - avail
            if needed > TOL:
                _launch_ladder(st, s, tick, needed, server_vms, draw, coldcap,
                               tier_rank, trigger, ep, footprint, log)

        if ep is not None and not viol and not trig and s not in st.inflight:
            ep.end = tick
            ep.resolved_by = _resolution(ep)
            st.episodes.append(ep)
            del st.open_episode[s]
            st.blocked_in_episode.discard(s)


def _launch_ladder(st: _SimState, s: int, tick: float, needed: float,
                   server_vms, draw, coldcap, tier_rank, trigger, ep,
                   footprint, log) -> None:
    """Escalate within the episode: trim, then extend, (evict,) then migrate."""
    contention = st.contention
    fleet = st.fleet
    remaining = needed
    launches = []

    if tier_rank >= 1 and remaining > TOL:
        cold_avail = np.maximum(0.0, coldcap - st.trimmed)
        order = sorted(server_vms, key=lambda item: (-cold_avail[item[1]], item[0]))
        freed, latency, plan = apply_trim(order, cold_avail, remaining,
                                          contention.trim_gbps)
        if freed > TOL:
            event = MitigationEvent(tick, fleet.ids[s], "trim", trigger,
                                    tick + latency, amount_gb=freed)
            st.events.append(event)
            ep.actions.append(event)
            launches.append((tick + latency, "trim", plan))
            remaining -= freed

    if tier_rank >= 2 and remaining > TOL:
        granted, latency = apply_extend(remaining, st.unallocated(s),
                                        contention.extend_gbps)
        if granted > TOL:
            event = MitigationEvent(tick, fleet.ids[s], "extend", trigger,
                                    tick + latency, amount_gb=granted)
            st.events.append(event)
            ep.actions.append(event)
            launches.append((tick + latency, "extend", granted))
            remaining -= granted

    # evict sits between extend and migrate in the escalation order; traces
    # carry no priority tiers, so it is a structural no-op

    if tier_rank >= 3 and remaining > TOL:
        plan = apply_migrate(fleet, s, server_vms, draw, footprint,
                             log.placements, contention)
        if plan is not None:
            vm_id, idx, dest, latency = plan
            fleet.place(dest, vm_id, log.placements[vm_id][1])
            st.sync_server(dest)
            event = MitigationEvent(tick, fleet.ids[s], "migrate", trigger,
                                    tick + latency, vm_id=vm_id)
            st.events.append(event)
            ep.actions.append(event)
            launches.append((tick + latency, "migrate", (vm_id, idx, dest)))
            remaining -= draw[idx]
        elif (choose_migration_candidate(server_vms, draw, footprint)
              and s not in st.blocked_in_episode):
            st.blocked_in_episode.add(s)
            event = MitigationEvent(tick, fleet.ids[s], "migrate", trigger,
                                    tick, status="blocked")
            st.events.append(event)
            ep.actions.append(event)

    if launches:
        st.inflight.setdefault(s, []).extend(launches)


def _resolution(ep: ContentionEpisode) -> str:
    """Which action ended the violation (or 'demand_receded' / 'none')."""
    done = [a for a in ep.actions if a.status == "done"]
    if ep.last_violation is None:
        return done[-1].kind if done else "none"
    cutoff = ep.last_violation + 20.0 + 1e-6
    ending = [a for a in done if a.completion_time <= cutoff]
    if ending:
        return max(ending, key=lambda a: a.completion_time).kind
    return "demand_receded"
