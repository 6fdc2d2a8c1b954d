"""Fleet and workload characterization: resource-hours, stranding, temporal patterns.

All analyses are pure folds over an immutable trace. Day-based analyses split
days at UTC midnight and skip partial first/last days (counted in metadata).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .resources import (RESOURCE_ORDER, SAMPLE_SECONDS, Resource,
                        ResourceVector)
from .trace import TraceError, TraceSet, UtilizationSeries

DAY_SECONDS = 86400
WINDOW_HOUR_CHOICES = (1, 2, 3, 4, 6, 8, 12, 24)

DEFAULT_DURATION_THRESHOLDS = (300, 900, 3600, 6 * 3600, 12 * 3600,
                               DAY_SECONDS, 2 * DAY_SECONDS, 7 * DAY_SECONDS)
DEFAULT_SIZE_THRESHOLDS = {
    Resource.CPU: (1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
    Resource.MEM: (2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0),
    Resource.NET: (0.5, 1.0, 2.0, 5.0, 10.0),
    Resource.SSD: (50.0, 100.0, 200.0, 500.0, 1000.0),
}


# ---------------------------------------------------------------------------
# Resource-hours
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResourceHoursRow:
    dimension: str           # 'duration' or 'size'
    threshold: float         # seconds (duration) or resource units (size)
    resource: Resource
    pct_resource_hours: float  # share held by VMs strictly above the threshold
    pct_vms: float


def resource_hours(trace: TraceSet, dimension: str,
                   thresholds=None) -> list[ResourceHoursRow]:
    """Share of resource-hours (and VMs) above duration or size thresholds."""
    if not trace.vms:
        raise TraceError("empty trace")
    if dimension not in ("duration", "size"):
        raise ValueError(f"dimension must be 'duration' or 'size', got {dimension!r}")
    vms = sorted(trace.vms.values(), key=lambda v: v.vm_id)
    hours = np.array([vm.duration_seconds / 3600.0 for vm in vms])
    rows = []
    for r_idx, resource in enumerate(RESOURCE_ORDER):
        amounts = np.array([vm.requested.get(resource) for vm in vms])
        rh = amounts * hours
        total_rh = rh.sum()
        if dimension == "duration":
            metric = np.array([float(vm.duration_seconds) for vm in vms])
            cuts = thresholds if thresholds is not None else DEFAULT_DURATION_THRESHOLDS
        else:
            metric = amounts
            if thresholds is not None:
                cuts = thresholds
            else:
                cuts = DEFAULT_SIZE_THRESHOLDS[resource]
        for cut in cuts:
            above = metric > cut
            pct_rh = 100.0 * rh[above].sum() / total_rh if total_rh > 0 else 0.0
            pct_vms = 100.0 * above.sum() / len(vms)
            rows.append(ResourceHoursRow(dimension, float(cut), resource,
                                         float(pct_rh), float(pct_vms)))
    return rows


# ---------------------------------------------------------------------------
# Stranding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrandingCell:
    server_id: str
    cluster_id: str
    timestamp: int
    fills: int
    stranded_pct: tuple[float, float, float, float]   # per resource, % of capacity
    allocated_pct: tuple[float, float, float, float]  # effective (net of harvested)
    fill_pct: tuple[float, float, float, float]
    bottleneck: Resource | None


@dataclass
class StrandingReport:
    fill_shape: ResourceVector
    oversub_mode: str
    cells: list[StrandingCell]
    mean_stranded_pct: dict[str, dict[Resource, float]] = field(default_factory=dict)
    bottleneck_share_pct: dict[str, dict[str, float]] = field(default_factory=dict)
    unplaced_vms: list[str] = field(default_factory=list)

    def aggregate(self) -> None:
        by_cluster: dict[str, list[StrandingCell]] = {}
        for cell in self.cells:
            by_cluster.setdefault(cell.cluster_id, []).append(cell)
        for cluster in sorted(by_cluster):
            cells = by_cluster[cluster]
            stranded = np.array([c.stranded_pct for c in cells])
            self.mean_stranded_pct[cluster] = {
                resource: float(stranded[:, i].mean())
                for i, resource in enumerate(RESOURCE_ORDER)
            }
            share: dict[str, float] = {}
            for resource in RESOURCE_ORDER:
                hits = sum(1 for c in cells if c.bottleneck is resource)
                share[resource.value] = 100.0 * hits / len(cells)
            share["none"] = 100.0 * sum(1 for c in cells if c.bottleneck is None) / len(cells)
            self.bottleneck_share_pct[cluster] = share


def baseline_placement(trace: TraceSet) -> dict[str, str]:
    """First-fit replay of full requests, used when no placement is supplied."""
    events = []
    for vm in trace.vms.values():
        events.append((vm.start, 1, vm.vm_id))
        events.append((vm.end, 0, vm.vm_id))
    events.sort()
    servers = sorted(trace.servers, key=lambda s: s.server_id)
    free = {s.server_id: s.capacity for s in servers}
    placement: dict[str, str] = {}
    for _, kind, vm_id in events:
        vm = trace.vms[vm_id]
        if kind == 0:
            sid = placement.get(vm_id)
            if sid is not None:
                free[sid] = free[sid] + vm.requested
            continue
        for server in servers:
            if vm.requested <= free[server.server_id]:
                free[server.server_id] = free[server.server_id] - vm.requested
                placement[vm_id] = server.server_id
                break
    return placement


def _fill_count(free: np.ndarray, fill: np.ndarray) -> int:
    active = fill > 0
    if not active.any():
        return 0
    ratios = np.floor(np.round(free[active] / fill[active], 9))
    return max(0, int(ratios.min()))


def compute_stranding(trace: TraceSet, fill_shape: ResourceVector,
                      oversub_mode: str = "none", timestamps=None,
                      placement: dict[str, str] | None = None) -> StrandingReport:
    """Hypothetical fill analysis: how much capacity is stranded, and by what.

    Per server and timestamp, fill free capacity with whole ``fill_shape``
    units until blocked; the remainder is stranded and the first resource
    (in cpu, mem, net, ssd order) that cannot satisfy another unit is the
    bottleneck. In ``cpu_only``/``cpu_mem`` modes, allocated-but-unused CPU
    (and memory) at that timestamp is harvested into the free pool first.
    """
    if oversub_mode not in ("none", "cpu_only", "cpu_mem"):
        raise ValueError(f"unknown oversub_mode {oversub_mode!r}")
    if not (fill_shape.cpu > 0 and fill_shape.mem > 0):
        raise ValueError("fill_shape must be positive in cpu and mem")
    if timestamps is None:
        start, end = trace.time_range()
        timestamps = range(start, end, 3600)
    start, end = trace.time_range()
    ts_list = sorted(set(int(t) for t in timestamps))
    for ts in ts_list:
        if not start <= ts < end:
            raise TraceError(f"timestamp {ts} outside trace range [{start},{end})")

    if placement is None:
        placement = baseline_placement(trace)
    placed_ids = sorted(placement)
    unplaced = sorted(set(trace.vms) - set(placement))

    servers = sorted(trace.servers, key=lambda s: s.server_id)
    by_server: dict[str, list[str]] = {s.server_id: [] for s in servers}
    for vm_id in placed_ids:
        sid = placement[vm_id]
        if sid not in by_server:
            raise TraceError(f"placement references unknown server {sid}")
        by_server[sid].append(vm_id)

    fill = np.array(fill_shape.as_tuple())
    harvest_idx = []
    if oversub_mode in ("cpu_only", "cpu_mem"):
        harvest_idx.append(0)
    if oversub_mode == "cpu_mem":
        harvest_idx.append(1)

    cells = []
    for server in servers:
        cap = np.array(server.capacity.as_tuple())
        vm_ids = by_server[server.server_id]
        for ts in ts_list:
            alive = [trace.vms[v] for v in vm_ids
                     if trace.vms[v].start <= ts < trace.vms[v].end]
            alloc = np.zeros(4)
            harvest = np.zeros(4)
            for vm in alive:
                req = np.array(vm.requested.as_tuple())
                alloc += req
                for i in harvest_idx:
                    resource = RESOURCE_ORDER[i]
                    util = trace.series[(vm.vm_id, resource)].value_at(ts)
                    harvest[i] += req[i] * (100.0 - util) / 100.0
            free = cap - alloc + harvest
            np.maximum(free, 0.0, out=free)
            n = _fill_count(free, fill)
            stranded = free - n * fill
            np.maximum(stranded, 0.0, out=stranded)
            bottleneck = None
            if stranded.max() > 1e-9:
                for i, resource in enumerate(RESOURCE_ORDER):
                    if fill[i] > 0 and stranded[i] < fill[i] - 1e-9:
                        bottleneck = resource
                        break
            def pct(v):
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(cap > 0, 100.0 * v / np.where(cap > 0, cap, 1.0), 0.0)
                return tuple(float(x) for x in ratio)

            effective_alloc = cap - free
            cells.append(StrandingCell(
                server.server_id, server.cluster_id, ts, n,
                pct(stranded), pct(effective_alloc), pct(n * fill), bottleneck))

    report = StrandingReport(fill_shape, oversub_mode, cells, unplaced_vms=unplaced)
    report.aggregate()
    return report


# ---------------------------------------------------------------------------
# Day windows: peaks/valleys, consistency, savings
# ---------------------------------------------------------------------------

def full_day_window_maxima(series: UtilizationSeries,
                           window_hours: int) -> tuple[np.ndarray, int, int]:
    """Per-window maxima over complete UTC days: (n_days, windows) array.

    Returns ``(maxima, first_day_start, skipped_partial_days)``.
    """
    if 24 % window_hours:
        raise ValueError(f"window_hours must divide 24, got {window_hours}")
    first_day = -(-series.start // DAY_SECONDS) * DAY_SECONDS
    last_day = (series.end // DAY_SECONDS) * DAY_SECONDS
    skipped = int(series.start != first_day) + int(series.end != last_day)
    if last_day <= first_day:
        return np.empty((0, 24 // window_hours)), first_day, skipped
    lo = (first_day - series.start) // SAMPLE_SECONDS
    hi = (last_day - series.start) // SAMPLE_SECONDS
    n_days = (last_day - first_day) // DAY_SECONDS
    windows = 24 // window_hours
    per_window = window_hours * 3600 // SAMPLE_SECONDS
    chunk = series.values[lo:hi].astype(np.float64)
    return chunk.reshape(n_days, windows, per_window).max(axis=2), first_day, skipped


def full_day_window_minima(series: UtilizationSeries,
                           window_hours: int) -> np.ndarray:
    first_day = -(-series.start // DAY_SECONDS) * DAY_SECONDS
    last_day = (series.end // DAY_SECONDS) * DAY_SECONDS
    if last_day <= first_day:
        return np.empty((0, 24 // window_hours))
    lo = (first_day - series.start) // SAMPLE_SECONDS
    hi = (last_day - series.start) // SAMPLE_SECONDS
    n_days = (last_day - first_day) // DAY_SECONDS
    windows = 24 // window_hours
    per_window = window_hours * 3600 // SAMPLE_SECONDS
    chunk = series.values[lo:hi].astype(np.float64)
    return chunk.reshape(n_days, windows, per_window).min(axis=2)


@dataclass(frozen=True)
class PeakValleyDay:
    vm_id: str
    resource: Resource
    day_start: int
    window_maxima: tuple[float, ...]
    peaks: frozenset[int]    # 0-based window indices
    valleys: frozenset[int]
    none_flag: bool


def detect_peaks_valleys(series: UtilizationSeries, window_hours: int,
                         threshold_pct: float = 5.0) -> tuple[list[PeakValleyDay], int]:
    """Per complete day: windows at the day max are peaks, at the day min valleys.

    A day whose inter-window spread is below ``threshold_pct`` is flagged
    ``none`` with empty peak/valley sets. Returns the rows and the count of
    skipped partial days.
    """
    maxima, first_day, skipped = full_day_window_maxima(series, window_hours)
    rows = []
    for d in range(maxima.shape[0]):
        wmax = maxima[d]
        day_max, day_min = wmax.max(), wmax.min()
        if day_max - day_min < threshold_pct:
            rows.append(PeakValleyDay(series.vm_id, series.resource,
                                      first_day + d * DAY_SECONDS,
                                      tuple(wmax), frozenset(), frozenset(), True))
            continue
        peaks = frozenset(int(i) for i in np.flatnonzero(wmax == day_max))
        valleys = frozenset(int(i) for i in np.flatnonzero(wmax == day_min))
        rows.append(PeakValleyDay(series.vm_id, series.resource,
                                  first_day + d * DAY_SECONDS,
                                  tuple(wmax), peaks, valleys, False))
    return rows, skipped


@dataclass
class PeakValleyAggregate:
    resource: Resource
    window_hours: int
    vm_days: int
    none_pct: float
    raw_peak_counts: list[int]
    raw_valley_counts: list[int]
    norm_peak_pct: list[float]    # day-normalized, averaged over days
    norm_valley_pct: list[float]
    skipped_partial_days: int


def peak_valley_report(trace: TraceSet, resource: Resource, window_hours: int,
                       threshold_pct: float = 5.0) -> tuple[list[PeakValleyDay],
                                                            PeakValleyAggregate]:
    windows = 24 // window_hours
    all_rows: list[PeakValleyDay] = []
    skipped_total = 0
    for vm_id in sorted(trace.vms):
        rows, skipped = detect_peaks_valleys(trace.series[(vm_id, resource)],
                                             window_hours, threshold_pct)
        all_rows.extend(rows)
        skipped_total += skipped
    raw_peaks = [0] * windows
    raw_valleys = [0] * windows
    by_day: dict[int, list[PeakValleyDay]] = {}
    none_days = 0
    for row in all_rows:
        by_day.setdefault(row.day_start, []).append(row)
        if row.none_flag:
            none_days += 1
        for w in row.peaks:
            raw_peaks[w] += 1
        for w in row.valleys:
            raw_valleys[w] += 1
    norm_peaks = np.zeros(windows)
    norm_valleys = np.zeros(windows)
    days_with_any = 0
    for day_rows in by_day.values():
        day_peaks = np.zeros(windows)
        day_valleys = np.zeros(windows)
        with_peak = 0
        for row in day_rows:
            if row.none_flag:
                continue
            with_peak += 1
            for w in row.peaks:
                day_peaks[w] += 1
            for w in row.valleys:
                day_valleys[w] += 1
        if with_peak:
            days_with_any += 1
            norm_peaks += 100.0 * day_peaks / with_peak
            norm_valleys += 100.0 * day_valleys / with_peak
    if days_with_any:
        norm_peaks /= days_with_any
        norm_valleys /= days_with_any
    vm_days = len(all_rows)
    aggregate = PeakValleyAggregate(
        resource, window_hours, vm_days,
        100.0 * none_days / vm_days if vm_days else 0.0,
        raw_peaks, raw_valleys,
        [float(x) for x in norm_peaks], [float(x) for x in norm_valleys],
        skipped_total)
    return all_rows, aggregate


@dataclass(frozen=True)
class ConsistencyRow:
    vm_id: str
    resource: Resource
    peak_diffs: np.ndarray     # |window max difference| across consecutive days
    valley_diffs: np.ndarray   # same for window minima

    @property
    def mean_peak_diff(self) -> float:
        return float(self.peak_diffs.mean()) if len(self.peak_diffs) else float("nan")


def day_over_day_consistency(series: UtilizationSeries,
                             window_hours: int) -> ConsistencyRow:
    """Absolute change of each window's max (and min) between consecutive days."""
    maxima, _, _ = full_day_window_maxima(series, window_hours)
    if maxima.shape[0] < 2:
        empty = np.empty(0)
        return ConsistencyRow(series.vm_id, series.resource, empty, empty)
    minima = full_day_window_minima(series, window_hours)
    peak_diffs = np.abs(np.diff(maxima, axis=0)).ravel()
    valley_diffs = np.abs(np.diff(minima, axis=0)).ravel()
    return ConsistencyRow(series.vm_id, series.resource, peak_diffs, valley_diffs)


@dataclass(frozen=True)
class SavingsRow:
    vm_id: str
    resource: Resource
    window_hours: int
    savings: np.ndarray   # per window instance, percent points
    mean_saving: float


def window_savings(series: UtilizationSeries, window_hours: int) -> SavingsRow:
    """Per window instance: lifetime max minus that window's max (over full days)."""
    lifetime_max = float(series.values.max()) if len(series.values) else 0.0
    maxima, _, _ = full_day_window_maxima(series, window_hours)
    savings = (lifetime_max - maxima).ravel()
    mean = float(savings.mean()) if len(savings) else 0.0
    return SavingsRow(series.vm_id, series.resource, window_hours, savings, mean)


@dataclass(frozen=True)
class SavingsSummary:
    resource: Resource
    window_hours: int
    n_vms: int
    median: float
    p25: float
    p75: float
    min: float
    max: float


def savings_summary(trace: TraceSet, resource: Resource,
                    window_hours: int) -> SavingsSummary:
    """Distribution of per-VM mean savings across the trace."""
    means = []
    for vm_id in sorted(trace.vms):
        row = window_savings(trace.series[(vm_id, resource)], window_hours)
        if len(row.savings):
            means.append(row.mean_saving)
    if not means:
        return SavingsSummary(resource, window_hours, 0, 0.0, 0.0, 0.0, 0.0, 0.0)
    arr = np.array(means)
    return SavingsSummary(resource, window_hours, len(means),
                          float(np.median(arr)), float(np.percentile(arr, 25)),
                          float(np.percentile(arr, 75)), float(arr.min()),
                          float(arr.max()))
