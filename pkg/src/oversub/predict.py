"""Utilization prediction.

Two layers:

* long-term, scheduler-facing: per-time-window percentile profiles predicted
  from the utilization history of similar prior VMs, grouped by
  (subscription, vm_config) with subscription-only and config-only fallbacks.
  A VM whose groups are all too small gets no prediction and is scheduled
  fully guaranteed.
* short-horizon, runtime-facing: an EWMA (next monitoring interval) and a
  seasonal-plus-trend forecast (next 5 minutes) per VM and resource, consumed
  by the contention mitigation engine after a 24-hour warm-up.

Quantiles use the nearest-rank convention and are then rounded *up* to 5%
buckets; rounding up biases toward over-allocation, which is the safe side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .resources import RESOURCE_ORDER, SAMPLE_SECONDS, SAMPLES_PER_DAY, Resource
from .trace import TraceSet, VMRecord

BUCKET_PCT = 5.0
PMAX_PERCENTILE = 99  # group quantile used for the per-window predicted max


def bucket_up(value: float, bucket: float = BUCKET_PCT) -> float:
    """Round a percentage up to the next bucket, capped at 100."""
    if value <= 0:
        return 0.0
    return min(100.0, np.ceil(round(value / bucket, 9)) * bucket)


def nearest_rank_quantile(sorted_values: np.ndarray, percentile: float) -> float:
    """Nearest-rank quantile of ascending ``sorted_values`` (percentile in (0,100])."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("quantile of empty history")
    rank = int(np.ceil(percentile / 100.0 * n))
    return float(sorted_values[max(rank, 1) - 1])


@dataclass(frozen=True)
class TimeWindowProfile:
    """Predicted per-window utilization buckets (percent of requested)."""

    window_hours: int
    percentile_x: int
    p_max: dict[Resource, np.ndarray]  # (windows,), multiples of 5 in [0,100]
    p_x: dict[Resource, np.ndarray]

    @property
    def windows(self) -> int:
        return 24 // self.window_hours

    def validate(self) -> None:
        if 24 % self.window_hours:
            raise ValueError(f"window_hours must divide 24, got {self.window_hours}")
        for resource in RESOURCE_ORDER:
            pm, px = self.p_max[resource], self.p_x[resource]
            if len(pm) != self.windows or len(px) != self.windows:
                raise ValueError("profile window count mismatch")
            for arr in (pm, px):
                if np.any(arr < 0) or np.any(arr > 100) or np.any(arr % BUCKET_PCT != 0):
                    raise ValueError("profile values must be 5% buckets in [0,100]")
            if np.any(px > pm):
                raise ValueError("p_x must not exceed p_max")


def vm_window_maxima(trace: TraceSet, vm_id: str, resource: Resource,
                     window_hours: int) -> np.ndarray:
    """Lifetime max utilization of a VM in each hour-of-day window."""
    series = trace.series[(vm_id, resource)]
    windows = 24 // window_hours
    per_window = window_hours * 3600 // SAMPLE_SECONDS
    offset = (series.start // SAMPLE_SECONDS) % SAMPLES_PER_DAY
    values = series.values.astype(np.float64)
    pad_front = offset
    total = pad_front + len(values)
    pad_back = (-total) % SAMPLES_PER_DAY
    padded = np.full(total + pad_back, -np.inf)
    padded[pad_front:pad_front + len(values)] = values
    days = padded.reshape(-1, windows, per_window)
    return days.max(axis=2).max(axis=0)


@dataclass
class GroupHistory:
    """Sorted per-window window-maxima of a group's prior VMs, per resource."""

    n_vms: int
    sorted_maxima: dict[Resource, np.ndarray]  # (windows, n_vms), ascending per row

    def quantile(self, resource: Resource, window: int, percentile: float) -> float:
        return nearest_rank_quantile(self.sorted_maxima[resource][window], percentile)


@dataclass
class GroupModel:
    """Empirical per-group utilization histories used for profile prediction."""

    window_hours: int
    min_group_size: int
    by_sub_config: dict[tuple[str, str], GroupHistory] = field(default_factory=dict)
    by_sub: dict[str, GroupHistory] = field(default_factory=dict)
    by_config: dict[str, GroupHistory] = field(default_factory=dict)
    train_range: tuple[int, int] = (0, 0)
    n_training_vms: int = 0

    @property
    def windows(self) -> int:
        return 24 // self.window_hours

    def lookup(self, vm: VMRecord) -> GroupHistory | None:
        history = self.by_sub_config.get((vm.subscription_id, vm.vm_config))
        if history is None:
            history = self.by_sub.get(vm.subscription_id)
        if history is None:
            history = self.by_config.get(vm.vm_config)
        return history


def train_group_model(history: TraceSet, window_hours: int,
                      min_group_size: int = 5) -> GroupModel:
    """Aggregate per-window maxima of prior VMs into group histories.

    Only VMs with at least one full day of samples contribute (shorter VMs do
    not cover every window). Groups below ``min_group_size`` are dropped; the
    fallback chain is applied at query time.
    """
    if 24 % window_hours:
        raise ValueError(f"window_hours must divide 24, got {window_hours}")
    if not history.vms:
        raise ValueError("empty training trace")
    windows = 24 // window_hours

    maxima: dict[str, dict[Resource, np.ndarray]] = {}
    for vm_id in sorted(history.vms):
        vm = history.vms[vm_id]
        if vm.duration_seconds < 86400:
            continue
        maxima[vm_id] = {
            resource: vm_window_maxima(history, vm_id, resource, window_hours)
            for resource in RESOURCE_ORDER
        }

    groupings: dict[str, dict] = {"sub_config": {}, "sub": {}, "config": {}}
    for vm_id in sorted(maxima):
        vm = history.vms[vm_id]
        groupings["sub_config"].setdefault((vm.subscription_id, vm.vm_config), []).append(vm_id)
        groupings["sub"].setdefault(vm.subscription_id, []).append(vm_id)
        groupings["config"].setdefault(vm.vm_config, []).append(vm_id)

    def build(vm_ids: list[str]) -> GroupHistory:
        per_resource = {}
        for resource in RESOURCE_ORDER:
            stacked = np.stack([maxima[v][resource] for v in vm_ids], axis=1)
            stacked.sort(axis=1)
            per_resource[resource] = stacked
        return GroupHistory(len(vm_ids), per_resource)

    model = GroupModel(window_hours, min_group_size,
                       n_training_vms=len(maxima))
    if history.vms:
        model.train_range = history.time_range()
    for key, vm_ids in groupings["sub_config"].items():
        if len(vm_ids) >= min_group_size:
            model.by_sub_config[key] = build(vm_ids)
    for key, vm_ids in groupings["sub"].items():
        if len(vm_ids) >= min_group_size:
            model.by_sub[key] = build(vm_ids)
    for key, vm_ids in groupings["config"].items():
        if len(vm_ids) >= min_group_size:
            model.by_config[key] = build(vm_ids)
    return model


def predict_profile(model: GroupModel, vm: VMRecord,
                    percentile_x: int) -> TimeWindowProfile | None:
    """Per-window (p_max, p_x) buckets for a VM, or None when history is thin.

    ``p_max`` is the bucket-rounded group Q99 (rather than the literal max,
    to bound single-outlier influence); ``p_x`` the bucket-rounded
    ``Q(percentile_x)``. Callers treat None as "allocate fully guaranteed".
    """
    if not 50 <= percentile_x <= 99:
        raise ValueError(f"percentile_x must be in [50,99], got {percentile_x}")
    group = model.lookup(vm)
    if group is None:
        return None
    p_max = {}
    p_x = {}
    for resource in RESOURCE_ORDER:
        pm = np.array([bucket_up(group.quantile(resource, w, PMAX_PERCENTILE))
                       for w in range(model.windows)])
        px = np.array([bucket_up(group.quantile(resource, w, percentile_x))
                       for w in range(model.windows)])
        p_max[resource] = pm
        p_x[resource] = px
    profile = TimeWindowProfile(model.window_hours, percentile_x, p_max, p_x)
    profile.validate()
    return profile


# ---------------------------------------------------------------------------
# Runtime predictors (mitigation engine inputs)
# ---------------------------------------------------------------------------

def ewma_step(estimate: float, observation: float, alpha: float = 0.5) -> float:
    return alpha * observation + (1.0 - alpha) * estimate


def ewma_converge(estimate, observation, alpha: float, updates: int):
    """Closed form for ``updates`` consecutive EWMA steps with a constant
    observation: e' = obs + (1-alpha)^k (e - obs). Works elementwise."""
    decay = (1.0 - alpha) ** updates
    return observation + decay * (estimate - observation)


@dataclass
class Ewma:
    alpha: float = 0.5
    estimate: float | None = None

    def update(self, observation: float) -> float:
        if not 0.0 <= observation <= 100.0:
            raise ValueError(f"observation out of [0,100]: {observation}")
        if self.estimate is None:
            self.estimate = float(observation)
        else:
            self.estimate = ewma_step(self.estimate, observation, self.alpha)
        return self.estimate

    def predict(self) -> float | None:
        return self.estimate


def trend_forecast(last_five: np.ndarray) -> float:
    """Least-squares line through the last five samples, evaluated one step out."""
    y = np.asarray(last_five, dtype=np.float64)
    if len(y) != 5:
        raise ValueError("trend forecast needs exactly five samples")
    mean = y.mean()
    slope = (np.arange(5.0) - 2.0) @ y / 10.0
    return float(mean + 3.0 * slope)


class RuntimePredictor:
    """Per-VM, per-resource short-horizon forecaster.

    Combines an EWMA over the monitoring cadence with a seasonal component:
    a ring of historical per-window maxima plus a linear trend over the five
    most recent 5-minute maxima. The seasonal forecast is unavailable (None)
    until a full day has been observed.
    """

    def __init__(self, window_hours: int = 4, alpha: float = 0.5,
                 ewma_updates_per_sample: int = 1):
        if 24 % window_hours:
            raise ValueError(f"window_hours must divide 24, got {window_hours}")
        self.window_hours = window_hours
        self.windows = 24 // window_hours
        self.ewma = Ewma(alpha=alpha)
        self.ewma_updates_per_sample = ewma_updates_per_sample
        self.ring = np.full(self.windows, np.nan)
        self.recent = np.full(5, np.nan)   # last five (max) samples, oldest first
        self.recent_avgs = np.full(5, np.nan)
        self.samples_seen = 0
        self._current_window: int | None = None
        self._current_max = -np.inf

    def _window_of(self, ts: int) -> int:
        return int((ts % 86400) // (self.window_hours * 3600))

    def observe(self, max_pct: float, avg_pct: float | None, ts: int) -> None:
        """Feed one 5-minute observation (max, avg) taken at timestamp ``ts``."""
        if avg_pct is None:
            avg_pct = max_pct
        if self.ewma.estimate is None:
            self.ewma.update(max_pct)
        else:
            self.ewma.estimate = ewma_converge(self.ewma.estimate, max_pct,
                                               self.ewma.alpha,
                                               self.ewma_updates_per_sample)
        window = self._window_of(ts)
        if self._current_window is None:
            self._current_window = window
        elif window != self._current_window:
            prev = self.ring[self._current_window]
            self.ring[self._current_window] = (self._current_max if np.isnan(prev)
                                               else max(prev, self._current_max))
            self._current_window = window
            self._current_max = -np.inf
        self._current_max = max(self._current_max, max_pct)
        self.recent[:-1] = self.recent[1:]
        self.recent[-1] = max_pct
        self.recent_avgs[:-1] = self.recent_avgs[1:]
        self.recent_avgs[-1] = avg_pct
        self.samples_seen += 1

    def _seasonal(self, window: int) -> float:
        """Ring value for a window, folding in the not-yet-finalized current one."""
        value = self.ring[window]
        if window == self._current_window and self._current_max > -np.inf:
            return self._current_max if np.isnan(value) else max(float(value),
                                                                 self._current_max)
        return float(value)

    @property
    def ready(self) -> bool:
        if self.samples_seen < SAMPLES_PER_DAY:
            return False
        return all(not np.isnan(self._seasonal(w)) for w in range(self.windows))

    def horizon_predict(self, now: int) -> float | None:
        """Forecast for the next 5 minutes, or None before the 24h warm-up."""
        if not self.ready:
            return None
        seasonal = self._seasonal(self._window_of(now))
        trend = trend_forecast(self.recent)
        return float(np.clip(max(seasonal, trend), 0.0, 100.0))
