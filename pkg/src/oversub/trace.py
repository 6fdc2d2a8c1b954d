"""Trace data model and CSV (de)serialization.

A trace consists of three delimited files:

* ``vms.csv``     -- ``vm_id,subscription_id,vm_config,cpu_cores,mem_gb,net_gbps,ssd_gb,start_unix,end_unix,offering``
* ``util.csv``    -- ``vm_id,resource,timestamp_unix,max_util_pct``
* ``servers.csv`` -- ``server_id,cluster_id,cpu_cores,mem_gb,net_gbps,ssd_gb``

All timestamps are integer Unix seconds and multiples of 300. Utilization
samples are per-interval *maxima* in percent of the VM's requested amount,
and every VM must have a gap-free series covering ``[start, end)`` for every
resource. Values transiently above 100 in source telemetry are not accepted;
generators clamp to 100.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .resources import RESOURCE_ORDER, SAMPLE_SECONDS, Resource, ResourceVector

OFFERINGS = ("iaas", "paas")


class TraceError(ValueError):
    """Raised for malformed trace files or violated trace invariants."""


def _row_error(path, line_no: int, field_name: str, message: str) -> TraceError:
    return TraceError(f"{path}:{line_no}: field '{field_name}': {message}")


@dataclass(frozen=True)
class VMRecord:
    vm_id: str
    subscription_id: str
    vm_config: str
    requested: ResourceVector
    start: int
    end: int
    offering: str = "iaas"

    @property
    def weekday_of_allocation(self) -> int:
        return datetime.fromtimestamp(self.start, tz=timezone.utc).weekday()

    @property
    def duration_seconds(self) -> int:
        return self.end - self.start

    @property
    def n_samples(self) -> int:
        return (self.end - self.start) // SAMPLE_SECONDS

    def validate(self) -> None:
        if self.start % SAMPLE_SECONDS or self.end % SAMPLE_SECONDS:
            raise TraceError(f"vm {self.vm_id}: start/end must be multiples of "
                             f"{SAMPLE_SECONDS}s, got {self.start}/{self.end}")
        if self.end <= self.start:
            raise TraceError(f"vm {self.vm_id}: end ({self.end}) must be > start ({self.start})")
        if self.requested.cpu <= 0 or self.requested.mem <= 0:
            raise TraceError(f"vm {self.vm_id}: requested cpu and mem must be > 0")
        self.requested.validate_nonnegative(f"vm {self.vm_id} request")
        if self.offering not in OFFERINGS:
            raise TraceError(f"vm {self.vm_id}: offering must be one of {OFFERINGS}")


@dataclass
class UtilizationSeries:
    """Gap-free 5-minute max-utilization samples for one VM and resource.

    ``values[i]`` is the maximum utilization (percent of requested) over the
    interval ``[start + i*300, start + (i+1)*300)``.
    """

    vm_id: str
    resource: Resource
    start: int
    values: np.ndarray  # float32, percent in [0, 100]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)

    @property
    def end(self) -> int:
        return self.start + len(self.values) * SAMPLE_SECONDS

    def timestamps(self) -> np.ndarray:
        return self.start + SAMPLE_SECONDS * np.arange(len(self.values), dtype=np.int64)

    def value_at(self, ts: int) -> float:
        idx = (ts - self.start) // SAMPLE_SECONDS
        if idx < 0 or idx >= len(self.values):
            raise TraceError(f"vm {self.vm_id}: timestamp {ts} outside series range")
        return float(self.values[idx])

    def validate(self, vm: VMRecord) -> None:
        if self.start != vm.start:
            raise TraceError(f"vm {self.vm_id} {self.resource.value}: series starts at "
                             f"{self.start}, expected {vm.start}")
        if len(self.values) != vm.n_samples:
            missing = self.start + len(self.values) * SAMPLE_SECONDS
            raise TraceError(f"vm {self.vm_id} {self.resource.value}: series has "
                             f"{len(self.values)} samples, expected {vm.n_samples} "
                             f"(first missing timestamp {missing})")
        if len(self.values) and (np.min(self.values) < 0 or np.max(self.values) > 100):
            raise TraceError(f"vm {self.vm_id} {self.resource.value}: "
                             f"utilization out of [0,100]")

    def __eq__(self, other) -> bool:
        return (isinstance(other, UtilizationSeries)
                and self.vm_id == other.vm_id and self.resource == other.resource
                and self.start == other.start
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class ServerSpec:
    server_id: str
    cluster_id: str
    capacity: ResourceVector

    def validate(self) -> None:
        self.capacity.validate_nonnegative(f"server {self.server_id} capacity")
        if self.capacity.cpu <= 0 or self.capacity.mem <= 0:
            raise TraceError(f"server {self.server_id}: capacity cpu and mem must be > 0")


@dataclass
class TraceSet:
    """Immutable-after-construction bundle of VMs, their series, and a fleet."""

    vms: dict[str, VMRecord]
    series: dict[tuple[str, Resource], UtilizationSeries]
    servers: list[ServerSpec] = field(default_factory=list)

    def validate(self) -> None:
        for vm in self.vms.values():
            vm.validate()
        for (vm_id, resource), s in self.series.items():
            if vm_id not in self.vms:
                raise TraceError(f"series references unknown vm {vm_id}")
            if s.vm_id != vm_id or s.resource != resource:
                raise TraceError(f"series key mismatch for vm {vm_id}")
            s.validate(self.vms[vm_id])
        for vm_id in self.vms:
            for resource in RESOURCE_ORDER:
                if (vm_id, resource) not in self.series:
                    raise TraceError(f"vm {vm_id}: missing {resource.value} series")
        seen = set()
        for server in self.servers:
            server.validate()
            if server.server_id in seen:
                raise TraceError(f"duplicate server_id {server.server_id}")
            seen.add(server.server_id)

    def get_series(self, vm_id: str, resource: Resource) -> UtilizationSeries:
        return self.series[(vm_id, resource)]

    def time_range(self) -> tuple[int, int]:
        if not self.vms:
            raise TraceError("empty trace")
        starts = min(vm.start for vm in self.vms.values())
        ends = max(vm.end for vm in self.vms.values())
        return starts, ends

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for vm_id in sorted(self.vms):
            vm = self.vms[vm_id]
            h.update(repr((vm.vm_id, vm.subscription_id, vm.vm_config,
                           vm.requested.as_tuple(), vm.start, vm.end,
                           vm.offering)).encode())
            for resource in RESOURCE_ORDER:
                h.update(self.series[(vm_id, resource)].values.tobytes())
        for server in sorted(self.servers, key=lambda s: s.server_id):
            h.update(repr((server.server_id, server.cluster_id,
                           server.capacity.as_tuple())).encode())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        return (isinstance(other, TraceSet) and self.vms == other.vms
                and self.series == other.series and self.servers == other.servers)


_RESOURCE_BY_NAME = {r.value: r for r in RESOURCE_ORDER}


def _parse_int(row: Mapping[str, str], key: str, path, line_no: int,
               multiple_of: int | None = None) -> int:
    try:
        value = int(row[key])
    except (KeyError, ValueError):
        raise _row_error(path, line_no, key, f"expected integer, got {row.get(key)!r}")
    if multiple_of and value % multiple_of:
        raise _row_error(path, line_no, key, f"must be a multiple of {multiple_of}")
    return value


def _parse_float(row: Mapping[str, str], key: str, path, line_no: int) -> float:
    try:
        return float(row[key])
    except (KeyError, ValueError):
        raise _row_error(path, line_no, key, f"expected number, got {row.get(key)!r}")


def _read_rows(path, expected_fields: Iterable[str]):
    expected = list(expected_fields)
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise TraceError(f"{path}: cannot open trace file: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise TraceError(f"{path}: header must be {','.join(expected)}, "
                             f"got {reader.fieldnames}")
        # line 1 is the header
        for line_no, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise TraceError(f"{path}:{line_no}: wrong number of columns")
            yield line_no, row


VM_FIELDS = ["vm_id", "subscription_id", "vm_config", "cpu_cores", "mem_gb",
             "net_gbps", "ssd_gb", "start_unix", "end_unix", "offering"]
UTIL_FIELDS = ["vm_id", "resource", "timestamp_unix", "max_util_pct"]
SERVER_FIELDS = ["server_id", "cluster_id", "cpu_cores", "mem_gb", "net_gbps", "ssd_gb"]


def parse_trace(vm_file, util_file, server_file) -> TraceSet:
    """Parse and fully validate a trace from its three CSV files."""
    vms: dict[str, VMRecord] = {}
    for line_no, row in _read_rows(vm_file, VM_FIELDS):
        vm_id = row["vm_id"]
        if not vm_id:
            raise _row_error(vm_file, line_no, "vm_id", "must be non-empty")
        if vm_id in vms:
            raise _row_error(vm_file, line_no, "vm_id", f"duplicate vm_id {vm_id}")
        requested = ResourceVector(
            _parse_float(row, "cpu_cores", vm_file, line_no),
            _parse_float(row, "mem_gb", vm_file, line_no),
            _parse_float(row, "net_gbps", vm_file, line_no),
            _parse_float(row, "ssd_gb", vm_file, line_no),
        )
        start = _parse_int(row, "start_unix", vm_file, line_no, SAMPLE_SECONDS)
        end = _parse_int(row, "end_unix", vm_file, line_no, SAMPLE_SECONDS)
        if end <= start:
            raise _row_error(vm_file, line_no, "end_unix",
                             f"end ({end}) must be > start ({start})")
        offering = row["offering"]
        if offering not in OFFERINGS:
            raise _row_error(vm_file, line_no, "offering",
                             f"must be one of {OFFERINGS}, got {offering!r}")
        vm = VMRecord(vm_id, row["subscription_id"], row["vm_config"],
                      requested, start, end, offering)
        try:
            vm.validate()
        except TraceError as exc:
            raise TraceError(f"{vm_file}:{line_no}: {exc}") from exc
        vms[vm_id] = vm

    samples: dict[tuple[str, Resource], list[tuple[int, float]]] = {}
    for line_no, row in _read_rows(util_file, UTIL_FIELDS):
        vm_id = row["vm_id"]
        if vm_id not in vms:
            raise _row_error(util_file, line_no, "vm_id", f"unknown vm {vm_id}")
        resource = _RESOURCE_BY_NAME.get(row["resource"])
        if resource is None:
            raise _row_error(util_file, line_no, "resource",
                             f"must be one of {sorted(_RESOURCE_BY_NAME)}, "
                             f"got {row['resource']!r}")
        ts = _parse_int(row, "timestamp_unix", util_file, line_no, SAMPLE_SECONDS)
        value = _parse_float(row, "max_util_pct", util_file, line_no)
        if not 0.0 <= value <= 100.0:
            raise _row_error(util_file, line_no, "max_util_pct",
                             "utilization out of [0,100]")
        vm = vms[vm_id]
        if not vm.start <= ts < vm.end:
            raise _row_error(util_file, line_no, "timestamp_unix",
                             f"timestamp {ts} outside vm {vm_id} lifetime "
                             f"[{vm.start},{vm.end})")
        samples.setdefault((vm_id, resource), []).append((ts, value))

    series: dict[tuple[str, Resource], UtilizationSeries] = {}
    for vm_id, vm in vms.items():
        for resource in RESOURCE_ORDER:
            key = (vm_id, resource)
            rows = sorted(samples.get(key, []))
            values = np.full(vm.n_samples, np.nan, dtype=np.float32)
            for ts, value in rows:
                idx = (ts - vm.start) // SAMPLE_SECONDS
                if not np.isnan(values[idx]):
                    raise TraceError(f"{util_file}: vm {vm_id} {resource.value}: "
                                     f"duplicate sample at timestamp {ts}")
                values[idx] = value
            gaps = np.flatnonzero(np.isnan(values))
            if len(gaps):
                missing = vm.start + int(gaps[0]) * SAMPLE_SECONDS
                raise TraceError(f"{util_file}: vm {vm_id} {resource.value}: "
                                 f"missing sample at timestamp {missing}")
            series[key] = UtilizationSeries(vm_id, resource, vm.start, values)

    servers: list[ServerSpec] = []
    for line_no, row in _read_rows(server_file, SERVER_FIELDS):
        capacity = ResourceVector(
            _parse_float(row, "cpu_cores", server_file, line_no),
            _parse_float(row, "mem_gb", server_file, line_no),
            _parse_float(row, "net_gbps", server_file, line_no),
            _parse_float(row, "ssd_gb", server_file, line_no),
        )
        server = ServerSpec(row["server_id"], row["cluster_id"], capacity)
        try:
            server.validate()
        except TraceError as exc:
            raise TraceError(f"{server_file}:{line_no}: {exc}") from exc
        servers.append(server)

    trace = TraceSet(vms, series, servers)
    trace.validate()
    return trace


def _fmt(value: float) -> str:
    # shortest decimal that round-trips through float
    return repr(float(value))


def _fmt32(value: np.float32) -> str:
    return np.format_float_positional(value, unique=True, trim="-")


def write_trace(trace: TraceSet, vm_file, util_file, server_file) -> None:
    """Serialize a TraceSet; ``parse_trace`` on the output yields an equal trace."""
    with open(vm_file, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(VM_FIELDS)
        for vm_id in sorted(trace.vms):
            vm = trace.vms[vm_id]
            writer.writerow([vm.vm_id, vm.subscription_id, vm.vm_config,
                             _fmt(vm.requested.cpu), _fmt(vm.requested.mem),
                             _fmt(vm.requested.net), _fmt(vm.requested.ssd),
                             vm.start, vm.end, vm.offering])
    with open(util_file, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(UTIL_FIELDS)
        for vm_id in sorted(trace.vms):
            for resource in RESOURCE_ORDER:
                s = trace.series[(vm_id, resource)]
                for i, value in enumerate(s.values):
                    writer.writerow([vm_id, resource.value,
                                     s.start + i * SAMPLE_SECONDS, _fmt32(value)])
    with open(server_file, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SERVER_FIELDS)
        for server in trace.servers:
            writer.writerow([server.server_id, server.cluster_id,
                             _fmt(server.capacity.cpu), _fmt(server.capacity.mem),
                             _fmt(server.capacity.net), _fmt(server.capacity.ssd)])


def write_trace_dir(trace: TraceSet, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"vms": out / "vms.csv", "util": out / "util.csv",
             "servers": out / "servers.csv"}
    write_trace(trace, paths["vms"], paths["util"], paths["servers"])
    return paths
