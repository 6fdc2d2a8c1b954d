"""Resource vectors and related constants shared across the package.

Every capacity, request, and absolute demand in the simulator is a
four-component vector over (cpu cores, memory GB, network Gbps, SSD GB).
Comparison between vectors is componentwise: ``a <= b`` holds iff every
component of ``a`` is at most the corresponding component of ``b``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

# Telemetry grid: samples are per-interval maxima on a 5-minute grid.
SAMPLE_SECONDS = 300
SAMPLES_PER_DAY = 86400 // SAMPLE_SECONDS


class Resource(enum.Enum):
    CPU = "cpu"
    MEM = "mem"
    NET = "net"
    SSD = "ssd"

    def __lt__(self, other: "Resource") -> bool:
        return RESOURCE_ORDER.index(self) < RESOURCE_ORDER.index(other)


# Canonical ordering used for array layouts and tie-breaking.
RESOURCE_ORDER = (Resource.CPU, Resource.MEM, Resource.NET, Resource.SSD)
N_RESOURCES = len(RESOURCE_ORDER)

UNITS = {
    Resource.CPU: "cores",
    Resource.MEM: "GB",
    Resource.NET: "Gbps",
    Resource.SSD: "GB",
}


@dataclass(frozen=True)
class ResourceVector:
    """Per-resource quantities (cores, GB, Gbps, GB). Fractional cores allowed."""

    cpu: float = 0.0
    mem: float = 0.0
    net: float = 0.0
    ssd: float = 0.0

    def get(self, resource: Resource) -> float:
        return getattr(self, resource.value)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cpu, self.mem, self.net, self.ssd)

    @classmethod
    def from_tuple(cls, values) -> "ResourceVector":
        cpu, mem, net, ssd = values
        return cls(float(cpu), float(mem), float(net), float(ssd))

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu + other.cpu, self.mem + other.mem,
                              self.net + other.net, self.ssd + other.ssd)

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu - other.cpu, self.mem - other.mem,
                              self.net - other.net, self.ssd - other.ssd)

    def scale(self, factor: float) -> "ResourceVector":
        return ResourceVector(self.cpu * factor, self.mem * factor,
                              self.net * factor, self.ssd * factor)

    def __le__(self, other: "ResourceVector") -> bool:
        return (self.cpu <= other.cpu and self.mem <= other.mem
                and self.net <= other.net and self.ssd <= other.ssd)

    def __ge__(self, other: "ResourceVector") -> bool:
        return other.__le__(self)

    def nonnegative(self) -> bool:
        return all(v >= 0 for v in self.as_tuple())

    def validate_nonnegative(self, context: str = "resource vector") -> None:
        if not self.nonnegative():
            raise ValueError(f"{context}: all components must be >= 0, got {self}")


@dataclass(frozen=True)
class Granularity:
    """Resource-management rounding steps for allocation amounts."""

    cpu: float = 0.25
    mem: float = 1.0
    net: float = 0.1
    ssd: float = 1.0

    def get(self, resource: Resource) -> float:
        return getattr(self, resource.value)


DEFAULT_GRANULARITY = Granularity()

# Tolerance applied before ceiling so exact grain multiples computed in
# floating point (e.g. 0.05 * 240) do not round up a full grain.
_GRAIN_DECIMALS = 9


def ceil_to_grain(value: float, grain: float) -> float:
    """Round ``value`` up to the next multiple of ``grain`` (0 stays 0)."""
    if value <= 0:
        return 0.0
    return math.ceil(round(value / grain, _GRAIN_DECIMALS)) * grain


def ceil_to_grain_array(values, grain: float):
    """Elementwise ``ceil_to_grain`` (numpy round and ceil share the same
    semantics as the scalar path, so results match exactly)."""
    import numpy as np

    arr = np.asarray(values, dtype=np.float64)
    rounded = np.ceil(np.round(arr / grain, _GRAIN_DECIMALS)) * grain
    return np.where(arr > 0, rounded, 0.0)
