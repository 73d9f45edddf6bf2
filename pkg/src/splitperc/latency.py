"""Per-cycle latency estimation from a profiled configuration.

A cycle spends time in four places: on the vehicle (backbone up to the split
plus feature compression), on the uplink, in the cloud (decompression plus the
remaining head), and on the downlink carrying the perception message back.
Only the uplink term depends on the live bandwidth; the on-device and cloud
terms come straight from the profile, and the downlink term is chosen by a
policy because deployments differ in how the return path behaves.
"""

import math
from dataclasses import dataclass, field
from typing import Union

from .profiles import ConfigProfile, ProfileTable, nds_rank_key, payload_bits

__all__ = [
    "LatencyBreakdown",
    "ProfiledC2V",
    "FixedDownlink",
    "BandwidthDownlink",
    "DownlinkPolicy",
    "PROFILED_C2V",
    "downlink_ms",
    "estimate_latency",
    "within_bound",
    "min_latency_row",
]


@dataclass(frozen=True)
class LatencyBreakdown:
    """The four phase durations of one cycle, in milliseconds.

    ``total_ms`` is always the exact sum of the four parts as computed here,
    so callers can rely on ``total_ms`` and the parts telling the same story.
    """

    lat_local_ms: float
    lat_upl_ms: float
    lat_cloud_ms: float
    lat_dwn_ms: float
    total_ms: float = field(init=False)

    def __post_init__(self) -> None:
        for name in ("lat_local_ms", "lat_upl_ms", "lat_cloud_ms", "lat_dwn_ms"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
        object.__setattr__(
            self,
            "total_ms",
            self.lat_local_ms + self.lat_upl_ms + self.lat_cloud_ms + self.lat_dwn_ms,
        )


@dataclass(frozen=True)
class ProfiledC2V:
    """Downlink takes the profiled average cloud-to-vehicle time of the row."""


@dataclass(frozen=True)
class FixedDownlink:
    """Downlink takes a constant, configuration-independent time."""

    delay_ms: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.delay_ms) or self.delay_ms < 0:
            raise ValueError(f"delay_ms must be finite and >= 0, got {self.delay_ms!r}")


@dataclass(frozen=True)
class BandwidthDownlink:
    """Downlink is a message of ``message_bits`` over a ``bw_dwn_mbps`` link."""

    bw_dwn_mbps: float
    message_bits: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.bw_dwn_mbps) or self.bw_dwn_mbps <= 0:
            raise ValueError(
                f"bw_dwn_mbps must be finite and > 0, got {self.bw_dwn_mbps!r}"
            )
        if not math.isfinite(self.message_bits) or self.message_bits <= 0:
            raise ValueError(
                f"message_bits must be finite and > 0, got {self.message_bits!r}"
            )


DownlinkPolicy = Union[ProfiledC2V, FixedDownlink, BandwidthDownlink]

PROFILED_C2V = ProfiledC2V()


def downlink_ms(row: ConfigProfile, policy: DownlinkPolicy) -> float:
    """Downlink duration for ``row`` under ``policy``, in milliseconds."""
    if isinstance(policy, ProfiledC2V):
        return row.t_c2v_ms
    if isinstance(policy, FixedDownlink):
        return policy.delay_ms
    if isinstance(policy, BandwidthDownlink):
        # bits / (Mbit/s * 1e3) = bits / (kbit/ms) = ms
        return policy.message_bits / (policy.bw_dwn_mbps * 1e3)
    raise TypeError(f"unknown downlink policy: {policy!r}")


def estimate_latency(
    row: ConfigProfile,
    bw_upl_mbps: float,
    dwn: DownlinkPolicy = PROFILED_C2V,
) -> LatencyBreakdown:
    """Estimate one cycle's latency for ``row`` at the given uplink bandwidth.

    The uplink term is the profiled payload size divided by ``bw_upl_mbps``;
    propagation delay is not modelled (it is independent of the configuration
    and cancels when configurations are compared).
    """
    if not isinstance(bw_upl_mbps, (int, float)) or isinstance(bw_upl_mbps, bool):
        raise ValueError(f"bw_upl_mbps must be a number, got {bw_upl_mbps!r}")
    if not math.isfinite(bw_upl_mbps) or bw_upl_mbps <= 0:
        raise ValueError(f"bw_upl_mbps must be finite and > 0, got {bw_upl_mbps!r}")
    return LatencyBreakdown(
        lat_local_ms=row.t_backbone_ms + row.t_compress_ms,
        lat_upl_ms=payload_bits(row) / (bw_upl_mbps * 1e3),
        lat_cloud_ms=row.t_decompress_ms + row.t_head_ms,
        lat_dwn_ms=downlink_ms(row, dwn),
    )


def within_bound(breakdown: LatencyBreakdown, lat_max_ms: float) -> bool:
    """True when the cycle finishes within the latency bound (inclusive)."""
    if not math.isfinite(lat_max_ms) or lat_max_ms <= 0:
        raise ValueError(f"lat_max_ms must be finite and > 0, got {lat_max_ms!r}")
    return breakdown.total_ms <= lat_max_ms


def min_latency_row(table: ProfileTable, dwn: DownlinkPolicy = PROFILED_C2V) -> ConfigProfile:
    """The configuration with the smallest estimated total at any bandwidth.

    Rows are ordered by their bandwidth-independent phase sum, then by payload
    size, then by the quality ranking.  When one row minimizes both the fixed
    phases and the payload — true of the builtin table, where (split=5, FP8)
    ties the smallest fixed sum and strictly undercuts every payload — that
    row has the smallest total at every uplink bandwidth, making it the
    violation-minimizing static choice.
    """
    def key(row: ConfigProfile):
        fixed_ms = math.fsum(
            (
                row.t_backbone_ms,
                row.t_compress_ms,
                row.t_decompress_ms,
                row.t_head_ms,
                downlink_ms(row, dwn),
            )
        )
        return (fixed_ms, payload_bits(row), nds_rank_key(row))

    return min(table.rows, key=key)
