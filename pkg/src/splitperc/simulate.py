"""Trace-driven replay of the adaptive offloading loop.

A bandwidth trace (1 Hz uplink samples) drives one selection round per sample:
the effective uplink is the sample scaled by the fraction of the link budgeted
to perception, the selector picks a configuration, and the estimated breakdown
is recorded.  Static baselines replay the same trace with a pinned
configuration.  Replays are pure latency-model computations — nothing sleeps,
no packets move — so ``sweep`` can grid over budgets and latency bounds
cheaply and deterministically.

Trace CSV format: header ``t_s,uplink_mbps``, one sample per line, ``#``
comments allowed.  Report format: ``key=value`` lines followed by
``usage,<split>,<quant>,<fraction>`` histogram rows.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .latency import DownlinkPolicy, PROFILED_C2V, estimate_latency, min_latency_row
from .metrics import accuracy_gain
from .optimizer import Selection, opt_par
from .profiles import ConfigProfile, ProfileTable, SplitConfig, sorted_by_nds

__all__ = [
    "BandwidthSample",
    "BandwidthTrace",
    "SimParams",
    "CycleRecord",
    "SimReport",
    "GainPoint",
    "MIN_SYNTH_MBPS",
    "synth_trace",
    "load_trace",
    "save_trace",
    "serialize_trace",
    "replay_dynamic",
    "replay_static",
    "sweep",
    "serialize_report",
    "save_report",
]

TRACE_HEADER = "t_s,uplink_mbps"

#: Floor applied by the synthetic generator so every sample is a usable link.
MIN_SYNTH_MBPS = 0.5


@dataclass(frozen=True)
class BandwidthSample:
    """One uplink bandwidth measurement."""

    t_s: float
    uplink_mbps: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.t_s):
            raise ValueError(f"t_s must be finite, got {self.t_s!r}")
        if not math.isfinite(self.uplink_mbps) or self.uplink_mbps <= 0:
            raise ValueError(
                f"uplink_mbps must be finite and > 0, got {self.uplink_mbps!r}"
            )


@dataclass(frozen=True)
class BandwidthTrace:
    """A time-ordered sequence of uplink samples."""

    samples: Tuple[BandwidthSample, ...]
    provenance: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise ValueError("trace must contain at least one sample")
        for prev, cur in zip(self.samples, self.samples[1:]):
            if cur.t_s <= prev.t_s:
                raise ValueError(
                    f"trace timestamps must strictly increase "
                    f"({prev.t_s} then {cur.t_s})"
                )

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class SimParams:
    """Replay parameters: latency bound, link budget share, downlink policy."""

    lat_max_ms: float = 100.0
    budget_fraction: float = 1.0
    dwn: DownlinkPolicy = PROFILED_C2V
    cycle_ms: Optional[float] = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.lat_max_ms) or self.lat_max_ms <= 0:
            raise ValueError(
                f"lat_max_ms must be finite and > 0, got {self.lat_max_ms!r}"
            )
        if not math.isfinite(self.budget_fraction) or not 0 < self.budget_fraction <= 1:
            raise ValueError(
                f"budget_fraction must be in (0, 1], got {self.budget_fraction!r}"
            )
        if self.cycle_ms is None:
            object.__setattr__(self, "cycle_ms", self.lat_max_ms)
        elif not math.isfinite(self.cycle_ms) or self.cycle_ms <= 0:
            raise ValueError(f"cycle_ms must be finite and > 0, got {self.cycle_ms!r}")


@dataclass(frozen=True)
class CycleRecord:
    """What one replay cycle saw and decided."""

    t_s: float
    uplink_mbps: float
    effective_mbps: float
    selection: Selection


@dataclass(frozen=True)
class SimReport:
    """Aggregated outcome of one replay."""

    records: Tuple[CycleRecord, ...]
    usage_histogram: Dict[SplitConfig, float]
    violations: int
    mean_nds: float
    cycles: int

    def __post_init__(self) -> None:
        if self.cycles != len(self.records):
            raise ValueError("cycles must equal the number of records")
        if not 0 <= self.violations <= self.cycles:
            raise ValueError("violations must be in [0, cycles]")
        total = math.fsum(self.usage_histogram.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"usage fractions must sum to 1, got {total}")


@dataclass(frozen=True)
class GainPoint:
    """One cell of a budget x latency-bound gain surface."""

    budget_fraction: float
    lat_max_ms: float
    mean_nds_dynamic: float
    mean_nds_baseline: float
    gain: float


def synth_trace(n: int, mean_mbps: float, std_mbps: float, seed: int) -> BandwidthTrace:
    """Generate a 1 Hz trace from a normal distribution floored at 0.5 Mbps.

    The floor keeps every sample a positive, usable uplink; for realistic
    mean/std ratios it perturbs the empirical statistics by well under the 5%
    the generator promises for n >= 500.
    """
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError(f"n must be a positive int, got {n!r}")
    if not math.isfinite(mean_mbps) or mean_mbps <= 0:
        raise ValueError(f"mean_mbps must be finite and > 0, got {mean_mbps!r}")
    if not math.isfinite(std_mbps) or std_mbps < 0:
        raise ValueError(f"std_mbps must be finite and >= 0, got {std_mbps!r}")
    rng = np.random.default_rng(seed)
    values = np.maximum(MIN_SYNTH_MBPS, rng.normal(mean_mbps, std_mbps, size=n))
    samples = tuple(
        BandwidthSample(t_s=float(i), uplink_mbps=float(v)) for i, v in enumerate(values)
    )
    provenance = f"synthetic normal(n={n}, mean={mean_mbps}, std={std_mbps}, seed={seed})"
    return BandwidthTrace(samples, provenance)


def load_trace(source: Union[str, os.PathLike, TextIO]) -> BandwidthTrace:
    """Read a trace from a CSV path or an open text stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as handle:
            trace = load_trace(handle)
        return BandwidthTrace(trace.samples, provenance=str(source))

    expected = TRACE_HEADER.split(",")
    samples: List[BandwidthSample] = []
    header_seen = False
    for line_no, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if [c.strip() for c in line.split(",")] != expected:
                raise ValueError(f"line {line_no}: bad header (expected {TRACE_HEADER!r})")
            header_seen = True
            continue
        parts = [c.strip() for c in line.split(",")]
        if len(parts) != 2:
            raise ValueError(f"line {line_no}: expected 2 columns, got {len(parts)}")
        try:
            t_s, uplink = float(parts[0]), float(parts[1])
        except ValueError:
            raise ValueError(f"line {line_no}: non-numeric sample {line!r}") from None
        try:
            samples.append(BandwidthSample(t_s, uplink))
        except ValueError as err:
            raise ValueError(f"line {line_no}: {err}") from None
    if not header_seen:
        raise ValueError("trace is empty (missing header line)")
    try:
        return BandwidthTrace(tuple(samples), provenance="stream")
    except ValueError as err:
        raise ValueError(f"invalid trace: {err}") from None


def serialize_trace(trace: BandwidthTrace) -> str:
    lines = [TRACE_HEADER]
    lines.extend(f"{s.t_s!r},{s.uplink_mbps!r}" for s in trace.samples)
    return "\n".join(lines) + "\n"


def save_trace(trace: BandwidthTrace, dest: Union[str, os.PathLike, TextIO]) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as handle:
            handle.write(serialize_trace(trace))
    else:
        dest.write(serialize_trace(trace))


def _assemble_report(
    records: Sequence[CycleRecord],
    configs_in_order: Sequence[SplitConfig],
    lat_max_ms: float,
) -> SimReport:
    counts = {config: 0 for config in configs_in_order}
    violations = 0
    nds_values = []
    for record in records:
        counts[record.selection.config] += 1
        if record.selection.breakdown.total_ms > lat_max_ms:
            violations += 1
        nds_values.append(record.selection.row.nds)
    cycles = len(records)
    histogram = {config: count / cycles for config, count in counts.items()}
    # The mean of identical values is that value; skip the division so a
    # constant selection reports its NDS without a trailing-ulp wobble.
    if len(set(nds_values)) == 1:
        mean_nds = nds_values[0]
    else:
        mean_nds = math.fsum(nds_values) / cycles
    return SimReport(
        records=tuple(records),
        usage_histogram=histogram,
        violations=violations,
        mean_nds=mean_nds,
        cycles=cycles,
    )


def replay_dynamic(
    trace: BandwidthTrace, table: ProfileTable, params: SimParams
) -> SimReport:
    """One adaptive selection round per trace sample.

    The effective uplink each cycle is the trace sample scaled by the budget
    fraction (the slice of the link reserved for perception); the downlink is
    whatever the policy says and is not budget-scaled.  No wall-clock time
    passes — the replay prices cycles, it does not execute them.
    """
    ranked = sorted_by_nds(table)
    records = []
    for sample in trace.samples:
        effective = sample.uplink_mbps * params.budget_fraction
        selection = opt_par(ranked, effective, params.dwn, params.lat_max_ms)
        records.append(
            CycleRecord(
                t_s=sample.t_s,
                uplink_mbps=sample.uplink_mbps,
                effective_mbps=effective,
                selection=selection,
            )
        )
    return _assemble_report(records, [row.config for row in table.rows], params.lat_max_ms)


def replay_static(
    trace: BandwidthTrace, row: ConfigProfile, params: SimParams
) -> SimReport:
    """Replay the trace with one pinned configuration (no selection)."""
    records = []
    for sample in trace.samples:
        effective = sample.uplink_mbps * params.budget_fraction
        breakdown = estimate_latency(row, effective, params.dwn)
        selection = Selection(
            config=row.config,
            breakdown=breakdown,
            feasible=breakdown.total_ms <= params.lat_max_ms,
            row=row,
            evaluations=1,
        )
        records.append(
            CycleRecord(
                t_s=sample.t_s,
                uplink_mbps=sample.uplink_mbps,
                effective_mbps=effective,
                selection=selection,
            )
        )
    return _assemble_report(records, [row.config], params.lat_max_ms)


def sweep(
    trace: BandwidthTrace,
    table: ProfileTable,
    budgets: Sequence[float],
    lat_maxes: Sequence[float],
    dwn: DownlinkPolicy = PROFILED_C2V,
) -> Tuple[Tuple[GainPoint, ...], ...]:
    """Gain of the dynamic policy over the min-latency static baseline.

    Returns a rectangular grid indexed ``[budget][lat_max]``.  The baseline is
    the table's violation-minimizing configuration, so the gain isolates what
    adaptivity buys in accuracy at equal violation behaviour.
    """
    if not budgets:
        raise ValueError("budgets must not be empty")
    if not lat_maxes:
        raise ValueError("lat_maxes must not be empty")
    baseline_row = min_latency_row(table, dwn)
    surface = []
    for budget in budgets:
        row_points = []
        for lat_max in lat_maxes:
            params = SimParams(lat_max_ms=lat_max, budget_fraction=budget, dwn=dwn)
            dynamic = replay_dynamic(trace, table, params)
            baseline = replay_static(trace, baseline_row, params)
            row_points.append(
                GainPoint(
                    budget_fraction=budget,
                    lat_max_ms=lat_max,
                    mean_nds_dynamic=dynamic.mean_nds,
                    mean_nds_baseline=baseline.mean_nds,
                    gain=accuracy_gain(dynamic.mean_nds, baseline.mean_nds),
                )
            )
        surface.append(tuple(row_points))
    return tuple(surface)


def serialize_report(report: SimReport) -> str:
    """Stable text form: key=value lines, then one usage row per config."""
    lines = [
        f"cycles={report.cycles}",
        f"violations={report.violations}",
        f"mean_nds={report.mean_nds!r}",
    ]
    for config, fraction in report.usage_histogram.items():
        lines.append(
            f"usage,{config.split_layer},{config.quant.name},{fraction!r}"
        )
    return "\n".join(lines) + "\n"


def save_report(report: SimReport, dest: Union[str, os.PathLike, TextIO]) -> None:
    """Write a report in its stable text form to a path or stream."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as handle:
            handle.write(serialize_report(report))
    else:
        dest.write(serialize_report(report))
