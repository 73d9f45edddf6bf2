"""Profiled split/quantization configurations and their persistence.

A *configuration* is a (split layer, quantization level) pair.  For each
configuration a profiling run measures the average duration of every phase of
an offloaded perception cycle, the end-to-end latency at the reference uplink,
the detection quality (NDS) and the uplink bandwidth consumed at the 10 Hz
reference rate.  This module ships a builtin table of fifteen profiled
configurations (splits 1-5 x FP32/FP16/FP8) and knows how to load, validate,
save and rank such tables.

CSV on-disk format (one row per configuration, ``#`` starts a comment)::

    split,quant,backbone_ms,compress_ms,v2c_ref_ms,c2v_ms,decompress_ms,head_ms,end_to_end_ms,nds,bw_mbps
"""

import dataclasses
import enum
import io
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, TextIO, Tuple, Union

__all__ = [
    "QuantLevel",
    "SplitConfig",
    "ConfigProfile",
    "ProfileTable",
    "ProfileError",
    "MIN_SPLIT_LAYER",
    "MAX_SPLIT_LAYER",
    "CSV_HEADER",
    "builtin_table",
    "load_profile",
    "save_profile",
    "serialize_profile",
    "validate_profile",
    "nds_rank_key",
    "sorted_by_nds",
    "component_sum_ms",
    "payload_bits",
]

MIN_SPLIT_LAYER = 1
MAX_SPLIT_LAYER = 5

#: Reference transmission rate used by the profiler, in cycles per second.
#: ``bw_mbps`` in a profile is the bandwidth consumed when one feature payload
#: is shipped per cycle at this rate, which makes the per-cycle payload size
#: ``bw_mbps * 1e6 / REFERENCE_RATE_HZ`` bits.
REFERENCE_RATE_HZ = 10.0

CSV_HEADER = (
    "split,quant,backbone_ms,compress_ms,v2c_ref_ms,c2v_ms,"
    "decompress_ms,head_ms,end_to_end_ms,nds,bw_mbps"
)


class ProfileError(ValueError):
    """Raised when profile data is malformed or violates its invariants."""


class QuantLevel(enum.Enum):
    """Quantization applied to the intermediate feature tensor.

    The enum value is the width of one serialized element in bits.
    """

    FP32 = 32
    FP16 = 16
    FP8 = 8

    @property
    def bits_per_element(self) -> int:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "QuantLevel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            valid = ", ".join(level.name for level in cls)
            raise ProfileError(
                f"unknown quantization level {text!r} (expected one of {valid})"
            ) from None


@dataclass(frozen=True)
class SplitConfig:
    """A split point paired with a quantization level."""

    split_layer: int
    quant: QuantLevel

    def __post_init__(self) -> None:
        if not isinstance(self.split_layer, int) or isinstance(self.split_layer, bool):
            raise ProfileError(f"split_layer must be an int, got {self.split_layer!r}")
        if not MIN_SPLIT_LAYER <= self.split_layer <= MAX_SPLIT_LAYER:
            raise ProfileError(
                f"split_layer must be in [{MIN_SPLIT_LAYER}, {MAX_SPLIT_LAYER}], "
                f"got {self.split_layer}"
            )
        if not isinstance(self.quant, QuantLevel):
            raise ProfileError(f"quant must be a QuantLevel, got {self.quant!r}")

    def label(self) -> str:
        return f"{self.split_layer}/{self.quant.name}"


def _check_finite_nonneg(name: str, value: float) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ProfileError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ProfileError(f"{name} must be finite, got {value!r}")
    if value < 0:
        raise ProfileError(f"{name} must be >= 0, got {value}")


@dataclass(frozen=True)
class ConfigProfile:
    """Measured averages for one configuration.

    All durations are milliseconds.  ``t_v2c_ref_ms`` and ``end_to_end_ref_ms``
    were taken at the profiling reference uplink and are kept for bookkeeping
    and consistency checks; live latency estimates recompute the uplink term
    from the current bandwidth instead.  ``stdev_ms`` optionally carries the
    measurement spread per phase (and for the end-to-end figure); it is
    metadata only and excluded from equality.
    """

    config: SplitConfig
    t_backbone_ms: float
    t_compress_ms: float
    t_v2c_ref_ms: float
    t_c2v_ms: float
    t_decompress_ms: float
    t_head_ms: float
    end_to_end_ref_ms: float
    nds: float
    bw_usage_mbps: float
    stdev_ms: Optional[Dict[str, float]] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        for name in (
            "t_backbone_ms",
            "t_compress_ms",
            "t_v2c_ref_ms",
            "t_c2v_ms",
            "t_decompress_ms",
            "t_head_ms",
            "end_to_end_ref_ms",
        ):
            _check_finite_nonneg(name, getattr(self, name))
        _check_finite_nonneg("nds", self.nds)
        if self.nds > 1.0:
            raise ProfileError(f"nds must be in [0, 1], got {self.nds}")
        _check_finite_nonneg("bw_usage_mbps", self.bw_usage_mbps)
        if self.bw_usage_mbps == 0:
            raise ProfileError("bw_usage_mbps must be > 0")


def component_sum_ms(row: ConfigProfile) -> float:
    """Sum of the six phase averages, compensated to avoid rounding drift."""
    return math.fsum(
        (
            row.t_backbone_ms,
            row.t_compress_ms,
            row.t_v2c_ref_ms,
            row.t_c2v_ms,
            row.t_decompress_ms,
            row.t_head_ms,
        )
    )


def payload_bits(row: ConfigProfile) -> float:
    """Size of one feature payload in bits, derived from the profiled rate."""
    return row.bw_usage_mbps * 1e6 / REFERENCE_RATE_HZ


@dataclass(frozen=True)
class ProfileTable:
    """An immutable collection of profiled configurations."""

    rows: Tuple[ConfigProfile, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise ProfileError("profile table must contain at least one row")
        seen = set()
        for row in self.rows:
            if row.config in seen:
                raise ProfileError(f"duplicate configuration {row.config.label()}")
            seen.add(row.config)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def find(self, split_layer: int, quant: QuantLevel) -> ConfigProfile:
        wanted = SplitConfig(split_layer, quant)
        for row in self.rows:
            if row.config == wanted:
                return row
        raise KeyError(f"no profile for configuration {wanted.label()}")


def nds_rank_key(row: ConfigProfile):
    """Deterministic ranking: best detection quality first.

    Ties on NDS prefer the lower profiled end-to-end latency, then the lower
    bandwidth usage, then the lexicographically smaller (split, element bits)
    pair, so tied rows never reorder between runs.
    """
    return (
        -row.nds,
        row.end_to_end_ref_ms,
        row.bw_usage_mbps,
        row.config.split_layer,
        row.config.quant.bits_per_element,
    )


def sorted_by_nds(table: ProfileTable) -> List[ConfigProfile]:
    """Rows ordered by descending NDS under the deterministic tie rule."""
    return sorted(table.rows, key=nds_rank_key)


# ---------------------------------------------------------------------------
# Builtin profile
# ---------------------------------------------------------------------------

_STD_KEYS = (
    "backbone",
    "compress",
    "v2c",
    "c2v",
    "decompress",
    "head",
    "end_to_end",
)

# (split, quant, backbone, compress, v2c_ref, c2v, decompress, head,
#  end_to_end_ref, nds, bw_mbps, stds...)
_BUILTIN_ROWS = (
    (1, "FP32", 17.2, 10.7, 65.8, 11.6, 2.6, 20.8, 128.7, 0.52, 10.5,
     (2.10, 1.85, 4.00, 1.15, 0.60, 1.35, 4.20)),
    (2, "FP32", 22.3, 8.6, 58.0, 9.8, 2.4, 18.4, 119.6, 0.50, 8.4,
     (1.75, 1.55, 3.90, 0.95, 0.55, 1.25, 3.90)),
    (3, "FP32", 30.5, 7.3, 48.9, 8.4, 2.5, 15.9, 113.5, 0.48, 6.8,
     (1.90, 1.50, 3.75, 0.85, 0.50, 1.30, 3.80)),
    (4, "FP32", 39.8, 6.4, 54.5, 7.0, 2.3, 14.7, 124.7, 0.47, 5.9,
     (1.65, 1.30, 3.50, 0.75, 0.45, 1.10, 3.60)),
    (5, "FP32", 55.4, 5.1, 56.3, 5.8, 2.5, 12.6, 137.7, 0.46, 5.4,
     (1.45, 1.10, 3.20, 0.70, 0.40, 0.95, 3.40)),
    (1, "FP16", 9.3, 9.1, 57.6, 12.7, 2.1, 18.2, 109.0, 0.51, 9.0,
     (1.70, 1.50, 3.10, 0.95, 0.50, 1.30, 3.90)),
    (2, "FP16", 11.7, 7.3, 39.3, 7.6, 2.2, 16.6, 84.7, 0.49, 6.6,
     (1.50, 1.30, 2.95, 0.85, 0.45, 1.20, 3.70)),
    (3, "FP16", 15.3, 6.2, 44.1, 6.6, 2.1, 14.3, 88.7, 0.47, 5.6,
     (1.35, 1.20, 2.80, 0.80, 0.40, 1.05, 3.50)),
    (4, "FP16", 18.5, 5.2, 42.3, 8.6, 2.0, 13.4, 90.0, 0.46, 4.6,
     (1.25, 1.05, 2.65, 0.75, 0.35, 0.95, 3.25)),
    (5, "FP16", 20.4, 4.3, 31.2, 7.1, 2.0, 12.2, 77.2, 0.45, 4.3,
     (1.10, 0.95, 2.50, 0.70, 0.30, 0.85, 3.05)),
    (1, "FP8", 5.1, 8.2, 33.6, 9.8, 1.6, 15.5, 73.8, 0.47, 8.4,
     (1.45, 1.45, 2.80, 0.90, 0.50, 1.25, 3.90)),
    (2, "FP8", 6.2, 6.7, 40.4, 8.1, 1.6, 14.1, 77.1, 0.46, 6.9,
     (1.25, 1.30, 2.60, 0.85, 0.45, 1.15, 3.60)),
    (3, "FP8", 7.3, 5.7, 44.3, 6.3, 1.5, 12.6, 77.7, 0.44, 5.5,
     (1.10, 1.10, 2.40, 0.80, 0.40, 1.00, 3.50)),
    (4, "FP8", 8.4, 4.7, 33.4, 5.6, 1.5, 11.9, 65.5, 0.43, 4.7,
     (1.05, 1.00, 2.20, 0.75, 0.35, 0.90, 3.25)),
    (5, "FP8", 9.1, 3.6, 29.3, 7.0, 1.4, 11.0, 61.9, 0.43, 4.1,
     (0.90, 0.90, 2.00, 0.70, 0.30, 0.85, 3.00)),
)


def builtin_table() -> ProfileTable:
    """The profile table measured on the reference vehicle/cloud deployment."""
    rows = []
    for split, quant, bb, comp, v2c, c2v, dec, head, e2e, nds, bw, stds in _BUILTIN_ROWS:
        rows.append(
            ConfigProfile(
                config=SplitConfig(split, QuantLevel[quant]),
                t_backbone_ms=bb,
                t_compress_ms=comp,
                t_v2c_ref_ms=v2c,
                t_c2v_ms=c2v,
                t_decompress_ms=dec,
                t_head_ms=head,
                end_to_end_ref_ms=e2e,
                nds=nds,
                bw_usage_mbps=bw,
                stdev_ms=dict(zip(_STD_KEYS, stds)),
            )
        )
    return ProfileTable(tuple(rows))


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------

_EXPECTED_COLUMNS = CSV_HEADER.split(",")


def _parse_row(line_no: int, parts: List[str]) -> ConfigProfile:
    if len(parts) != len(_EXPECTED_COLUMNS):
        raise ProfileError(
            f"line {line_no}: expected {len(_EXPECTED_COLUMNS)} columns, got {len(parts)}"
        )
    try:
        split_layer = int(parts[0])
    except ValueError:
        raise ProfileError(f"line {line_no}: split must be an integer, got {parts[0]!r}") from None
    quant = QuantLevel.parse(parts[1])
    numbers = []
    for name, text in zip(_EXPECTED_COLUMNS[2:], parts[2:]):
        try:
            numbers.append(float(text))
        except ValueError:
            raise ProfileError(
                f"line {line_no}: column {name!r} is not a number: {text!r}"
            ) from None
    try:
        return ConfigProfile(SplitConfig(split_layer, quant), *numbers)
    except ProfileError as err:
        raise ProfileError(f"line {line_no}: {err}") from None


def load_profile(source: Union[str, os.PathLike, TextIO]) -> ProfileTable:
    """Read a profile table from a CSV path or an open text stream.

    Blank lines and ``#`` comments are ignored, the header line is required,
    and every violation reports the offending line number.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as handle:
            return load_profile(handle)

    rows: List[ConfigProfile] = []
    header_seen = False
    for line_no, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if [c.strip() for c in line.split(",")] != _EXPECTED_COLUMNS:
                raise ProfileError(
                    f"line {line_no}: bad header (expected {CSV_HEADER!r})"
                )
            header_seen = True
            continue
        rows.append(_parse_row(line_no, [c.strip() for c in line.split(",")]))
    if not header_seen:
        raise ProfileError("profile is empty (missing header line)")
    if not rows:
        raise ProfileError("profile contains a header but no rows")
    return ProfileTable(tuple(rows))


def serialize_profile(table: ProfileTable) -> str:
    """Render a table as CSV text that :func:`load_profile` reads back equal."""
    lines = [CSV_HEADER]
    for row in table.rows:
        lines.append(
            ",".join(
                [
                    str(row.config.split_layer),
                    row.config.quant.name,
                    repr(row.t_backbone_ms),
                    repr(row.t_compress_ms),
                    repr(row.t_v2c_ref_ms),
                    repr(row.t_c2v_ms),
                    repr(row.t_decompress_ms),
                    repr(row.t_head_ms),
                    repr(row.end_to_end_ref_ms),
                    repr(row.nds),
                    repr(row.bw_usage_mbps),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def save_profile(table: ProfileTable, dest: Union[str, os.PathLike, TextIO]) -> None:
    """Write a table as CSV to a path or an open text stream."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as handle:
            handle.write(serialize_profile(table))
    else:
        dest.write(serialize_profile(table))


def validate_profile(table: ProfileTable, tol_ms: float = 0.1) -> Dict[SplitConfig, float]:
    """Check each row's end-to-end figure against the sum of its phases.

    Returns a mapping of config -> residual (``|sum - end_to_end|`` in ms) for
    the rows whose residual exceeds ``tol_ms``.  An empty dict means the table
    is internally consistent at that tolerance.
    """
    if not math.isfinite(tol_ms) or tol_ms < 0:
        raise ProfileError(f"tol_ms must be finite and >= 0, got {tol_ms!r}")
    offenders: Dict[SplitConfig, float] = {}
    for row in table.rows:
        residual = abs(component_sum_ms(row) - row.end_to_end_ref_ms)
        if residual > tol_ms:
            offenders[row.config] = residual
    return offenders
