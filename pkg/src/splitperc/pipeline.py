"""Feature tensor processing shared by the vehicle and cloud stages.

The vehicle runs the first ``split_layer`` stub layers of a backbone, clips
activation outliers to percentile thresholds, quantizes, serializes and
DEFLATE-compresses the tensor; the cloud inverts the transport steps and runs
the remaining layers.  The stub layers stand in for a real backbone: each one
is a deterministic 2x2 average pool (ceiling division on odd extents, windows
averaged over their in-bounds elements) followed by a per-layer affine map, so
shapes shrink the way they would in a convolutional pyramid while staying
cheap and reproducible.

Wire format of one compressed payload (little-endian)::

    magic 'SPFV' | version u8 | quant-bits u8 | split u8 | reserved u8
    | channels u32 | height u32 | width u32
    | thres_low f64 | thres_up f64 | deflate_len u32 | DEFLATE stream

The DEFLATE stream is raw (no zlib header/checksum), compression level 6.
"""

import math
import struct
import zlib
from dataclasses import dataclass
from typing import Tuple

import ml_dtypes
import numpy as np

from .profiles import MAX_SPLIT_LAYER, MIN_SPLIT_LAYER, QuantLevel

__all__ = [
    "FeatureTensor",
    "ClipSpec",
    "PayloadMeta",
    "CompressedPayload",
    "NUM_STUB_LAYERS",
    "FP8_MAX",
    "DEFLATE_LEVEL",
    "PAYLOAD_MAGIC",
    "PAYLOAD_VERSION",
    "synth_tensor",
    "percentile",
    "clip",
    "quantize",
    "serialize_quantized",
    "deserialize_quantized",
    "compress",
    "decompress",
    "apply_stub_layers",
    "run_local_stage",
    "run_cloud_stage",
    "encode_payload",
    "decode_payload",
]

NUM_STUB_LAYERS = MAX_SPLIT_LAYER

#: Largest finite magnitude of the 8-bit e4m3 format; values beyond saturate.
FP8_MAX = 448.0

DEFLATE_LEVEL = 6

PAYLOAD_MAGIC = b"SPFV"
PAYLOAD_VERSION = 1

_HEADER = struct.Struct("<4sBBBBIIIddI")

# Per-layer affine applied after the pool: out = scale * pooled + shift.
_STUB_AFFINE = (
    (1.10, 0.05),
    (0.95, -0.02),
    (1.05, 0.01),
    (0.90, 0.03),
    (1.08, -0.04),
)

_QUANT_WIRE_DTYPES = {
    QuantLevel.FP32: np.dtype("<f4"),
    QuantLevel.FP16: np.dtype("<f2"),
    QuantLevel.FP8: np.dtype(ml_dtypes.float8_e4m3fn),
}


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """A finite float32 activation tensor with (channels, height, width) axes."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 3:
            raise ValueError(f"feature tensor must be 3-D (C, H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"feature tensor axes must be non-empty, got shape {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("feature tensor must contain only finite values")
        if arr is self.values:
            arr = arr.copy()  # freeze a private copy, not the caller's array
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureTensor):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class ClipSpec:
    """Percentile pair used to clip activation outliers before quantization."""

    low_pct: float = 10.0
    high_pct: float = 90.0

    def __post_init__(self) -> None:
        for name, value in (("low_pct", self.low_pct), ("high_pct", self.high_pct)):
            if not math.isfinite(value) or not 0.0 <= value <= 100.0:
                raise ValueError(f"{name} must be in [0, 100], got {value!r}")
        if self.low_pct >= self.high_pct:
            raise ValueError(
                f"low_pct must be < high_pct, got {self.low_pct} >= {self.high_pct}"
            )


def synth_tensor(channels: int, height: int, width: int, seed: int = 0) -> FeatureTensor:
    """Deterministic pseudo-activation tensor for benchmarks and demos."""
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((channels, height, width)) * 2.0
    return FeatureTensor(values.astype(np.float32))


def percentile(tensor: FeatureTensor, pct: float) -> float:
    """The ``pct``-th linear-interpolation percentile over all elements."""
    if not math.isfinite(pct) or not 0.0 <= pct <= 100.0:
        raise ValueError(f"pct must be in [0, 100], got {pct!r}")
    return float(np.percentile(tensor.values, pct))


def clip(tensor: FeatureTensor, lower: float, upper: float) -> FeatureTensor:
    """Clamp all elements into ``[lower, upper]`` (bounds applied in float32)."""
    if not (math.isfinite(lower) and math.isfinite(upper)):
        raise ValueError(f"clip bounds must be finite, got {lower!r}, {upper!r}")
    if lower > upper:
        raise ValueError(f"lower must be <= upper, got {lower} > {upper}")
    return FeatureTensor(np.clip(tensor.values, np.float32(lower), np.float32(upper)))


def quantize(tensor: FeatureTensor, quant: QuantLevel) -> FeatureTensor:
    """Round-trip the tensor through ``quant``'s storage format.

    FP32 is the identity.  FP16 rounds to binary16.  FP8 uses the e4m3 format
    and saturates at +-448 rather than overflowing to NaN.
    """
    if quant is QuantLevel.FP32:
        return tensor
    if quant is QuantLevel.FP16:
        return FeatureTensor(tensor.values.astype(np.float16).astype(np.float32))
    if quant is QuantLevel.FP8:
        clamped = np.clip(tensor.values, np.float32(-FP8_MAX), np.float32(FP8_MAX))
        return FeatureTensor(
            clamped.astype(ml_dtypes.float8_e4m3fn).astype(np.float32)
        )
    raise ValueError(f"unsupported quantization level: {quant!r}")


def serialize_quantized(tensor: FeatureTensor, quant: QuantLevel) -> bytes:
    """Pack the quantized elements little-endian in C order."""
    if quant is QuantLevel.FP8:
        storage = np.clip(
            tensor.values, np.float32(-FP8_MAX), np.float32(FP8_MAX)
        ).astype(_QUANT_WIRE_DTYPES[quant])
    else:
        storage = np.ascontiguousarray(tensor.values).astype(_QUANT_WIRE_DTYPES[quant])
    return storage.tobytes(order="C")


def deserialize_quantized(
    data: bytes, channels: int, height: int, width: int, quant: QuantLevel
) -> FeatureTensor:
    """Inverse of :func:`serialize_quantized` for the given shape."""
    for name, extent in (("channels", channels), ("height", height), ("width", width)):
        if not isinstance(extent, int) or isinstance(extent, bool) or extent < 1:
            raise ValueError(f"{name} must be a positive int, got {extent!r}")
    if quant not in _QUANT_WIRE_DTYPES:
        raise ValueError(f"unsupported quantization level: {quant!r}")
    dtype = _QUANT_WIRE_DTYPES[quant]
    expected = channels * height * width * dtype.itemsize
    if len(data) != expected:
        raise ValueError(
            f"payload is {len(data)} bytes but shape "
            f"({channels}, {height}, {width}) at {quant.name} needs {expected}"
        )
    if quant is QuantLevel.FP8:
        raw = np.frombuffer(data, dtype=np.uint8)
        if ((raw & 0x7F) == 0x7F).any():
            raise ValueError("FP8 payload contains NaN byte patterns")
    values = (
        np.frombuffer(data, dtype=dtype)
        .astype(np.float32)
        .reshape(channels, height, width)
    )
    return FeatureTensor(values)


def compress(data: bytes, level: int = DEFLATE_LEVEL) -> bytes:
    """Raw DEFLATE (no zlib header or checksum) at the given level."""
    compressor = zlib.compressobj(level, zlib.DEFLATED, -zlib.MAX_WBITS)
    return compressor.compress(data) + compressor.flush()


def decompress(data: bytes) -> bytes:
    """Inverse of :func:`compress`; malformed streams raise ``ValueError``."""
    try:
        decompressor = zlib.decompressobj(-zlib.MAX_WBITS)
        out = decompressor.decompress(data)
        out += decompressor.flush()
    except zlib.error as err:
        raise ValueError(f"corrupt DEFLATE stream: {err}") from None
    if not decompressor.eof:
        raise ValueError("corrupt DEFLATE stream: truncated input")
    return out


def _pool2x2(values: np.ndarray) -> np.ndarray:
    channels, height, width = values.shape
    out_h = (height + 1) // 2
    out_w = (width + 1) // 2
    padded = np.zeros((channels, out_h * 2, out_w * 2), dtype=np.float32)
    padded[:, :height, :width] = values
    counts = np.zeros((1, out_h * 2, out_w * 2), dtype=np.float32)
    counts[:, :height, :width] = 1.0
    sums = padded.reshape(channels, out_h, 2, out_w, 2).sum(axis=(2, 4))
    norms = counts.reshape(1, out_h, 2, out_w, 2).sum(axis=(2, 4))
    return sums / norms


def apply_stub_layers(tensor: FeatureTensor, first_layer: int, last_layer: int) -> FeatureTensor:
    """Run stub layers ``first_layer..last_layer`` (1-based, inclusive).

    ``last_layer < first_layer`` is allowed and returns the input unchanged,
    which is what the cloud stage needs when the split sits at the last layer.
    """
    for name, value in (("first_layer", first_layer), ("last_layer", last_layer)):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ValueError(f"{name} must be an int, got {value!r}")
    if first_layer < MIN_SPLIT_LAYER or last_layer > NUM_STUB_LAYERS:
        raise ValueError(
            f"layer range [{first_layer}, {last_layer}] outside "
            f"[{MIN_SPLIT_LAYER}, {NUM_STUB_LAYERS}]"
        )
    values = tensor.values
    for layer in range(first_layer, last_layer + 1):
        scale, shift = _STUB_AFFINE[layer - 1]
        values = np.float32(scale) * _pool2x2(values) + np.float32(shift)
    return FeatureTensor(values) if values is not tensor.values else tensor


@dataclass(frozen=True)
class PayloadMeta:
    """Everything the cloud needs to reconstruct a serialized feature tensor."""

    split_layer: int
    quant: QuantLevel
    channels: int
    height: int
    width: int
    thres_low: float
    thres_up: float

    def __post_init__(self) -> None:
        if not MIN_SPLIT_LAYER <= self.split_layer <= MAX_SPLIT_LAYER:
            raise ValueError(
                f"split_layer must be in [{MIN_SPLIT_LAYER}, {MAX_SPLIT_LAYER}], "
                f"got {self.split_layer!r}"
            )
        if not isinstance(self.quant, QuantLevel):
            raise ValueError(f"quant must be a QuantLevel, got {self.quant!r}")
        for name, extent in (
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
        ):
            if not isinstance(extent, int) or isinstance(extent, bool) or extent < 1:
                raise ValueError(f"{name} must be a positive int, got {extent!r}")
        if not (math.isfinite(self.thres_low) and math.isfinite(self.thres_up)):
            raise ValueError("clip thresholds must be finite")
        if self.thres_low > self.thres_up:
            raise ValueError(
                f"thres_low must be <= thres_up, got {self.thres_low} > {self.thres_up}"
            )


@dataclass(frozen=True)
class CompressedPayload:
    """A DEFLATE-compressed, quantized feature tensor plus its metadata."""

    data: bytes
    meta: PayloadMeta

    def __post_init__(self) -> None:
        if not isinstance(self.data, (bytes, bytearray)):
            raise ValueError(f"data must be bytes, got {type(self.data).__name__}")
        object.__setattr__(self, "data", bytes(self.data))


def run_local_stage(
    tensor: FeatureTensor,
    split_layer: int,
    quant: QuantLevel,
    clip_spec: ClipSpec = ClipSpec(),
) -> CompressedPayload:
    """Vehicle-side half of a cycle: stub layers, clip, quantize, pack, DEFLATE."""
    if not isinstance(split_layer, int) or isinstance(split_layer, bool):
        raise ValueError(f"split_layer must be an int, got {split_layer!r}")
    if not MIN_SPLIT_LAYER <= split_layer <= NUM_STUB_LAYERS:
        raise ValueError(
            f"split_layer must be in [{MIN_SPLIT_LAYER}, {NUM_STUB_LAYERS}], "
            f"got {split_layer}"
        )
    features = apply_stub_layers(tensor, 1, split_layer)
    # Thresholds are applied (and recorded) at float32 precision so the values
    # in the metadata are exactly the bounds the elements were clamped to.
    lower = float(np.float32(percentile(features, clip_spec.low_pct)))
    upper = float(np.float32(percentile(features, clip_spec.high_pct)))
    clipped = clip(features, lower, upper)
    packed = serialize_quantized(clipped, quant)
    meta = PayloadMeta(
        split_layer=split_layer,
        quant=quant,
        channels=clipped.channels,
        height=clipped.height,
        width=clipped.width,
        thres_low=lower,
        thres_up=upper,
    )
    return CompressedPayload(data=compress(packed), meta=meta)


def run_cloud_stage(
    payload: CompressedPayload, num_layers: int = NUM_STUB_LAYERS
) -> FeatureTensor:
    """Cloud-side half: inflate, unpack, and run the remaining stub layers."""
    if not isinstance(num_layers, int) or isinstance(num_layers, bool):
        raise ValueError(f"num_layers must be an int, got {num_layers!r}")
    if not MIN_SPLIT_LAYER <= num_layers <= NUM_STUB_LAYERS:
        raise ValueError(
            f"num_layers must be in [{MIN_SPLIT_LAYER}, {NUM_STUB_LAYERS}], "
            f"got {num_layers}"
        )
    meta = payload.meta
    if meta.split_layer > num_layers:
        raise ValueError(
            f"payload split layer {meta.split_layer} exceeds model depth {num_layers}"
        )
    packed = decompress(payload.data)
    features = deserialize_quantized(
        packed, meta.channels, meta.height, meta.width, meta.quant
    )
    return apply_stub_layers(features, meta.split_layer + 1, num_layers)


def encode_payload(payload: CompressedPayload) -> bytes:
    """Frame a payload for transport (see module docstring for the layout)."""
    meta = payload.meta
    header = _HEADER.pack(
        PAYLOAD_MAGIC,
        PAYLOAD_VERSION,
        meta.quant.bits_per_element,
        meta.split_layer,
        0,
        meta.channels,
        meta.height,
        meta.width,
        meta.thres_low,
        meta.thres_up,
        len(payload.data),
    )
    return header + payload.data


def decode_payload(frame: bytes) -> CompressedPayload:
    """Inverse of :func:`encode_payload` with full header validation."""
    if len(frame) < _HEADER.size:
        raise ValueError(
            f"payload frame is {len(frame)} bytes, header alone needs {_HEADER.size}"
        )
    (
        magic,
        version,
        quant_bits,
        split_layer,
        _reserved,
        channels,
        height,
        width,
        thres_low,
        thres_up,
        deflate_len,
    ) = _HEADER.unpack_from(frame)
    if magic != PAYLOAD_MAGIC:
        raise ValueError(f"bad payload magic {magic!r}")
    if version != PAYLOAD_VERSION:
        raise ValueError(f"unsupported payload version {version}")
    try:
        quant = QuantLevel(quant_bits)
    except ValueError:
        raise ValueError(f"unknown quantization width {quant_bits} bits") from None
    if len(frame) != _HEADER.size + deflate_len:
        raise ValueError(
            f"frame length {len(frame)} does not match header "
            f"({_HEADER.size} + {deflate_len})"
        )
    meta = PayloadMeta(
        split_layer=split_layer,
        quant=quant,
        channels=channels,
        height=height,
        width=width,
        thres_low=thres_low,
        thres_up=thres_up,
    )
    return CompressedPayload(data=frame[_HEADER.size:], meta=meta)
