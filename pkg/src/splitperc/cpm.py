"""A compact binary codec for collective perception messages.

The message mirrors the container structure of the ETSI CPM — ITS PDU header,
management container with the sender's reference position, a sensor
information list and a perceived object list — but uses a fixed little-endian
layout instead of ASN.1 UPER, so encoded bytes are deterministic and trivially
inspectable.  Units follow ITS conventions (microdegrees, centimeters,
centidegrees, centimeters/second) so every field packs as an exact integer.

Layout::

    magic 'CPM1'
    | protocol_version u8 | message_id u8 | station_id u32
    | lat_udeg i32 | lon_udeg i32 | altitude_cm i32 | generation_time_ms u64
    | sensor_count u8 | sensor_count x (sensor_id u8, sensor_type u8)
    | object_count u8 | object_count x 30-byte object record

    object record: object_id u16 | distance_x/y/z_cm i32 x3
    | speed_x/y_cms i16 x2 | heading_cdeg u16 | length/width/height_cm u16 x3
    | confidence u8 | object_class u8 | 2 reserved bytes

An empty message is exactly 32 bytes; each sensor adds 2 and each object 30.
"""

import random
import struct
from dataclasses import dataclass
from typing import Tuple

__all__ = [
    "CpmError",
    "ReferencePosition",
    "SensorInfo",
    "PerceivedObject",
    "CpmMessage",
    "CPM_MAGIC",
    "encoded_size",
    "encode_cpm",
    "decode_cpm",
    "random_message",
]

CPM_MAGIC = b"CPM1"

_HEADER = struct.Struct("<4sBBI")
_MANAGEMENT = struct.Struct("<iiiQ")
_SENSOR = struct.Struct("<BB")
_OBJECT = struct.Struct("<H3i2hH3HBB2x")

_MAX_LIST_LEN = 255
_MAX_LAT_UDEG = 90_000_000
_MAX_LON_UDEG = 180_000_000
_MAX_HEADING_CDEG = 35_999
_MAX_CONFIDENCE = 100


class CpmError(ValueError):
    """Raised for out-of-range fields and malformed encoded messages."""


def _check_range(name: str, value: int, lo: int, hi: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise CpmError(f"{name} must be an int, got {value!r}")
    if not lo <= value <= hi:
        raise CpmError(f"{name} must be in [{lo}, {hi}], got {value}")


def _check_u8(name: str, value: int) -> None:
    _check_range(name, value, 0, 0xFF)


def _check_u16(name: str, value: int) -> None:
    _check_range(name, value, 0, 0xFFFF)


def _check_i16(name: str, value: int) -> None:
    _check_range(name, value, -0x8000, 0x7FFF)


def _check_i32(name: str, value: int) -> None:
    _check_range(name, value, -0x80000000, 0x7FFFFFFF)


@dataclass(frozen=True)
class ReferencePosition:
    """WGS-84 position of the sending station."""

    lat_udeg: int
    lon_udeg: int
    altitude_cm: int

    def __post_init__(self) -> None:
        _check_range("lat_udeg", self.lat_udeg, -_MAX_LAT_UDEG, _MAX_LAT_UDEG)
        _check_range("lon_udeg", self.lon_udeg, -_MAX_LON_UDEG, _MAX_LON_UDEG)
        _check_i32("altitude_cm", self.altitude_cm)


@dataclass(frozen=True)
class SensorInfo:
    """One entry of the sensor information container."""

    sensor_id: int
    sensor_type: int

    def __post_init__(self) -> None:
        _check_u8("sensor_id", self.sensor_id)
        _check_u8("sensor_type", self.sensor_type)


@dataclass(frozen=True)
class PerceivedObject:
    """One detected object, positioned relative to the reference position."""

    object_id: int
    distance_x_cm: int
    distance_y_cm: int
    distance_z_cm: int
    speed_x_cms: int
    speed_y_cms: int
    heading_cdeg: int
    length_cm: int
    width_cm: int
    height_cm: int
    confidence: int
    object_class: int

    def __post_init__(self) -> None:
        _check_u16("object_id", self.object_id)
        _check_i32("distance_x_cm", self.distance_x_cm)
        _check_i32("distance_y_cm", self.distance_y_cm)
        _check_i32("distance_z_cm", self.distance_z_cm)
        _check_i16("speed_x_cms", self.speed_x_cms)
        _check_i16("speed_y_cms", self.speed_y_cms)
        _check_range("heading_cdeg", self.heading_cdeg, 0, _MAX_HEADING_CDEG)
        _check_u16("length_cm", self.length_cm)
        _check_u16("width_cm", self.width_cm)
        _check_u16("height_cm", self.height_cm)
        _check_range("confidence", self.confidence, 0, _MAX_CONFIDENCE)
        _check_u8("object_class", self.object_class)


@dataclass(frozen=True)
class CpmMessage:
    """A full collective perception message."""

    station_id: int
    generation_time_ms: int
    reference_position: ReferencePosition
    sensor_info: Tuple[SensorInfo, ...] = ()
    perceived_objects: Tuple[PerceivedObject, ...] = ()
    protocol_version: int = 1
    message_id: int = 14  # CPM message type id in the ITS numbering

    def __post_init__(self) -> None:
        _check_range("station_id", self.station_id, 0, 0xFFFFFFFF)
        _check_range("generation_time_ms", self.generation_time_ms, 0, 0xFFFFFFFFFFFFFFFF)
        _check_u8("protocol_version", self.protocol_version)
        _check_u8("message_id", self.message_id)
        object.__setattr__(self, "sensor_info", tuple(self.sensor_info))
        object.__setattr__(self, "perceived_objects", tuple(self.perceived_objects))
        if len(self.sensor_info) > _MAX_LIST_LEN:
            raise CpmError(
                f"at most {_MAX_LIST_LEN} sensors fit in a message, got {len(self.sensor_info)}"
            )
        if len(self.perceived_objects) > _MAX_LIST_LEN:
            raise CpmError(
                f"at most {_MAX_LIST_LEN} objects fit in a message, "
                f"got {len(self.perceived_objects)}"
            )
        for entry in self.sensor_info:
            if not isinstance(entry, SensorInfo):
                raise CpmError(f"sensor_info entries must be SensorInfo, got {entry!r}")
        for entry in self.perceived_objects:
            if not isinstance(entry, PerceivedObject):
                raise CpmError(
                    f"perceived_objects entries must be PerceivedObject, got {entry!r}"
                )


def encoded_size(num_sensors: int, num_objects: int) -> int:
    """Exact size in bytes of a message with the given list lengths."""
    return (
        _HEADER.size
        + _MANAGEMENT.size
        + 1
        + _SENSOR.size * num_sensors
        + 1
        + _OBJECT.size * num_objects
    )


def encode_cpm(message: CpmMessage) -> bytes:
    """Serialize a message to its canonical byte form."""
    if not isinstance(message, CpmMessage):
        raise CpmError(f"expected a CpmMessage, got {type(message).__name__}")
    pos = message.reference_position
    parts = [
        _HEADER.pack(
            CPM_MAGIC, message.protocol_version, message.message_id, message.station_id
        ),
        _MANAGEMENT.pack(
            pos.lat_udeg, pos.lon_udeg, pos.altitude_cm, message.generation_time_ms
        ),
        bytes([len(message.sensor_info)]),
    ]
    for sensor in message.sensor_info:
        parts.append(_SENSOR.pack(sensor.sensor_id, sensor.sensor_type))
    parts.append(bytes([len(message.perceived_objects)]))
    for obj in message.perceived_objects:
        parts.append(
            _OBJECT.pack(
                obj.object_id,
                obj.distance_x_cm,
                obj.distance_y_cm,
                obj.distance_z_cm,
                obj.speed_x_cms,
                obj.speed_y_cms,
                obj.heading_cdeg,
                obj.length_cm,
                obj.width_cm,
                obj.height_cm,
                obj.confidence,
                obj.object_class,
            )
        )
    return b"".join(parts)


class _Cursor:
    """Sequential reader that turns overruns into truncation errors."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, spec: struct.Struct):
        if self.offset + spec.size > len(self.data):
            raise CpmError(
                f"truncated message: need {spec.size} bytes at offset {self.offset}, "
                f"have {len(self.data) - self.offset}"
            )
        values = spec.unpack_from(self.data, self.offset)
        self.offset += spec.size
        return values

    def take_u8(self) -> int:
        if self.offset >= len(self.data):
            raise CpmError(f"truncated message: need 1 byte at offset {self.offset}")
        value = self.data[self.offset]
        self.offset += 1
        return value


def decode_cpm(data: bytes) -> CpmMessage:
    """Inverse of :func:`encode_cpm`; validates framing, length and ranges."""
    cursor = _Cursor(bytes(data))
    magic, version, message_id, station_id = cursor.take(_HEADER)
    if magic != CPM_MAGIC:
        raise CpmError(f"bad magic {magic!r} (expected {CPM_MAGIC!r})")
    lat, lon, alt, generation_time_ms = cursor.take(_MANAGEMENT)
    sensors = []
    for _ in range(cursor.take_u8()):
        sensor_id, sensor_type = cursor.take(_SENSOR)
        sensors.append(SensorInfo(sensor_id, sensor_type))
    objects = []
    for _ in range(cursor.take_u8()):
        objects.append(PerceivedObject(*cursor.take(_OBJECT)))
    if cursor.offset != len(cursor.data):
        raise CpmError(
            f"{len(cursor.data) - cursor.offset} trailing bytes after message end"
        )
    return CpmMessage(
        station_id=station_id,
        generation_time_ms=generation_time_ms,
        reference_position=ReferencePosition(lat, lon, alt),
        sensor_info=tuple(sensors),
        perceived_objects=tuple(objects),
        protocol_version=version,
        message_id=message_id,
    )


def random_message(rng: random.Random) -> CpmMessage:
    """A uniformly messy but valid message, for round-trip exercising."""
    def random_object() -> PerceivedObject:
        return PerceivedObject(
            object_id=rng.randint(0, 0xFFFF),
            distance_x_cm=rng.randint(-0x80000000, 0x7FFFFFFF),
            distance_y_cm=rng.randint(-0x80000000, 0x7FFFFFFF),
            distance_z_cm=rng.randint(-0x80000000, 0x7FFFFFFF),
            speed_x_cms=rng.randint(-0x8000, 0x7FFF),
            speed_y_cms=rng.randint(-0x8000, 0x7FFF),
            heading_cdeg=rng.randint(0, _MAX_HEADING_CDEG),
            length_cm=rng.randint(0, 0xFFFF),
            width_cm=rng.randint(0, 0xFFFF),
            height_cm=rng.randint(0, 0xFFFF),
            confidence=rng.randint(0, _MAX_CONFIDENCE),
            object_class=rng.randint(0, 0xFF),
        )

    return CpmMessage(
        station_id=rng.randint(0, 0xFFFFFFFF),
        generation_time_ms=rng.randint(0, 2**64 - 1),
        reference_position=ReferencePosition(
            lat_udeg=rng.randint(-_MAX_LAT_UDEG, _MAX_LAT_UDEG),
            lon_udeg=rng.randint(-_MAX_LON_UDEG, _MAX_LON_UDEG),
            altitude_cm=rng.randint(-0x80000000, 0x7FFFFFFF),
        ),
        sensor_info=tuple(
            SensorInfo(rng.randint(0, 0xFF), rng.randint(0, 0xFF))
            for _ in range(rng.randint(0, 6))
        ),
        perceived_objects=tuple(random_object() for _ in range(rng.randint(0, 12))),
        protocol_version=rng.randint(0, 0xFF),
        message_id=rng.randint(0, 0xFF),
    )
