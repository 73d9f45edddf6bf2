"""Two-endpoint datagram demonstration of the offloading loop.

A "vehicle" endpoint runs the local half of the pipeline and ships the
compressed payload to a "cloud" endpoint over UDP, paced by a token bucket so
loopback behaves like a bandwidth-limited link.  The cloud reassembles the
fragments, finishes the pipeline, and answers with an encoded perception
message plus its own processing time, letting the vehicle measure a real
four-phase latency breakdown per cycle.  Datagrams are fire-and-forget:
cycles whose fragments do not all arrive before the reassembly deadline are
dropped and counted, never retransmitted.

Fragment datagram (little-endian): magic ``SPCY`` | cycle_id u32 | split u8
| quant-bits u8 | frag_index u16 | frag_count u16 | fragment bytes.
Response datagram: magic ``SPRS`` | cycle_id u32 | cloud_ms f64
| cpm_len u32 | encoded perception message.
"""

import math
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .cpm import (
    CpmMessage,
    PerceivedObject,
    ReferencePosition,
    SensorInfo,
    decode_cpm,
    encode_cpm,
)
from .pipeline import (
    ClipSpec,
    FeatureTensor,
    NUM_STUB_LAYERS,
    decode_payload,
    encode_payload,
    run_cloud_stage,
    run_local_stage,
    synth_tensor,
)
from .profiles import QuantLevel

__all__ = [
    "ShaperConfig",
    "SendReport",
    "CycleTiming",
    "DemoConfig",
    "DemoReport",
    "FRAG_MAGIC",
    "RESPONSE_MAGIC",
    "Reassembler",
    "CompleteCycle",
    "CloudEndpoint",
    "shaped_send",
    "summarize_to_cpm",
    "vehicle_run",
    "run_demo",
]

FRAG_MAGIC = b"SPCY"
RESPONSE_MAGIC = b"SPRS"

_FRAG_HEADER = struct.Struct("<4sIBBHH")
_RESPONSE_HEADER = struct.Struct("<4sIdI")

_MAX_DATAGRAM = 65535
_MAX_FRAGS = 0xFFFF


@dataclass(frozen=True)
class ShaperConfig:
    """Token-bucket pacing parameters for the emulated uplink.

    The default burst holds a few datagrams so sleep overshoot banks as
    tokens instead of being discarded at the capacity cap; a burst equal to
    the MTU would make every timer overrun an unrecoverable pacing loss.
    """

    rate_mbps: float
    burst_bytes: int = 5600
    mtu_bytes: int = 1400

    def __post_init__(self) -> None:
        if not math.isfinite(self.rate_mbps) or self.rate_mbps <= 0:
            raise ValueError(f"rate_mbps must be finite and > 0, got {self.rate_mbps!r}")
        for name, value in (("burst_bytes", self.burst_bytes), ("mtu_bytes", self.mtu_bytes)):
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive int, got {value!r}")
        if self.mtu_bytes <= _FRAG_HEADER.size:
            raise ValueError(
                f"mtu_bytes must exceed the {_FRAG_HEADER.size}-byte fragment header"
            )
        if self.mtu_bytes > _MAX_DATAGRAM:
            raise ValueError(f"mtu_bytes must be <= {_MAX_DATAGRAM}")
        if self.burst_bytes < self.mtu_bytes:
            raise ValueError(
                f"burst_bytes ({self.burst_bytes}) must be >= mtu_bytes ({self.mtu_bytes})"
            )


class _TokenBucket:
    """Byte-based token bucket; ``consume`` blocks until tokens suffice.

    Sleep overshoot accrues extra tokens, so the long-run rate self-corrects
    instead of drifting.
    """

    def __init__(self, rate_bytes_per_s: float, capacity_bytes: float) -> None:
        self._rate = rate_bytes_per_s
        self._capacity = capacity_bytes
        self._tokens = capacity_bytes
        self._last = time.perf_counter()

    def consume(self, amount: int) -> None:
        while True:
            now = time.perf_counter()
            self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
            self._last = now
            if self._tokens >= amount:
                self._tokens -= amount
                return
            time.sleep((amount - self._tokens) / self._rate)


@dataclass(frozen=True)
class SendReport:
    """What one shaped send transferred and how long it took."""

    payload_bytes: int
    wire_bytes: int
    datagrams: int
    elapsed_s: float

    @property
    def goodput_mbps(self) -> float:
        if self.elapsed_s <= 0:
            return math.inf
        return self.payload_bytes * 8 / self.elapsed_s / 1e6


def shaped_send(
    sock: socket.socket,
    dest: Tuple[str, int],
    payload: bytes,
    cfg: ShaperConfig,
    cycle_id: int = 0,
    split_layer: int = 1,
    quant: QuantLevel = QuantLevel.FP32,
) -> SendReport:
    """Fragment ``payload`` and send it to ``dest`` at the configured rate.

    Pacing counts whole datagrams (header included) against the bucket, so
    the wire rate — not just the payload rate — honours the shaper.
    """
    if not 0 <= cycle_id <= 0xFFFFFFFF:
        raise ValueError(f"cycle_id must fit in u32, got {cycle_id!r}")
    chunk_size = cfg.mtu_bytes - _FRAG_HEADER.size
    frag_count = max(1, -(-len(payload) // chunk_size))
    if frag_count > _MAX_FRAGS:
        raise ValueError(
            f"payload needs {frag_count} fragments, more than the {_MAX_FRAGS} the "
            f"header can number"
        )
    bucket = _TokenBucket(cfg.rate_mbps * 1e6 / 8, float(cfg.burst_bytes))
    wire_bytes = 0
    start = time.perf_counter()
    for index in range(frag_count):
        body = payload[index * chunk_size:(index + 1) * chunk_size]
        datagram = (
            _FRAG_HEADER.pack(
                FRAG_MAGIC,
                cycle_id,
                split_layer,
                quant.bits_per_element,
                index,
                frag_count,
            )
            + body
        )
        bucket.consume(len(datagram))
        try:
            sock.sendto(datagram, dest)
        except OSError as err:
            raise OSError(f"send to {dest} failed at fragment {index}: {err}") from err
        wire_bytes += len(datagram)
    elapsed = time.perf_counter() - start
    return SendReport(
        payload_bytes=len(payload),
        wire_bytes=wire_bytes,
        datagrams=frag_count,
        elapsed_s=elapsed,
    )


@dataclass(frozen=True)
class CompleteCycle:
    """A fully reassembled cycle as received by the cloud."""

    cycle_id: int
    split_layer: int
    quant_bits: int
    payload: bytes


@dataclass
class _PartialCycle:
    frag_count: int
    split_layer: int
    quant_bits: int
    first_seen_s: float
    fragments: Dict[int, bytes] = field(default_factory=dict)


class Reassembler:
    """Orders fragments back into cycles, expiring incomplete ones.

    Fragments of an already-delivered cycle are ignored, so duplicates can
    never surface the same cycle twice.
    """

    def __init__(self, deadline_s: float = 1.0) -> None:
        if not math.isfinite(deadline_s) or deadline_s <= 0:
            raise ValueError(f"deadline_s must be finite and > 0, got {deadline_s!r}")
        self.deadline_s = deadline_s
        self.dropped = 0
        self.malformed = 0
        self._partials: Dict[int, _PartialCycle] = {}
        self._delivered = set()

    def add(self, datagram: bytes, now_s: Optional[float] = None) -> Optional[CompleteCycle]:
        now = time.perf_counter() if now_s is None else now_s
        if len(datagram) < _FRAG_HEADER.size:
            self.malformed += 1
            return None
        magic, cycle_id, split_layer, quant_bits, index, count = _FRAG_HEADER.unpack_from(
            datagram
        )
        if magic != FRAG_MAGIC or count == 0 or index >= count:
            self.malformed += 1
            return None
        if cycle_id in self._delivered:
            return None
        partial = self._partials.get(cycle_id)
        if partial is None:
            partial = _PartialCycle(count, split_layer, quant_bits, now)
            self._partials[cycle_id] = partial
        elif (partial.frag_count, partial.split_layer, partial.quant_bits) != (
            count,
            split_layer,
            quant_bits,
        ):
            self.malformed += 1
            return None
        partial.fragments[index] = datagram[_FRAG_HEADER.size:]
        if len(partial.fragments) < partial.frag_count:
            return None
        del self._partials[cycle_id]
        self._delivered.add(cycle_id)
        payload = b"".join(partial.fragments[i] for i in range(partial.frag_count))
        return CompleteCycle(cycle_id, partial.split_layer, partial.quant_bits, payload)

    def expire(self, now_s: Optional[float] = None) -> int:
        """Drop partial cycles older than the deadline; returns how many."""
        now = time.perf_counter() if now_s is None else now_s
        stale = [
            cycle_id
            for cycle_id, partial in self._partials.items()
            if now - partial.first_seen_s > self.deadline_s
        ]
        for cycle_id in stale:
            del self._partials[cycle_id]
        self.dropped += len(stale)
        return len(stale)


def summarize_to_cpm(tensor: FeatureTensor, station_id: int, cycle_id: int) -> CpmMessage:
    """Deterministically condense a cloud-stage output into a perception message.

    Stands in for a detection head: per-channel statistics become perceived
    objects (up to three), clamped into their wire ranges.
    """
    objects = []
    for channel in range(min(3, tensor.channels)):
        plane = tensor.values[channel]
        mean = float(plane.mean())
        spread = float(plane.std())
        peak = float(plane.max())
        objects.append(
            PerceivedObject(
                object_id=channel,
                distance_x_cm=int(np.clip(round(mean * 1000), -1_000_000, 1_000_000)),
                distance_y_cm=int(np.clip(round(spread * 1000), -1_000_000, 1_000_000)),
                distance_z_cm=0,
                speed_x_cms=int(np.clip(round(peak * 100), -32_000, 32_000)),
                speed_y_cms=0,
                heading_cdeg=int(abs(round(peak * 100))) % 36_000,
                length_cm=450,
                width_cm=180,
                height_cm=150,
                confidence=min(100, 50 + channel),
                object_class=1,
            )
        )
    return CpmMessage(
        station_id=station_id,
        generation_time_ms=cycle_id,
        reference_position=ReferencePosition(
            lat_udeg=41_157_944, lon_udeg=-8_629_105, altitude_cm=10_000
        ),
        sensor_info=(SensorInfo(sensor_id=1, sensor_type=2),),
        perceived_objects=tuple(objects),
    )


class CloudEndpoint:
    """The cloud half: reassemble, finish the pipeline, answer with a CPM.

    The receive loop and the processing loop run as separate threads joined
    by a queue; nothing else is shared.  Use as a context manager or call
    ``start``/``stop``.
    """

    def __init__(
        self,
        bind_host: str = "127.0.0.1",
        bind_port: int = 0,
        num_layers: int = NUM_STUB_LAYERS,
        reassembly_deadline_s: float = 1.0,
        station_id: int = 1,
    ) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((bind_host, bind_port))
        self._sock.settimeout(0.05)
        self.address: Tuple[str, int] = self._sock.getsockname()
        self._num_layers = num_layers
        self._station_id = station_id
        self._reassembler = Reassembler(reassembly_deadline_s)
        self._work: "queue.Queue" = queue.Queue()
        self._stop = threading.Event()
        self._threads: List[threading.Thread] = []
        self.cycles_answered = 0
        self.decode_failures = 0

    def start(self) -> "CloudEndpoint":
        if self._threads:
            raise RuntimeError("endpoint already started")
        for target in (self._recv_loop, self._work_loop):
            thread = threading.Thread(target=target, daemon=True)
            thread.start()
            self._threads.append(thread)
        return self

    def stop(self) -> None:
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=5.0)
        self._threads.clear()
        self._sock.close()

    def __enter__(self) -> "CloudEndpoint":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()

    @property
    def dropped_cycles(self) -> int:
        return self._reassembler.dropped

    def _recv_loop(self) -> None:
        while not self._stop.is_set():
            try:
                datagram, sender = self._sock.recvfrom(_MAX_DATAGRAM)
            except socket.timeout:
                self._reassembler.expire()
                continue
            except OSError:
                return
            complete = self._reassembler.add(datagram)
            self._reassembler.expire()
            if complete is not None:
                self._work.put((complete, sender))

    def _work_loop(self) -> None:
        while not self._stop.is_set():
            try:
                complete, sender = self._work.get(timeout=0.05)
            except queue.Empty:
                continue
            started = time.perf_counter()
            try:
                payload = decode_payload(complete.payload)
                features = run_cloud_stage(payload, self._num_layers)
                message = summarize_to_cpm(features, self._station_id, complete.cycle_id)
                encoded = encode_cpm(message)
            except ValueError:
                self.decode_failures += 1
                continue
            cloud_ms = (time.perf_counter() - started) * 1e3
            response = (
                _RESPONSE_HEADER.pack(
                    RESPONSE_MAGIC, complete.cycle_id, cloud_ms, len(encoded)
                )
                + encoded
            )
            try:
                self._sock.sendto(response, sender)
            except OSError:
                continue
            self.cycles_answered += 1


@dataclass(frozen=True)
class CycleTiming:
    """Measured four-phase breakdown of one demo cycle, in milliseconds."""

    cycle_id: int
    t_local_ms: float
    t_upl_ms: float
    t_cloud_ms: float
    t_dwn_ms: float
    t_total_ms: float

    def __post_init__(self) -> None:
        parts = (self.t_local_ms, self.t_upl_ms, self.t_cloud_ms, self.t_dwn_ms)
        for value in parts + (self.t_total_ms,):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"timings must be finite and >= 0, got {value!r}")
        if self.t_total_ms < max(parts):
            raise ValueError("t_total_ms must be >= every component")


@dataclass(frozen=True)
class DemoConfig:
    """Everything the vehicle side of the demo needs."""

    cycles: int = 100
    split_layer: int = 3
    quant: QuantLevel = QuantLevel.FP16
    channels: int = 8
    height: int = 64
    width: int = 64
    seed: int = 0
    shaper: ShaperConfig = ShaperConfig(rate_mbps=50.0)
    clip: ClipSpec = ClipSpec()
    response_timeout_s: float = 2.0

    def __post_init__(self) -> None:
        if not isinstance(self.cycles, int) or isinstance(self.cycles, bool) or self.cycles < 1:
            raise ValueError(f"cycles must be a positive int, got {self.cycles!r}")
        if not math.isfinite(self.response_timeout_s) or self.response_timeout_s <= 0:
            raise ValueError(
                f"response_timeout_s must be finite and > 0, got {self.response_timeout_s!r}"
            )


@dataclass(frozen=True)
class DemoReport:
    """Outcome of a vehicle run: per-cycle timings plus loss accounting."""

    timings: Tuple[CycleTiming, ...]
    cycles_sent: int
    cpm_received: int
    dropped: int

    def __post_init__(self) -> None:
        if self.cpm_received != len(self.timings):
            raise ValueError("cpm_received must equal the number of timings")
        if self.cpm_received + self.dropped != self.cycles_sent:
            raise ValueError("received + dropped must equal cycles_sent")


def _parse_response(datagram: bytes) -> Optional[Tuple[int, float, bytes]]:
    if len(datagram) < _RESPONSE_HEADER.size:
        return None
    magic, cycle_id, cloud_ms, cpm_len = _RESPONSE_HEADER.unpack_from(datagram)
    if magic != RESPONSE_MAGIC:
        return None
    body = datagram[_RESPONSE_HEADER.size:]
    if len(body) != cpm_len:
        return None
    return cycle_id, cloud_ms, body


def vehicle_run(cloud_address: Tuple[str, int], config: DemoConfig) -> DemoReport:
    """Run ``config.cycles`` offloading cycles against a cloud endpoint.

    Each cycle times the local stage, the shaped transfer, the wait for the
    response, and extracts the cloud's own processing time from the response;
    the downlink share is the remaining wait.  Cycles whose response misses
    the timeout are counted as dropped.
    """
    tensor = synth_tensor(config.channels, config.height, config.width, config.seed)
    timings: List[CycleTiming] = []
    dropped = 0
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        sock.settimeout(config.response_timeout_s)
        for cycle_id in range(config.cycles):
            cycle_start = time.perf_counter()
            payload = run_local_stage(
                tensor, config.split_layer, config.quant, config.clip
            )
            wire = encode_payload(payload)
            local_done = time.perf_counter()
            send_report = shaped_send(
                sock,
                cloud_address,
                wire,
                config.shaper,
                cycle_id=cycle_id,
                split_layer=config.split_layer,
                quant=config.quant,
            )
            response = None
            try:
                while response is None:
                    datagram, _ = sock.recvfrom(_MAX_DATAGRAM)
                    parsed = _parse_response(datagram)
                    if parsed is not None and parsed[0] == cycle_id:
                        response = parsed
                    # stale or foreign datagrams are skipped, not fatal
            except socket.timeout:
                dropped += 1
                continue
            finished = time.perf_counter()
            _, cloud_ms, cpm_bytes = response
            decode_cpm(cpm_bytes)  # the cycle only counts if the CPM is valid
            t_local = (local_done - cycle_start) * 1e3
            t_upl = send_report.elapsed_s * 1e3
            t_total = (finished - cycle_start) * 1e3
            t_dwn = max(0.0, t_total - t_local - t_upl - cloud_ms)
            timings.append(
                CycleTiming(
                    cycle_id=cycle_id,
                    t_local_ms=t_local,
                    t_upl_ms=t_upl,
                    t_cloud_ms=cloud_ms,
                    t_dwn_ms=t_dwn,
                    t_total_ms=t_total,
                )
            )
    return DemoReport(
        timings=tuple(timings),
        cycles_sent=config.cycles,
        cpm_received=len(timings),
        dropped=dropped,
    )


def run_demo(
    config: DemoConfig = DemoConfig(),
    reassembly_deadline_s: float = 1.0,
) -> DemoReport:
    """Run both endpoints in-process over loopback and return the vehicle view."""
    with CloudEndpoint(reassembly_deadline_s=reassembly_deadline_s) as cloud:
        return vehicle_run(cloud.address, config)
