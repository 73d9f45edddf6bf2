"""Bandwidth-adaptive split offloading for edge-cloud perception.

The package models a vehicle that runs the first layers of a perception
network onboard, ships the compressed intermediate features to a cloud head,
and adapts its (split layer, quantization) configuration every cycle to the
bandwidth it currently has — maximizing detection quality subject to a
latency bound, and degrading to the fastest configuration when the bound is
unreachable.  It bundles the profiled configuration table, the latency
model, the selector, the feature pipeline, a trace-replay evaluator, a
perception-message codec, and a loopback network demo.
"""

from .profiles import (
    QuantLevel,
    SplitConfig,
    ConfigProfile,
    ProfileTable,
    ProfileError,
    builtin_table,
    load_profile,
    save_profile,
    serialize_profile,
    validate_profile,
    sorted_by_nds,
    nds_rank_key,
    payload_bits,
)
from .latency import (
    LatencyBreakdown,
    ProfiledC2V,
    FixedDownlink,
    BandwidthDownlink,
    DownlinkPolicy,
    PROFILED_C2V,
    estimate_latency,
    within_bound,
    min_latency_row,
)
from .optimizer import Selection, opt_par, oracle_select
from .metrics import DetectionScores, nds, accuracy_gain
from .pipeline import (
    FeatureTensor,
    ClipSpec,
    PayloadMeta,
    CompressedPayload,
    synth_tensor,
    percentile,
    clip,
    quantize,
    serialize_quantized,
    deserialize_quantized,
    compress,
    decompress,
    apply_stub_layers,
    run_local_stage,
    run_cloud_stage,
    encode_payload,
    decode_payload,
)
from .simulate import (
    BandwidthSample,
    BandwidthTrace,
    SimParams,
    CycleRecord,
    SimReport,
    GainPoint,
    synth_trace,
    load_trace,
    save_trace,
    replay_dynamic,
    replay_static,
    sweep,
    serialize_report,
    save_report,
)
from .cpm import (
    CpmError,
    CpmMessage,
    PerceivedObject,
    ReferencePosition,
    SensorInfo,
    encode_cpm,
    decode_cpm,
    encoded_size,
)
from .netdemo import (
    ShaperConfig,
    SendReport,
    CycleTiming,
    DemoConfig,
    DemoReport,
    CloudEndpoint,
    shaped_send,
    vehicle_run,
    run_demo,
)

__version__ = "0.1.0"
