"""Acceptance suite: ten end-to-end guarantees the package ships under.

Each test prints one ``criterion N (<name>): PASS`` line on success (visible
with ``pytest -rP`` or ``-s``); with ``-v`` the per-test PASSED/FAILED status
serves the same purpose.  Tolerances are pinned here and nowhere else.
"""

import dataclasses
import math
import random
import socket
import time

import numpy as np

from splitperc.cpm import (
    CpmMessage,
    PerceivedObject,
    ReferencePosition,
    SensorInfo,
    decode_cpm,
    encode_cpm,
    encoded_size,
    random_message,
)
from splitperc.latency import PROFILED_C2V, estimate_latency
from splitperc.metrics import DetectionScores, nds
from splitperc.netdemo import DemoConfig, ShaperConfig, run_demo, shaped_send
from splitperc.optimizer import opt_par, oracle_select
from splitperc.pipeline import (
    FeatureTensor,
    clip,
    compress,
    decompress,
    percentile,
    quantize,
    serialize_quantized,
    synth_tensor,
)
from splitperc.profiles import (
    QuantLevel,
    SplitConfig,
    builtin_table,
    component_sum_ms,
    sorted_by_nds,
    validate_profile,
)
from splitperc.simulate import SimParams, replay_dynamic, replay_static, sweep, synth_trace

TABLE = builtin_table()
RANKED = sorted_by_nds(TABLE)

# the shared evaluation trace for the replay/sweep criteria
EVAL_TRACE_ARGS = (654, 25.8, 12.1, 42)


def test_criterion_01_profile_consistency():
    started = time.perf_counter()
    residuals = {
        row.config: abs(component_sum_ms(row) - row.end_to_end_ref_ms)
        for row in TABLE.rows
    }
    assert len(residuals) == 15
    assert all(residual <= 1.0 for residual in residuals.values())
    outlier = SplitConfig(5, QuantLevel.FP8)
    assert abs(residuals[outlier] - 0.5) <= 1e-9
    assert all(
        residual <= 0.1 for config, residual in residuals.items() if config != outlier
    )
    offenders = validate_profile(TABLE, tol_ms=0.1)
    assert set(offenders) == {outlier}
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    print("criterion 1 (profile consistency): PASS")


def test_criterion_02_selector_equals_exhaustive_oracle_on_grid():
    started = time.perf_counter()
    checked = 0
    for bw_mbps in range(1, 201):
        for lat_max in (50.0, 75.0, 100.0, 150.0, 250.0):
            fast = opt_par(RANKED, float(bw_mbps), PROFILED_C2V, lat_max)
            slow = oracle_select(TABLE, float(bw_mbps), PROFILED_C2V, lat_max)
            assert fast.config == slow.config, (bw_mbps, lat_max)
            assert fast.feasible == slow.feasible, (bw_mbps, lat_max)
            checked += 1
    assert checked == 1000
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    print("criterion 2 (selector equivalence on 1000-point grid): PASS")


def test_criterion_03_starved_link_fallback_is_dominant():
    fallback = SplitConfig(5, QuantLevel.FP8)
    for bw_mbps in (0.5, 1.0, 2.0, 3.0):
        selection = opt_par(RANKED, bw_mbps, PROFILED_C2V, 100.0)
        assert selection.config == fallback, bw_mbps
        assert not selection.feasible, bw_mbps
        totals = [estimate_latency(row, bw_mbps).total_ms for row in TABLE.rows]
        assert selection.breakdown.total_ms == min(totals), bw_mbps
        oracle = oracle_select(TABLE, bw_mbps, PROFILED_C2V, 100.0)
        assert oracle.config == fallback and not oracle.feasible
    print("criterion 3 (fallback dominance at <= 3 Mbps): PASS")


def test_criterion_04_detection_score_formula():
    assert nds(DetectionScores(1.0, (0.0,) * 5)) == 1.0
    assert nds(DetectionScores(0.0, (1.0,) * 5)) == 0.0
    reference = DetectionScores(0.40, (0.2, 0.4, 1.2, 0.5, 0.3))
    assert abs(nds(reference) - 0.46) <= 1e-12
    rng = random.Random(4)
    for _ in range(10_000):
        mean_ap = rng.random()
        errors = tuple(rng.uniform(0.0, 2.0) for _ in range(5))
        base = nds(DetectionScores(mean_ap, errors))
        # monotone increasing in mAP
        if mean_ap < 0.99:
            assert nds(DetectionScores(mean_ap + 0.01, errors)) > base
        # monotone non-increasing in each error, strictly below the cap
        slot = rng.randrange(5)
        bumped = list(errors)
        bumped[slot] = min(1.0, bumped[slot]) + 0.01
        if errors[slot] < 1.0:
            assert nds(DetectionScores(mean_ap, tuple(bumped))) < base
        # errors at or above 1 are capped: growing them changes nothing
        capped = tuple(e if e < 1.0 else e + rng.uniform(0.0, 100.0) for e in errors)
        assert nds(DetectionScores(mean_ap, capped)) == base
    print("criterion 4 (detection score formula): PASS")


def test_criterion_05_pipeline_losslessness():
    rng = random.Random(5)
    for _ in range(1000):
        blob = rng.randbytes(rng.randrange(0, 4096))
        assert decompress(compress(blob)) == blob
    for i in range(1000):
        tensor = synth_tensor(2, 8, 8, seed=i)
        lower = np.float32(percentile(tensor, 10.0))
        upper = np.float32(percentile(tensor, 90.0))
        clipped = clip(tensor, float(lower), float(upper))
        assert clipped.values.min() >= lower
        assert clipped.values.max() <= upper
        assert clip(clipped, float(lower), float(upper)) == clipped
    np_rng = np.random.default_rng(55)
    magnitudes = np_rng.uniform(1e-3, 1e4, size=(1000,)).astype(np.float32)
    signs = np.where(np_rng.random(1000) < 0.5, -1.0, 1.0).astype(np.float32)
    vals = (magnitudes * signs).reshape(10, 10, 10)
    roundtrip = quantize(FeatureTensor(vals), QuantLevel.FP16).values
    rel = np.abs(roundtrip.astype(np.float64) - vals.astype(np.float64)) / np.abs(vals)
    assert float(rel.max()) <= 2.0 ** -11
    print("criterion 5 (pipeline losslessness): PASS")


def test_criterion_06_clipping_aids_compression_on_heavy_tails():
    rng = np.random.default_rng(2024)
    tensor = FeatureTensor(rng.standard_cauchy((64, 100, 100)).astype(np.float32))
    lower = float(np.float32(percentile(tensor, 10.0)))
    upper = float(np.float32(percentile(tensor, 90.0)))
    with_clip = len(
        compress(serialize_quantized(clip(tensor, lower, upper), QuantLevel.FP32))
    )
    without = len(compress(serialize_quantized(tensor, QuantLevel.FP32)))
    assert with_clip <= without, (with_clip, without)
    print("criterion 6 (clipping aids compression): PASS")


def test_criterion_07_replay_trends_on_reference_trace():
    started = time.perf_counter()
    trace = synth_trace(*EVAL_TRACE_ARGS)
    top2 = {RANKED[0].config, RANKED[1].config}
    fallback_row = TABLE.find(5, QuantLevel.FP8)
    shares = {}
    for budget in (0.2, 0.5, 1.0):
        params = SimParams(lat_max_ms=100.0, budget_fraction=budget)
        dynamic = replay_dynamic(trace, TABLE, params)
        static = replay_static(trace, fallback_row, params)
        shares[budget] = math.fsum(
            fraction
            for config, fraction in dynamic.usage_histogram.items()
            if config in top2
        )
        if budget == 0.5:
            assert dynamic.mean_nds >= 0.43 + 0.02
        if budget == 1.0:
            assert dynamic.mean_nds >= 0.43 + 0.05
        assert dynamic.violations == static.violations, budget
    assert shares[0.2] == 0.0
    assert shares[0.2] <= shares[0.5] <= shares[1.0]
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    print("criterion 7 (replay trends on the reference trace): PASS")


def test_criterion_08_gain_surface_shape():
    started = time.perf_counter()
    trace = synth_trace(*EVAL_TRACE_ARGS)
    surface = sweep(trace, TABLE, [0.2, 0.5, 1.0], [50.0, 75.0, 100.0, 150.0, 250.0])
    for row in surface:
        assert row[0].lat_max_ms == 50.0
        assert row[0].gain < 0.02, row[0]
        gains = [point.gain for point in row]
        assert gains == sorted(gains), gains
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"took {elapsed:.2f}s"
    print("criterion 8 (gain surface shape): PASS")


def test_criterion_09_perception_message_codec():
    rng = random.Random(9)
    for _ in range(10_000):
        message = random_message(rng)
        wire = encode_cpm(message)
        assert decode_cpm(wire) == message
        assert encode_cpm(decode_cpm(wire)) == wire
    template_object = PerceivedObject(
        object_id=1, distance_x_cm=100, distance_y_cm=-50, distance_z_cm=0,
        speed_x_cms=10, speed_y_cms=0, heading_cdeg=100, length_cm=400,
        width_cm=200, height_cm=150, confidence=90, object_class=2,
    )
    base = CpmMessage(
        station_id=5,
        generation_time_ms=1,
        reference_position=ReferencePosition(0, 0, 0),
    )
    for _ in range(100):
        sensors = rng.randrange(0, 256)
        objects = rng.randrange(0, 256)
        message = dataclasses.replace(
            base,
            sensor_info=tuple(
                SensorInfo(sensor_id=i % 256, sensor_type=0) for i in range(sensors)
            ),
            perceived_objects=tuple(
                dataclasses.replace(template_object, object_id=i)
                for i in range(objects)
            ),
        )
        assert len(encode_cpm(message)) == encoded_size(sensors, objects)
    print("criterion 9 (perception message codec): PASS")


def test_criterion_10_network_harness_on_loopback():
    started = time.perf_counter()
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as recv_sock, \
            socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as send_sock:
        recv_sock.bind(("127.0.0.1", 0))
        dest = recv_sock.getsockname()
        # a ~10 s transfer at 5 Mbps must land within +-15% of the set rate
        report = shaped_send(
            send_sock, dest, bytes(6_250_000), ShaperConfig(rate_mbps=5.0)
        )
        assert abs(report.goodput_mbps - 5.0) <= 0.15 * 5.0, report.goodput_mbps
        # a 1 Mbit payload at 10 Mbps: measured time within +-20% of the
        # 125000 * 8 / (10 * 10^3) = 100 ms the latency model predicts
        report = shaped_send(
            send_sock, dest, bytes(125_000), ShaperConfig(rate_mbps=10.0)
        )
        predicted_ms = 125_000 * 8 / (10.0 * 1e3)
        measured_ms = report.elapsed_s * 1e3
        assert abs(measured_ms - predicted_ms) <= 0.2 * predicted_ms, measured_ms
    demo = run_demo(
        DemoConfig(
            cycles=100,
            shaper=ShaperConfig(rate_mbps=200.0),
            response_timeout_s=5.0,
        )
    )
    assert demo.cycles_sent == 100
    assert demo.cpm_received >= 95, demo.cpm_received
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"took {elapsed:.2f}s"
    print("criterion 10 (network harness on loopback): PASS")
