"""Command-line front end.

One executable, seven subcommands: profile validation, one-shot optimization,
trace replay, budget/latency sweeps, pipeline benchmarking, codec round-trip
checks, and the loopback network demo.  Machine-readable results go to
stdout and are deterministic for fixed flags and seeds (the network demo's
measured timings are the one inherent exception); diagnostics and wall-clock
timings go to stderr.

Exit codes: 0 success, 1 domain error (bad values, failed checks), 2 usage
error (bad flags, missing files).  The ``SPLITPERC_PROFILE`` environment
variable supplies a default profile CSV wherever ``--profile`` is optional.
"""

import argparse
import hashlib
import os
import random
import sys
import time
from typing import List, Optional, Tuple

from .cpm import decode_cpm, encode_cpm, encoded_size, random_message
from .latency import PROFILED_C2V
from .optimizer import opt_par
from .pipeline import (
    ClipSpec,
    encode_payload,
    run_local_stage,
    synth_tensor,
)
from .profiles import (
    ProfileTable,
    QuantLevel,
    builtin_table,
    component_sum_ms,
    load_profile,
    sorted_by_nds,
    validate_profile,
)
from .netdemo import (
    CloudEndpoint,
    DemoConfig,
    DemoReport,
    ShaperConfig,
    run_demo,
    vehicle_run,
)
from .simulate import (
    SimParams,
    load_trace,
    replay_dynamic,
    replay_static,
    serialize_report,
    sweep,
    synth_trace,
)

PROFILE_ENV_VAR = "SPLITPERC_PROFILE"


def _parse_synth(text: str) -> Tuple[int, float, float, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            f"expected N,MEAN,STD,SEED, got {text!r}"
        )
    try:
        return int(parts[0]), float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad synthetic trace spec {text!r}") from None


def _parse_static(text: str) -> Tuple[int, QuantLevel]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected SPLIT,QUANT, got {text!r}")
    try:
        return int(parts[0]), QuantLevel.parse(parts[1])
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _parse_dims(text: str) -> Tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected C,H,W, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}") from None
    if min(dims) < 1:
        raise argparse.ArgumentTypeError(f"dims must be positive, got {text!r}")
    return dims


def _parse_float_list(text: str) -> Tuple[float, ...]:
    try:
        values = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _parse_quant(text: str) -> QuantLevel:
    try:
        return QuantLevel.parse(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _parse_address(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}") from None


def _load_table(args: argparse.Namespace) -> ProfileTable:
    path = getattr(args, "profile", None) or os.environ.get(PROFILE_ENV_VAR)
    if path:
        return load_profile(path)
    return builtin_table()


def _make_trace(args: argparse.Namespace):
    if args.trace is not None:
        return load_trace(args.trace)
    n, mean, std, seed = args.synth
    return synth_trace(n, mean, std, seed)


def cmd_validate_profile(args: argparse.Namespace) -> int:
    if args.builtin:
        table = builtin_table()
    else:
        table = load_profile(args.profile)
    offenders = validate_profile(table, tol_ms=args.tol_ms)
    for row in table.rows:
        residual = abs(component_sum_ms(row) - row.end_to_end_ref_ms)
        verdict = "FAIL" if row.config in offenders else "ok"
        print(
            f"split={row.config.split_layer} quant={row.config.quant.name} "
            f"residual={residual:.3f}ms {verdict}"
        )
    print(
        f"{len(table.rows)} rows checked, {len(offenders)} failed "
        f"(tol {args.tol_ms:g}ms)"
    )
    return 1 if offenders else 0


def cmd_optimize(args: argparse.Namespace) -> int:
    table = _load_table(args)
    selection = opt_par(
        sorted_by_nds(table), args.bw_mbps, PROFILED_C2V, args.lat_max_ms
    )
    print(
        f"split={selection.config.split_layer} quant={selection.config.quant.name} "
        f"total={selection.breakdown.total_ms:.1f}ms "
        f"feasible={'true' if selection.feasible else 'false'}"
    )
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    table = _load_table(args)
    trace = _make_trace(args)
    params = SimParams(lat_max_ms=args.lat_max_ms, budget_fraction=args.budget)
    if args.static is not None:
        split_layer, quant = args.static
        report = replay_static(trace, table.find(split_layer, quant), params)
    else:
        report = replay_dynamic(trace, table, params)
    sys.stdout.write(serialize_report(report))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    table = _load_table(args)
    trace = _make_trace(args)
    surface = sweep(trace, table, args.budgets, args.lat_maxes)
    print("budget,lat_max_ms,nds_dynamic,nds_baseline,gain")
    for row_points in surface:
        for point in row_points:
            print(
                f"{point.budget_fraction:g},{point.lat_max_ms:g},"
                f"{point.mean_nds_dynamic!r},{point.mean_nds_baseline!r},{point.gain!r}"
            )
    return 0


def cmd_pipeline_bench(args: argparse.Namespace) -> int:
    channels, height, width = args.dims
    tensor = synth_tensor(channels, height, width, args.seed)
    started = time.perf_counter()
    payload = run_local_stage(tensor, args.split, args.quant, ClipSpec())
    local_ms = (time.perf_counter() - started) * 1e3
    wire = encode_payload(payload)
    meta = payload.meta
    serialized_bytes = (
        meta.channels * meta.height * meta.width * meta.quant.bits_per_element // 8
    )
    print(f"input_dims={channels},{height},{width}")
    print(f"input_bytes={tensor.values.nbytes}")
    print(f"split={args.split}")
    print(f"quant={args.quant.name}")
    print(f"feature_dims={meta.channels},{meta.height},{meta.width}")
    print(f"serialized_bytes={serialized_bytes}")
    print(f"compressed_bytes={len(payload.data)}")
    print(f"payload_sha256={hashlib.sha256(wire).hexdigest()}")
    print(f"local stage took {local_ms:.2f} ms", file=sys.stderr)
    return 0


def cmd_cpm(args: argparse.Namespace) -> int:
    rng = random.Random(args.seed)
    failures = 0
    total_bytes = 0
    for _ in range(args.roundtrip):
        message = random_message(rng)
        encoded = encode_cpm(message)
        expected = encoded_size(len(message.sensor_info), len(message.perceived_objects))
        if len(encoded) != expected or decode_cpm(encoded) != message:
            failures += 1
        total_bytes += len(encoded)
    print(f"roundtrips={args.roundtrip} failures={failures} bytes={total_bytes}")
    return 1 if failures else 0


def _print_demo_report(report: DemoReport) -> None:
    print("cycle,local_ms,upl_ms,cloud_ms,dwn_ms,total_ms")
    for timing in report.timings:
        print(
            f"{timing.cycle_id},{timing.t_local_ms:.3f},{timing.t_upl_ms:.3f},"
            f"{timing.t_cloud_ms:.3f},{timing.t_dwn_ms:.3f},{timing.t_total_ms:.3f}"
        )
    print(
        f"cycles={report.cycles_sent} received={report.cpm_received} "
        f"dropped={report.dropped}",
        file=sys.stderr,
    )


def cmd_demo(args: argparse.Namespace) -> int:
    shaper = ShaperConfig(
        rate_mbps=args.rate_mbps, burst_bytes=args.burst_bytes, mtu_bytes=args.mtu_bytes
    )
    channels, height, width = args.dims
    config = DemoConfig(
        cycles=args.cycles,
        split_layer=args.split,
        quant=args.quant,
        channels=channels,
        height=height,
        width=width,
        seed=args.seed,
        shaper=shaper,
        response_timeout_s=args.timeout_s,
    )
    if args.role == "both":
        report = run_demo(config, reassembly_deadline_s=args.deadline_s)
        _print_demo_report(report)
        return 0
    if args.role == "vehicle":
        if args.connect is None:
            print("error: --role vehicle requires --connect HOST:PORT", file=sys.stderr)
            return 2
        report = vehicle_run(args.connect, config)
        _print_demo_report(report)
        return 0
    # cloud: serve until interrupted
    host, port = args.bind
    endpoint = CloudEndpoint(
        bind_host=host, bind_port=port, reassembly_deadline_s=args.deadline_s
    )
    endpoint.start()
    print(f"cloud listening on {endpoint.address[0]}:{endpoint.address[1]}", file=sys.stderr)
    try:
        while True:
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass
    finally:
        endpoint.stop()
        print(
            f"answered={endpoint.cycles_answered} dropped={endpoint.dropped_cycles} "
            f"decode_failures={endpoint.decode_failures}",
            file=sys.stderr,
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitperc",
        description="Bandwidth-adaptive split offloading toolkit",
        epilog=f"Set {PROFILE_ENV_VAR} to use a profile CSV wherever --profile is optional.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-profile", help="check profile latency consistency")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--profile", help="profile CSV path")
    source.add_argument("--builtin", action="store_true", help="use the builtin table")
    p.add_argument("--tol-ms", type=float, default=0.1, help="residual tolerance (ms)")
    p.set_defaults(func=cmd_validate_profile)

    p = sub.add_parser("optimize", help="pick the best configuration for one instant")
    p.add_argument("--bw-mbps", type=float, required=True, help="uplink bandwidth")
    p.add_argument("--lat-max-ms", type=float, default=100.0, help="latency bound")
    p.add_argument("--profile", help="profile CSV path (default: builtin)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("replay", help="replay a bandwidth trace")
    trace_source = p.add_mutually_exclusive_group(required=True)
    trace_source.add_argument("--trace", help="trace CSV path")
    trace_source.add_argument(
        "--synth", type=_parse_synth, metavar="N,MEAN,STD,SEED",
        help="generate a synthetic trace",
    )
    p.add_argument("--budget", type=float, default=1.0, help="uplink budget fraction")
    p.add_argument("--lat-max-ms", type=float, default=100.0, help="latency bound")
    p.add_argument(
        "--static", type=_parse_static, metavar="SPLIT,QUANT",
        help="replay a pinned configuration instead of the adaptive selector",
    )
    p.add_argument("--profile", help="profile CSV path (default: builtin)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep", help="gain surface over budgets and latency bounds")
    trace_source = p.add_mutually_exclusive_group(required=True)
    trace_source.add_argument("--trace", help="trace CSV path")
    trace_source.add_argument(
        "--synth", type=_parse_synth, metavar="N,MEAN,STD,SEED",
        help="generate a synthetic trace",
    )
    p.add_argument(
        "--budgets", type=_parse_float_list, required=True, metavar="F1,F2,…",
    )
    p.add_argument(
        "--lat-maxes", type=_parse_float_list, required=True, metavar="MS1,MS2,…",
    )
    p.add_argument("--profile", help="profile CSV path (default: builtin)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pipeline-bench", help="run the local stage once and report sizes")
    p.add_argument("--dims", type=_parse_dims, default=(8, 64, 64), metavar="C,H,W")
    p.add_argument("--split", type=int, default=3, help="split layer")
    p.add_argument("--quant", type=_parse_quant, default=QuantLevel.FP16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pipeline_bench)

    p = sub.add_parser("cpm", help="randomized perception-message round-trips")
    p.add_argument("--roundtrip", type=int, default=1000, help="number of messages")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cpm)

    p = sub.add_parser("demo", help="loopback offloading demo")
    p.add_argument("--role", choices=("both", "vehicle", "cloud"), default="both")
    p.add_argument("--cycles", type=int, default=100)
    p.add_argument("--rate-mbps", type=float, default=50.0)
    p.add_argument("--burst-bytes", type=int, default=5600)
    p.add_argument("--mtu-bytes", type=int, default=1400)
    p.add_argument("--split", type=int, default=3)
    p.add_argument("--quant", type=_parse_quant, default=QuantLevel.FP16)
    p.add_argument("--dims", type=_parse_dims, default=(8, 64, 64), metavar="C,H,W")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout-s", type=float, default=2.0, help="per-cycle response timeout")
    p.add_argument("--deadline-s", type=float, default=1.0, help="reassembly deadline")
    p.add_argument("--bind", type=_parse_address, default=("127.0.0.1", 0),
                   metavar="HOST:PORT", help="cloud bind address")
    p.add_argument("--connect", type=_parse_address, default=None,
                   metavar="HOST:PORT", help="cloud address (vehicle role)")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except KeyError as err:
        print(f"error: {err.args[0] if err.args else err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
