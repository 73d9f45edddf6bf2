"""Command-line interface: exit codes, output formats, option plumbing."""

import pytest

from splitperc.cli import PROFILE_ENV_VAR, main
from splitperc.profiles import builtin_table, serialize_profile

GOLDEN_FRAME_SHA256 = "e1b3441f83fbeff361d92474b2be29f4eb70a3e964aae705262740456127a5f3"


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --- parser-level behaviour --------------------------------------------------


def test_no_command_is_a_usage_error(capsys):
    code, _, err = run(capsys)
    assert code == 2
    assert "usage" in err


def test_unknown_command_is_a_usage_error(capsys):
    code, _, _ = run(capsys, "frobnicate")
    assert code == 2


def test_help_exits_zero(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    assert "splitperc" in out


def test_bad_flag_value_is_a_usage_error(capsys):
    code, _, _ = run(capsys, "replay", "--synth", "not-a-spec")
    assert code == 2
    code, _, _ = run(capsys, "pipeline-bench", "--dims", "8,64")
    assert code == 2
    code, _, _ = run(capsys, "optimize", "--bw-mbps", "ten")
    assert code == 2


def test_missing_profile_file_is_a_usage_error(capsys):
    code, _, err = run(
        capsys, "optimize", "--bw-mbps", "50", "--profile", "/no/such/file.csv"
    )
    assert code == 2
    assert "error:" in err


# --- validate-profile --------------------------------------------------------


def test_validate_builtin_at_default_tolerance(capsys):
    code, out, _ = run(capsys, "validate-profile", "--builtin")
    lines = out.splitlines()
    assert code == 1  # one row's printed reference differs beyond 0.1 ms
    assert len(lines) == 16
    assert sum(line.endswith(" FAIL") for line in lines[:15]) == 1
    assert "split=5 quant=FP8" in next(l for l in lines if l.endswith(" FAIL"))
    assert lines[15] == "15 rows checked, 1 failed (tol 0.1ms)"


def test_validate_builtin_with_loose_tolerance(capsys):
    code, out, _ = run(capsys, "validate-profile", "--builtin", "--tol-ms", "0.6")
    assert code == 0
    assert out.splitlines()[15] == "15 rows checked, 0 failed (tol 0.6ms)"


def test_validate_profile_from_csv(tmp_path, capsys):
    path = tmp_path / "table.csv"
    path.write_text(serialize_profile(builtin_table()), encoding="utf-8")
    code, out, _ = run(capsys, "validate-profile", "--profile", str(path), "--tol-ms", "0.6")
    assert code == 0
    assert out.splitlines()[15] == "15 rows checked, 0 failed (tol 0.6ms)"


# --- optimize ----------------------------------------------------------------


def test_optimize_generous_link(capsys):
    code, out, _ = run(capsys, "optimize", "--bw-mbps", "100")
    assert code == 0
    assert out == "split=1 quant=FP32 total=73.4ms feasible=true\n"


def test_optimize_starved_link(capsys):
    code, out, _ = run(capsys, "optimize", "--bw-mbps", "1")
    assert code == 0
    assert out == "split=5 quant=FP8 total=442.1ms feasible=false\n"


def test_optimize_respects_latency_bound_flag(capsys):
    code, out, _ = run(capsys, "optimize", "--bw-mbps", "100", "--lat-max-ms", "60")
    assert code == 0
    first = out.split()
    assert first[3] == "feasible=true"
    assert first[0] != "split=1" or first[1] != "quant=FP32"


def test_optimize_rejects_bad_bandwidth(capsys):
    code, _, err = run(capsys, "optimize", "--bw-mbps", "-5")
    assert code == 1
    assert "error:" in err


def test_profile_env_var_supplies_table(tmp_path, capsys, monkeypatch):
    path = tmp_path / "env_table.csv"
    path.write_text(serialize_profile(builtin_table()), encoding="utf-8")
    monkeypatch.setenv(PROFILE_ENV_VAR, str(path))
    code, out, _ = run(capsys, "optimize", "--bw-mbps", "100")
    assert code == 0
    assert out == "split=1 quant=FP32 total=73.4ms feasible=true\n"
    monkeypatch.setenv(PROFILE_ENV_VAR, str(tmp_path / "missing.csv"))
    code, _, _ = run(capsys, "optimize", "--bw-mbps", "100")
    assert code == 2


# --- replay ------------------------------------------------------------------


def test_replay_synth_dynamic(capsys):
    code, out, _ = run(
        capsys, "replay", "--synth", "654,25.8,12.1,42", "--budget", "1.0"
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "cycles=654"
    assert lines[1] == "violations=32"
    assert lines[2] == "mean_nds=0.5027522935779817"
    assert len([l for l in lines if l.startswith("usage,")]) == 15


def test_replay_static_pinned_config(capsys):
    code, out, _ = run(
        capsys, "replay", "--synth", "100,25,12,7", "--static", "5,fp8"
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "cycles=100"
    assert lines[2] == "mean_nds=0.43"
    assert lines[3].startswith("usage,5,FP8,")


def test_replay_static_missing_config_is_domain_error(tmp_path, capsys):
    # a one-row table cannot satisfy a pinned config it does not contain
    table = builtin_table()
    text = serialize_profile(table)
    lines = text.splitlines()
    path = tmp_path / "one_row.csv"
    path.write_text("\n".join(lines[:2]) + "\n", encoding="utf-8")
    code, _, err = run(
        capsys, "replay", "--synth", "10,25,12,1", "--static", "5,FP8",
        "--profile", str(path),
    )
    assert code == 1
    assert "no profile for configuration 5/FP8" in err


def test_replay_from_trace_file(tmp_path, capsys):
    path = tmp_path / "trace.csv"
    path.write_text("t_s,uplink_mbps\n0.0,100.0\n1.0,100.0\n", encoding="utf-8")
    code, out, _ = run(capsys, "replay", "--trace", str(path))
    assert code == 0
    assert out.splitlines()[:3] == ["cycles=2", "violations=0", "mean_nds=0.52"]


def test_replay_rejects_bad_budget(capsys):
    code, _, _ = run(capsys, "replay", "--synth", "10,25,12,1", "--budget", "0")
    assert code == 1


# --- sweep -------------------------------------------------------------------


def test_sweep_csv_layout(capsys):
    code, out, _ = run(
        capsys, "sweep", "--synth", "50,25,12,3",
        "--budgets", "0.5,1.0", "--lat-maxes", "50,100,150",
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "budget,lat_max_ms,nds_dynamic,nds_baseline,gain"
    assert len(lines) == 1 + 2 * 3
    first = lines[1].split(",")
    assert first[0] == "0.5" and first[1] == "50"
    assert all(len(line.split(",")) == 5 for line in lines[1:])


# --- pipeline-bench ----------------------------------------------------------


def test_pipeline_bench_reports_frozen_artifact(capsys):
    code, out, err = run(capsys, "pipeline-bench")
    assert code == 0
    lines = dict(line.split("=", 1) for line in out.splitlines())
    assert lines["input_dims"] == "8,64,64"
    assert lines["input_bytes"] == str(8 * 64 * 64 * 4)
    assert lines["split"] == "3"
    assert lines["quant"] == "FP16"
    assert lines["feature_dims"] == "8,8,8"
    assert lines["serialized_bytes"] == "1024"
    assert lines["compressed_bytes"] == "945"
    assert lines["payload_sha256"] == GOLDEN_FRAME_SHA256
    assert "ms" in err  # timing goes to stderr, not stdout


def test_pipeline_bench_rejects_bad_split(capsys):
    code, _, _ = run(capsys, "pipeline-bench", "--split", "9")
    assert code == 1


# --- cpm ---------------------------------------------------------------------


def test_cpm_roundtrips_default_seed(capsys):
    code, out, _ = run(capsys, "cpm", "--roundtrip", "500")
    assert code == 0
    fields = dict(part.split("=") for part in out.split())
    assert fields["roundtrips"] == "500"
    assert fields["failures"] == "0"
    assert int(fields["bytes"]) >= 500 * 32


def test_cpm_output_is_seed_deterministic(capsys):
    _, first, _ = run(capsys, "cpm", "--roundtrip", "200", "--seed", "9")
    _, second, _ = run(capsys, "cpm", "--roundtrip", "200", "--seed", "9")
    assert first == second


# --- demo --------------------------------------------------------------------


def test_demo_loopback_prints_per_cycle_timings(capsys):
    code, out, err = run(
        capsys, "demo", "--cycles", "10", "--rate-mbps", "200", "--timeout-s", "5",
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "cycle,local_ms,upl_ms,cloud_ms,dwn_ms,total_ms"
    assert len(lines) == 11
    for line in lines[1:]:
        cells = line.split(",")
        assert len(cells) == 6
        assert float(cells[5]) >= 0.0
    assert "cycles=10 received=10 dropped=0" in err


def test_demo_vehicle_role_requires_connect(capsys):
    code, _, err = run(capsys, "demo", "--role", "vehicle")
    assert code == 2
    assert "--connect" in err
