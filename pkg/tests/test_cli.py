"""CLI behavior: subcommands, stdout formats, the JSON sidecar, exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from treeff import FFFConfig, model_forward, random_input, random_model, random_weights
from treeff.cli import main
from treeff.formats import fffw_byte_size, load_acts, load_fffw, save_acts, save_ufbm


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_gen_weights_writes_expected_bytes(in_tmp, capsys):
    rc = main(["gen-weights", "--trees", "2", "--depth", "2", "--hidden", "8",
               "--seed", "5", "--out", "w.fffw"])
    assert rc == 0
    cfg = FFFConfig(8, 2, 2, has_input_bias=False)
    assert (in_tmp / "w.fffw").stat().st_size == fffw_byte_size(cfg)
    loaded = load_fffw(in_tmp / "w.fffw")
    expected = random_weights(cfg, 5)
    assert loaded.w_in.tobytes() == expected.w_in.tobytes()
    assert "wrote" in capsys.readouterr().out


def test_gen_weights_bias_flag(in_tmp):
    main(["gen-weights", "--trees", "1", "--depth", "1", "--hidden", "4",
          "--bias", "--out", "b.fffw"])
    assert load_fffw(in_tmp / "b.fffw").config.has_input_bias


def test_bench_json_sidecar(in_tmp):
    rc = main(["bench", "--impl", "fff", "--batch", "8", "--hidden", "8",
               "--trees", "1", "--depth", "2", "--passes", "3", "--warmup", "1",
               "--format", "json", "--json-out", "report.json"])
    assert rc == 0
    payload = json.loads((in_tmp / "report.json").read_text())
    assert payload["command"] == "bench"
    (report,) = payload["reports"]
    assert report["config"]["batch"] == 8
    assert report["config"]["level"] == "batched"
    assert len(report["samples_ns"]) == 3
    assert report["mac"]["multiply_accumulates"] == 2 * 8 * 1 * 3 * 8
    assert report["mean_ns"] > 0


def test_bench_table_and_csv(in_tmp, capsys):
    main(["bench", "--batch", "8", "--hidden", "8", "--passes", "2",
          "--warmup", "0", "--format", "table"])
    out = capsys.readouterr().out
    assert "mean_ms_per_pass" in out
    assert "fff 1x11" in out

    main(["bench", "--batch", "8", "--hidden", "8", "--passes", "2",
          "--warmup", "0", "--format", "csv"])
    out = capsys.readouterr().out
    lines = [l for l in out.strip().splitlines() if l]
    assert lines[0].startswith("config,level,batch")
    assert len(lines) == 2


def test_compare_fair_pairing(in_tmp, capsys):
    rc = main(["compare", "--impl", "fff", "--batch", "8", "--hidden", "8",
               "--trees", "1", "--depth", "11", "--neurons", "4095",
               "--passes", "2", "--warmup", "0", "--json-out", "cmp.json"])
    assert rc == 0
    payload = json.loads((in_tmp / "cmp.json").read_text())
    assert payload["command"] == "compare"
    assert payload["mac_ratio"] == 341.25
    assert not payload["cross_level"]
    assert "speedup" in capsys.readouterr().out


def test_compare_cross_level_requires_opt_in(in_tmp, capsys):
    args = ["compare", "--impl", "fff", "--batch", "8", "--hidden", "8",
            "--passes", "2", "--warmup", "0",
            "--baseline-impl", "dense", "--baseline-level", "naive",
            "--neurons", "15"]
    rc = main(args)
    assert rc == 1
    assert "level" in capsys.readouterr().err

    rc = main(args + ["--allow-unfair"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "cross-level" in out


def test_check_subcommand_exit_code(in_tmp):
    rc = main(["check", "usage", "determinism", "--json-out", "chk.json"])
    assert rc == 0
    payload = json.loads((in_tmp / "chk.json").read_text())
    assert payload["passed"] is True
    assert [o["name"] for o in payload["outcomes"]] == ["usage", "determinism"]


def test_check_oracle_scaled_down(in_tmp):
    rc = main(["check", "oracle", "--configs", "25"])
    assert rc == 0


def test_forward_matches_api(in_tmp):
    cfg = FFFConfig(8, 2, 2)
    model = random_model(2, 8, 2, cfg, seed=31)
    save_ufbm(model, "m.ufbm")
    x = random_input(6, 8, 32)
    save_acts(x, "in.acts")
    rc = main(["forward", "--model", "m.ufbm", "--input", "in.acts",
               "--output", "out.acts"])
    assert rc == 0
    out = load_acts(in_tmp / "out.acts")
    expected = model_forward(x, model)
    assert out.tobytes() == expected.tobytes()

    # reruns and threading must reproduce the file byte for byte
    first = (in_tmp / "out.acts").read_bytes()
    main(["forward", "--model", "m.ufbm", "--input", "in.acts",
          "--output", "out2.acts", "--threads", "3"])
    assert (in_tmp / "out2.acts").read_bytes() == first


def test_forward_missing_file_fails_cleanly(in_tmp, capsys):
    rc = main(["forward", "--model", "nope.ufbm", "--input", "x", "--output", "y"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_forward_rejects_malformed_model(in_tmp, capsys):
    (in_tmp / "bad.ufbm").write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
    x = random_input(2, 4, 1)
    save_acts(x, "in.acts")
    rc = main(["forward", "--model", "bad.ufbm", "--input", "in.acts",
               "--output", "out.acts"])
    assert rc == 1
    assert "magic" in capsys.readouterr().err


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "treeff", "bench", "--batch", "4", "--hidden", "4",
         "--trees", "1", "--depth", "1", "--passes", "2", "--warmup", "0",
         "--format", "json", "--json-out", "/tmp/treeff_cli_smoke.json"],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    payload = json.loads(proc.stdout)
    assert payload["command"] == "bench"
