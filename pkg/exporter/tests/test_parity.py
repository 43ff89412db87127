"""Cross-implementation parity: exported models must behave identically.

The torch-side masked forward and the engine consume the same model and
input files; their outputs must agree within 1e-4 relative (the two sides
accumulate in different orders, so bitwise equality is not expected). The
engine is driven through its command line only.
"""

import shutil
import struct
import subprocess

import numpy as np
import pytest

from ffexport import read_acts
from ffexport.cli import main as ffexport_main


def _engine():
    path = shutil.which("treeff")
    if path is None:
        pytest.fail("treeff command line not on PATH; install the engine package")
    return path


def _engine_forward(model, input_acts, output_acts):
    proc = subprocess.run(
        [_engine(), "forward", "--model", str(model), "--input", str(input_acts),
         "--output", str(output_acts)],
        capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr or proc.stdout
    return read_acts(output_acts)


def _relative_gap(ours, theirs):
    scale = max(float(np.max(np.abs(ours))), 1e-30)
    return float(np.max(np.abs(ours - theirs))) / scale


def _run_pair(ck, tmp_path, seed, batch):
    code = ffexport_main(["export", "--manifest", str(ck.manifest)])
    assert code == 0
    code = ffexport_main(["reference", "--model", str(ck.out), "--seed", str(seed),
                          "--batch", str(batch), "--out-prefix", str(tmp_path / "ref")])
    assert code == 0
    ours = read_acts(tmp_path / "ref.output.acts")
    theirs = _engine_forward(ck.out, tmp_path / "ref.input.acts", tmp_path / "engine.acts")
    return ours, theirs


def test_parity_tiny_two_layer(make_checkpoint, tmp_path):
    # two layers, two trees of depth 2, biases on: the logic-heavy shape
    ck = make_checkpoint(hidden=8, layers=2, heads=2, trees=2, depth=2,
                         bias=True, seed=29)
    ours, theirs = _run_pair(ck, tmp_path, seed=5, batch=5)
    gap = _relative_gap(ours, theirs)
    print(f"[gate] cross-implementation parity, tiny: "
          f"{'PASS' if gap <= 1e-4 else 'FAIL'} (relative gap {gap:.2e})", flush=True)
    assert gap <= 1e-4


def test_parity_mid_single_layer(make_checkpoint, tmp_path):
    # full production width with one tree of depth 11: 4095 nodes, where
    # accumulation-order drift would show if it exceeded the budget
    ck = make_checkpoint(hidden=768, layers=1, heads=12, trees=1, depth=11,
                         bias=False, seed=37)
    ours, theirs = _run_pair(ck, tmp_path, seed=6, batch=16)
    gap = _relative_gap(ours, theirs)
    print(f"[gate] cross-implementation parity, mid: "
          f"{'PASS' if gap <= 1e-4 else 'FAIL'} (relative gap {gap:.2e})", flush=True)
    assert gap <= 1e-4
    header = struct.unpack_from("<4sIIIII", ck.out.read_bytes(),
                                24 + 4 * (768 * 768 * 4) + 8 * (768 * 4))
    assert header[0] == b"FFFW" and header[4] == 12


def test_engine_accepts_exporter_bytes_verbatim(make_checkpoint, tmp_path):
    # a second engine run over the same files is a byte-identical dump:
    # the interchange carries bits, and both sides are deterministic
    ck = make_checkpoint(hidden=8, layers=1, trees=1, depth=1, bias=False, seed=41)
    ours, first = _run_pair(ck, tmp_path, seed=2, batch=3)
    again = _engine_forward(ck.out, tmp_path / "ref.input.acts", tmp_path / "again.acts")
    assert first.tobytes() == again.tobytes()
    assert _relative_gap(ours, first) <= 1e-4
