"""Byte-level checks on the exporter's own writers and readers."""

import struct

import numpy as np
import pytest

from ffexport import (DimensionError, FormatError, LayerTensors, acts_bytes,
                      fffw_bytes, read_acts, read_fffw, read_ufbm, ufbm_bytes)


def _random_trees(rng, trees, nodes, hidden, bias):
    w_in = rng.standard_normal((trees, nodes, hidden)).astype(np.float32)
    w_out = rng.standard_normal((trees, nodes, hidden)).astype(np.float32)
    b_in = rng.standard_normal((trees, nodes)).astype(np.float32) if bias else None
    return w_in, b_in, w_out


def _random_layer(rng, hidden, trees, nodes, bias):
    def mat():
        return rng.standard_normal((hidden, hidden)).astype(np.float32)

    def vec():
        return rng.standard_normal(hidden).astype(np.float32)

    w_in, b_in, w_out = _random_trees(rng, trees, nodes, hidden, bias)
    return LayerTensors(mat(), vec(), mat(), vec(), mat(), vec(), mat(), vec(),
                        vec(), vec(), vec(), vec(), w_in, b_in, w_out)


def test_fffw_round_trip_fuzz(tmp_path):
    for trial in range(25):
        rng = np.random.default_rng(4200 + trial)
        trees = int(rng.integers(1, 4))
        path_len = int(rng.integers(1, 5))
        hidden = int(rng.integers(1, 9))
        bias = bool(rng.integers(0, 2))
        w_in, b_in, w_out = _random_trees(rng, trees, 2 ** path_len - 1, hidden, bias)
        # formats carry bits, not numbers: NaN and infinities must survive
        w_in.reshape(-1)[0] = np.nan
        w_out.reshape(-1)[-1] = -np.inf
        path = tmp_path / f"t{trial}.fffw"
        path.write_bytes(fffw_bytes(w_in, b_in, w_out))
        r_in, r_b, r_out = read_fffw(path)
        assert r_in.tobytes() == w_in.tobytes(), trial
        assert r_out.tobytes() == w_out.tobytes(), trial
        assert (r_b is None) == (b_in is None)
        if bias:
            assert r_b.tobytes() == b_in.tobytes()


def test_fffw_smallest_file_is_32_bytes(tmp_path):
    one = np.ones((1, 1, 1), dtype=np.float32)
    blob = fffw_bytes(one, None, one)
    assert len(blob) == 32
    magic, version, flags, trees, path_len, hidden = struct.unpack_from("<4sIIIII", blob)
    assert (magic, version, flags, trees, path_len, hidden) == (b"FFFW", 1, 0, 1, 1, 1)


def test_fffw_rejects_partial_tree():
    bad = np.zeros((1, 6, 4), dtype=np.float32)
    with pytest.raises(DimensionError, match="2\\^P"):
        fffw_bytes(bad, None, bad)


def test_fffw_rejects_wrong_dtype():
    w = np.zeros((1, 3, 4), dtype=np.float64)
    with pytest.raises(FormatError, match="float32"):
        fffw_bytes(w, None, w.astype(np.float32))


def test_acts_round_trip_and_empty(tmp_path):
    rng = np.random.default_rng(77)
    matrix = rng.standard_normal((5, 3)).astype(np.float32)
    matrix[2, 1] = np.nan
    path = tmp_path / "x.acts"
    path.write_bytes(acts_bytes(matrix))
    assert read_acts(path).tobytes() == matrix.tobytes()

    empty = np.zeros((0, 4), dtype=np.float32)
    path.write_bytes(acts_bytes(empty))
    assert path.stat().st_size == 16
    assert read_acts(path).shape == (0, 4)


def test_ufbm_round_trip(tmp_path):
    rng = np.random.default_rng(99)
    layers = [_random_layer(rng, 6, 2, 7, True), _random_layer(rng, 6, 1, 3, False)]
    path = tmp_path / "m.ufbm"
    path.write_bytes(ufbm_bytes(layers, 6, 3, 1e-12))
    model = read_ufbm(path)
    assert model.hidden == 6 and model.num_heads == 3
    assert model.layernorm_epsilon == pytest.approx(1e-12, rel=1e-6)
    for src, got in zip(layers, model.layers):
        for name in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
                     "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift",
                     "w_in", "w_out"):
            assert getattr(got, name).tobytes() == getattr(src, name).tobytes(), name
    assert model.layers[0].b_in.tobytes() == layers[0].b_in.tobytes()
    assert model.layers[1].b_in is None


def test_ufbm_empty_model(tmp_path):
    path = tmp_path / "empty.ufbm"
    path.write_bytes(ufbm_bytes([], 8, 2, 1e-12))
    assert path.stat().st_size == 24
    model = read_ufbm(path)
    assert model.layers == () and model.hidden == 8


def test_ufbm_rejects_indivisible_heads():
    with pytest.raises(DimensionError, match="heads"):
        ufbm_bytes([], 8, 3, 1e-12)


def test_readers_reject_garbage(tmp_path):
    rng = np.random.default_rng(13)
    w_in, b_in, w_out = _random_trees(rng, 1, 3, 4, True)
    blob = fffw_bytes(w_in, b_in, w_out)
    path = tmp_path / "bad.fffw"

    path.write_bytes(b"XFFW" + blob[4:])
    with pytest.raises(FormatError, match="magic"):
        read_fffw(path)
    path.write_bytes(blob[:-3])
    with pytest.raises(FormatError, match="truncated"):
        read_fffw(path)
    path.write_bytes(blob + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        read_fffw(path)
    versioned = bytearray(blob)
    struct.pack_into("<I", versioned, 4, 9)
    path.write_bytes(versioned)
    with pytest.raises(FormatError, match="version"):
        read_fffw(path)
