import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specnl.checkpoint import (
    MAGIC,
    CheckpointFormatError,
    deserialize,
    load_checkpoint,
    save_checkpoint,
    serialize,
)


def arrays_for_all_combos(rng):
    out = {}
    for dtype in (np.float64, np.float32):
        for rank in (1, 2, 3, 4):
            shape = tuple(rng.integers(1, 5) for _ in range(rank))
            out[f"{np.dtype(dtype).name}_r{rank}"] = rng.standard_normal(shape).astype(dtype)
    return out


class TestRoundTrip:
    def test_bit_identity_every_dtype_rank(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = arrays_for_all_combos(rng)
        path = str(tmp_path / "all.snl1")
        save_checkpoint(path, arrays)
        loaded = load_checkpoint(path)
        assert sorted(loaded) == sorted(arrays)
        for name, arr in arrays.items():
            assert loaded[name].dtype == arr.dtype
            assert loaded[name].shape == arr.shape
            assert loaded[name].tobytes() == arr.tobytes()

    def test_serialized_bytes_deterministic(self):
        rng = np.random.default_rng(1)
        arrays = arrays_for_all_combos(rng)
        assert serialize(arrays) == serialize(dict(reversed(list(arrays.items()))))

    def test_special_values_survive(self, tmp_path):
        arr = np.array([0.0, -0.0, np.pi, np.nextafter(0, 1)], dtype=np.float64)
        path = str(tmp_path / "special.snl1")
        save_checkpoint(path, {"v": arr})
        assert load_checkpoint(path)["v"].tobytes() == arr.tobytes()

    @given(st.dictionaries(
        st.text(min_size=1, max_size=12),
        st.tuples(st.sampled_from(["f4", "f8"]),
                  st.lists(st.integers(1, 4), min_size=1, max_size=4),
                  st.integers(0, 2**31)),
        min_size=1, max_size=5))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, spec):
        arrays = {}
        for name, (dt, shape, seed) in spec.items():
            rng = np.random.default_rng(seed)
            arrays[name] = rng.standard_normal(shape).astype(dt)
        loaded = deserialize(serialize(arrays))
        assert sorted(loaded) == sorted(arrays)
        for name in arrays:
            assert loaded[name].tobytes() == arrays[name].tobytes()
            assert loaded[name].shape == arrays[name].shape


class TestFormat:
    def test_magic_and_version_header(self):
        blob = serialize({"a": np.zeros(2)})
        assert blob[:4] == MAGIC
        version, count = struct.unpack_from("<II", blob, 4)
        assert version == 1
        assert count == 1

    def test_little_endian_payload(self):
        blob = serialize({"a": np.array([1.0], dtype=np.float64)})
        assert blob.endswith(struct.pack("<d", 1.0))

    def test_bad_magic_rejected(self):
        with pytest.raises(CheckpointFormatError, match="magic"):
            deserialize(b"XXXX" + b"\x00" * 20)

    def test_bad_version_rejected(self):
        blob = bytearray(serialize({"a": np.zeros(2)}))
        blob[4] = 99
        with pytest.raises(CheckpointFormatError, match="version"):
            deserialize(bytes(blob))

    def test_truncation_rejected(self):
        blob = serialize({"a": np.zeros(8)})
        with pytest.raises(CheckpointFormatError):
            deserialize(blob[:-3])

    def test_trailing_garbage_rejected(self):
        blob = serialize({"a": np.zeros(2)})
        with pytest.raises(CheckpointFormatError, match="trailing"):
            deserialize(blob + b"\x00")

    def test_int_arrays_rejected(self):
        with pytest.raises(CheckpointFormatError, match="dtype"):
            serialize({"a": np.zeros(2, dtype=np.int64)})

    def test_rank_zero_rejected(self):
        with pytest.raises(CheckpointFormatError, match="rank"):
            serialize({"a": np.float64(3.0)[()] * np.ones(())})


class TestAtomicity:
    def test_no_temp_residue(self, tmp_path):
        path = str(tmp_path / "ck.snl1")
        save_checkpoint(path, {"a": np.zeros(4)})
        save_checkpoint(path, {"a": np.ones(4)})  # overwrite
        assert np.array_equal(load_checkpoint(path)["a"], np.ones(4))
        leftovers = [f for f in os.listdir(tmp_path) if f != "ck.snl1"]
        assert leftovers == []
