"""
Tests de checkpoints binarios y de la codificación de tensores.

Ejecutar: pytest tests/test_checkpoint.py -v
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from errors import ValidationError
from optim import AdamState, EmaState, LearningRateSchedule
from params import INIT_ZEROS, ParamStore
from tensor_io import decode_array, encode_array


def make_store(seed=0):
    store = ParamStore(seed=seed)
    store.add("layer.weight", (3, 4))
    store.add("layer.bias", (4,), init=INIT_ZEROS, decay=False)
    store.add_buffer("bn.running_mean", np.arange(4, dtype=np.float32))
    return store


# =============================================================================
# tensor_io
# =============================================================================

class TestTensorIo:
    """Tests de la codificación de arrays"""

    def test_float32_bit_exact(self):
        array = np.random.default_rng(0).normal(size=(3, 5)).astype(np.float32)
        array[0, 0] = -0.0
        decoded, offset = decode_array(encode_array(array))
        assert decoded.dtype == np.float32
        assert decoded.tobytes() == array.tobytes()

    def test_truncated_record(self):
        data = encode_array(np.ones(4, dtype=np.float32))
        with pytest.raises(ValidationError, match="truncado"):
            decode_array(data[:-2])


# =============================================================================
# Checkpoints
# =============================================================================

class TestCheckpoint:
    """Tests de guardado y carga de checkpoints"""

    def test_roundtrip(self, tmp_path):
        store = make_store()
        adam = AdamState.for_params(store, LearningRateSchedule.constant(1e-3))
        adam.t = 7
        adam.m["layer.weight"] += 0.5
        ema = EmaState.from_store(store, decay=0.9)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, Checkpoint.capture("predictor", {"a": 1, "b": [2, 3]}, 42, store, adam, ema))

        loaded = load_checkpoint(path)
        assert loaded.kind == "predictor"
        assert loaded.config == {"a": 1, "b": [2, 3]}
        assert loaded.step == 42
        assert loaded.adam_t == 7
        for name, tensor in store:
            assert loaded.params[name].tobytes() == tensor.data.tobytes()
            assert np.array_equal(loaded.ema[name], tensor.data)
        assert np.array_equal(loaded.adam_m["layer.weight"], adam.m["layer.weight"])
        assert np.array_equal(loaded.buffers["bn.running_mean"], np.arange(4))

    def test_restore_overwrites_state(self, tmp_path):
        source = make_store(seed=1)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, Checkpoint.capture("vocoder", {}, 3, source))

        target = make_store(seed=2)
        buffer_ref = target.buffers["bn.running_mean"]
        buffer_ref[...] = 0
        load_checkpoint(path).restore(target)
        assert np.array_equal(target["layer.weight"].data, source["layer.weight"].data)
        # los buffers se actualizan in-place
        assert np.array_equal(buffer_ref, np.arange(4))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValidationError, match="magic"):
            load_checkpoint(str(path))

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v9.ckpt"
        path.write_bytes(MAGIC + (9).to_bytes(4, "little") + (0).to_bytes(4, "little"))
        with pytest.raises(ValidationError, match="versión"):
            load_checkpoint(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_checkpoint(str(tmp_path / "nope.ckpt"))

    def test_restore_incompatible_shapes(self, tmp_path):
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, Checkpoint.capture("predictor", {}, 0, make_store()))
        other = ParamStore()
        other.add("layer.weight", (5, 5))
        other.add("layer.bias", (4,))
        with pytest.raises(ValidationError, match="incompatible"):
            load_checkpoint(path).restore(other)
