"""
Tests de persistencia de features, manifest e índice del dataset.

Ejecutar: pytest tests/test_feature_store.py -v
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from audio_dsp import DspConfig, Waveform, write_wav
from errors import ValidationError
from feature_store import (
    FEATURE_MAGIC, INDEX_FILE, feature_path, load_predictor_dataset, load_vocoder_dataset,
    read_feature, read_index, read_manifest, write_feature, write_gta,
)
from pipeline import preprocess


def write_manifest(tmp_path, lines):
    path = tmp_path / "manifest.txt"
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return str(path)


def write_tone(path, seconds=0.25, rate=24000):
    t = np.arange(int(seconds * rate)) / rate
    write_wav(str(path), Waveform(0.3 * np.sin(2 * np.pi * 220 * t), rate))


@pytest.fixture
def preprocessed(tmp_path):
    """Directorio preprocesado con dos utterances (mel + lineal)."""
    (tmp_path / "wavs").mkdir()
    write_tone(tmp_path / "wavs" / "a.wav", 0.25)
    write_tone(tmp_path / "wavs" / "b.wav", 0.5)
    manifest = write_manifest(tmp_path, ["a|hello there.|wavs/a.wav", "b|good day|wavs/b.wav"])
    out_dir = str(tmp_path / "features")
    preprocess(manifest, out_dir, DspConfig(), with_linear=True, workers=2)
    return out_dir


# =============================================================================
# FeatureFile
# =============================================================================

class TestFeatureFile:
    """Tests de lectura y escritura de FeatureFiles"""

    def test_float_roundtrip_bit_exact(self, tmp_path):
        array = np.random.default_rng(0).normal(size=(7, 80)).astype(np.float32)
        path = write_feature(str(tmp_path / "x.mel.tft"), array)
        back = read_feature(path)
        assert back.dtype == np.float32
        assert back.tobytes() == array.tobytes()

    def test_ints_stored_as_int32(self, tmp_path):
        path = write_feature(str(tmp_path / "x.chars.tft"), np.array([3, 4, 5], dtype=np.int64))
        back = read_feature(path)
        assert back.dtype == np.int32
        assert back.tolist() == [3, 4, 5]

    def test_file_starts_with_magic(self, tmp_path):
        path = write_feature(str(tmp_path / "x.tft"), np.zeros(2))
        with open(path, "rb") as f:
            assert f.read(4) == FEATURE_MAGIC

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tft"
        path.write_bytes(b"XXXX" + b"\x00" * 8)
        with pytest.raises(ValidationError, match="magic"):
            read_feature(str(path))

    def test_trailing_bytes(self, tmp_path):
        path = write_feature(str(tmp_path / "x.tft"), np.zeros(2))
        with open(path, "ab") as f:
            f.write(b"\x00")
        with pytest.raises(ValidationError, match="sobrantes"):
            read_feature(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            read_feature(str(tmp_path / "nope.tft"))

    def test_feature_path(self):
        assert feature_path("d", "utt1", "mel") == os.path.join("d", "utt1.mel.tft")


# =============================================================================
# Manifest
# =============================================================================

class TestManifest:
    """Tests de lectura del manifest"""

    def test_resolves_relative_paths(self, tmp_path):
        path = write_manifest(tmp_path, ["u1|Hello world.|wavs/u1.wav", "u2| a cat |/abs/u2.wav"])
        frame = read_manifest(path)
        assert frame["id"].tolist() == ["u1", "u2"]
        assert frame["transcript"].tolist() == ["Hello world.", "a cat"]
        assert frame["wav_path"].iloc[0] == os.path.join(str(tmp_path), "wavs", "u1.wav")
        assert frame["wav_path"].iloc[1] == "/abs/u2.wav"

    def test_quotes_are_literal(self, tmp_path):
        path = write_manifest(tmp_path, ['u1|he said "hi"|a.wav'])
        assert read_manifest(path)["transcript"].iloc[0] == 'he said "hi"'

    def test_duplicate_ids(self, tmp_path):
        path = write_manifest(tmp_path, ["u1|a|a.wav", "u1|b|b.wav"])
        with pytest.raises(ValidationError, match="ids duplicados"):
            read_manifest(path)

    def test_empty_transcript(self, tmp_path):
        path = write_manifest(tmp_path, ["u1| |a.wav"])
        with pytest.raises(ValidationError, match="transcripciones vacías"):
            read_manifest(path)

    def test_wrong_field_count(self, tmp_path):
        path = write_manifest(tmp_path, ["u1|a", "u2|b"])
        with pytest.raises(ValidationError):
            read_manifest(path)

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "manifest.txt"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ValidationError, match="vacío"):
            read_manifest(str(path))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ValidationError, match="inexistente"):
            read_manifest(str(tmp_path / "nope.txt"))


# =============================================================================
# Índice y datasets
# =============================================================================

class TestDatasets:
    """Tests de índice y carga de datasets"""

    def test_index_lists_manifest_order(self, preprocessed):
        index = read_index(preprocessed)
        assert index["id"].tolist() == ["a", "b"]
        assert index["frames"].tolist() == [20, 40]
        assert index["samples"].tolist() == [6000, 12000]
        assert os.path.exists(os.path.join(preprocessed, INDEX_FILE))

    def test_predictor_dataset(self, preprocessed):
        examples = load_predictor_dataset(preprocessed)
        assert [e.utt_id for e in examples] == ["a", "b"]
        assert examples[0].target.shape == (20, 80)
        assert examples[0].chars.decode() == "hello there."

    def test_predictor_dataset_linear(self, preprocessed):
        examples = load_predictor_dataset(preprocessed, kind="linear")
        assert examples[1].target.shape == (40, 1025)

    def test_vocoder_dataset_ground_truth(self, preprocessed):
        examples = load_vocoder_dataset(preprocessed, features="ground-truth")
        assert examples[0].features.shape == (20, 80)
        assert examples[0].audio.shape == (6000,)
        assert np.max(np.abs(examples[0].audio)) <= 127.5

    def test_vocoder_dataset_gta(self, preprocessed, tmp_path):
        gta_dir = str(tmp_path / "gta")
        write_gta(gta_dir, {"a": np.ones((20, 80)), "b": np.zeros((40, 80))})
        examples = load_vocoder_dataset(preprocessed, features="gta", gta_dir=gta_dir)
        assert np.all(examples[0].features == 1.0)

    def test_gta_requires_directory(self, preprocessed):
        with pytest.raises(ValidationError):
            load_vocoder_dataset(preprocessed, features="gta")

    def test_unknown_feature_kind(self, preprocessed):
        with pytest.raises(ValidationError):
            load_vocoder_dataset(preprocessed, features="cepstrum")

    def test_missing_index(self, tmp_path):
        with pytest.raises(ValidationError, match="índice inexistente"):
            read_index(str(tmp_path))
