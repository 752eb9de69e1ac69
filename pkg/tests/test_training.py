"""
Tests del entrenamiento: RNG por paso, reanudación exacta, EMA, recortes
alineados, features GTA y log JSONL.

Ejecutar: pytest tests/test_training.py -v
(los tests de sobreajuste están marcados como slow: pytest -m slow)
"""
import json
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from audio_dsp import DspConfig, Waveform, mel_spectrogram, write_wav
from errors import ConfigError, InvariantViolation, NonFiniteError, ValidationError
from evaluation import monotonicity_ratio, stop_accuracy
from feature_store import FEATURES_GROUND_TRUTH, KIND_MEL, load_predictor_dataset, load_vocoder_dataset
from pipeline import make_toy_corpus, preprocess
from predictor import PredictorConfig
from text import normalize_text
from training import (
    STAGE_PREDICTOR, STAGE_VOCODER, PredictorExample, TrainConfig, VocoderExample, crop_example,
    make_gta_features, restore_predictor, restore_vocoder, step_rng, summarize_log, train_predictor,
    train_vocoder,
)
from vocoder import VocoderConfig, WaveNetVocoder


def tiny_predictor_config():
    return PredictorConfig(embedding_dim=4, encoder_conv_layers=1, encoder_conv_filters=4, encoder_conv_width=3,
                           encoder_lstm_units=4, attention_dim=4, location_filters=2, location_kernel=3,
                           prenet_units=4, decoder_lstm_units=4, output_dim=3, postnet_layers=2,
                           postnet_filters=4, postnet_width=3, max_decoder_steps=6)


def tiny_vocoder_config():
    return VocoderConfig(total_layers=3, dilation_cycle_size=2, residual_channels=4, skip_channels=4,
                         conditioning_channels=3, upsample_factors=(2, 3), hop_length=6, mol_components=2)


def predictor_dataset(seed=0):
    rng = np.random.default_rng(seed)
    texts = ["hi there.", "a cat", "go now!"]
    return [PredictorExample(f"u{i}", normalize_text(t), rng.normal(size=(4 + i, 3)))
            for i, t in enumerate(texts)]


def vocoder_dataset(seed=0, frames=4, hop=6):
    rng = np.random.default_rng(seed)
    return [VocoderExample(f"v{i}", rng.normal(size=(frames, 3)), rng.uniform(-100, 100, size=frames * hop))
            for i in range(3)]


def predictor_train_config(**overrides):
    values = dict(max_steps=4, checkpoint_every=2, log_every=1, batch_size=2, seed=11)
    values.update(overrides)
    return TrainConfig.for_stage(STAGE_PREDICTOR, **values)


def vocoder_train_config(**overrides):
    values = dict(max_steps=4, checkpoint_every=2, log_every=1, batch_size=2, crop_frames=2, seed=5)
    values.update(overrides)
    return TrainConfig.for_stage(STAGE_VOCODER, **values)


def same_values(a, b):
    return all(np.array_equal(a[name], b[name]) for name in a) and set(a) == set(b)


# =============================================================================
# Configuración y RNG
# =============================================================================

class TestTrainConfig:
    """Tests de TrainConfig"""

    def test_stage_defaults(self):
        cfg = TrainConfig.for_stage(STAGE_VOCODER)
        assert cfg.ema_decay == 0.9999
        assert cfg.crop_frames == 16
        assert TrainConfig.for_stage(STAGE_PREDICTOR).l2_weight == 1e-6

    def test_unknown_stage(self):
        with pytest.raises(ConfigError):
            TrainConfig.for_stage("decoder")

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            TrainConfig.for_stage(STAGE_PREDICTOR, batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig.for_stage(STAGE_VOCODER, ema_decay=1.5)


class TestStepRng:
    """Tests del generador por paso"""

    def test_deterministic(self):
        assert step_rng(3, STAGE_PREDICTOR, 7).random() == step_rng(3, STAGE_PREDICTOR, 7).random()

    def test_stages_and_steps_differ(self):
        base = step_rng(3, STAGE_PREDICTOR, 7).random()
        assert step_rng(3, STAGE_VOCODER, 7).random() != base
        assert step_rng(3, STAGE_PREDICTOR, 8).random() != base
        assert step_rng(4, STAGE_PREDICTOR, 7).random() != base


# =============================================================================
# Predictor
# =============================================================================

class TestTrainPredictor:
    """Tests del bucle de entrenamiento del predictor"""

    def test_checkpoints_and_log(self, tmp_path):
        log_path = str(tmp_path / "train.jsonl")
        result = train_predictor(predictor_dataset(), tiny_predictor_config(), predictor_train_config(),
                                 str(tmp_path / "ckpt"), log_path=log_path)
        names = [os.path.basename(p) for p in result.checkpoints]
        assert names == ["predictor_000002.ckpt", "predictor_000004.ckpt"]
        assert result.final_step == 4
        with open(log_path, encoding="utf-8") as f:
            lines = [json.loads(line) for line in f]
        assert [line["step"] for line in lines] == [0, 1, 2, 3]
        assert {"loss", "mel_before", "mel_after", "stop_bce", "lr", "wall_clock"} <= set(lines[0])
        assert lines[0]["lr"] == pytest.approx(1e-3)

    def test_resume_is_bit_identical(self, tmp_path):
        dataset = predictor_dataset()
        continuous = train_predictor(dataset, tiny_predictor_config(), predictor_train_config(),
                                     str(tmp_path / "a"))
        resumed = train_predictor(dataset, tiny_predictor_config(), predictor_train_config(),
                                  str(tmp_path / "b"), resume_from=continuous.checkpoints[0])
        assert resumed.final_step == 4
        assert [r.step for r in resumed.records] == [2, 3]
        assert same_values(continuous.model.store.values(), resumed.model.store.values())
        for name, buf in continuous.model.store.buffers.items():
            assert np.array_equal(buf, resumed.model.store.buffers[name]), name
        assert resumed.records[-1].losses == continuous.records[-1].losses

    def test_rerun_into_same_log_starts_over(self, tmp_path):
        log_path = str(tmp_path / "train.jsonl")
        for _ in range(2):
            train_predictor(predictor_dataset(), tiny_predictor_config(), predictor_train_config(max_steps=2),
                            str(tmp_path / "ckpt"), log_path=log_path)
        summary = summarize_log(log_path)
        assert summary["steps"] == 2
        assert summary["first_step"] == 0
        assert summary["last_step"] == 1

    def test_resume_rewrites_later_steps(self, tmp_path):
        dataset = predictor_dataset()
        log_path = str(tmp_path / "train.jsonl")
        continuous = train_predictor(dataset, tiny_predictor_config(), predictor_train_config(),
                                     str(tmp_path / "ckpt"), log_path=log_path)
        train_predictor(dataset, tiny_predictor_config(), predictor_train_config(), str(tmp_path / "ckpt"),
                        resume_from=continuous.checkpoints[0], log_path=log_path)
        with open(log_path, encoding="utf-8") as f:
            steps = [json.loads(line)["step"] for line in f]
        assert steps == [0, 1, 2, 3]
        assert summarize_log(log_path)["steps"] == 4

    def test_same_seed_same_run(self, tmp_path):
        dataset = predictor_dataset()
        a = train_predictor(dataset, tiny_predictor_config(), predictor_train_config(max_steps=2), str(tmp_path / "a"))
        b = train_predictor(dataset, tiny_predictor_config(), predictor_train_config(max_steps=2), str(tmp_path / "b"))
        assert same_values(a.model.store.values(), b.model.store.values())

    def test_restore_predictor(self, tmp_path):
        result = train_predictor(predictor_dataset(), tiny_predictor_config(), predictor_train_config(max_steps=2),
                                 str(tmp_path))
        model = restore_predictor(result.checkpoints[-1])
        assert model.cfg == result.model.cfg
        assert same_values(model.store.values(), result.model.store.values())

    def test_restore_wrong_kind(self, tmp_path):
        result = train_vocoder(vocoder_dataset(), tiny_vocoder_config(), vocoder_train_config(max_steps=1),
                               str(tmp_path))
        with pytest.raises(ValidationError):
            restore_predictor(result.checkpoints[-1])

    def test_empty_dataset(self, tmp_path):
        with pytest.raises(ValidationError):
            train_predictor([], tiny_predictor_config(), predictor_train_config(), str(tmp_path))

    def test_non_finite_loss_names_batch(self, tmp_path):
        dataset = [PredictorExample("bad", normalize_text("hi"), np.full((3, 3), np.nan))]
        with pytest.raises(NonFiniteError, match="bad"):
            train_predictor(dataset, tiny_predictor_config(), predictor_train_config(max_steps=1), str(tmp_path))


class TestGtaFeatures:
    """Tests de las features alineadas con la verdad"""

    def test_frame_counts_preserved(self, tmp_path):
        dataset = predictor_dataset()
        result = train_predictor(dataset, tiny_predictor_config(), predictor_train_config(max_steps=1),
                                 str(tmp_path))
        features = make_gta_features(result.model, dataset, seed=0)
        assert list(features) == ["u0", "u1", "u2"]
        for example in dataset:
            assert features[example.utt_id].shape == example.target.shape
            assert features[example.utt_id].dtype == np.float32

    def test_deterministic(self, tmp_path):
        dataset = predictor_dataset()
        result = train_predictor(dataset, tiny_predictor_config(), predictor_train_config(max_steps=1),
                                 str(tmp_path))
        a = make_gta_features(result.model, dataset, seed=2)
        b = make_gta_features(result.model, dataset, seed=2)
        assert all(np.array_equal(a[k], b[k]) for k in a)


# =============================================================================
# Vocoder
# =============================================================================

class TestCropExample:
    """Tests del recorte alineado de tramas y muestras"""

    def make_example(self, frames=5, hop=6):
        features = np.repeat(np.arange(frames, dtype=float)[:, None], 3, axis=1)
        return VocoderExample("x", features, np.arange(frames * hop, dtype=float))

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_alignment(self, seed):
        features, audio, previous = crop_example(self.make_example(), 2, 6, np.random.default_rng(seed))
        start = int(features[0, 0])
        assert features[:, 0].tolist() == [start, start + 1]
        assert audio.tolist() == list(range(start * 6, (start + 2) * 6))
        assert previous == (start * 6 - 1 if start > 0 else 0.0)

    def test_crop_longer_than_utterance(self):
        features, audio, previous = crop_example(self.make_example(frames=3), 16, 6, np.random.default_rng(0))
        assert features.shape[0] == 3
        assert audio.shape[0] == 18
        assert previous == 0.0

    def test_misaligned_audio(self):
        example = VocoderExample("x", np.zeros((4, 3)), np.zeros(23))
        with pytest.raises(InvariantViolation):
            crop_example(example, 2, 6, np.random.default_rng(0))


class TestTrainVocoder:
    """Tests del bucle de entrenamiento del vocoder"""

    def test_ema_after_one_step(self, tmp_path):
        train_cfg = vocoder_train_config(max_steps=1)
        initial = WaveNetVocoder(tiny_vocoder_config(), seed=train_cfg.seed).store.values()
        result = train_vocoder(vocoder_dataset(), tiny_vocoder_config(), train_cfg, str(tmp_path))
        final = result.model.store.values()
        for name, value in initial.items():
            expected = 0.9999 * value + 0.0001 * final[name]
            assert np.allclose(result.ema.shadow[name], expected, rtol=1e-6, atol=1e-7), name
        assert not same_values(initial, final)

    def test_resume_is_bit_identical(self, tmp_path):
        dataset = vocoder_dataset()
        continuous = train_vocoder(dataset, tiny_vocoder_config(), vocoder_train_config(), str(tmp_path / "a"))
        resumed = train_vocoder(dataset, tiny_vocoder_config(), vocoder_train_config(), str(tmp_path / "b"),
                                resume_from=continuous.checkpoints[0])
        assert same_values(continuous.model.store.values(), resumed.model.store.values())
        assert same_values(continuous.ema.shadow, resumed.ema.shadow)

    def test_restore_with_and_without_ema(self, tmp_path):
        result = train_vocoder(vocoder_dataset(), tiny_vocoder_config(), vocoder_train_config(max_steps=2),
                               str(tmp_path))
        raw = restore_vocoder(result.checkpoints[-1], use_ema=False)
        averaged = restore_vocoder(result.checkpoints[-1])
        assert same_values(raw.store.values(), result.model.store.values())
        assert same_values(averaged.store.values(), result.ema.shadow)

    def test_channel_mismatch(self, tmp_path):
        dataset = [VocoderExample("v", np.zeros((4, 5)), np.zeros(24))]
        with pytest.raises(ValidationError):
            train_vocoder(dataset, tiny_vocoder_config(), vocoder_train_config(), str(tmp_path))

    def test_resume_keeps_earlier_log_lines(self, tmp_path):
        dataset = vocoder_dataset()
        log_path = str(tmp_path / "voc.jsonl")
        continuous = train_vocoder(dataset, tiny_vocoder_config(), vocoder_train_config(), str(tmp_path),
                                   log_path=log_path)
        train_vocoder(dataset, tiny_vocoder_config(), vocoder_train_config(), str(tmp_path),
                      resume_from=continuous.checkpoints[0], log_path=log_path)
        summary = summarize_log(log_path)
        assert (summary["steps"], summary["first_step"], summary["last_step"]) == (4, 0, 3)

    def test_log_has_nll(self, tmp_path):
        log_path = str(tmp_path / "voc.jsonl")
        train_vocoder(vocoder_dataset(), tiny_vocoder_config(), vocoder_train_config(max_steps=2),
                      str(tmp_path), log_path=log_path)
        summary = summarize_log(log_path)
        assert summary["steps"] == 2
        assert np.isfinite(summary["final_loss"])


# =============================================================================
# Resumen del log
# =============================================================================

class TestSummarizeLog:
    """Tests del resumen de logs JSONL"""

    def write_log(self, tmp_path, rows):
        path = tmp_path / "log.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        return str(path)

    def test_reduction(self, tmp_path):
        path = self.write_log(tmp_path, [{"step": 0, "loss": 4.0, "lr": 1e-3},
                                         {"step": 1, "loss": 3.0, "lr": 1e-3},
                                         {"step": 2, "loss": 1.0, "lr": 1e-3}])
        summary = summarize_log(path)
        assert summary["steps"] == 3
        assert summary["first_step"] == 0
        assert summary["last_step"] == 2
        assert summary["reduction"] == pytest.approx(0.75)

    def test_non_monotonic_steps(self, tmp_path):
        path = self.write_log(tmp_path, [{"step": 1, "loss": 2.0}, {"step": 0, "loss": 1.0}])
        with pytest.raises(ValidationError):
            summarize_log(path)

    def test_missing(self, tmp_path):
        with pytest.raises(ValidationError, match="inexistente"):
            summarize_log(str(tmp_path / "nope.jsonl"))


# =============================================================================
# Aceptación: sobreajuste del corpus de juguete (lentos)
# =============================================================================

def clean_clip(path, seconds=2.0, rate=24000):
    """Vocal sintética sin ruido: armónicos de una fundamental que sube de 120 a 140 Hz."""
    t = np.arange(int(seconds * rate)) / rate
    phase = 2 * np.pi * np.cumsum(120.0 + 10.0 * t) / rate
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * 1.5 * t)
    signal = envelope * sum(0.3 / h * np.sin(h * phase) for h in range(1, 5))
    write_wav(str(path), Waveform(signal, rate))


def mel_rms_distance(wav, target, cfg):
    mel = mel_spectrogram(wav, cfg)
    n = min(mel.shape[0], target.shape[0])
    return float(np.sqrt(np.mean((mel[:n] - target[:n]) ** 2)))


@pytest.mark.slow
class TestOverfit:
    """Modelos desk sobreajustan el corpus de juguete"""

    def test_predictor_toy_corpus(self, tmp_path):
        manifest = make_toy_corpus(str(tmp_path / "corpus"), seed=0)
        preprocess(manifest, str(tmp_path / "features"), DspConfig(), workers=2)
        dataset = load_predictor_dataset(str(tmp_path / "features"), KIND_MEL)
        assert len(dataset) == 4

        train_cfg = TrainConfig.for_stage(STAGE_PREDICTOR, max_steps=2000, batch_size=4, checkpoint_every=2000,
                                          log_every=100, seed=0)
        log_path = str(tmp_path / "p.jsonl")
        model = train_predictor(dataset, PredictorConfig.desk(), train_cfg, str(tmp_path / "ckpt"),
                                log_path=log_path).model
        assert summarize_log(log_path)["reduction"] >= 0.9

        for index, example in enumerate(dataset):
            frames = example.target.shape[0]
            forced = model.forward_teacher_forced(example.chars, example.target, training=False, seed=index)
            assert monotonicity_ratio(forced.alignments) >= 0.9
            assert stop_accuracy(forced.stop_probs, model.cfg.stop_threshold) >= 0.95

            free = model.infer(example.chars, seed=index, max_decoder_steps=2 * frames)
            assert not free.truncated
            assert abs(free.frames - frames) <= 0.2 * frames

    def test_vocoder_two_second_clip(self, tmp_path):
        (tmp_path / "wavs").mkdir()
        clean_clip(tmp_path / "wavs" / "clip.wav")
        (tmp_path / "manifest.txt").write_text("clip|ah.|wavs/clip.wav\n", encoding="utf-8")
        dsp = DspConfig()
        preprocess(str(tmp_path / "manifest.txt"), str(tmp_path / "features"), dsp, workers=1)
        dataset = load_vocoder_dataset(str(tmp_path / "features"), features=FEATURES_GROUND_TRUTH)

        cfg = VocoderConfig.desk(total_layers=12, dilation_cycle_size=6)
        train_cfg = TrainConfig.for_stage(STAGE_VOCODER, max_steps=2000, batch_size=1, checkpoint_every=2000,
                                          log_every=100, learning_rate=1e-3, lr_final=1e-3, seed=0)
        log_path = str(tmp_path / "v.jsonl")
        trained = train_vocoder(dataset, cfg, train_cfg, str(tmp_path / "ckpt"), log_path=log_path).model
        assert summarize_log(log_path)["reduction"] >= 0.9

        target = dataset[0].features
        trained_distance = mel_rms_distance(trained.generate(target, seed=1), target, dsp)
        baseline = WaveNetVocoder(cfg, seed=123)
        baseline_distance = mel_rms_distance(baseline.generate(target, seed=1), target, dsp)
        assert trained_distance <= 0.5 * baseline_distance
