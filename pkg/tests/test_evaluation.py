"""
Tests de las métricas de evaluación.

Ejecutar: pytest tests/test_evaluation.py -v
"""
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evaluation import dtw_distance, evaluate, monotonicity_ratio, stop_accuracy
from predictor import PredictorConfig, SpectrogramPredictor
from text import normalize_text
from training import PredictorExample, VocoderExample
from vocoder import VocoderConfig, WaveNetVocoder


class TestDtw:
    """Tests de la distancia DTW"""

    def test_identical_is_zero(self):
        a = np.random.default_rng(0).normal(size=(6, 4))
        assert dtw_distance(a, a) == 0.0

    def test_time_stretch_is_zero(self):
        a = np.array([[0.0], [1.0], [2.0]])
        b = np.array([[0.0], [0.0], [1.0], [1.0], [2.0]])
        assert dtw_distance(a, b) == 0.0

    def test_constant_offset(self):
        a = np.zeros((4, 2))
        assert dtw_distance(a, a + np.array([3.0, 4.0])) == pytest.approx(5.0)

    def test_tie_prefers_diagonal(self):
        # Coste 1 por un camino de 3 celdas: (0,0) → (0,1) → (1,2)
        a = np.array([[0.0], [2.0]])
        b = np.array([[0.0], [1.0], [2.0]])
        assert dtw_distance(a, b) == pytest.approx(1.0 / 3.0)

    @pytest.mark.parametrize("n,m", [(1, 5), (7, 3), (9, 9)])
    def test_matches_cell_by_cell_recursion(self, n, m):
        rng = np.random.default_rng(n * 10 + m)
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
        acc = np.full((n + 1, m + 1), np.inf)
        steps = np.zeros((n + 1, m + 1))
        acc[0, 0] = 0.0
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                prev = min([(i - 1, j - 1), (i - 1, j), (i, j - 1)], key=lambda c: acc[c])
                acc[i, j] = np.linalg.norm(a[i - 1] - b[j - 1]) + acc[prev]
                steps[i, j] = steps[prev] + 1
        assert dtw_distance(a, b) == pytest.approx(acc[n, m] / steps[n, m])

    def test_empty_is_infinite(self):
        assert math.isinf(dtw_distance(np.zeros((0, 2)), np.zeros((3, 2))))


class TestAlignmentMetrics:
    """Tests de monotonía y precisión de parada"""

    def test_monotonic_diagonal(self):
        assert monotonicity_ratio(np.eye(5)) == 1.0

    def test_backtracking(self):
        alignments = np.eye(3)[[0, 2, 1]]
        assert monotonicity_ratio(alignments) == pytest.approx(0.5)

    def test_single_row(self):
        assert monotonicity_ratio(np.ones((1, 4)) / 4) == 1.0

    def test_stop_accuracy(self):
        assert stop_accuracy([0.1, 0.2, 0.9]) == 1.0
        assert stop_accuracy([0.9, 0.2, 0.1]) == pytest.approx(1 / 3)


class TestEvaluate:
    """Tests de evaluate() con modelos mínimos"""

    def test_metrics_are_finite(self):
        cfg = PredictorConfig(embedding_dim=4, encoder_conv_layers=1, encoder_conv_filters=4, encoder_conv_width=3,
                              encoder_lstm_units=4, attention_dim=4, location_filters=2, location_kernel=3,
                              prenet_units=4, decoder_lstm_units=4, output_dim=3, postnet_layers=2,
                              postnet_filters=4, postnet_width=3, max_decoder_steps=4)
        predictor = SpectrogramPredictor(cfg, seed=0)
        rng = np.random.default_rng(0)
        dataset = [PredictorExample("a", normalize_text("hi there."), rng.normal(size=(4, 3))),
                   PredictorExample("b", normalize_text("so long"), rng.normal(size=(3, 3)))]
        vocoder = WaveNetVocoder(VocoderConfig(total_layers=2, dilation_cycle_size=2, residual_channels=4,
                                               skip_channels=4, conditioning_channels=3, upsample_factors=(2, 3),
                                               hop_length=6, mol_components=2), seed=0)
        vocoder_dataset = [VocoderExample("a", rng.normal(size=(2, 3)), rng.uniform(-50, 50, size=12))]

        metrics = evaluate(predictor, dataset, vocoder, vocoder_dataset, seed=1)
        values = metrics.to_dict()
        assert values["utterances"] == 2
        for key in ("teacher_forced_loss", "mel_distance", "stop_accuracy", "monotonicity", "vocoder_nll"):
            assert np.isfinite(values[key]), key
        assert 0.0 <= metrics.truncated_fraction <= 1.0
        assert 0.0 <= metrics.monotonicity <= 1.0

    def test_without_vocoder(self):
        cfg = PredictorConfig(embedding_dim=4, encoder_conv_layers=1, encoder_conv_filters=4, encoder_conv_width=3,
                              encoder_lstm_units=4, attention_dim=4, location_filters=2, location_kernel=3,
                              prenet_units=4, decoder_lstm_units=4, output_dim=3, postnet_layers=2,
                              postnet_filters=4, postnet_width=3, max_decoder_steps=2)
        predictor = SpectrogramPredictor(cfg, seed=0)
        dataset = [PredictorExample("a", normalize_text("hey"), np.zeros((3, 3)))]
        assert evaluate(predictor, dataset).vocoder_nll is None
