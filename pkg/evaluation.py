"""
Métricas objetivas de evaluación sobre un conjunto reservado.
"""
import logging
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np
from scipy.spatial.distance import cdist

from predictor import SpectrogramPredictor, stop_targets
from training import PredictorExample, VocoderExample, step_rng
from vocoder import WaveNetVocoder

logger = logging.getLogger(__name__)


@dataclass
class EvalMetrics:
    """Métricas agregadas (medias por utterance)."""
    utterances: int
    teacher_forced_loss: float
    mel_distance: float
    stop_accuracy: float
    monotonicity: float
    truncated_fraction: float
    vocoder_nll: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def dtw_distance(a: np.ndarray, b: np.ndarray) -> float:
    """
    Distancia DTW entre dos secuencias de tramas (distancia L2 por par de
    tramas), normalizada por la longitud del camino óptimo.

    Se recorre por antidiagonales: cada celda depende sólo de las dos
    anteriores, así que cada antidiagonal se calcula de una vez. En empates
    gana la diagonal, luego el paso vertical y luego el horizontal.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        return float("inf")
    cost = cdist(a, b)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    length = np.zeros((n + 1, m + 1), dtype=np.int64)
    acc[0, 0] = 0.0
    for d in range(2, n + m + 1):
        i = np.arange(max(1, d - m), min(n, d - 1) + 1)
        j = d - i
        cells = np.arange(i.shape[0])
        options = np.stack([acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]])
        lengths = np.stack([length[i - 1, j - 1], length[i - 1, j], length[i, j - 1]])
        best = np.argmin(options, axis=0)
        acc[i, j] = cost[i - 1, j - 1] + options[best, cells]
        length[i, j] = lengths[best, cells] + 1
    return float(acc[n, m] / length[n, m])


def monotonicity_ratio(alignments: np.ndarray) -> float:
    """Fracción de pasos del decoder en los que el argmax de la alineación no retrocede."""
    alignments = np.asarray(alignments)
    if alignments.shape[0] < 2:
        return 1.0
    peaks = np.argmax(alignments, axis=1)
    return float(np.mean(np.diff(peaks) >= 0))


def stop_accuracy(stop_probs: np.ndarray, threshold: float = 0.5) -> float:
    """Aciertos de la decisión de parada frente al objetivo (1 solo en la última trama)."""
    stop_probs = np.asarray(stop_probs).reshape(-1)
    target = stop_targets(stop_probs.shape[0])[:, 0]
    return float(np.mean((stop_probs > threshold) == (target > 0.5)))


def evaluate(predictor: SpectrogramPredictor, dataset: List[PredictorExample],
             vocoder: Optional[WaveNetVocoder] = None,
             vocoder_dataset: Optional[List[VocoderExample]] = None, seed: int = 0) -> EvalMetrics:
    """
    Evalúa el predictor (y opcionalmente el vocoder) sobre un conjunto reservado.

    Reporta pérdida teacher-forced, distancia mel DTW de la inferencia libre,
    precisión de parada, ratio de monotonía de la atención, fracción de
    inferencias truncadas y NLL del vocoder.
    """
    losses, distances, accuracies, monotonic, truncated = [], [], [], [], []
    for index, example in enumerate(dataset):
        rng = step_rng(seed, "eval", index)
        forced = predictor.forward_teacher_forced(example.chars, example.target, training=False, rng=rng)
        loss, _ = predictor.loss(forced, example.target)
        losses.append(loss.item())
        accuracies.append(stop_accuracy(forced.stop_probs, predictor.cfg.stop_threshold))
        monotonic.append(monotonicity_ratio(forced.alignments))

        free = predictor.infer(example.chars, seed=seed + index)
        distances.append(dtw_distance(free.after_postnet.data, example.target))
        truncated.append(float(free.truncated))
        logger.debug(f"Eval {example.utt_id}: loss={losses[-1]:.4f}, dtw={distances[-1]:.4f}, "
                     f"tramas {free.frames}/{example.target.shape[0]}")

    vocoder_nll = None
    if vocoder is not None and vocoder_dataset:
        nlls = [vocoder.loss(v.audio, v.features).item() for v in vocoder_dataset]
        vocoder_nll = float(np.mean(nlls))

    metrics = EvalMetrics(
        utterances=len(dataset),
        teacher_forced_loss=float(np.mean(losses)) if losses else float("nan"),
        mel_distance=float(np.mean(distances)) if distances else float("nan"),
        stop_accuracy=float(np.mean(accuracies)) if accuracies else float("nan"),
        monotonicity=float(np.mean(monotonic)) if monotonic else float("nan"),
        truncated_fraction=float(np.mean(truncated)) if truncated else 0.0,
        vocoder_nll=vocoder_nll,
    )
    logger.info(f"Evaluación: {metrics.utterances} utterances, loss={metrics.teacher_forced_loss:.4f}, "
                f"monotonía={metrics.monotonicity:.3f}")
    return metrics
