"""
Entrenamiento en dos etapas: predictor con teacher forcing y vocoder sobre
features alineadas con la verdad (GTA), con checkpoints, EMA y log JSONL.

La aleatoriedad de cada paso se deriva de (seed, etapa, paso), así que
reanudar desde un checkpoint reproduce exactamente la ejecución continua.
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

import config
from autodiff import Tape, backward, scale
from checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from errors import ConfigError, InvariantViolation, NonFiniteError, ValidationError
from optim import AdamState, EmaState, LearningRateSchedule, adam_step
from predictor import PredictorConfig, SpectrogramPredictor
from text import CharSequence
from vocoder import VocoderConfig, WaveNetVocoder

logger = logging.getLogger(__name__)

STAGE_PREDICTOR = "predictor"
STAGE_VOCODER = "vocoder"

# Códigos de etapa para derivar generadores por paso
STAGE_CODES = {STAGE_PREDICTOR: 1, STAGE_VOCODER: 2, "gta": 3, "eval": 4, "synthesis": 5}


def step_rng(seed: int, stage: str, step: int) -> np.random.Generator:
    """Generador del paso `step` de la etapa `stage` (sin estado entre pasos)."""
    return np.random.default_rng([seed, STAGE_CODES[stage], step])


@dataclass
class TrainConfig:
    """Hiperparámetros de una etapa de entrenamiento."""
    stage: str
    batch_size: int
    learning_rate: float
    lr_final: float
    decay_start: int
    decay_end: int
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-6
    l2_weight: float = 0.0
    ema_decay: float = 0.0
    max_steps: int = 2000
    checkpoint_every: int = 500
    log_every: int = 50
    seed: int = 0
    crop_frames: int = 16
    clip_norm: Optional[float] = None

    def __post_init__(self):
        errors = []
        if self.stage not in (STAGE_PREDICTOR, STAGE_VOCODER):
            errors.append(f"stage debe ser '{STAGE_PREDICTOR}' o '{STAGE_VOCODER}': {self.stage}")
        for name in ("batch_size", "max_steps", "checkpoint_every", "log_every", "crop_frames"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} debe ser positivo: {getattr(self, name)}")
        if not 0.0 <= self.ema_decay <= 1.0:
            errors.append(f"ema_decay debe estar en [0, 1]: {self.ema_decay}")
        if self.l2_weight < 0:
            errors.append(f"l2_weight debe ser >= 0: {self.l2_weight}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            errors.append(f"clip_norm debe ser positivo: {self.clip_norm}")
        if errors:
            raise ConfigError("TrainConfig inválida: " + "; ".join(errors))
        # Valida el calendario al construir
        self.schedule()

    @classmethod
    def for_stage(cls, stage: str, **overrides) -> "TrainConfig":
        """Defaults de la etapa (config.TRAIN_PREDICTOR / TRAIN_VOCODER) con overrides."""
        presets = {STAGE_PREDICTOR: config.TRAIN_PREDICTOR, STAGE_VOCODER: config.TRAIN_VOCODER}
        if stage not in presets:
            raise ConfigError(f"etapa desconocida: {stage}")
        return cls(stage=stage, **{**presets[stage], **overrides})

    def schedule(self) -> LearningRateSchedule:
        return LearningRateSchedule(self.learning_rate, self.lr_final, self.decay_start, self.decay_end)


@dataclass
class TrainLogRecord:
    """Una línea del log de entrenamiento."""
    step: int
    losses: Dict[str, float]
    lr: float
    wall_clock: float

    def to_json(self) -> str:
        return json.dumps({"step": self.step, **self.losses, "lr": self.lr,
                           "wall_clock": round(self.wall_clock, 3)}, sort_keys=False)


@dataclass
class PredictorExample:
    """Par (texto, espectrograma objetivo) de una utterance."""
    utt_id: str
    chars: CharSequence
    target: np.ndarray


@dataclass
class VocoderExample:
    """Features de trama y audio escalado alineado (F·hop muestras)."""
    utt_id: str
    features: np.ndarray
    audio: np.ndarray


@dataclass
class TrainResult:
    """Resultado de una ejecución de entrenamiento."""
    model: object
    records: List[TrainLogRecord] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    final_step: int = 0
    ema: Optional[EmaState] = None


def _pick_batch(rng: np.random.Generator, size: int, batch_size: int) -> np.ndarray:
    return np.sort(rng.choice(size, size=min(batch_size, size), replace=False))


def _prepare_log(path: Optional[str], start_step: int):
    """
    Deja el log listo para escribir desde start_step: vacío en una ejecución
    nueva; al reanudar conserva sólo las líneas de pasos anteriores.
    """
    if not path:
        return
    kept = []
    if start_step > 0 and os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip() and json.loads(line)["step"] < start_step:
                    kept.append(line if line.endswith("\n") else line + "\n")
        logger.info(f"Log {path}: conservadas {len(kept)} líneas anteriores al paso {start_step}")
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(kept)


def _append_log(path: Optional[str], record: TrainLogRecord):
    if not path:
        return
    with open(path, "a", encoding="utf-8") as f:
        f.write(record.to_json() + "\n")


def _checkpoint_path(out_dir: str, stage: str, step: int) -> str:
    return os.path.join(out_dir, f"{stage}_{step:06d}.ckpt")


def _check_loss(stage: str, step: int, losses: Dict[str, float], batch_ids: List[str]):
    if not all(np.isfinite(v) for v in losses.values()):
        raise NonFiniteError(f"non-finite loss at {stage} step {step} (batch: {', '.join(batch_ids)}): {losses}")


def _log_progress(stage: str, record: TrainLogRecord, max_steps: int):
    parts = ", ".join(f"{k}={v:.4f}" for k, v in record.losses.items())
    logger.info(f"[{stage}] step {record.step + 1}/{max_steps}: {parts}, lr={record.lr:.2e}")


# =============================================================================
# Restauración de modelos
# =============================================================================

def restore_predictor(path: str) -> SpectrogramPredictor:
    """Reconstruye un predictor desde su checkpoint (config incluida)."""
    ckpt = load_checkpoint(path)
    if ckpt.kind != STAGE_PREDICTOR:
        raise ValidationError(f"{path} no es un checkpoint de predictor ({ckpt.kind})")
    model = SpectrogramPredictor(PredictorConfig.from_dict(ckpt.config))
    ckpt.restore(model.store)
    return model


def restore_vocoder(path: str, use_ema: bool = True) -> WaveNetVocoder:
    """Reconstruye un vocoder; por defecto con los parámetros EMA."""
    ckpt = load_checkpoint(path)
    if ckpt.kind != STAGE_VOCODER:
        raise ValidationError(f"{path} no es un checkpoint de vocoder ({ckpt.kind})")
    model = WaveNetVocoder(VocoderConfig.from_dict(ckpt.config))
    ckpt.restore(model.store)
    if use_ema and ckpt.ema:
        EmaState(decay=0.0, shadow=ckpt.ema).swap_in(model.store)
    return model


# =============================================================================
# Predictor
# =============================================================================

def train_predictor(dataset: List[PredictorExample], model_cfg: PredictorConfig, train_cfg: TrainConfig,
                    out_dir: str, resume_from: Optional[str] = None,
                    log_path: Optional[str] = None) -> TrainResult:
    """
    Minimiza la pérdida del predictor con Adam + L2 y teacher forcing.

    Args:
        dataset: Pares (texto, espectrograma)
        model_cfg: Arquitectura (ignorada si se reanuda: se usa la del checkpoint)
        train_cfg: Hiperparámetros de la etapa 'predictor'
        out_dir: Directorio de checkpoints
        resume_from: Checkpoint desde el que continuar
        log_path: Log JSONL (se reescribe desde el paso inicial)

    Returns:
        TrainResult con el modelo entrenado, registros y checkpoints escritos
    """
    if not dataset:
        raise ValidationError("train_predictor: dataset vacío")
    os.makedirs(out_dir, exist_ok=True)

    if resume_from:
        ckpt = load_checkpoint(resume_from)
        model = SpectrogramPredictor(PredictorConfig.from_dict(ckpt.config), seed=train_cfg.seed)
        adam = AdamState.for_params(model.store, train_cfg.schedule(), train_cfg.adam_beta1,
                                    train_cfg.adam_beta2, train_cfg.adam_epsilon)
        ckpt.restore(model.store, adam)
        start_step = ckpt.step
        logger.info(f"Reanudando predictor desde {resume_from} (step {start_step})")
    else:
        model = SpectrogramPredictor(model_cfg, seed=train_cfg.seed)
        adam = AdamState.for_params(model.store, train_cfg.schedule(), train_cfg.adam_beta1,
                                    train_cfg.adam_beta2, train_cfg.adam_epsilon)
        start_step = 0

    _prepare_log(log_path, start_step)
    result = TrainResult(model=model, final_step=start_step)
    started = time.time()
    for step in range(start_step, train_cfg.max_steps):
        rng = step_rng(train_cfg.seed, STAGE_PREDICTOR, step)
        batch = [dataset[i] for i in _pick_batch(rng, len(dataset), train_cfg.batch_size)]
        model.store.zero_grad()

        totals = {"loss": 0.0, "mel_before": 0.0, "mel_after": 0.0, "stop_bce": 0.0}
        for example in batch:
            with Tape():
                out = model.forward_teacher_forced(example.chars, example.target, training=True, rng=rng)
                loss, components = model.loss(out, example.target)
                weighted = scale(loss, 1.0 / len(batch))
            backward(weighted)
            totals["loss"] += loss.item() / len(batch)
            for key, value in components.items():
                totals[key] += value / len(batch)
        _check_loss(STAGE_PREDICTOR, step, totals, [e.utt_id for e in batch])

        lr = adam_step(model.store, adam, train_cfg.l2_weight, train_cfg.clip_norm)
        record = TrainLogRecord(step=step, losses=totals, lr=lr, wall_clock=time.time() - started)
        result.records.append(record)
        _append_log(log_path, record)
        if (step + 1) % train_cfg.log_every == 0 or step == start_step:
            _log_progress(STAGE_PREDICTOR, record, train_cfg.max_steps)

        done = step + 1
        if done % train_cfg.checkpoint_every == 0 or done == train_cfg.max_steps:
            ckpt = Checkpoint.capture(STAGE_PREDICTOR, model.cfg.to_dict(), done, model.store, adam)
            result.checkpoints.append(save_checkpoint(_checkpoint_path(out_dir, STAGE_PREDICTOR, done), ckpt))
        result.final_step = done
    return result


def make_gta_features(model: SpectrogramPredictor, dataset: List[PredictorExample],
                      seed: int = 0) -> Dict[str, np.ndarray]:
    """
    Features GTA: salida después de la post-net en modo teacher forcing.

    Raises:
        InvariantViolation: Si alguna utterance no conserva el número de tramas
    """
    features = {}
    for index, example in enumerate(dataset):
        rng = step_rng(seed, "gta", index)
        out = model.forward_teacher_forced(example.chars, example.target, training=False, rng=rng)
        predicted = out.after_postnet.data
        if predicted.shape[0] != example.target.shape[0]:
            raise InvariantViolation(f"GTA desalineado en {example.utt_id}: {predicted.shape[0]} tramas "
                                     f"frente a {example.target.shape[0]}")
        features[example.utt_id] = predicted.astype(np.float32)
    logger.info(f"Features GTA generadas para {len(features)} utterances")
    return features


# =============================================================================
# Vocoder
# =============================================================================

def crop_example(example: VocoderExample, crop_frames: int, hop: int,
                 rng: np.random.Generator):
    """
    Recorte aleatorio alineado: tramas [f0, f0 + n) y muestras [f0·hop, (f0 + n)·hop).

    Returns:
        Tupla (features, audio, muestra previa al recorte)
    """
    frames = example.features.shape[0]
    if example.audio.shape[0] != frames * hop:
        raise InvariantViolation(f"{example.utt_id}: {example.audio.shape[0]} muestras para {frames} tramas")
    n = min(crop_frames, frames)
    start = int(rng.integers(0, frames - n + 1))
    audio = example.audio[start * hop:(start + n) * hop]
    previous = float(example.audio[start * hop - 1]) if start > 0 else 0.0
    return example.features[start:start + n], audio, previous


def train_vocoder(dataset: List[VocoderExample], model_cfg: VocoderConfig, train_cfg: TrainConfig,
                  out_dir: str, resume_from: Optional[str] = None,
                  log_path: Optional[str] = None) -> TrainResult:
    """
    Minimiza la NLL por muestra con recortes aleatorios y EMA de parámetros.

    Los checkpoints guardan parámetros crudos y la sombra EMA.
    """
    if not dataset:
        raise ValidationError("train_vocoder: dataset vacío")
    os.makedirs(out_dir, exist_ok=True)

    if resume_from:
        ckpt = load_checkpoint(resume_from)
        model = WaveNetVocoder(VocoderConfig.from_dict(ckpt.config), seed=train_cfg.seed)
        adam = AdamState.for_params(model.store, train_cfg.schedule(), train_cfg.adam_beta1,
                                    train_cfg.adam_beta2, train_cfg.adam_epsilon)
        ema = EmaState.from_store(model.store, train_cfg.ema_decay)
        ckpt.restore(model.store, adam, ema)
        start_step = ckpt.step
        logger.info(f"Reanudando vocoder desde {resume_from} (step {start_step})")
    else:
        model = WaveNetVocoder(model_cfg, seed=train_cfg.seed)
        adam = AdamState.for_params(model.store, train_cfg.schedule(), train_cfg.adam_beta1,
                                    train_cfg.adam_beta2, train_cfg.adam_epsilon)
        ema = EmaState.from_store(model.store, train_cfg.ema_decay)
        start_step = 0

    for example in dataset:
        if example.features.shape[1] != model.cfg.conditioning_channels:
            raise ValidationError(f"{example.utt_id}: features de {example.features.shape[1]} canales, el vocoder "
                                  f"espera {model.cfg.conditioning_channels}")

    _prepare_log(log_path, start_step)
    result = TrainResult(model=model, final_step=start_step)
    started = time.time()
    hop = model.cfg.hop_length
    for step in range(start_step, train_cfg.max_steps):
        rng = step_rng(train_cfg.seed, STAGE_VOCODER, step)
        batch = [dataset[i] for i in _pick_batch(rng, len(dataset), train_cfg.batch_size)]
        model.store.zero_grad()

        total = 0.0
        for example in batch:
            features, audio, previous = crop_example(example, train_cfg.crop_frames, hop, rng)
            with Tape():
                loss = model.loss(audio, features, previous)
                weighted = scale(loss, 1.0 / len(batch))
            backward(weighted)
            total += loss.item() / len(batch)
        losses = {"nll": total}
        _check_loss(STAGE_VOCODER, step, losses, [e.utt_id for e in batch])

        lr = adam_step(model.store, adam, train_cfg.l2_weight, train_cfg.clip_norm)
        ema.update(model.store)
        record = TrainLogRecord(step=step, losses=losses, lr=lr, wall_clock=time.time() - started)
        result.records.append(record)
        _append_log(log_path, record)
        if (step + 1) % train_cfg.log_every == 0 or step == start_step:
            _log_progress(STAGE_VOCODER, record, train_cfg.max_steps)

        done = step + 1
        if done % train_cfg.checkpoint_every == 0 or done == train_cfg.max_steps:
            ckpt = Checkpoint.capture(STAGE_VOCODER, model.cfg.to_dict(), done, model.store, adam, ema)
            result.checkpoints.append(save_checkpoint(_checkpoint_path(out_dir, STAGE_VOCODER, done), ckpt))
        result.final_step = done
    result.ema = ema
    return result


# =============================================================================
# Resumen del log
# =============================================================================

def summarize_log(path: str) -> dict:
    """
    Resumen de un log JSONL: pasos, pérdida inicial/final y reducción relativa.

    Raises:
        ValidationError: Si el log no existe, está vacío o contiene valores no finitos
    """
    if not os.path.exists(path):
        raise ValidationError(f"log inexistente: {path}")
    frame = pd.read_json(path, lines=True)
    if frame.empty:
        raise ValidationError(f"log vacío: {path}")
    loss_column = "loss" if "loss" in frame.columns else "nll"
    numeric = frame.drop(columns=["step"]).select_dtypes("number")
    if not np.all(np.isfinite(numeric.to_numpy())):
        raise ValidationError(f"log con valores no finitos: {path}")
    if not frame["step"].is_monotonic_increasing or frame["step"].duplicated().any():
        raise ValidationError(f"log con pasos no estrictamente crecientes: {path}")
    first = float(frame[loss_column].iloc[0])
    last = float(frame[loss_column].iloc[-1])
    return {
        "steps": int(len(frame)),
        "first_step": int(frame["step"].iloc[0]),
        "last_step": int(frame["step"].iloc[-1]),
        "initial_loss": first,
        "final_loss": last,
        "reduction": (first - last) / abs(first) if first else 0.0,
    }
