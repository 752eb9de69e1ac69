"""
Flujos de la CLI: preproceso del corpus, síntesis, copy-synthesis,
análisis de campo receptivo y generación del corpus de juguete.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

import config
from audio_dsp import (DspConfig, Waveform, align_samples, griffin_lim, linear_from_log, log_linear_spectrogram,
                       mel_spectrogram, read_wav, write_wav)
from errors import ErrorType, ValidationError, classify_error
from feature_store import (KIND_AUDIO, KIND_CHARS, KIND_LINEAR, KIND_MEL, feature_path, read_feature,
                           read_manifest, write_feature, write_index)
from predictor import SpectrogramPredictor
from text import CHAR_TO_ID, normalize_text
from training import restore_predictor, restore_vocoder
from vocoder import WaveNetVocoder, receptive_field

logger = logging.getLogger(__name__)

GRIFFIN_LIM = "griffinlim"


# =============================================================================
# Preproceso
# =============================================================================

@dataclass
class UtteranceResult:
    """Resultado del preproceso de una utterance."""
    success: bool
    utt_id: str
    frames: int = 0
    error_message: Optional[str] = None
    error_type: str = ErrorType.NONE


@dataclass
class PreprocessReport:
    """Resultados por utterance (orden del manifest) y ruta del índice."""
    results: List[UtteranceResult] = field(default_factory=list)
    index_path: Optional[str] = None

    @property
    def failures(self) -> List[UtteranceResult]:
        return [r for r in self.results if not r.success]

    @property
    def succeeded(self) -> int:
        return sum(1 for r in self.results if r.success)


def _preprocess_one(row, out_dir: str, cfg: DspConfig, with_linear: bool) -> UtteranceResult:
    try:
        chars = normalize_text(row.transcript)
        waveform = read_wav(row.wav_path, cfg.sample_rate_hz)
        mel = mel_spectrogram(waveform, cfg)
        frames = mel.shape[0]
        write_feature(feature_path(out_dir, row.id, KIND_MEL), mel)
        if with_linear:
            write_feature(feature_path(out_dir, row.id, KIND_LINEAR), log_linear_spectrogram(waveform, cfg))
        write_feature(feature_path(out_dir, row.id, KIND_CHARS), chars.ids)
        write_feature(feature_path(out_dir, row.id, KIND_AUDIO), align_samples(waveform.samples, frames, cfg))
        return UtteranceResult(success=True, utt_id=row.id, frames=frames)
    except Exception as e:
        return UtteranceResult(success=False, utt_id=row.id, error_message=str(e), error_type=classify_error(e))


def preprocess(manifest_path: str, out_dir: str, cfg: DspConfig, with_linear: bool = False,
               workers: int = 4) -> PreprocessReport:
    """
    Extrae features de cada utterance del manifest.

    Por utterance escribe <id>.mel.tft, <id>.chars.tft, <id>.audio.tft
    (audio recortado a tramas × hop) y, con with_linear, <id>.linear.tft.
    Los fallos se recogen en el informe sin abortar el resto. El índice
    lista solo las utterances correctas, en el orden del manifest.
    """
    manifest = read_manifest(manifest_path)
    os.makedirs(out_dir, exist_ok=True)
    logger.info(f"Preprocesando {len(manifest)} utterances de {manifest_path} ({workers} workers)")

    rows = list(manifest.itertuples(index=False))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda row: _preprocess_one(row, out_dir, cfg, with_linear), rows))

    index_rows = []
    for row, result in zip(rows, results):
        if not result.success:
            logger.error(f"  {result.utt_id}: {result.error_message}")
            continue
        index_rows.append({
            "id": row.id,
            "text": row.transcript,
            "frames": result.frames,
            "samples": result.frames * cfg.hop_length,
            "mel": os.path.basename(feature_path(out_dir, row.id, KIND_MEL)),
            "linear": os.path.basename(feature_path(out_dir, row.id, KIND_LINEAR)) if with_linear else "",
            "chars": os.path.basename(feature_path(out_dir, row.id, KIND_CHARS)),
            "audio": os.path.basename(feature_path(out_dir, row.id, KIND_AUDIO)),
        })
    report = PreprocessReport(results=results, index_path=write_index(out_dir, index_rows))
    logger.info(f"Preproceso: {report.succeeded}/{len(results)} correctas, índice en {report.index_path}")
    return report


# =============================================================================
# Síntesis
# =============================================================================

@dataclass
class SynthesisResult:
    path: str
    frames: int
    samples: int
    truncated: bool

    def summary(self) -> str:
        return f"frames={self.frames} samples={self.samples} truncated={str(self.truncated).lower()}"


def _check_griffin_lim(output_dim: int, cfg: DspConfig, source: str):
    if output_dim != cfg.fft_bins:
        raise ValidationError(
            f"griffinlim requires linear-spectrogram features: {source} produce {output_dim} canales y "
            f"Griffin-Lim necesita {cfg.fft_bins} bins lineales (entrenar el predictor con output = linear)"
        )


def _check_vocoder(vocoder: WaveNetVocoder, channels: int, cfg: DspConfig, source: str):
    if vocoder.cfg.conditioning_channels != channels:
        raise ValidationError(f"vocoder incompatible: {source} produce {channels} canales y el vocoder espera "
                              f"{vocoder.cfg.conditioning_channels}")
    if vocoder.cfg.hop_length != cfg.hop_length or vocoder.cfg.sample_rate != cfg.sample_rate_hz:
        raise ValidationError(f"vocoder incompatible: hop {vocoder.cfg.hop_length} @ {vocoder.cfg.sample_rate} Hz "
                              f"frente a {cfg.hop_length} @ {cfg.sample_rate_hz} Hz")


def _render(features: np.ndarray, vocoder, cfg: DspConfig, seed: int) -> Waveform:
    """Features de trama → forma de onda de tramas × hop muestras."""
    if isinstance(vocoder, WaveNetVocoder):
        return vocoder.generate(features, seed=seed)
    frames = features.shape[0]
    # La STFT nunca produce menos de frame_length/hop tramas: se rellena con
    # silencio (suelo logarítmico) y se recorta después
    min_frames = cfg.frame_length // cfg.hop_length
    if frames < min_frames:
        silence = np.full((min_frames - frames, features.shape[1]), np.log(cfg.clip_floor))
        features = np.concatenate([features, silence])
    waveform = griffin_lim(linear_from_log(features), cfg, cfg.griffin_lim_iters, seed=seed,
                           length=features.shape[0] * cfg.hop_length)
    return Waveform(waveform.samples[:frames * cfg.hop_length], cfg.sample_rate_hz)


def load_vocoder(spec: str):
    """'griffinlim' o ruta a un checkpoint de vocoder (con parámetros EMA)."""
    if spec == GRIFFIN_LIM:
        return GRIFFIN_LIM
    return restore_vocoder(spec, use_ema=True)


def synthesize(text: str, predictor, vocoder, out_path: str, cfg: DspConfig, seed: int = 0) -> SynthesisResult:
    """
    Texto → espectrograma (inferencia libre) → vocoder → WAV 16-bit.

    Args:
        predictor: SpectrogramPredictor o ruta a su checkpoint
        vocoder: WaveNetVocoder, ruta a su checkpoint o 'griffinlim'

    Raises:
        ValidationError: Configs incompatibles (p.ej. predictor mel con griffinlim)
    """
    if not isinstance(predictor, SpectrogramPredictor):
        predictor = restore_predictor(predictor)
    if isinstance(vocoder, str):
        vocoder = load_vocoder(vocoder)

    if vocoder == GRIFFIN_LIM:
        _check_griffin_lim(predictor.cfg.output_dim, cfg, "el predictor")
    else:
        _check_vocoder(vocoder, predictor.cfg.output_dim, cfg, "el predictor")

    chars = normalize_text(text)
    out = predictor.infer(chars, seed=seed)
    features = out.after_postnet.data.astype(np.float64)
    waveform = _render(features, vocoder, cfg, seed)
    write_wav(out_path, waveform)

    result = SynthesisResult(path=out_path, frames=out.frames, samples=len(waveform), truncated=out.truncated)
    logger.info(f"Síntesis escrita en {out_path}: {result.summary()} ({waveform.duration_s:.3f} s)")
    return result


def vocode(features_path: str, vocoder, out_path: str, cfg: DspConfig, seed: int = 0) -> SynthesisResult:
    """Copy-synthesis: convierte un FeatureFile guardado (mel o lineal) en WAV."""
    features = read_feature(features_path).astype(np.float64)
    if features.ndim != 2:
        raise ValidationError(f"{features_path}: se esperaba una matriz tramas × canales, forma {features.shape}")
    if isinstance(vocoder, str):
        vocoder = load_vocoder(vocoder)
    if vocoder == GRIFFIN_LIM:
        _check_griffin_lim(features.shape[1], cfg, features_path)
    else:
        _check_vocoder(vocoder, features.shape[1], cfg, features_path)

    waveform = _render(features, vocoder, cfg, seed)
    write_wav(out_path, waveform)
    result = SynthesisResult(path=out_path, frames=features.shape[0], samples=len(waveform), truncated=False)
    logger.info(f"Copy-synthesis escrita en {out_path}: {result.summary()}")
    return result


# =============================================================================
# Campo receptivo
# =============================================================================

@dataclass
class ReceptiveFieldRow:
    layers: int
    cycles: int
    cycle_size: int
    samples: int
    ms: float
    name: str = ""

    def format_value(self) -> str:
        """'6,139 / 255.8'; por debajo de 1 ms con tres cifras significativas."""
        ms = f"{self.ms:.3g}" if self.ms < 1.0 else f"{self.ms:.1f}"
        return f"{self.samples:,} / {ms}"

    def format(self) -> str:
        label = f"{self.name}: " if self.name else ""
        return (f"{label}layers={self.layers} cycles={self.cycles} cycle_size={self.cycle_size} "
                f"receptive field (samples / ms) = {self.format_value()}")


def analyze_receptive_field(layers: int, cycles: int, cycle_size: int,
                            sample_rate: int = config.DSP_DEFAULTS["sample_rate_hz"],
                            name: str = "") -> ReceptiveFieldRow:
    """Campo receptivo de una pila de `cycles` ciclos de dilatación de `cycle_size` capas."""
    if min(layers, cycles, cycle_size) <= 0:
        raise ValidationError(f"layers, cycles y cycle_size deben ser positivos: ({layers}, {cycles}, {cycle_size})")
    if layers != cycles * cycle_size:
        raise ValidationError(f"layers ({layers}) debe ser cycles × cycle_size ({cycles} × {cycle_size})")
    samples, ms = receptive_field(layers, cycle_size, sample_rate=sample_rate)
    return ReceptiveFieldRow(layers=layers, cycles=cycles, cycle_size=cycle_size, samples=samples, ms=ms, name=name)


def reference_rows(sample_rate: int = config.DSP_DEFAULTS["sample_rate_hz"]) -> List[ReceptiveFieldRow]:
    return [analyze_receptive_field(layers, cycles, size, sample_rate, name=name)
            for name, (layers, cycles, size) in config.REFERENCE_GEOMETRIES.items()]


# =============================================================================
# Corpus de juguete
# =============================================================================

def _char_formants(ch: str):
    """Par de 'formantes' deterministas por carácter (Hz)."""
    index = CHAR_TO_ID.get(ch, 1)
    return 300.0 + 45.0 * (index % 11), 900.0 + 110.0 * ((index * 7) % 13)


def toy_waveform(sentence: str, seed: int, sample_rate: int = config.DSP_DEFAULTS["sample_rate_hz"],
                 char_ms: float = config.TOY_CHAR_MS) -> np.ndarray:
    """
    Señal sintética para una frase: un segmento por carácter con dos tonos
    ligados al carácter sobre una fundamental, envolvente Hann y ruido leve.
    Los espacios y la puntuación son silencio con ruido.
    """
    rng = np.random.default_rng(seed)
    n = int(round(char_ms * sample_rate / 1000.0))
    t = np.arange(n) / sample_rate
    envelope = np.hanning(n)
    f0 = 110.0 + 20.0 * rng.random()
    segments = []
    for ch in sentence:
        if ch.isalpha():
            f1, f2 = _char_formants(ch)
            phase = rng.random(3) * 2 * np.pi
            tone = (0.5 * np.sin(2 * np.pi * f0 * t + phase[0])
                    + 0.3 * np.sin(2 * np.pi * f1 * t + phase[1])
                    + 0.2 * np.sin(2 * np.pi * f2 * t + phase[2]))
            segments.append(0.4 * envelope * tone)
        else:
            segments.append(np.zeros(n))
    # 100 ms de silencio al final para que el fin de frase sea aprendible
    segments.append(np.zeros(int(0.1 * sample_rate)))
    signal = np.concatenate(segments)
    return np.clip(signal + 0.003 * rng.standard_normal(signal.shape[0]), -0.99, 0.99)


def make_toy_corpus(out_dir: str, seed: int = 0, sentences: Optional[List[str]] = None,
                    sample_rate: int = config.DSP_DEFAULTS["sample_rate_hz"]) -> str:
    """
    Genera el corpus sintético (WAVs + manifest) de forma determinista.

    Returns:
        Ruta del manifest
    """
    sentences = sentences or config.TOY_CORPUS_SENTENCES
    wav_dir = os.path.join(out_dir, "wavs")
    os.makedirs(wav_dir, exist_ok=True)
    lines = []
    for i, sentence in enumerate(sentences):
        utt_id = f"toy_{i:03d}"
        samples = toy_waveform(sentence, seed=seed * 1000 + i, sample_rate=sample_rate)
        write_wav(os.path.join(wav_dir, f"{utt_id}.wav"), Waveform(samples, sample_rate))
        lines.append(f"{utt_id}|{sentence}|wavs/{utt_id}.wav\n")
    manifest_path = os.path.join(out_dir, "manifest.txt")
    # Sin comillas: el manifest se lee con QUOTE_NONE
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.writelines(lines)
    logger.info(f"Corpus de juguete: {len(lines)} utterances en {out_dir}")
    return manifest_path
