"""
Núcleos de procesado de señal: STFT/ISTFT, banco de filtros mel, compresión
logarítmica, reconstrucción de fase Griffin-Lim, escalado de objetivos del
vocoder y lectura/escritura de WAV PCM 16-bit.

Todas las funciones son puras (sin estado compartido) y deterministas dada la
configuración y la semilla.
"""
import functools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

import config
from errors import ConfigError, ShapeError, ValidationError, NonFiniteError

logger = logging.getLogger(__name__)

# Matrices tramas × bins (magnitudes STFT) y tramas × canales (log-mel)
LinearSpectrogram = np.ndarray
MelSpectrogram = np.ndarray

# Tolerancia relativa para considerar nula la suma de ventanas al cuadrado
_WSS_RELATIVE_FLOOR = 1e-11


@dataclass(frozen=True)
class DspConfig:
    """Geometría de análisis y parámetros del banco mel."""
    sample_rate_hz: int = config.DSP_DEFAULTS["sample_rate_hz"]
    frame_length_ms: float = config.DSP_DEFAULTS["frame_length_ms"]
    hop_ms: float = config.DSP_DEFAULTS["hop_ms"]
    fft_size: int = config.DSP_DEFAULTS["fft_size"]
    mel_channels: int = config.DSP_DEFAULTS["mel_channels"]
    mel_fmin_hz: float = config.DSP_DEFAULTS["mel_fmin_hz"]
    mel_fmax_hz: float = config.DSP_DEFAULTS["mel_fmax_hz"]
    clip_floor: float = config.DSP_DEFAULTS["clip_floor"]
    griffin_lim_iters: int = config.DSP_DEFAULTS["griffin_lim_iters"]

    def __post_init__(self):
        errors = []
        if self.sample_rate_hz <= 0:
            errors.append(f"sample_rate_hz debe ser positivo: {self.sample_rate_hz}")
        else:
            hop = self.hop_ms * self.sample_rate_hz / 1000.0
            if hop <= 0 or abs(hop - round(hop)) > 1e-9:
                errors.append(f"hop_ms={self.hop_ms} no da un número entero de muestras")
            frame = self.frame_length_ms * self.sample_rate_hz / 1000.0
            if frame <= 0 or abs(frame - round(frame)) > 1e-9:
                errors.append(f"frame_length_ms={self.frame_length_ms} no da un número entero de muestras")
            elif self.fft_size < round(frame):
                errors.append(f"fft_size={self.fft_size} menor que la trama ({round(frame)} muestras)")
            if not (0 < self.mel_fmin_hz < self.mel_fmax_hz <= self.sample_rate_hz / 2):
                errors.append(
                    f"se requiere 0 < mel_fmin < mel_fmax <= sample_rate/2 "
                    f"(actual: {self.mel_fmin_hz}, {self.mel_fmax_hz})"
                )
        if self.mel_channels <= 0:
            errors.append(f"mel_channels debe ser positivo: {self.mel_channels}")
        if self.clip_floor <= 0:
            errors.append(f"clip_floor debe ser > 0: {self.clip_floor}")
        if self.griffin_lim_iters < 0:
            errors.append(f"griffin_lim_iters debe ser >= 0: {self.griffin_lim_iters}")
        if errors:
            raise ConfigError("DspConfig inválida: " + "; ".join(errors))

    @property
    def frame_length(self) -> int:
        """Longitud de trama en muestras (1200 a 24 kHz)."""
        return int(round(self.frame_length_ms * self.sample_rate_hz / 1000.0))

    @property
    def hop_length(self) -> int:
        """Salto entre tramas en muestras (300 a 24 kHz)."""
        return int(round(self.hop_ms * self.sample_rate_hz / 1000.0))

    @property
    def fft_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass
class Waveform:
    """Forma de onda mono en [-1, 1) con su frecuencia de muestreo."""
    samples: np.ndarray
    sample_rate_hz: int = config.DSP_DEFAULTS["sample_rate_hz"]

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass
class GriffinLimResult:
    """Salida de Griffin-Lim con el error de convergencia espectral por iteración."""
    waveform: Waveform
    errors: List[float] = field(default_factory=list)


def _samples_of(w: Union[Waveform, np.ndarray]) -> np.ndarray:
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise ValidationError("empty input: la forma de onda no tiene muestras")
    if not np.all(np.isfinite(samples)):
        raise NonFiniteError("non-finite sample: la forma de onda contiene NaN/Inf")
    return samples


@functools.lru_cache(maxsize=8)
def _window(frame_length: int) -> np.ndarray:
    # Hann periódica: con 75% de solape cumple COLA
    win = get_window("hann", frame_length, fftbins=True).astype(np.float64)
    win.setflags(write=False)
    return win


def frame_count(num_samples: int, cfg: DspConfig) -> int:
    """
    Número de tramas que produce la STFT para una señal de num_samples.

    Las señales más cortas que una trama se rellenan con ceros hasta
    frame_length; cada trama "posee" exactamente hop muestras.
    """
    return max(num_samples, cfg.frame_length) // cfg.hop_length


def stft_complex(w: Union[Waveform, np.ndarray], cfg: DspConfig) -> np.ndarray:
    """
    STFT compleja (tramas × bins).

    Relleno por reflexión de frame_length/2 a cada lado, de modo que la trama t
    queda centrada en la muestra t·hop; ventana Hann por trama y FFT de
    fft_size puntos (la trama se completa con ceros al final).
    """
    samples = _samples_of(w)
    fl, hop = cfg.frame_length, cfg.hop_length
    if samples.shape[0] < fl:
        samples = np.pad(samples, (0, fl - samples.shape[0]))
    n_frames = samples.shape[0] // hop
    padded = np.pad(samples, fl // 2, mode="reflect")
    idx = np.arange(fl)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * _window(fl)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def stft(w: Union[Waveform, np.ndarray], cfg: DspConfig) -> LinearSpectrogram:
    """Magnitud (no potencia) de la STFT: tramas × (fft_size/2 + 1)."""
    return np.abs(stft_complex(w, cfg))


def istft(spec: np.ndarray, cfg: DspConfig, length: Optional[int] = None) -> Waveform:
    """
    Inversa de stft_complex por solapamiento-suma con ventana de síntesis.

    Es la solución de mínimos cuadrados exacta del operador STFT: las
    posiciones del relleno por reflexión se pliegan sobre su muestra de origen
    antes de normalizar por la suma de ventanas al cuadrado.

    Args:
        spec: STFT compleja tramas × bins
        cfg: Configuración DSP (misma geometría que el análisis)
        length: Longitud de salida (default: tramas × hop)

    Returns:
        Waveform reconstruida
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.fft_bins:
        raise ShapeError(
            f"geometry mismatch: se esperaban (tramas, {cfg.fft_bins}) bins, recibido {spec.shape}"
        )
    fl, hop = cfg.frame_length, cfg.hop_length
    n_frames = spec.shape[0]
    if length is None:
        length = max(n_frames * hop, fl if n_frames else 0)
    if n_frames == 0 or length == 0:
        return Waveform(np.zeros(length), cfg.sample_rate_hz)
    if frame_count(length, cfg) != n_frames:
        raise ShapeError(
            f"geometry mismatch: {n_frames} tramas no corresponden a {length} muestras (hop {hop})"
        )

    pad = fl // 2
    win = _window(fl)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, :fl] * win
    padded_len = max(length, fl) + 2 * pad
    numerator = np.zeros(padded_len)
    weights = np.zeros(padded_len)
    win_sq = win ** 2
    for t in range(n_frames):
        start = t * hop
        numerator[start:start + fl] += frames[t]
        weights[start:start + fl] += win_sq

    # Plegado del relleno por reflexión sobre las muestras originales
    source = np.pad(np.arange(max(length, fl)), pad, mode="reflect")
    numerator = np.bincount(source, weights=numerator, minlength=max(length, fl))
    weights = np.bincount(source, weights=weights, minlength=max(length, fl))

    out = np.zeros_like(numerator)
    valid = weights > _WSS_RELATIVE_FLOOR * weights.max()
    out[valid] = numerator[valid] / weights[valid]
    return Waveform(out[:length], cfg.sample_rate_hz)


def hz_to_mel(hz):
    """Escala mel HTK: 2595·log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: DspConfig) -> np.ndarray:
    """mel_channels + 2 frecuencias (Hz) equiespaciadas en mel entre fmin y fmax."""
    mels = np.linspace(hz_to_mel(cfg.mel_fmin_hz), hz_to_mel(cfg.mel_fmax_hz), cfg.mel_channels + 2)
    return mel_to_hz(mels)


def mel_centers(cfg: DspConfig) -> np.ndarray:
    """Frecuencia central (Hz) de cada filtro."""
    return mel_band_edges(cfg)[1:-1]


@functools.lru_cache(maxsize=8)
def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    """
    Banco de filtros triangulares (mel_channels × fft_bins), pico 1, sin normalizar.

    Raises:
        ValidationError: si algún filtro no cubre ningún bin ("filterbank underresolved")
    """
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.fft_bins) * cfg.sample_rate_hz / cfg.fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(bank.max(axis=1) <= 0.0)
    if empty.size:
        raise ValidationError(
            f"filterbank underresolved: {empty.size} filtros sin ningún bin "
            f"(primero: canal {empty[0]}) con fft_size={cfg.fft_size}"
        )
    bank.setflags(write=False)
    return bank


def mel_spectrogram(w: Union[Waveform, np.ndarray], cfg: DspConfig) -> MelSpectrogram:
    """log(max(banco_mel × |STFT|, clip_floor)) con logaritmo natural: tramas × canales."""
    magnitudes = stft(w, cfg)
    mel = magnitudes @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.clip_floor))


def log_linear_spectrogram(w: Union[Waveform, np.ndarray], cfg: DspConfig) -> np.ndarray:
    """Espectrograma lineal comprimido: log(max(|STFT|, clip_floor)), tramas × bins."""
    return np.log(np.maximum(stft(w, cfg), cfg.clip_floor))


def linear_from_log(log_spec: np.ndarray) -> LinearSpectrogram:
    """Inversa de la compresión logarítmica (para alimentar Griffin-Lim)."""
    return np.exp(np.asarray(log_spec, dtype=np.float64))


def spectral_convergence(magnitude: np.ndarray, target: np.ndarray, two_sided: bool = True) -> float:
    """
    Error de convergencia espectral ‖|X| − S‖_F / ‖S‖_F.

    Con two_sided=True (lo que registra Griffin-Lim) la norma se toma sobre el
    espectro completo de dos lados: los bins interiores del espectro de un lado
    representan dos bins y pesan doble; DC y Nyquist pesan uno. Es la norma en
    la que cada iteración es una proyección y el error no crece. Su valor NO
    coincide con la fórmula de Frobenius directa sobre los bins de un lado,
    que es lo que devuelve two_sided=False.
    """
    target = np.asarray(target, dtype=np.float64)
    weights = np.ones(target.shape[-1])
    if two_sided:
        weights[1:-1] = 2.0
    denom = np.sqrt(np.sum(weights * target ** 2))
    if denom == 0.0:
        return 0.0
    return float(np.sqrt(np.sum(weights * (np.abs(magnitude) - target) ** 2)) / denom)


def griffin_lim_with_history(s: LinearSpectrogram, cfg: DspConfig, iters: int,
                             seed: int = config.GRIFFIN_LIM_SEED,
                             length: Optional[int] = None) -> GriffinLimResult:
    """
    Griffin-Lim registrando el error de convergencia espectral.

    errors[k] es el error de la estimación tras k iteraciones (errors[0] es la
    ISTFT con fase aleatoria). La secuencia es no creciente.
    """
    s = np.asarray(s, dtype=np.float64)
    if iters < 0:
        raise ValidationError(f"iters debe ser >= 0: {iters}")
    if s.ndim != 2 or s.shape[1] != cfg.fft_bins:
        raise ShapeError(f"geometry mismatch: espectrograma {s.shape}, se esperaban {cfg.fft_bins} bins")
    if np.any(s < 0):
        raise ValidationError("el espectrograma lineal debe ser no negativo")
    if length is None:
        length = max(s.shape[0] * cfg.hop_length, cfg.frame_length if s.shape[0] else 0)
    if not np.any(s):
        return GriffinLimResult(Waveform(np.zeros(length), cfg.sample_rate_hz), [0.0] * (iters + 1))

    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(s.shape))
    x = istft(s * phase, cfg, length)

    errors = []
    for k in range(iters + 1):
        spec = stft_complex(x, cfg)
        magnitude = np.abs(spec)
        errors.append(spectral_convergence(magnitude, s))
        if k == iters:
            break
        unit = np.ones_like(spec)
        nonzero = magnitude > 0
        unit[nonzero] = spec[nonzero] / magnitude[nonzero]
        x = istft(s * unit, cfg, length)

    logger.debug(f"Griffin-Lim: {iters} iteraciones, error {errors[0]:.4f} → {errors[-1]:.4f}")
    return GriffinLimResult(x, errors)


def griffin_lim(s: LinearSpectrogram, cfg: DspConfig, iters: int,
                seed: int = config.GRIFFIN_LIM_SEED, length: Optional[int] = None) -> Waveform:
    """Reconstruye una forma de onda cuya magnitud STFT aproxima s."""
    return griffin_lim_with_history(s, cfg, iters, seed=seed, length=length).waveform


def scale_targets(w: Union[Waveform, np.ndarray], factor: float = config.TARGET_SCALE) -> np.ndarray:
    """Multiplica las muestras por factor (rango [-127.5, 127.5) con el default)."""
    if factor <= 0:
        raise ValidationError(f"factor debe ser > 0: {factor}")
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    return samples * factor


def align_samples(samples: np.ndarray, n_frames: int, cfg: DspConfig) -> np.ndarray:
    """Recorta o rellena con ceros hasta n_frames × hop muestras."""
    target = n_frames * cfg.hop_length
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] >= target:
        return samples[:target]
    return np.pad(samples, (0, target - samples.shape[0]))


# =============================================================================
# WAV PCM 16-bit mono
# =============================================================================

def read_wav(path: str, expected_rate: int) -> Waveform:
    """
    Lee un WAV RIFF PCM 16-bit mono sin remuestrear.

    Raises:
        FileNotFoundError: si el fichero no existe
        ValidationError: formato no soportado o frecuencia distinta de expected_rate
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, OSError) as e:
        raise ValidationError(f"unreadable wav {path}: {e}") from e

    if data.dtype != np.int16:
        raise ValidationError(f"unreadable wav {path}: se requiere PCM 16-bit, encontrado {data.dtype}")
    if data.ndim != 1:
        raise ValidationError(f"unreadable wav {path}: se requiere audio mono, encontrado {data.shape[1]} canales")
    if rate != expected_rate:
        raise ValidationError(f"sample rate mismatch: {path} está a {rate} Hz, se esperaba {expected_rate} Hz")
    return Waveform(data.astype(np.float64) / 32768.0, rate)


def write_wav(path: str, w: Waveform) -> str:
    """Escribe un WAV PCM 16-bit little-endian mono (recorta a [-1, 1))."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, w.sample_rate_hz, pcm)
    return path
