"""
Vocoder WaveNet con convoluciones causales dilatadas, unidades con compuerta,
upsampler de condicionamiento de 2 capas y cabeza de mezcla de logísticas.

Modos:
    - Paralelo (entrenamiento): forward() sobre una secuencia completa
    - Secuencial (generación): step() muestra a muestra con buffers circulares
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

import config
from audio_dsp import Waveform
from autodiff import (Tensor, add, constant, conv1d, conv_transpose1d, leaky_relu, linear,
                      mul, relu, sigmoid, slice_cols, tanh, PADDING_CAUSAL)
from errors import ConfigError, ShapeError
from mixture import mol_nll, mol_sample
from params import INIT_ZEROS, ParamStore

logger = logging.getLogger(__name__)

KERNEL_SIZE = 3


def dilation_of(k: int, cycle_size: int) -> int:
    """Dilatación de la capa k: 2^(k mod cycle_size)."""
    return 2 ** (k % cycle_size)


def receptive_field(layers: int, cycle_size: int, kernel_size: int = KERNEL_SIZE,
                    sample_rate: int = config.DSP_DEFAULTS["sample_rate_hz"]) -> Tuple[int, float]:
    """
    Campo receptivo de la pila: 1 + (kernel − 1)·Σ dilataciones.

    Returns:
        Tupla (muestras, milisegundos)
    """
    samples = 1 + (kernel_size - 1) * sum(dilation_of(k, cycle_size) for k in range(layers))
    return samples, samples / sample_rate * 1000.0


@dataclass
class VocoderConfig:
    """Geometría del vocoder; los anchos por defecto son los del tamaño 'full'."""
    total_layers: int = config.VOCODER_FULL["total_layers"]
    dilation_cycle_size: int = config.VOCODER_FULL["dilation_cycle_size"]
    kernel_size: int = KERNEL_SIZE
    residual_channels: int = config.VOCODER_FULL["residual_channels"]
    skip_channels: int = config.VOCODER_FULL["skip_channels"]
    conditioning_channels: int = config.DSP_DEFAULTS["mel_channels"]
    upsample_factors: Tuple[int, int] = (15, 20)
    hop_length: int = 300
    mol_components: int = 10
    sample_rate: int = config.DSP_DEFAULTS["sample_rate_hz"]
    target_scale: float = config.TARGET_SCALE
    log_scale_floor: float = config.LOG_SCALE_FLOOR
    upsample_slope: float = 0.4

    def __post_init__(self):
        self.upsample_factors = tuple(int(f) for f in self.upsample_factors)
        errors = []
        for name in ("total_layers", "dilation_cycle_size", "residual_channels", "skip_channels",
                     "conditioning_channels", "hop_length", "mol_components", "sample_rate"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} debe ser positivo: {getattr(self, name)}")
        if self.kernel_size != KERNEL_SIZE:
            errors.append(f"kernel_size debe ser {KERNEL_SIZE}: {self.kernel_size}")
        if len(self.upsample_factors) != 2 or min(self.upsample_factors) <= 0:
            errors.append(f"upsample_factors debe ser un par de enteros positivos: {self.upsample_factors}")
        elif int(np.prod(self.upsample_factors)) != self.hop_length:
            errors.append(f"el producto de upsample_factors {self.upsample_factors} debe ser el hop ({self.hop_length})")
        if self.target_scale <= 0:
            errors.append(f"target_scale debe ser > 0: {self.target_scale}")
        if errors:
            raise ConfigError("VocoderConfig inválida: " + "; ".join(errors))

    @classmethod
    def full(cls, **overrides) -> "VocoderConfig":
        return cls(**{**config.VOCODER_FULL, **overrides})

    @classmethod
    def desk(cls, **overrides) -> "VocoderConfig":
        return cls(**{**config.VOCODER_DESK, **overrides})

    @classmethod
    def from_geometry(cls, name: str, **overrides) -> "VocoderConfig":
        """Config desk con la geometría de capas/ciclos de una fila de la tabla de campo receptivo."""
        if name not in config.REFERENCE_GEOMETRIES:
            raise ConfigError(f"geometría desconocida: {name} (disponibles: {', '.join(config.REFERENCE_GEOMETRIES)})")
        layers, _, cycle_size = config.REFERENCE_GEOMETRIES[name]
        return cls.desk(**{"total_layers": layers, "dilation_cycle_size": cycle_size, **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "VocoderConfig":
        return cls(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["upsample_factors"] = list(self.upsample_factors)
        return data

    @property
    def output_channels(self) -> int:
        return 3 * self.mol_components

    def dilations(self) -> List[int]:
        return [dilation_of(k, self.dilation_cycle_size) for k in range(self.total_layers)]

    def receptive_field(self) -> Tuple[int, float]:
        return receptive_field(self.total_layers, self.dilation_cycle_size, self.kernel_size, self.sample_rate)


@dataclass
class GenState:
    """
    Estado de generación incremental.

    buffers[k] guarda las últimas 2·d(k) entradas de la capa k; la entrada del
    tiempo t se escribe en la posición t mod 2·d(k).
    """
    buffers: List[np.ndarray]
    rng: Optional[np.random.Generator] = None
    t: int = 0
    previous_sample: float = 0.0
    samples: List[float] = field(default_factory=list)
    weights: Dict[str, np.ndarray] = field(default_factory=dict)


class WaveNetVocoder:
    """
    Pila WaveNet condicionada por features de trama (mel o lineal).

    Cada capa k: conv causal dilatada (kernel 3) a 2R canales + proyección
    1×1 del condicionamiento → tanh ⊙ sigmoid → salidas 1×1 de skip y
    residual. La suma de skips pasa por ReLU y una proyección a 3K canales.
    """

    def __init__(self, cfg: VocoderConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.store = ParamStore(seed=seed, dtype=dtype)
        c, r, s = cfg.conditioning_channels, cfg.residual_channels, cfg.skip_channels
        p = self.store

        for i, factor in enumerate(cfg.upsample_factors):
            p.add(f"upsample{i}.weight", (2 * factor, c, c))
            p.add(f"upsample{i}.bias", (c,), init=INIT_ZEROS, decay=False)
        p.add("input.weight", (1, r))
        p.add("input.bias", (r,), init=INIT_ZEROS, decay=False)
        for k in range(cfg.total_layers):
            p.add(f"layer{k}.conv.weight", (KERNEL_SIZE, r, 2 * r))
            p.add(f"layer{k}.conv.bias", (2 * r,), init=INIT_ZEROS, decay=False)
            p.add(f"layer{k}.cond.weight", (c, 2 * r))
            p.add(f"layer{k}.skip.weight", (r, s))
            p.add(f"layer{k}.skip.bias", (s,), init=INIT_ZEROS, decay=False)
            if k < cfg.total_layers - 1:
                p.add(f"layer{k}.res.weight", (r, r))
                p.add(f"layer{k}.res.bias", (r,), init=INIT_ZEROS, decay=False)
        p.add("output.weight", (s, cfg.output_channels))
        p.add("output.bias", (cfg.output_channels,), init=INIT_ZEROS, decay=False)
        logger.debug(f"WaveNetVocoder: {cfg.total_layers} capas, {p.count():,} parámetros")

    # -------------------------------------------------------------------------
    # Modo paralelo
    # -------------------------------------------------------------------------

    def upsample(self, features: np.ndarray) -> Tensor:
        """
        Condicionamiento por muestra a partir de features de trama (F, C).

        Dos convoluciones transpuestas con stride = factores y leaky ReLU; la
        salida se recorta a F·hop filas exactas.
        """
        features = np.asarray(features)
        if features.ndim != 2 or features.shape[1] != self.cfg.conditioning_channels:
            raise ShapeError(f"upsample: features {features.shape}, se esperaban "
                             f"{self.cfg.conditioning_channels} canales")
        x = constant(features, dtype=self.store.dtype)
        for i, factor in enumerate(self.cfg.upsample_factors):
            x = conv_transpose1d(x, self.store[f"upsample{i}.weight"], self.store[f"upsample{i}.bias"],
                                 stride=factor, out_length=x.shape[0] * factor)
            x = leaky_relu(x, self.cfg.upsample_slope)
        return x

    def forward(self, audio: np.ndarray, conditioning: Tensor, previous_sample: float = 0.0) -> Tensor:
        """
        Parámetros MoL (T, 3K) para cada muestra de audio escalado.

        La salida en t depende solo de audio[< t] (entrada desplazada una
        muestra, previous_sample ocupa la posición 0) y de conditioning[≤ t].
        """
        audio = np.asarray(audio, dtype=self.store.dtype).reshape(-1)
        if conditioning.shape[0] != audio.shape[0]:
            raise ShapeError(f"forward: audio de {audio.shape[0]} muestras y condicionamiento de "
                             f"{conditioning.shape[0]} filas")
        shifted = np.concatenate([[previous_sample], audio[:-1]]).astype(self.store.dtype)
        p = self.store
        r = self.cfg.residual_channels

        h = linear(constant(shifted.reshape(-1, 1), dtype=self.store.dtype), p["input.weight"], p["input.bias"])
        skips = None
        for k, d in enumerate(self.cfg.dilations()):
            z = conv1d(h, p[f"layer{k}.conv.weight"], p[f"layer{k}.conv.bias"], dilation=d, padding=PADDING_CAUSAL)
            z = add(z, linear(conditioning, p[f"layer{k}.cond.weight"]))
            gated = mul(tanh(slice_cols(z, 0, r)), sigmoid(slice_cols(z, r, 2 * r)))
            skip = linear(gated, p[f"layer{k}.skip.weight"], p[f"layer{k}.skip.bias"])
            skips = skip if skips is None else add(skips, skip)
            if k < self.cfg.total_layers - 1:
                h = add(h, linear(gated, p[f"layer{k}.res.weight"], p[f"layer{k}.res.bias"]))
        return linear(relu(skips), p["output.weight"], p["output.bias"])

    def loss(self, audio: np.ndarray, features: np.ndarray, previous_sample: float = 0.0) -> Tensor:
        """NLL media por muestra de audio escalado dado el bloque de features alineado."""
        conditioning = self.upsample(features)
        output = self.forward(audio, conditioning, previous_sample)
        return mol_nll(output, audio, self.cfg.mol_components, self.cfg.target_scale,
                       log_scale_floor=self.cfg.log_scale_floor)

    # -------------------------------------------------------------------------
    # Modo secuencial
    # -------------------------------------------------------------------------

    def init_state(self, seed: Optional[int] = None) -> GenState:
        r = self.cfg.residual_channels
        buffers = [np.zeros((2 * d, r), dtype=self.store.dtype) for d in self.cfg.dilations()]
        rng = np.random.default_rng(seed) if seed is not None else None
        weights = {name: t.data for name, t in self.store}
        return GenState(buffers=buffers, rng=rng, weights=weights)

    def step(self, state: GenState, conditioning_row: np.ndarray) -> np.ndarray:
        """
        Un paso incremental: parámetros MoL (3K,) para la muestra state.t.

        Usa state.previous_sample como entrada y avanza los buffers circulares.
        """
        p = state.weights
        r = self.cfg.residual_channels
        t = state.t
        cond = np.asarray(conditioning_row, dtype=self.store.dtype).reshape(1, -1)

        h = np.array([[state.previous_sample]], dtype=self.store.dtype) @ p["input.weight"] + p["input.bias"]
        skips = np.zeros((1, self.cfg.skip_channels), dtype=self.store.dtype)
        for k, d in enumerate(self.cfg.dilations()):
            buf = state.buffers[k]
            older = buf[t % (2 * d)]            # entrada en t − 2d
            recent = buf[(t - d) % (2 * d)]     # entrada en t − d
            w = p[f"layer{k}.conv.weight"]
            z = older @ w[0] + recent @ w[1] + h @ w[2] + p[f"layer{k}.conv.bias"]
            buf[t % (2 * d)] = h[0]
            z = z + cond @ p[f"layer{k}.cond.weight"]
            gated = np.tanh(z[:, :r]) * expit(z[:, r:])
            skips = skips + gated @ p[f"layer{k}.skip.weight"] + p[f"layer{k}.skip.bias"]
            if k < self.cfg.total_layers - 1:
                h = h + gated @ p[f"layer{k}.res.weight"] + p[f"layer{k}.res.bias"]
        state.t += 1
        return (np.maximum(skips, 0) @ p["output.weight"] + p["output.bias"])[0]

    def incremental_forward(self, audio: np.ndarray, conditioning: np.ndarray,
                            previous_sample: float = 0.0) -> np.ndarray:
        """Modo secuencial con las muestras reales como entrada (teacher forcing)."""
        audio = np.asarray(audio).reshape(-1)
        conditioning = np.asarray(conditioning)
        if conditioning.shape[0] != audio.shape[0]:
            raise ShapeError(f"incremental_forward: {audio.shape[0]} muestras y {conditioning.shape[0]} filas")
        state = self.init_state()
        state.previous_sample = previous_sample
        rows = []
        for t in range(audio.shape[0]):
            rows.append(self.step(state, conditioning[t]))
            state.previous_sample = float(audio[t])
        return np.stack(rows)

    def generate(self, features: np.ndarray, seed: int = 0) -> Waveform:
        """
        Genera F·hop muestras muestreando la mezcla paso a paso.

        La forma de onda final es la muestra escalada ÷ target_scale,
        recortada a [−1, 1].
        """
        conditioning = self.upsample(features).data
        state = self.init_state(seed)
        total = conditioning.shape[0]
        log_every = max(total // 10, 1)
        for t in range(total):
            raw = self.step(state, conditioning[t])
            value = mol_sample(raw, state.rng, self.cfg.mol_components, self.cfg.target_scale,
                               self.cfg.log_scale_floor)
            state.samples.append(value)
            state.previous_sample = value
            if (t + 1) % log_every == 0:
                logger.debug(f"Generación: {t + 1}/{total} muestras")
        samples = np.clip(np.asarray(state.samples, dtype=np.float64) / self.cfg.target_scale, -1.0, 1.0)
        return Waveform(samples, self.cfg.sample_rate)
