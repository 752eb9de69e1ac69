"""
Red de predicción de espectrogramas: texto → tramas mel (o lineales) y
probabilidades de parada.

Estructura:
    - Encoder: embedding → convoluciones (BN, ReLU, dropout) → BiLSTM
    - Atención sensible a la localización sobre la alineación acumulada
    - Decoder autorregresivo: pre-net → 2 LSTM con zoneout → proyecciones
    - Post-net convolucional que predice un residuo
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

import config
from autodiff import (LstmWeights, Tensor, add, batchnorm1d, bce_with_logits, concat, constant, conv1d,
                      dropout, embedding, linear, lstm_cell, matmul, mse, relu, slice_rows, softmax, tanh,
                      transpose, PADDING_SAME)
from errors import ConfigError, NonFiniteError, ShapeError, ValidationError
from params import INIT_ONES, INIT_ZEROS, ParamStore
from text import CharSequence, VOCAB_SIZE

logger = logging.getLogger(__name__)

QUERY_LAST = "last"
QUERY_FIRST = "first"


@dataclass
class PredictorConfig:
    """Anchos y profundidades del predictor; los defaults son los del tamaño 'full'."""
    vocab_size: int = VOCAB_SIZE
    embedding_dim: int = config.PREDICTOR_FULL["embedding_dim"]
    encoder_conv_layers: int = config.PREDICTOR_FULL["encoder_conv_layers"]
    encoder_conv_filters: int = config.PREDICTOR_FULL["encoder_conv_filters"]
    encoder_conv_width: int = config.PREDICTOR_FULL["encoder_conv_width"]
    encoder_lstm_units: int = config.PREDICTOR_FULL["encoder_lstm_units"]
    attention_dim: int = config.PREDICTOR_FULL["attention_dim"]
    location_filters: int = config.PREDICTOR_FULL["location_filters"]
    location_kernel: int = config.PREDICTOR_FULL["location_kernel"]
    prenet_units: int = config.PREDICTOR_FULL["prenet_units"]
    prenet_layers: int = config.PREDICTOR_FULL["prenet_layers"]
    decoder_lstm_units: int = config.PREDICTOR_FULL["decoder_lstm_units"]
    decoder_lstm_layers: int = config.PREDICTOR_FULL["decoder_lstm_layers"]
    output_dim: int = config.DSP_DEFAULTS["mel_channels"]
    postnet_layers: int = config.PREDICTOR_FULL["postnet_layers"]
    postnet_filters: int = config.PREDICTOR_FULL["postnet_filters"]
    postnet_width: int = config.PREDICTOR_FULL["postnet_width"]
    dropout_p: float = 0.5
    zoneout_p: float = 0.1
    stop_threshold: float = 0.5
    max_decoder_steps: int = config.PREDICTOR_FULL["max_decoder_steps"]
    postnet_enabled: bool = True
    attention_query: str = QUERY_LAST
    batchnorm_momentum: float = config.BATCHNORM_MOMENTUM

    def __post_init__(self):
        errors = []
        for name in ("vocab_size", "embedding_dim", "encoder_conv_layers", "encoder_conv_filters",
                     "encoder_conv_width", "encoder_lstm_units", "attention_dim", "location_filters",
                     "location_kernel", "prenet_units", "prenet_layers", "decoder_lstm_units",
                     "decoder_lstm_layers", "output_dim", "postnet_layers", "postnet_filters",
                     "postnet_width", "max_decoder_steps"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} debe ser positivo: {getattr(self, name)}")
        if self.encoder_lstm_units % 2:
            errors.append(f"encoder_lstm_units debe ser par (mitad por dirección): {self.encoder_lstm_units}")
        if not 0.0 < self.stop_threshold < 1.0:
            errors.append(f"stop_threshold debe estar en (0, 1): {self.stop_threshold}")
        if not 0.0 <= self.dropout_p < 1.0:
            errors.append(f"dropout_p debe estar en [0, 1): {self.dropout_p}")
        if not 0.0 <= self.zoneout_p <= 1.0:
            errors.append(f"zoneout_p debe estar en [0, 1]: {self.zoneout_p}")
        if self.attention_query not in (QUERY_LAST, QUERY_FIRST):
            errors.append(f"attention_query debe ser '{QUERY_LAST}' o '{QUERY_FIRST}': {self.attention_query}")
        if errors:
            raise ConfigError("PredictorConfig inválida: " + "; ".join(errors))

    @classmethod
    def full(cls, **overrides) -> "PredictorConfig":
        return cls(**{**config.PREDICTOR_FULL, **overrides})

    @classmethod
    def desk(cls, **overrides) -> "PredictorConfig":
        return cls(**{**config.PREDICTOR_DESK, **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "PredictorConfig":
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttentionState:
    """Alineación actual y acumulada (filas (1, T_enc)) y vector de contexto (1, E)."""
    alignment: Tensor
    cumulative_alignment: Tensor
    context: Tensor

    @classmethod
    def initial(cls, encoder_steps: int, context_dim: int, dtype=np.float32) -> "AttentionState":
        return cls(alignment=constant(np.zeros((1, encoder_steps)), dtype),
                   cumulative_alignment=constant(np.zeros((1, encoder_steps)), dtype),
                   context=constant(np.zeros((1, context_dim)), dtype))


@dataclass
class DecoderState:
    """Estados (h, c) de las LSTM del decoder y estado de atención."""
    hidden: List[Tensor]
    cells: List[Tensor]
    attention: AttentionState


@dataclass
class DecoderOutput:
    """Salida completa del decoder para una utterance."""
    before_postnet: Tensor                 # (F, output_dim)
    after_postnet: Tensor                  # (F, output_dim)
    stop_logits: Tensor                    # (F, 1)
    alignments: np.ndarray                 # (F, T_enc)
    truncated: bool = False
    cumulative_alignment: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def frames(self) -> int:
        return self.before_postnet.shape[0]

    @property
    def stop_probs(self) -> np.ndarray:
        return expit(self.stop_logits.data[:, 0])


def stop_targets(frames: int, dtype=np.float32) -> np.ndarray:
    """Objetivo de parada: 1 en la última trama, 0 en el resto. Forma (F, 1)."""
    target = np.zeros((frames, 1), dtype=dtype)
    target[-1, 0] = 1.0
    return target


def _check_finite(tensor: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(tensor.data)):
        raise NonFiniteError(f"non-finite activation in layer '{layer}'")
    return tensor


class SpectrogramPredictor:
    """Predictor secuencia a secuencia con atención sensible a la localización."""

    def __init__(self, cfg: PredictorConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.store = ParamStore(seed=seed, dtype=dtype)
        self._build()
        logger.debug(f"SpectrogramPredictor: {self.store.count():,} parámetros")

    # -------------------------------------------------------------------------
    # Parámetros
    # -------------------------------------------------------------------------

    def _add_batchnorm(self, prefix: str, channels: int):
        self.store.add(f"{prefix}.bn.gamma", (channels,), init=INIT_ONES, decay=False)
        self.store.add(f"{prefix}.bn.beta", (channels,), init=INIT_ZEROS, decay=False)
        self.store.add_buffer(f"{prefix}.bn.mean", np.zeros(channels))
        self.store.add_buffer(f"{prefix}.bn.var", np.ones(channels))

    def _add_lstm(self, prefix: str, inputs: int, units: int):
        self.store.add(f"{prefix}.kernel", (inputs + units, 4 * units))
        bias = self.store.add(f"{prefix}.bias", (4 * units,), init=INIT_ZEROS, decay=False)
        # Sesgo de la puerta de olvido a 1
        bias.data[units:2 * units] = 1.0

    def _build(self):
        cfg, p = self.cfg, self.store
        p.add("embedding", (cfg.vocab_size, cfg.embedding_dim), decay=False)

        channels = cfg.embedding_dim
        for i in range(cfg.encoder_conv_layers):
            p.add(f"encoder.conv{i}.weight", (cfg.encoder_conv_width, channels, cfg.encoder_conv_filters))
            self._add_batchnorm(f"encoder.conv{i}", cfg.encoder_conv_filters)
            channels = cfg.encoder_conv_filters
        half = cfg.encoder_lstm_units // 2
        self._add_lstm("encoder.lstm.fw", channels, half)
        self._add_lstm("encoder.lstm.bw", channels, half)

        memory_dim = cfg.encoder_lstm_units
        p.add("attention.query.weight", (cfg.decoder_lstm_units, cfg.attention_dim))
        p.add("attention.memory.weight", (memory_dim, cfg.attention_dim))
        p.add("attention.location.conv", (cfg.location_kernel, 1, cfg.location_filters))
        p.add("attention.location.dense", (cfg.location_filters, cfg.attention_dim))
        p.add("attention.v", (cfg.attention_dim, 1))
        p.add("attention.bias", (cfg.attention_dim,), init=INIT_ZEROS, decay=False)

        units = cfg.output_dim
        for i in range(cfg.prenet_layers):
            p.add(f"prenet{i}.weight", (units, cfg.prenet_units))
            p.add(f"prenet{i}.bias", (cfg.prenet_units,), init=INIT_ZEROS, decay=False)
            units = cfg.prenet_units

        inputs = cfg.prenet_units + memory_dim
        for i in range(cfg.decoder_lstm_layers):
            self._add_lstm(f"decoder.lstm{i}", inputs, cfg.decoder_lstm_units)
            inputs = cfg.decoder_lstm_units

        projection_in = cfg.decoder_lstm_units + memory_dim
        p.add("frame.weight", (projection_in, cfg.output_dim))
        p.add("frame.bias", (cfg.output_dim,), init=INIT_ZEROS, decay=False)
        p.add("stop.weight", (projection_in, 1))
        p.add("stop.bias", (1,), init=INIT_ZEROS, decay=False)

        if cfg.postnet_enabled:
            channels = cfg.output_dim
            for i in range(cfg.postnet_layers):
                out = cfg.output_dim if i == cfg.postnet_layers - 1 else cfg.postnet_filters
                p.add(f"postnet{i}.weight", (cfg.postnet_width, channels, out))
                self._add_batchnorm(f"postnet{i}", out)
                channels = out

    def _lstm(self, prefix: str) -> LstmWeights:
        return LstmWeights(kernel=self.store[f"{prefix}.kernel"], bias=self.store[f"{prefix}.bias"])

    def _batchnorm(self, x: Tensor, prefix: str, training: bool) -> Tensor:
        p = self.store
        return batchnorm1d(x, p[f"{prefix}.bn.gamma"], p[f"{prefix}.bn.beta"],
                           p.buffers[f"{prefix}.bn.mean"], p.buffers[f"{prefix}.bn.var"],
                           training, momentum=self.cfg.batchnorm_momentum)

    def _zeros(self, *shape) -> Tensor:
        return constant(np.zeros(shape), self.store.dtype)

    # -------------------------------------------------------------------------
    # Encoder y atención
    # -------------------------------------------------------------------------

    def encode(self, chars: CharSequence, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        """
        Features del encoder: una fila por carácter, (T, encoder_lstm_units).
        """
        ids = np.asarray(chars.ids)
        if ids.size == 0:
            raise ValidationError("encode: secuencia de caracteres vacía")
        cfg, p = self.cfg, self.store
        x = embedding(ids, p["embedding"])
        for i in range(cfg.encoder_conv_layers):
            x = conv1d(x, p[f"encoder.conv{i}.weight"], padding=PADDING_SAME)
            x = relu(self._batchnorm(x, f"encoder.conv{i}", training))
            x = dropout(x, cfg.dropout_p, rng, training)
        _check_finite(x, "encoder.conv")

        steps = x.shape[0]
        half = cfg.encoder_lstm_units // 2
        rows = [slice_rows(x, t, t + 1) for t in range(steps)]
        outputs = {}
        for direction, order in (("fw", range(steps)), ("bw", range(steps - 1, -1, -1))):
            weights = self._lstm(f"encoder.lstm.{direction}")
            h, c = self._zeros(1, half), self._zeros(1, half)
            states = [None] * steps
            for t in order:
                h, c = lstm_cell(rows[t], h, c, weights, cfg.zoneout_p, training, rng)
                states[t] = h
            outputs[direction] = concat(states, axis=0)
        memory = concat([outputs["fw"], outputs["bw"]], axis=1)
        return _check_finite(memory, "encoder.lstm")

    def process_memory(self, memory: Tensor) -> Tensor:
        """Proyección de la memoria a la dimensión de atención (se calcula una vez)."""
        return linear(memory, self.store["attention.memory.weight"])

    def attend(self, query: Tensor, memory: Tensor, state: AttentionState,
               processed_memory: Optional[Tensor] = None) -> Tuple[Tensor, AttentionState]:
        """
        Atención sensible a la localización.

        e_j = vᵀ·tanh(W·query + V·memory_j + U·f_j + b), con f la convolución
        de la alineación acumulada.

        Returns:
            Tupla (contexto (1, E), nuevo AttentionState)
        """
        cfg, p = self.cfg, self.store
        steps = memory.shape[0]
        if steps == 0:
            raise ShapeError("attend: memoria vacía")
        if state.cumulative_alignment.shape != (1, steps):
            raise ShapeError(f"attend: alineación acumulada {state.cumulative_alignment.shape} "
                             f"y memoria de {steps} pasos")
        if query.shape != (1, cfg.decoder_lstm_units):
            raise ShapeError(f"attend: query {query.shape}, se esperaba (1, {cfg.decoder_lstm_units})")
        if processed_memory is None:
            processed_memory = self.process_memory(memory)

        location = conv1d(transpose(state.cumulative_alignment), p["attention.location.conv"], padding=PADDING_SAME)
        location = linear(location, p["attention.location.dense"])
        query_proj = linear(query, p["attention.query.weight"])
        hidden = add(add(add(processed_memory, query_proj), location), p["attention.bias"])
        energies = transpose(linear(tanh(hidden), p["attention.v"]))
        alignment = softmax(energies, axis=1)
        context = matmul(alignment, memory)
        cumulative = add(state.cumulative_alignment, alignment)
        return context, AttentionState(alignment=alignment, cumulative_alignment=cumulative, context=context)

    # -------------------------------------------------------------------------
    # Decoder
    # -------------------------------------------------------------------------

    def initial_state(self, memory: Tensor) -> DecoderState:
        cfg = self.cfg
        hidden = [self._zeros(1, cfg.decoder_lstm_units) for _ in range(cfg.decoder_lstm_layers)]
        cells = [self._zeros(1, cfg.decoder_lstm_units) for _ in range(cfg.decoder_lstm_layers)]
        attention = AttentionState.initial(memory.shape[0], memory.shape[1], self.store.dtype)
        return DecoderState(hidden=hidden, cells=cells, attention=attention)

    def go_frame(self) -> Tensor:
        return self._zeros(1, self.cfg.output_dim)

    def decode_step(self, prev_frame: Tensor, state: DecoderState, memory: Tensor, processed_memory: Tensor,
                    training: bool, rng: np.random.Generator) -> Tuple[Tensor, Tensor, DecoderState]:
        """
        Un paso del decoder: una trama nueva.

        El dropout de la pre-net está activo también en inferencia.

        Returns:
            Tupla (trama (1, output_dim), logit de parada (1, 1), nuevo estado)
        """
        cfg, p = self.cfg, self.store
        if prev_frame.shape != (1, cfg.output_dim):
            raise ShapeError(f"decode_step: trama previa {prev_frame.shape}, se esperaba (1, {cfg.output_dim})")

        x = prev_frame
        for i in range(cfg.prenet_layers):
            x = relu(linear(x, p[f"prenet{i}.weight"], p[f"prenet{i}.bias"]))
            x = dropout(x, cfg.dropout_p, rng, training=True)
        _check_finite(x, "prenet")

        inputs = concat([x, state.attention.context], axis=1)
        hidden, cells = [], []
        for i in range(cfg.decoder_lstm_layers):
            h, c = lstm_cell(inputs, state.hidden[i], state.cells[i], self._lstm(f"decoder.lstm{i}"),
                             cfg.zoneout_p, training, rng)
            _check_finite(h, f"decoder.lstm{i}")
            hidden.append(h)
            cells.append(c)
            inputs = h

        query = hidden[-1] if cfg.attention_query == QUERY_LAST else hidden[0]
        context, attention = self.attend(query, memory, state.attention, processed_memory)
        _check_finite(context, "attention")

        projected = concat([hidden[-1], context], axis=1)
        frame = _check_finite(linear(projected, p["frame.weight"], p["frame.bias"]), "frame")
        stop_logit = _check_finite(linear(projected, p["stop.weight"], p["stop.bias"]), "stop")
        return frame, stop_logit, DecoderState(hidden=hidden, cells=cells, attention=attention)

    def postnet(self, frames: Tensor, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Residuo de la post-net sobre la secuencia completa (F, output_dim)."""
        cfg, p = self.cfg, self.store
        y = frames
        for i in range(cfg.postnet_layers):
            y = self._batchnorm(conv1d(y, p[f"postnet{i}.weight"], padding=PADDING_SAME), f"postnet{i}", training)
            if i < cfg.postnet_layers - 1:
                y = tanh(y)
            y = dropout(y, cfg.dropout_p, rng, training)
        return _check_finite(y, "postnet")

    def _finish(self, frames: List[Tensor], stops: List[Tensor], alignments: List[np.ndarray],
                state: DecoderState, training: bool, rng, truncated: bool = False) -> DecoderOutput:
        before = concat(frames, axis=0)
        stop_logits = concat(stops, axis=0)
        if self.cfg.postnet_enabled:
            after = add(before, self.postnet(before, training, rng))
        else:
            after = before
        return DecoderOutput(before_postnet=before, after_postnet=after, stop_logits=stop_logits,
                             alignments=np.stack(alignments), truncated=truncated,
                             cumulative_alignment=state.attention.cumulative_alignment.data[0].copy())

    def forward_teacher_forced(self, chars: CharSequence, target: np.ndarray, training: bool = False,
                               rng: Optional[np.random.Generator] = None, seed: int = 0) -> DecoderOutput:
        """
        La trama t se condiciona en la trama real t − 1 (la −1 es la go-frame de ceros).

        Args:
            chars: Texto codificado
            target: Espectrograma objetivo (F, output_dim)
            training: Activa dropout de encoder/post-net, zoneout y BN por lote
            rng: Generador para dropout/zoneout (por defecto, uno sembrado con seed)
        """
        target = np.asarray(target)
        if target.ndim != 2 or target.shape[0] == 0 or target.shape[1] != self.cfg.output_dim:
            raise ShapeError(f"forward_teacher_forced: objetivo {target.shape}, se esperaba (F>0, {self.cfg.output_dim})")
        rng = rng if rng is not None else np.random.default_rng(seed)
        memory = self.encode(chars, training, rng)
        processed = self.process_memory(memory)
        state = self.initial_state(memory)

        prev = self.go_frame()
        frames, stops, alignments = [], [], []
        for t in range(target.shape[0]):
            frame, stop_logit, state = self.decode_step(prev, state, memory, processed, training, rng)
            frames.append(frame)
            stops.append(stop_logit)
            alignments.append(state.attention.alignment.data[0].copy())
            prev = constant(target[t:t + 1], self.store.dtype)
        return self._finish(frames, stops, alignments, state, training, rng)

    def infer(self, chars: CharSequence, seed: int = 0, max_decoder_steps: Optional[int] = None) -> DecoderOutput:
        """
        Generación libre: realimenta la trama previa a la post-net y se detiene en
        la primera trama con probabilidad de parada > umbral (incluida).

        Si se alcanza max_decoder_steps se marca truncated en la salida.
        """
        limit = max_decoder_steps or self.cfg.max_decoder_steps
        rng = np.random.default_rng(seed)
        memory = self.encode(chars, training=False, rng=rng)
        processed = self.process_memory(memory)
        state = self.initial_state(memory)

        prev = self.go_frame()
        frames, stops, alignments = [], [], []
        stopped = False
        for _ in range(limit):
            frame, stop_logit, state = self.decode_step(prev, state, memory, processed, False, rng)
            frames.append(frame)
            stops.append(stop_logit)
            alignments.append(state.attention.alignment.data[0].copy())
            if float(expit(stop_logit.data.reshape(-1)[0])) > self.cfg.stop_threshold:
                stopped = True
                break
            prev = frame
        if not stopped:
            logger.warning(f"Inferencia truncada en {limit} tramas sin token de parada")
        return self._finish(frames, stops, alignments, state, False, rng, truncated=not stopped)

    def loss(self, out: DecoderOutput, target: np.ndarray,
             stop_target: Optional[np.ndarray] = None) -> Tuple[Tensor, dict]:
        """
        MSE(antes) + MSE(después) + BCE(parada), cada término una media.

        Returns:
            Tupla (pérdida total escalar, dict con cada componente)
        """
        target = np.asarray(target)
        if target.shape != out.before_postnet.shape:
            raise ShapeError(f"loss: salida {out.before_postnet.shape} y objetivo {target.shape}")
        if stop_target is None:
            stop_target = stop_targets(target.shape[0], out.stop_logits.dtype)
        stop_target = np.asarray(stop_target).reshape(-1, 1)
        before = mse(out.before_postnet, target)
        after = mse(out.after_postnet, target)
        stop = bce_with_logits(out.stop_logits, stop_target)
        total = add(add(before, after), stop)
        components = {"mel_before": before.item(), "mel_after": after.item(), "stop_bce": stop.item()}
        return total, components
