"""
Optimizador Adam, calendario de learning rate y media móvil exponencial (EMA).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from errors import ConfigError, NonFiniteError, ValidationError
from params import ParamStore

logger = logging.getLogger(__name__)


@dataclass
class LearningRateSchedule:
    """
    Learning rate constante hasta decay_start y decaimiento geométrico hasta
    lr_final en decay_end; constante en lr_final a partir de ahí.
    """
    lr_init: float = 1e-3
    lr_final: float = 1e-5
    decay_start: int = 50000
    decay_end: int = 150000

    def __post_init__(self):
        if self.lr_init <= 0 or self.lr_final <= 0:
            raise ConfigError(f"learning rate debe ser positivo (init={self.lr_init}, final={self.lr_final})")
        if self.lr_final > self.lr_init:
            raise ConfigError(f"lr_final ({self.lr_final}) no puede ser mayor que lr_init ({self.lr_init})")
        if self.decay_start < 0 or self.decay_end < self.decay_start:
            raise ConfigError(f"ventana de decaimiento inválida [{self.decay_start}, {self.decay_end}]")

    @classmethod
    def constant(cls, lr: float) -> "LearningRateSchedule":
        return cls(lr_init=lr, lr_final=lr, decay_start=0, decay_end=0)

    def __call__(self, step: int) -> float:
        if step < 0:
            raise ValidationError(f"step negativo: {step}")
        if step <= self.decay_start or self.lr_final == self.lr_init:
            return self.lr_init
        if step >= self.decay_end:
            return self.lr_final
        progress = (step - self.decay_start) / (self.decay_end - self.decay_start)
        return self.lr_init * (self.lr_final / self.lr_init) ** progress


@dataclass
class AdamState:
    """Momentos por parámetro, contador de pasos e hiperparámetros de Adam."""
    schedule: LearningRateSchedule
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-6
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, store: ParamStore, schedule: LearningRateSchedule, beta1: float = 0.9,
                   beta2: float = 0.999, epsilon: float = 1e-6) -> "AdamState":
        state = cls(schedule=schedule, beta1=beta1, beta2=beta2, epsilon=epsilon)
        for name, tensor in store:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state

    def current_lr(self) -> float:
        """Learning rate que usará el próximo paso."""
        return self.schedule(self.t)


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Reescala in-place los gradientes si su norma global supera max_norm. Devuelve la norma previa."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= factor
    return norm


def adam_step(store: ParamStore, state: AdamState, l2_weight: float = 0.0,
              clip_norm: Optional[float] = None) -> float:
    """
    Aplica un paso de Adam con corrección de sesgo sobre todos los parámetros.

    La regularización L2 suma l2_weight·param al gradiente de los parámetros
    con decay (se excluyen biases, normalización y embeddings).

    Args:
        store: Parámetros con .grad ya calculado
        state: Estado de Adam (se actualiza in-place)
        l2_weight: Peso de la regularización L2
        clip_norm: Norma global máxima (None → sin recorte)

    Returns:
        Learning rate aplicado en este paso

    Raises:
        NonFiniteError: Si algún gradiente contiene NaN/Inf
    """
    grads = {}
    for name, tensor in store:
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient in parameter '{name}'")
        grads[name] = grad.copy()

    if clip_norm is not None:
        clip_by_global_norm(grads, clip_norm)

    lr = state.schedule(state.t)
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    for name, tensor in store:
        grad = grads[name]
        if l2_weight and store.decayed(name):
            grad = grad + l2_weight * tensor.data
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        tensor.data -= update.astype(tensor.dtype)
    return lr


@dataclass
class EmaState:
    """Copia sombra de los parámetros: shadow ← decay·shadow + (1 − decay)·param."""
    decay: float
    shadow: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError(f"ema decay debe estar en [0, 1], recibido {self.decay}")

    @classmethod
    def from_store(cls, store: ParamStore, decay: float) -> "EmaState":
        return cls(decay=decay, shadow=store.values())

    def update(self, store: ParamStore):
        for name, tensor in store:
            shadow = self.shadow[name]
            if shadow.shape != tensor.shape:
                raise ValidationError(f"ema: forma de {name} cambió de {shadow.shape} a {tensor.shape}")
            self.shadow[name] = (self.decay * shadow + (1.0 - self.decay) * tensor.data).astype(shadow.dtype)

    def swap_in(self, store: ParamStore):
        """Copia la sombra sobre los parámetros vivos (para inferencia)."""
        for name, tensor in store:
            tensor.data = self.shadow[name].astype(tensor.dtype).copy()


def ema_update(state: EmaState, store: ParamStore) -> EmaState:
    state.update(store)
    return state


def ema_swap_in(state: EmaState, store: ParamStore):
    state.swap_in(store)
