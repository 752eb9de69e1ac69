"""
Mezcla discretizada de distribuciones logísticas (MoL) para muestras de 16 bits.

Las muestras viven en el dominio escalado [−scale, scale] (scale = 127.5). El
rango se parte en num_bins cubetas de semiancho h = scale / (num_bins − 1),
centradas en −scale + 2·h·i; las cubetas extremas tienen colas abiertas.

La salida del vocoder por muestra son 3K columnas:
    [logits de peso (K) | medias (K) | log-escalas (K)]
"""
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

import config
from autodiff import Tensor, custom_op
from errors import NonFiniteError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

BINS_16BIT = 65536


@dataclass
class MoLParams:
    """Parámetros por muestra de la mezcla: arrays (T, K)."""
    weight_logits: np.ndarray
    means: np.ndarray
    log_scales: np.ndarray

    @classmethod
    def from_array(cls, raw: np.ndarray, components: int,
                   log_scale_floor: float = config.LOG_SCALE_FLOOR) -> "MoLParams":
        """Parte una salida (T, 3K) y aplica el suelo de log-escala."""
        raw = np.atleast_2d(np.asarray(raw))
        if raw.shape[1] != 3 * components:
            raise ShapeError(f"MoL: se esperaban {3 * components} columnas, recibido {raw.shape}")
        k = components
        return cls(weight_logits=raw[:, :k], means=raw[:, k:2 * k],
                   log_scales=np.maximum(raw[:, 2 * k:], log_scale_floor))

    @property
    def components(self) -> int:
        return self.means.shape[1]

    def weights(self) -> np.ndarray:
        return softmax(self.weight_logits, axis=1)

    def mean(self) -> np.ndarray:
        """Media analítica de la mezcla por muestra: Σ w_k μ_k."""
        return np.sum(self.weights() * self.means, axis=1)


def half_width(scale: float, num_bins: int = BINS_16BIT) -> float:
    """Semiancho de cubeta: centros en −scale + 2h·i, extremos exactamente en ±scale."""
    return scale / (num_bins - 1)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _component_terms(params: MoLParams, targets: np.ndarray, scale: float, num_bins: int):
    """
    Log-probabilidad de cada componente y derivadas respecto a (b, a).

    b = (y − μ + h)/s y a = (y − μ − h)/s son los extremos estandarizados de
    la cubeta.
    """
    h = half_width(scale, num_bins)
    y = targets[:, None]
    centered = y - params.means
    inv_s = np.exp(-params.log_scales)
    b = (centered + h) * inv_s
    a = (centered - h) * inv_s

    lower = np.broadcast_to(y < -scale + h, b.shape)
    upper = np.broadcast_to(y > scale - h, b.shape)
    interior = ~(lower | upper)

    log_prob = np.empty_like(b)
    d_b = np.zeros_like(b)
    d_a = np.zeros_like(b)

    # Cola inferior: log σ(b)
    log_prob[lower] = -_softplus(-b[lower])
    d_b[lower] = expit(-b[lower])
    # Cola superior: log(1 − σ(a))
    log_prob[upper] = -_softplus(a[upper])
    d_a[upper] = -expit(a[upper])
    # Interior: log(σ(b) − σ(a)) = b + log(1 − e^{a−b}) − softplus(a) − softplus(b)
    bi, ai = b[interior], a[interior]
    gap = np.expm1(ai - bi)
    log_prob[interior] = bi + np.log(-gap) - _softplus(ai) - _softplus(bi)
    r = -1.0 / gap
    d_b[interior] = r - expit(bi)
    d_a[interior] = 1.0 - r - expit(ai)
    return log_prob, d_b, d_a, b, a, inv_s


def mol_log_likelihood(raw: np.ndarray, targets: np.ndarray, components: int,
                       scale: float = config.TARGET_SCALE, num_bins: int = BINS_16BIT,
                       log_scale_floor: float = config.LOG_SCALE_FLOOR) -> np.ndarray:
    """
    Log-verosimilitud por muestra de la cubeta que contiene cada objetivo.

    Args:
        raw: Salida (T, 3K) del vocoder
        targets: Objetivos escalados (T,)
        components: Número de componentes K
        scale: Semiamplitud del dominio escalado
        num_bins: Número de cubetas (65536 a 16 bits; menos para pruebas)

    Returns:
        Array (T,) de log P(cubeta | parámetros)
    """
    params = MoLParams.from_array(raw, components, log_scale_floor)
    targets = np.asarray(targets, dtype=params.means.dtype).reshape(-1)
    log_prob, *_ = _component_terms(params, targets, scale, num_bins)
    return logsumexp(log_softmax(params.weight_logits, axis=1) + log_prob, axis=1)


def mol_nll(output: Tensor, targets: np.ndarray, components: int,
            scale: float = config.TARGET_SCALE, num_bins: int = BINS_16BIT,
            log_scale_floor: float = config.LOG_SCALE_FLOOR) -> Tensor:
    """
    NLL media por muestra de la mezcla discretizada (operación diferenciable).

    Args:
        output: Tensor (T, 3K) con logits, medias y log-escalas
        targets: Objetivos escalados (T,) dentro de [−scale, scale]

    Raises:
        ValidationError: Objetivo fuera de rango
        NonFiniteError: Parámetros o resultado no finitos
    """
    raw = output.data
    steps = raw.shape[0] if raw.ndim == 2 else 0
    targets = np.asarray(targets, dtype=raw.dtype).reshape(-1)
    if raw.ndim != 2 or raw.shape[1] != 3 * components or targets.shape[0] != steps:
        raise ShapeError(f"mol_nll: formas incompatibles {raw.shape} y {targets.shape} (K={components})")
    if not np.all(np.isfinite(raw)):
        raise NonFiniteError("mol_nll: parámetros de la mezcla no finitos")
    if np.any(np.abs(targets) > scale):
        raise ValidationError(f"mol_nll: objetivo fuera de [−{scale}, {scale}]")

    params = MoLParams.from_array(raw, components, log_scale_floor)
    log_prob, d_b, d_a, b, a, inv_s = _component_terms(params, targets, scale, num_bins)
    log_weights = log_softmax(params.weight_logits, axis=1)
    joint = log_weights + log_prob
    log_likelihood = logsumexp(joint, axis=1)
    nll = -float(np.mean(log_likelihood))
    if not np.isfinite(nll):
        raise NonFiniteError("mol_nll: verosimilitud no finita")

    posterior = np.exp(joint - log_likelihood[:, None])
    weights = np.exp(log_weights)
    floor_active = raw[:, 2 * components:] < log_scale_floor

    def bw(g):
        # d(−mean LL): cada muestra pesa −g/T
        coef = -g / steps
        d_logits = coef * (posterior - weights)
        d_means = coef * posterior * (-(d_b + d_a) * inv_s)
        d_log_scales = coef * posterior * (-(d_b * b + d_a * a))
        d_log_scales[floor_active] = 0.0
        grad = np.concatenate([d_logits, d_means, d_log_scales], axis=1).astype(raw.dtype)
        return (grad,)

    return custom_op(np.asarray(nll, dtype=raw.dtype).reshape(()), (output,), bw)


def mol_sample(raw: np.ndarray, rng: np.random.Generator, components: int,
               scale: float = config.TARGET_SCALE,
               log_scale_floor: float = config.LOG_SCALE_FLOOR) -> Union[float, np.ndarray]:
    """
    Muestrea de la mezcla: componente según softmax de los pesos y luego
    x = μ + s·(log u − log(1 − u)), recortado a [−scale, scale].

    Args:
        raw: Parámetros (3K,) de una muestra o (T, 3K)

    Returns:
        Valor escalado (float) o array (T,)
    """
    single = np.asarray(raw).ndim == 1
    params = MoLParams.from_array(raw, components, log_scale_floor)
    steps = params.means.shape[0]
    cumulative = np.cumsum(params.weights(), axis=1)
    picks = rng.random(steps) * cumulative[:, -1]
    chosen = np.minimum((cumulative < picks[:, None]).sum(axis=1), components - 1)
    rows = np.arange(steps)
    u = rng.uniform(1e-5, 1.0 - 1e-5, size=steps)
    mu = params.means[rows, chosen]
    s = np.exp(params.log_scales[rows, chosen])
    values = np.clip(mu + s * (np.log(u) - np.log1p(-u)), -scale, scale)
    return float(values[0]) if single else values


def sample_points(scale: float, num_bins: int) -> np.ndarray:
    """Centros de todas las cubetas de la partición."""
    return -scale + 2.0 * half_width(scale, num_bins) * np.arange(num_bins)


def quantization_floor_nll(scale: float = config.TARGET_SCALE, num_bins: int = BINS_16BIT,
                           log_scale_floor: float = config.LOG_SCALE_FLOOR) -> float:
    """
    NLL mínima alcanzable para una cubeta interior: una sola logística
    centrada en el objetivo con la escala mínima permitida.
    """
    h = half_width(scale, num_bins)
    ratio = h / np.exp(log_scale_floor)
    return -float(np.log(2.0 * expit(ratio) - 1.0))

