"""
Diferenciación automática en modo inverso sobre tensores densos (numpy).

Cada operación diferenciable calcula su salida y, si hay una cinta (Tape)
activa y alguna entrada requiere gradiente, registra un cierre de backward.
backward() recorre la cinta en orden inverso exacto de ejecución y acumula
(+=) los gradientes en las hojas.

Convenciones de forma:
    - Secuencias en formato tiempo × canales: (T, C)
    - Vectores de estado como filas: (1, C)
    - Sin broadcasting salvo la suma de bias (vector (C,) o fila (1, C))
"""
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

_local = threading.local()

PADDING_SAME = "same"
PADDING_CAUSAL = "causal"


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional["Tape"]:
    """Cinta activa del hilo actual (None fuera de un bloque `with Tape()`)."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """
    Tensor denso con gradiente opcional.

    Un tensor sin cinta de origen es una hoja: sus gradientes se acumulan en
    .grad. Los tensores intermedios nunca guardan .grad.
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        return f"<Tensor{label} shape={self.shape} grad={self.requires_grad}>"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=like.dtype))


def constant(data, dtype=np.float32) -> Tensor:
    """Tensor sin gradiente (entradas, objetivos, máscaras)."""
    return Tensor(np.asarray(data, dtype=dtype))


@dataclass
class _Node:
    output: Tensor
    parents: Tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Registro ordenado de operaciones ejecutadas con las entradas guardadas."""
    nodes: List[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, output: Tensor, parents: Sequence[Tensor], backward_fn) -> None:
        output.requires_grad = True
        output._tape = self
        self.nodes.append(_Node(output, tuple(parents), backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Propaga d(loss)/d(hoja) y lo acumula en .grad de cada hoja."""
        if loss.size != 1:
            raise ShapeError(f"backward requiere una pérdida escalar, recibido shape {loss.shape}")
        seed = np.ones_like(loss.data)
        if loss.is_leaf:
            _accumulate(loss, seed)
            return

        pending: Dict[int, np.ndarray] = {id(loss): seed}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node.output), None)
            if grad is None:
                continue
            parent_grads = node.backward(grad)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    _accumulate(parent, parent_grad)
                else:
                    key = id(parent)
                    pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


def _accumulate(leaf: Tensor, grad: np.ndarray) -> None:
    grad = np.asarray(grad, dtype=leaf.data.dtype).reshape(leaf.shape)
    if leaf.grad is None:
        leaf.grad = grad.copy()
    else:
        leaf.grad += grad


def backward(loss: Tensor) -> None:
    """
    Calcula gradientes sobre todas las hojas con requires_grad.

    Llamar dos veces sin resetear acumula.
    """
    if not loss.requires_grad:
        raise ValidationError("backward: la pérdida no depende de ningún tensor con gradiente")
    if loss.is_leaf:
        Tape().backward(loss)
        return
    loss._tape.backward(loss)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward_fn)
    return out


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """
    Registra una operación definida fuera de este módulo.

    backward_fn recibe el gradiente de la salida y devuelve una tupla con el
    gradiente de cada padre (None si no aplica).
    """
    return _result(data, parents, backward_fn)


def _shape_error(op: str, *shapes) -> ShapeError:
    listed = " y ".join(str(s) for s in shapes)
    return ShapeError(f"{op}: formas incompatibles {listed}")


# =============================================================================
# Aritmética elemental
# =============================================================================

def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b con misma forma, o b como bias (vector (C,) o fila (1, C))."""
    if a.shape == b.shape:
        def bw(g):
            return g, g
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def bw(g):
            return g, g.reshape(-1, b.shape[0]).sum(axis=0)
    elif b.ndim == 2 and a.ndim == 2 and b.shape[0] == 1 and a.shape[1] == b.shape[1]:
        def bw(g):
            return g, g.sum(axis=0, keepdims=True)
    else:
        raise _shape_error("add", a.shape, b.shape)
    return _result(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("sub", a.shape, b.shape)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("mul", a.shape, b.shape)
    a_data, b_data = a.data, b.data
    return _result(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def scale(a: Tensor, factor: float) -> Tensor:
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def mix(a: Tensor, b: Tensor, weight: Union[float, np.ndarray]) -> Tensor:
    """weight·a + (1 − weight)·b con weight constante (escalar o array de la misma forma)."""
    if a.shape != b.shape:
        raise _shape_error("mix", a.shape, b.shape)
    w = np.asarray(weight, dtype=a.dtype)
    if w.ndim and w.shape != a.shape:
        raise _shape_error("mix", a.shape, w.shape)
    one_minus = 1 - w
    return _result(w * a.data + one_minus * b.data, (a, b), lambda g: (g * w, g * one_minus))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data
    return _result(a_data @ b_data, (a, b), lambda g: (g @ b_data.T, a_data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ W + b con x (N, in), W (in, out), b (out,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise _shape_error("linear", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[1],):
        raise _shape_error("linear(bias)", weight.shape, bias.shape)
    x_data, w_data = x.data, weight.data
    out = x_data @ w_data
    if bias is None:
        return _result(out, (x, weight), lambda g: (g @ w_data.T, x_data.T @ g))
    return _result(out + bias.data, (x, weight, bias),
                   lambda g: (g @ w_data.T, x_data.T @ g, g.sum(axis=0)))


def sum_all(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    return _result(np.asarray(x.data.sum(), dtype=dtype).reshape(()), (x,),
                   lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def mean(x: Tensor) -> Tensor:
    shape, dtype, n = x.shape, x.dtype, x.size
    return _result(np.asarray(x.data.mean(), dtype=dtype).reshape(()), (x,),
                   lambda g: (np.broadcast_to(g / n, shape).astype(dtype),))


# =============================================================================
# Activaciones
# =============================================================================

def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.4) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _result(y, (x,), lambda g: (g * y * (1 - y),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _result(y, (x,), bw)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Dropout invertido; identidad fuera de entrenamiento o con p = 0."""
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout: p debe estar en [0, 1), recibido {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValidationError("dropout en entrenamiento requiere un generador aleatorio")
    mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.dtype)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


# =============================================================================
# Forma
# =============================================================================

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: lista vacía")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other = [d for i, d in enumerate(t.shape) if i != axis]
        first = [d for i, d in enumerate(tensors[0].shape) if i != axis]
        if t.ndim != ndim or other != first:
            raise _shape_error("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """x[:, start:stop] para x 2-D."""
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: rango [{start}, {stop}) inválido para {x.shape}")
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[:, start:stop] = g
        return (full,)
    return _result(x.data[:, start:stop], (x,), bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """x[start:stop]."""
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: rango [{start}, {stop}) inválido para {x.shape}")
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[start:stop] = g
        return (full,)
    return _result(x.data[start:stop], (x,), bw)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose: se esperaba 2-D, recibido {x.shape}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    original = x.shape
    if int(np.prod(shape)) != x.size:
        raise _shape_error("reshape", original, shape)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


# =============================================================================
# Capas
# =============================================================================

def embedding(ids: np.ndarray, table: Tensor) -> Tensor:
    """Filas de table indexadas por ids (T,) → (T, D)."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if table.ndim != 2:
        raise ShapeError(f"embedding: tabla 2-D requerida, recibido {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValidationError(f"embedding: ids fuera de rango [0, {table.shape[0]})")
    shape, dtype = table.shape, table.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids, g)
        return (full,)
    return _result(table.data[ids], (table,), bw)


def _conv_padding(kernel: int, dilation: int, padding: str) -> Tuple[int, int]:
    total = (kernel - 1) * dilation
    if padding == PADDING_CAUSAL:
        return total, 0
    if padding == PADDING_SAME:
        return total // 2, total - total // 2
    raise ValidationError(f"padding desconocido: {padding!r} (usar 'same' o 'causal')")


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           dilation: int = 1, padding: str = PADDING_SAME) -> Tensor:
    """
    Convolución 1-D sobre x (T, C_in) con W (K, C_in, C_out).

    Con padding causal el tap k lee x[t − (K−1−k)·dilation]: la salida en t
    solo depende de entradas en tiempos ≤ t. Con 'same' la longitud se conserva.
    """
    if x.ndim != 2 or weight.ndim != 3 or weight.shape[1] != x.shape[1]:
        raise _shape_error("conv1d", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[2],):
        raise _shape_error("conv1d(bias)", weight.shape, bias.shape)
    if dilation < 1:
        raise ValidationError(f"conv1d: dilation debe ser >= 1, recibido {dilation}")
    kernel = weight.shape[0]
    steps = x.shape[0]
    left, right = _conv_padding(kernel, dilation, padding)
    padded = np.pad(x.data, ((left, right), (0, 0)))
    w_data = weight.data
    out = np.zeros((steps, w_data.shape[2]), dtype=np.result_type(x.dtype, weight.dtype))
    for k in range(kernel):
        out += padded[k * dilation:k * dilation + steps] @ w_data[k]
    if bias is not None:
        out += bias.data

    def bw(g):
        g_padded = np.zeros_like(padded)
        g_weight = np.zeros_like(w_data)
        for k in range(kernel):
            window = slice(k * dilation, k * dilation + steps)
            g_padded[window] += g @ w_data[k].T
            g_weight[k] = padded[window].T @ g
        g_x = g_padded[left:left + steps]
        if bias is None:
            return g_x, g_weight
        return g_x, g_weight, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bw)


def conv_transpose1d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int,
                     out_length: Optional[int] = None) -> Tensor:
    """
    Convolución transpuesta 1-D: x (T, C_in), W (K, C_in, C_out), paso stride.

    La fila t contribuye a las salidas t·stride + k; el resultado se recorta a
    out_length (default T·stride). Requiere K ≥ stride.
    """
    if x.ndim != 2 or weight.ndim != 3 or weight.shape[1] != x.shape[1]:
        raise _shape_error("conv_transpose1d", x.shape, weight.shape)
    kernel = weight.shape[0]
    if kernel < stride:
        raise ValidationError(f"conv_transpose1d: kernel {kernel} menor que stride {stride}")
    steps = x.shape[0]
    full_length = (steps - 1) * stride + kernel
    if out_length is None:
        out_length = steps * stride
    if out_length > full_length:
        raise ShapeError(f"conv_transpose1d: out_length {out_length} > {full_length}")
    x_data, w_data = x.data, weight.data
    full = np.zeros((full_length, w_data.shape[2]), dtype=np.result_type(x.dtype, weight.dtype))
    span = (steps - 1) * stride + 1
    for k in range(kernel):
        full[k:k + span:stride] += x_data @ w_data[k]
    out = full[:out_length]
    if bias is not None:
        out = out + bias.data

    def bw(g):
        g_full = np.zeros_like(full)
        g_full[:out_length] = g
        g_x = np.zeros_like(x_data)
        g_weight = np.zeros_like(w_data)
        for k in range(kernel):
            g_k = g_full[k:k + span:stride]
            g_x += g_k @ w_data[k].T
            g_weight[k] = x_data.T @ g_k
        if bias is None:
            return g_x, g_weight
        return g_x, g_weight, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bw)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.99,
                eps: float = 1e-5) -> Tensor:
    """
    Batch normalization por canal sobre x (T, C).

    En entrenamiento normaliza con la media/varianza del lote (eje temporal) y
    actualiza in-place las estadísticas acumuladas; en inferencia usa estas.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise _shape_error("batchnorm1d", x.shape, gamma.shape)
    g_data = gamma.data
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mu = running_mean.copy()
        var = running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu) * inv_std
    out = (x_hat * g_data + beta.data).astype(x.dtype)
    n = x.shape[0]

    def bw(g):
        g_hat = g * g_data
        if training:
            g_x = inv_std / n * (n * g_hat - g_hat.sum(axis=0) - x_hat * (g_hat * x_hat).sum(axis=0))
        else:
            g_x = g_hat * inv_std
        return g_x, (g * x_hat).sum(axis=0), g.sum(axis=0)
    return _result(out, (x, gamma, beta), bw)


# =============================================================================
# Pérdidas
# =============================================================================

def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Media de (pred − target)² sobre todos los elementos."""
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise _shape_error("mse", pred.shape, target.shape)
    diff = pred.data - target
    n = diff.size
    return _result(np.asarray(np.mean(diff * diff), dtype=pred.dtype).reshape(()), (pred,),
                   lambda g: (g * 2.0 * diff / n,))


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Entropía cruzada binaria media a partir de logits (estable numéricamente)."""
    targets = np.asarray(targets, dtype=logits.dtype)
    if logits.shape != targets.shape:
        raise _shape_error("bce_with_logits", logits.shape, targets.shape)
    z = logits.data
    # max(z, 0) − z·y + log(1 + e^{−|z|})
    losses = np.maximum(z, 0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    probs = expit(z)
    return _result(np.asarray(losses.mean(), dtype=logits.dtype).reshape(()), (logits,),
                   lambda g: (g * (probs - targets) / n,))


# =============================================================================
# LSTM con zoneout
# =============================================================================

@dataclass
class LstmWeights:
    """Pesos de una celda LSTM: kernel ((in + H), 4H) sobre [x, h] y bias (4H,)."""
    kernel: Tensor
    bias: Tensor

    @property
    def units(self) -> int:
        return self.bias.shape[0] // 4


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, weights: LstmWeights, zoneout_p: float = 0.0,
              training: bool = False, rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
    """
    Celda LSTM estándar (puertas i, f, g, o) con zoneout opcional.

    En entrenamiento cada unidad de h y c conserva su valor previo con
    probabilidad zoneout_p; en inferencia se usa la esperanza
    p·previo + (1 − p)·nuevo.
    """
    units = weights.units
    if h.shape != c.shape or h.ndim != 2 or h.shape[1] != units or x.ndim != 2 or x.shape[0] != h.shape[0]:
        raise ShapeError(f"lstm_cell: formas incompatibles x {x.shape}, h {h.shape}, c {c.shape}, H={units}")
    if weights.kernel.shape != (x.shape[1] + units, 4 * units):
        raise _shape_error("lstm_cell(kernel)", (x.shape[1] + units, 4 * units), weights.kernel.shape)
    if not 0.0 <= zoneout_p <= 1.0:
        raise ValidationError(f"zoneout_p debe estar en [0, 1], recibido {zoneout_p}")

    gates = linear(concat([x, h], axis=1), weights.kernel, weights.bias)
    in_gate = sigmoid(slice_cols(gates, 0, units))
    forget_gate = sigmoid(slice_cols(gates, units, 2 * units))
    candidate = tanh(slice_cols(gates, 2 * units, 3 * units))
    out_gate = sigmoid(slice_cols(gates, 3 * units, 4 * units))

    c_new = add(mul(forget_gate, c), mul(in_gate, candidate))
    h_new = mul(out_gate, tanh(c_new))

    if zoneout_p > 0.0:
        if training:
            if rng is None:
                raise ValidationError("zoneout en entrenamiento requiere un generador aleatorio")
            keep_c = (rng.random(c.shape) < zoneout_p).astype(c.dtype)
            keep_h = (rng.random(h.shape) < zoneout_p).astype(h.dtype)
            c_new = mix(c, c_new, keep_c)
            h_new = mix(h, h_new, keep_h)
        else:
            c_new = mix(c, c_new, zoneout_p)
            h_new = mix(h, h_new, zoneout_p)
    return h_new, c_new


# =============================================================================
# Verificación de gradientes por diferencias finitas
# =============================================================================

@dataclass
class GradCheckReport:
    """Resultado de comparar gradientes analíticos con diferencias centrales."""
    max_rel_error: float = 0.0
    worst: str = ""
    checked: int = 0
    errors: Dict[str, float] = field(default_factory=dict)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """|a − n| / max(|a|, |n|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(loss_fn: Callable[[], Tensor], params: Dict[str, Tensor], eps: float = 1e-6,
                   max_entries: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """
    Compara el gradiente de backward() con diferencias finitas centrales.

    loss_fn debe ser determinista (fijar semillas dentro). Usar con parámetros
    en float64: a 32 bits las diferencias finitas no tienen sentido.

    Args:
        loss_fn: Función sin argumentos que devuelve la pérdida escalar
        params: Tensores a verificar por nombre
        eps: Paso de la diferencia central
        max_entries: Máximo de elementos muestreados por tensor (None → todos)
        seed: Semilla del muestreo de elementos
    """
    for tensor in params.values():
        tensor.zero_grad()
    with Tape():
        loss = loss_fn()
    backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in indices:
            original = flat[i]
            flat[i] = original + eps
            plus = loss_fn().item()
            flat[i] = original - eps
            minus = loss_fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            err = relative_error(float(analytic[name].reshape(-1)[i]), numeric)
            report.checked += 1
            if err > worst:
                worst = err
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = f"{name}[{i}]"
        report.errors[name] = worst
    logger.debug(f"Gradient check: {report.checked} elementos, error relativo máx {report.max_rel_error:.2e} ({report.worst})")
    return report
