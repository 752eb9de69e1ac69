"""
Almacén de parámetros con nombre para los modelos.

Guarda los tensores entrenables, los buffers no entrenables (estadísticas
acumuladas de batch normalization) y qué parámetros quedan exentos de la
regularización L2 (biases, parámetros de normalización y embeddings).
"""
import logging
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from autodiff import Tensor
from errors import ValidationError

logger = logging.getLogger(__name__)

INIT_XAVIER = "xavier"
INIT_ZEROS = "zeros"
INIT_ONES = "ones"
INIT_NORMAL = "normal"


def _fans(shape: Tuple[int, ...]) -> Tuple[int, int]:
    if len(shape) == 1:
        return shape[0], shape[0]
    if len(shape) == 2:
        return shape[0], shape[1]
    # Convoluciones (K, C_in, C_out)
    receptive = int(np.prod(shape[:-2]))
    return receptive * shape[-2], receptive * shape[-1]


class ParamStore:
    """
    Colección ordenada de parámetros y buffers de un modelo.

    La inicialización es determinista dada la semilla y el orden de alta.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.no_decay: set = set()
        self.dtype = np.dtype(dtype)
        self._rng = np.random.default_rng(seed)

    def add(self, name: str, shape: Tuple[int, ...], init: str = INIT_XAVIER,
            decay: bool = True, std: float = 0.1) -> Tensor:
        """
        Registra un parámetro nuevo y lo inicializa.

        Args:
            name: Nombre único (p.ej. 'encoder.conv0.weight')
            shape: Forma del tensor
            init: 'xavier', 'zeros', 'ones' o 'normal'
            decay: Si False, el parámetro no recibe regularización L2
            std: Desviación típica para init='normal'

        Returns:
            El tensor registrado (requires_grad=True)
        """
        if name in self.params or name in self.buffers:
            raise ValidationError(f"parámetro duplicado: {name}")
        shape = tuple(int(d) for d in shape)
        if init == INIT_XAVIER:
            fan_in, fan_out = _fans(shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = self._rng.uniform(-limit, limit, size=shape)
        elif init == INIT_ZEROS:
            data = np.zeros(shape)
        elif init == INIT_ONES:
            data = np.ones(shape)
        elif init == INIT_NORMAL:
            data = self._rng.normal(0.0, std, size=shape)
        else:
            raise ValidationError(f"inicialización desconocida: {init}")
        tensor = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self.params[name] = tensor
        if not decay:
            self.no_decay.add(name)
        return tensor

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        """Registra un buffer no entrenable (se actualiza in-place)."""
        if name in self.params or name in self.buffers:
            raise ValidationError(f"buffer duplicado: {name}")
        self.buffers[name] = np.array(value, dtype=self.dtype)
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def decayed(self, name: str) -> bool:
        return name not in self.no_decay

    def count(self) -> int:
        """Número total de escalares entrenables."""
        return int(sum(t.size for t in self.params.values()))

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.zero_grad()

    def astype(self, dtype) -> "ParamStore":
        """
        Convierte in-place parámetros y buffers a otro dtype.

        Los tensores conservan su identidad, así que los modelos que los
        referencian siguen funcionando (p.ej. float64 para verificar gradientes).
        """
        self.dtype = np.dtype(dtype)
        for tensor in self.params.values():
            tensor.data = tensor.data.astype(self.dtype)
            tensor.grad = None
        for name, buf in self.buffers.items():
            self.buffers[name] = buf.astype(self.dtype)
        return self

    def values(self) -> Dict[str, np.ndarray]:
        """Copia de los valores actuales de los parámetros."""
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_values(self, values: Dict[str, np.ndarray], buffers: Optional[Dict[str, np.ndarray]] = None):
        """
        Carga valores guardados (checkpoint) sobre los parámetros existentes.

        Raises:
            ValidationError: Si falta un parámetro o la forma no coincide
        """
        missing = [name for name in self.params if name not in values]
        if missing:
            raise ValidationError(f"checkpoint incompatible: faltan {len(missing)} parámetros (p.ej. {missing[0]})")
        for name, tensor in self.params.items():
            value = values[name]
            if value.shape != tensor.shape:
                raise ValidationError(f"checkpoint incompatible: {name} tiene forma {value.shape}, se esperaba {tensor.shape}")
            tensor.data = np.array(value, dtype=self.dtype)
            tensor.grad = None
        for name, value in (buffers or {}).items():
            if name not in self.buffers:
                raise ValidationError(f"checkpoint incompatible: buffer desconocido {name}")
            # in-place: las capas guardan referencias a los buffers
            self.buffers[name][...] = value
        logger.debug(f"Cargados {len(self.params)} parámetros y {len(buffers or {})} buffers")
