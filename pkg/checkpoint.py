"""
Checkpoints binarios versionados.

Formato:
    magic b"TTSCKPT1" | versión (u32) | nº de registros (u32) |
    registros (nombre u16+utf8, array codificado con tensor_io)

Los nombres llevan prefijo de sección: 'param/', 'buffer/', 'adam.m/',
'adam.v/', 'ema/' y 'meta/'. La configuración del modelo se guarda como JSON
en 'meta/config' para poder reconstruirlo desde el checkpoint solo.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from errors import ValidationError
from optim import AdamState, EmaState
from params import ParamStore
from tensor_io import decode_array, decode_name, decode_u32, encode_array, encode_name, encode_u32

logger = logging.getLogger(__name__)

MAGIC = b"TTSCKPT1"
FORMAT_VERSION = 1

_SECTIONS = ("param", "buffer", "adam.m", "adam.v", "ema")


@dataclass
class Checkpoint:
    """Estado completo de un modelo en un paso de entrenamiento."""
    kind: str                      # 'predictor' o 'vocoder'
    config: dict
    step: int = 0
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    ema: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def capture(cls, kind: str, config: dict, step: int, store: ParamStore,
                adam: Optional[AdamState] = None, ema: Optional[EmaState] = None) -> "Checkpoint":
        """Toma una copia del estado actual (parámetros, buffers, Adam, EMA)."""
        ckpt = cls(kind=kind, config=config, step=step, params=store.values(),
                   buffers={name: buf.copy() for name, buf in store.buffers.items()})
        if adam is not None:
            ckpt.adam_m = {name: m.copy() for name, m in adam.m.items()}
            ckpt.adam_v = {name: v.copy() for name, v in adam.v.items()}
            ckpt.adam_t = adam.t
        if ema is not None:
            ckpt.ema = {name: s.copy() for name, s in ema.shadow.items()}
        return ckpt

    def restore(self, store: ParamStore, adam: Optional[AdamState] = None, ema: Optional[EmaState] = None):
        """Vuelca el estado guardado sobre un modelo y sus optimizadores."""
        store.load_values(self.params, self.buffers)
        if adam is not None:
            if set(self.adam_m) != set(store.params):
                raise ValidationError("checkpoint sin estado de Adam compatible")
            adam.m = {name: m.copy() for name, m in self.adam_m.items()}
            adam.v = {name: v.copy() for name, v in self.adam_v.items()}
            adam.t = self.adam_t
        if ema is not None and self.ema:
            ema.shadow = {name: s.copy() for name, s in self.ema.items()}


def save_checkpoint(path: str, ckpt: Checkpoint) -> str:
    """
    Escribe el checkpoint (vía fichero temporal + rename).

    Returns:
        Ruta del fichero escrito
    """
    records = [
        ("meta/kind", np.frombuffer(ckpt.kind.encode("utf-8"), dtype=np.uint8)),
        ("meta/config", np.frombuffer(json.dumps(ckpt.config, sort_keys=True).encode("utf-8"), dtype=np.uint8)),
        ("meta/step", np.array([ckpt.step], dtype=np.int64)),
        ("meta/adam_t", np.array([ckpt.adam_t], dtype=np.int64)),
    ]
    for section, arrays in zip(_SECTIONS, (ckpt.params, ckpt.buffers, ckpt.adam_m, ckpt.adam_v, ckpt.ema)):
        records.extend((f"{section}/{name}", value) for name, value in arrays.items())

    chunks = [MAGIC, encode_u32(FORMAT_VERSION), encode_u32(len(records))]
    for name, value in records:
        chunks.append(encode_name(name))
        chunks.append(encode_array(value))

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp_path, path)
    logger.info(f"Checkpoint guardado: {path} (step {ckpt.step}, {len(ckpt.params)} parámetros)")
    return path


def load_checkpoint(path: str) -> Checkpoint:
    """
    Lee un checkpoint escrito por save_checkpoint.

    Raises:
        ValidationError: Fichero inexistente, magic/versión incorrectos o truncado
    """
    try:
        with open(path, "rb") as f:
            buffer = f.read()
    except OSError as e:
        raise ValidationError(f"no se puede leer el checkpoint {path}: {e}") from e

    if buffer[:len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path} no es un checkpoint (magic incorrecto)")
    offset = len(MAGIC)
    version, offset = decode_u32(buffer, offset)
    if version != FORMAT_VERSION:
        raise ValidationError(f"versión de checkpoint no soportada: {version}")
    count, offset = decode_u32(buffer, offset)

    meta: Dict[str, np.ndarray] = {}
    sections: Dict[str, Dict[str, np.ndarray]] = {section: {} for section in _SECTIONS}
    for _ in range(count):
        name, offset = decode_name(buffer, offset)
        value, offset = decode_array(buffer, offset)
        section, _, key = name.partition("/")
        if section == "meta":
            meta[key] = value
        elif section in sections:
            sections[section][key] = value
        else:
            raise ValidationError(f"sección desconocida en checkpoint: {name}")

    for key in ("kind", "config", "step"):
        if key not in meta:
            raise ValidationError(f"checkpoint sin meta/{key}")
    ckpt = Checkpoint(
        kind=meta["kind"].tobytes().decode("utf-8"),
        config=json.loads(meta["config"].tobytes().decode("utf-8")),
        step=int(meta["step"][0]),
        params=sections["param"],
        buffers=sections["buffer"],
        adam_m=sections["adam.m"],
        adam_v=sections["adam.v"],
        adam_t=int(meta["adam_t"][0]) if "adam_t" in meta else 0,
        ema=sections["ema"],
    )
    logger.debug(f"Checkpoint cargado: {path} ({ckpt.kind}, step {ckpt.step})")
    return ckpt
