"""
Codificación binaria de arrays: registro (dtype, rango, dimensiones, datos).

Todo en little-endian. Lo comparten los checkpoints y los ficheros de
features (FeatureFile).
"""
from typing import Tuple

import numpy as np

from errors import ValidationError

# Código de dtype → dtype little-endian
DTYPES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i4"),
    4: np.dtype("<i8"),
    5: np.dtype("u1"),
}
CODES = {dtype: code for code, dtype in DTYPES.items()}

_U8 = np.dtype("u1")
_U16 = np.dtype("<u2")
_U32 = np.dtype("<u4")


def dtype_code(dtype) -> int:
    normalized = np.dtype(dtype).newbyteorder("<") if np.dtype(dtype).itemsize > 1 else np.dtype(dtype)
    if normalized not in CODES:
        raise ValidationError(f"dtype no soportado para serializar: {dtype}")
    return CODES[normalized]


def encode_array(array: np.ndarray) -> bytes:
    """Serializa un array: código dtype (u8), rango (u8), dims (u32 × rango), datos."""
    array = np.asarray(array)
    code = dtype_code(array.dtype)
    header = np.array([code, array.ndim], dtype=_U8).tobytes()
    dims = np.array(array.shape, dtype=_U32).tobytes()
    payload = np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()
    return header + dims + payload


def decode_array(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """
    Lee un array serializado con encode_array.

    Returns:
        Tupla (array, offset tras el registro)
    """
    if offset + 2 > len(buffer):
        raise ValidationError("registro truncado: falta la cabecera")
    code, rank = np.frombuffer(buffer, dtype=_U8, count=2, offset=offset)
    offset += 2
    if int(code) not in DTYPES:
        raise ValidationError(f"código de dtype desconocido: {int(code)}")
    dtype = DTYPES[int(code)]
    if offset + 4 * int(rank) > len(buffer):
        raise ValidationError("registro truncado: faltan dimensiones")
    dims = tuple(int(d) for d in np.frombuffer(buffer, dtype=_U32, count=int(rank), offset=offset))
    offset += 4 * int(rank)
    count = int(np.prod(dims)) if dims else 1
    nbytes = count * dtype.itemsize
    if offset + nbytes > len(buffer):
        raise ValidationError(f"registro truncado: se esperaban {nbytes} bytes de datos")
    array = np.frombuffer(buffer, dtype=dtype, count=count, offset=offset).reshape(dims).copy()
    return array, offset + nbytes


def encode_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return np.array([len(raw)], dtype=_U16).tobytes() + raw


def decode_name(buffer: bytes, offset: int) -> Tuple[str, int]:
    if offset + 2 > len(buffer):
        raise ValidationError("registro truncado: falta el nombre")
    length = int(np.frombuffer(buffer, dtype=_U16, count=1, offset=offset)[0])
    offset += 2
    if offset + length > len(buffer):
        raise ValidationError("registro truncado: nombre incompleto")
    return buffer[offset:offset + length].decode("utf-8"), offset + length


def encode_u32(value: int) -> bytes:
    return np.array([value], dtype=_U32).tobytes()


def decode_u32(buffer: bytes, offset: int) -> Tuple[int, int]:
    if offset + 4 > len(buffer):
        raise ValidationError("registro truncado: falta un entero")
    return int(np.frombuffer(buffer, dtype=_U32, count=1, offset=offset)[0]), offset + 4
