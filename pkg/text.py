"""
Normalización de texto y codificación a ids de caracteres.
"""
import re
from dataclasses import dataclass
from typing import List

import numpy as np

from errors import ValidationError

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1

# Conjunto de caracteres: a-z, espacio y puntuación básica; los dígitos se
# rechazan (deben venir verbalizados de antemano)
CHARSET = [PAD, UNK, " "] + [chr(c) for c in range(ord("a"), ord("z") + 1)] + list(".,?!'-")
CHAR_TO_ID = {ch: i for i, ch in enumerate(CHARSET)}
VOCAB_SIZE = len(CHARSET)

_WHITESPACE = re.compile(r"\s+")
_DIGIT = re.compile(r"\d")


@dataclass
class CharSequence:
    """Texto normalizado codificado como ids de caracteres."""
    ids: np.ndarray
    original_text: str

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int32).reshape(-1)
        if self.ids.size == 0:
            raise ValidationError("empty text: la secuencia de caracteres está vacía")
        if self.ids.min() < 0 or self.ids.max() >= VOCAB_SIZE:
            raise ValidationError(f"id de carácter fuera de rango [0, {VOCAB_SIZE})")

    def __len__(self) -> int:
        return int(self.ids.size)

    def decode(self) -> str:
        return "".join("?" if i == UNK_ID else CHARSET[i] for i in self.ids if i != PAD_ID)


def normalize_text(raw: str) -> CharSequence:
    """
    Normaliza una transcripción y la codifica.

    Pasa a minúsculas, colapsa espacios y mapea caracteres fuera del charset
    al id desconocido.

    Raises:
        ValidationError: Si hay dígitos o el texto queda vacío
    """
    if _DIGIT.search(raw):
        raise ValidationError("unnormalized text: digits must be spelled out")
    cleaned = _WHITESPACE.sub(" ", raw.lower()).strip()
    if not cleaned:
        raise ValidationError("empty text: la transcripción está vacía")
    ids: List[int] = [CHAR_TO_ID.get(ch, UNK_ID) for ch in cleaned]
    return CharSequence(ids=np.array(ids, dtype=np.int32), original_text=raw)
