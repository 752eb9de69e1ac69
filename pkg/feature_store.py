"""
Persistencia de features: ficheros FeatureFile, índice del dataset y manifest.

FeatureFile:
    magic b"TFT1" | código dtype (u8) | rango (u8) | dims (u32 × rango) |
    datos little-endian (float32; int32 para ids de caracteres)
"""
import csv
import logging
import os
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

import config
from audio_dsp import scale_targets
from errors import ValidationError
from tensor_io import decode_array, encode_array
from text import CharSequence
from training import PredictorExample, VocoderExample

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"TFT1"
INDEX_FILE = "index.csv"
INDEX_COLUMNS = ["id", "text", "frames", "samples", "mel", "linear", "chars", "audio"]
MANIFEST_COLUMNS = ["id", "transcript", "wav_path"]

KIND_MEL = "mel"
KIND_LINEAR = "linear"
KIND_CHARS = "chars"
KIND_AUDIO = "audio"
KIND_GTA = "gta"

FEATURES_GTA = "gta"
FEATURES_GROUND_TRUTH = "ground-truth"
FEATURES_LINEAR = "linear"
VOCODER_FEATURE_CHOICES = (FEATURES_GTA, FEATURES_GROUND_TRUTH, FEATURES_LINEAR)


# =============================================================================
# FeatureFile
# =============================================================================

def write_feature(path: str, array: np.ndarray) -> str:
    """Escribe un FeatureFile (float → float32, enteros → int32)."""
    array = np.asarray(array)
    if np.issubdtype(array.dtype, np.integer):
        array = array.astype("<i4")
    else:
        array = array.astype("<f4")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC + encode_array(array))
    return path


def read_feature(path: str) -> np.ndarray:
    """
    Lee un FeatureFile.

    Raises:
        ValidationError: Fichero inexistente, magic incorrecto o truncado
    """
    try:
        with open(path, "rb") as f:
            buffer = f.read()
    except OSError as e:
        raise ValidationError(f"no se puede leer el fichero de features {path}: {e}") from e
    if buffer[:len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise ValidationError(f"{path} no es un FeatureFile (magic incorrecto)")
    array, end = decode_array(buffer, len(FEATURE_MAGIC))
    if end != len(buffer):
        raise ValidationError(f"{path}: {len(buffer) - end} bytes sobrantes tras los datos")
    return array


def feature_path(directory: str, utt_id: str, kind: str) -> str:
    return os.path.join(directory, f"{utt_id}.{kind}.tft")


# =============================================================================
# Manifest e índice
# =============================================================================

def read_manifest(path: str) -> pd.DataFrame:
    """
    Lee un manifest 'id | transcripción | ruta_wav' (UTF-8, separado por '|').

    Las rutas relativas se resuelven respecto al directorio del manifest.

    Raises:
        ValidationError: Formato incorrecto, ids duplicados o transcripciones vacías
    """
    try:
        frame = pd.read_csv(path, sep="|", header=None, dtype=str, keep_default_na=False,
                            quoting=csv.QUOTE_NONE, encoding="utf-8", skip_blank_lines=True)
    except FileNotFoundError as e:
        raise ValidationError(f"manifest inexistente: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise ValidationError(f"manifest vacío: {path}") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ValidationError(f"manifest mal formado {path}: {e}") from e

    if frame.shape[1] != len(MANIFEST_COLUMNS):
        raise ValidationError(f"manifest mal formado {path}: se esperaban 3 campos por línea, "
                              f"hay {frame.shape[1]}")
    frame.columns = MANIFEST_COLUMNS
    frame = frame.fillna("").apply(lambda column: column.str.strip())
    if frame.empty:
        raise ValidationError(f"manifest vacío: {path}")
    problems = []
    if (frame["id"] == "").any():
        problems.append("hay registros sin id")
    duplicated = frame.loc[frame["id"].duplicated(), "id"].tolist()
    if duplicated:
        problems.append(f"ids duplicados: {', '.join(sorted(set(duplicated)))}")
    empty = frame.loc[frame["transcript"] == "", "id"].tolist()
    if empty:
        problems.append(f"transcripciones vacías: {', '.join(empty)}")
    missing_path = frame.loc[frame["wav_path"] == "", "id"].tolist()
    if missing_path:
        problems.append(f"registros sin ruta de wav: {', '.join(missing_path)}")
    if problems:
        raise ValidationError(f"manifest inválido {path}: " + "; ".join(problems))

    base = os.path.dirname(os.path.abspath(path))
    frame["wav_path"] = frame["wav_path"].map(lambda p: p if os.path.isabs(p) else os.path.join(base, p))
    return frame


def write_index(directory: str, rows: List[dict]) -> str:
    """Escribe el índice del dataset preprocesado (orden del manifest)."""
    path = os.path.join(directory, INDEX_FILE)
    pd.DataFrame(rows, columns=INDEX_COLUMNS).to_csv(path, index=False)
    return path


def read_index(directory: str) -> pd.DataFrame:
    path = os.path.join(directory, INDEX_FILE)
    if not os.path.exists(path):
        raise ValidationError(f"índice inexistente: {path} (¿falta ejecutar preprocess?)")
    return pd.read_csv(path, dtype={"id": str, "text": str, "mel": str, "linear": str},
                       keep_default_na=False)


# =============================================================================
# Datasets
# =============================================================================

def load_predictor_dataset(directory: str, kind: str = KIND_MEL) -> List[PredictorExample]:
    """Pares (caracteres, espectrograma) de un directorio preprocesado."""
    if kind not in (KIND_MEL, KIND_LINEAR):
        raise ValidationError(f"tipo de objetivo desconocido: {kind}")
    examples = []
    for row in read_index(directory).itertuples(index=False):
        if not getattr(row, kind):
            raise ValidationError(f"{row.id}: no hay features '{kind}' (preprocess sin --linear)")
        chars = CharSequence(ids=read_feature(feature_path(directory, row.id, KIND_CHARS)), original_text=row.text)
        target = read_feature(feature_path(directory, row.id, kind))
        examples.append(PredictorExample(utt_id=row.id, chars=chars, target=target))
    logger.info(f"Dataset del predictor: {len(examples)} utterances ({kind})")
    return examples


def write_gta(directory: str, features: Dict[str, np.ndarray]) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    return [write_feature(feature_path(directory, utt_id, KIND_GTA), array) for utt_id, array in features.items()]


def load_vocoder_dataset(directory: str, features: str = FEATURES_GTA, gta_dir: Optional[str] = None,
                         target_scale: float = config.TARGET_SCALE) -> List[VocoderExample]:
    """
    Pares (features de trama, audio escalado) para entrenar el vocoder.

    Args:
        directory: Directorio preprocesado (audio alineado y features reales)
        features: 'gta', 'ground-truth' (mel real) o 'linear' (lineal real)
        gta_dir: Directorio con los ficheros .gta.tft (requerido con 'gta')
    """
    if features not in VOCODER_FEATURE_CHOICES:
        raise ValidationError(f"features desconocidas: {features} (usar {', '.join(VOCODER_FEATURE_CHOICES)})")
    if features == FEATURES_GTA and not gta_dir:
        raise ValidationError("features 'gta' requiere el directorio de make-gta")
    examples = []
    for row in read_index(directory).itertuples(index=False):
        if features == FEATURES_GTA:
            path = feature_path(gta_dir, row.id, KIND_GTA)
        elif features == FEATURES_LINEAR:
            path = feature_path(directory, row.id, KIND_LINEAR)
        else:
            path = feature_path(directory, row.id, KIND_MEL)
        frames = read_feature(path)
        audio = scale_targets(read_feature(feature_path(directory, row.id, KIND_AUDIO)), target_scale)
        examples.append(VocoderExample(utt_id=row.id, features=frames, audio=audio.astype(np.float32)))
    logger.info(f"Dataset del vocoder: {len(examples)} utterances ({features})")
    return examples
