"""
Jerarquía de errores del sistema y clasificación de fallos por utterance.
"""


class TTSError(Exception):
    """Error base del sistema."""


class ValidationError(TTSError, ValueError):
    """Entrada o configuración inválida (la CLI sale con código 1)."""


class ConfigError(ValidationError):
    """Configuración que no cumple sus invariantes."""


class ShapeError(ValidationError):
    """Formas de tensores incompatibles."""


class NonFiniteError(TTSError, ArithmeticError):
    """Aparición de NaN/Inf en datos, activaciones, pérdidas o gradientes."""


class InvariantViolation(TTSError):
    """Contrato interno roto (p.ej. desalineación de tramas GTA)."""


class ErrorType:
    """Tipos de error para clasificar fallos por utterance."""
    NONE = "none"
    UNREADABLE_WAV = "unreadable_wav"  # WAV inexistente o corrupto
    RATE_MISMATCH = "rate_mismatch"    # Frecuencia de muestreo distinta a la config
    TEXT = "text"                      # Transcripción no normalizada o vacía
    UNKNOWN = "unknown"                # Otros errores


def classify_error(error: Exception) -> str:
    """Clasifica una excepción de preproceso en un ErrorType."""
    message = str(error).lower()
    if isinstance(error, (FileNotFoundError, IsADirectoryError)):
        return ErrorType.UNREADABLE_WAV
    if "sample rate" in message:
        return ErrorType.RATE_MISMATCH
    if "unnormalized text" in message or "empty text" in message:
        return ErrorType.TEXT
    if "wav" in message:
        return ErrorType.UNREADABLE_WAV
    return ErrorType.UNKNOWN
