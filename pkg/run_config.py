"""
Carga de la configuración de una ejecución desde un fichero INI.

Secciones admitidas:
    [dsp]               campos de DspConfig
    [predictor]         campos de PredictorConfig + scale (desk|full) + output (mel|linear)
    [vocoder]           campos de VocoderConfig + scale (desk|full) + geometry (tabla de campo receptivo)
    [train]             campos de TrainConfig comunes a las dos etapas
    [train.predictor]   overrides de la etapa predictor
    [train.vocoder]     overrides de la etapa vocoder

Cualquier sección o clave desconocida se rechaza; cada valor se convierte
según el tipo del campo del dataclass destino y el dataclass valida sus
invariantes al construirse.
"""
import configparser
import logging
import typing
from dataclasses import dataclass, fields
from typing import Dict, Optional

import config
from audio_dsp import DspConfig
from errors import ConfigError
from predictor import PredictorConfig
from training import STAGE_PREDICTOR, STAGE_VOCODER, TrainConfig
from vocoder import VocoderConfig

logger = logging.getLogger(__name__)

SCALE_DESK = "desk"
SCALE_FULL = "full"
OUTPUT_MEL = "mel"
OUTPUT_LINEAR = "linear"

SECTIONS = ("dsp", "predictor", "vocoder", "train", "train.predictor", "train.vocoder")

# Claves que no son campos de dataclass sino selectores de preset
_PREDICTOR_EXTRA = ("scale", "output")
_VOCODER_EXTRA = ("scale", "geometry")
# Campos que fija la CLI o la etapa, nunca el fichero
_TRAIN_RESERVED = ("stage", "seed")
# Campos del vocoder derivados de [dsp]
_VOCODER_FROM_DSP = ("hop_length", "sample_rate")

_BOOLEANS = {"1": True, "yes": True, "true": True, "on": True,
             "0": False, "no": False, "false": False, "off": False}


@dataclass
class RunConfig:
    """Configs tipadas de todas las etapas de una ejecución."""
    dsp: DspConfig
    predictor: PredictorConfig
    vocoder: VocoderConfig
    train_predictor: TrainConfig
    train_vocoder: TrainConfig
    source: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "dsp": {f.name: getattr(self.dsp, f.name) for f in fields(self.dsp)},
            "predictor": self.predictor.to_dict(),
            "vocoder": self.vocoder.to_dict(),
            "train.predictor": {f.name: getattr(self.train_predictor, f.name) for f in fields(self.train_predictor)},
            "train.vocoder": {f.name: getattr(self.train_vocoder, f.name) for f in fields(self.train_vocoder)},
        }


# =============================================================================
# Conversión de valores
# =============================================================================

def _convert(raw: str, annotation, where: str):
    """Convierte el texto del INI al tipo anotado del campo."""
    text = raw.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    try:
        if origin is typing.Union and type(None) in args:
            if text.lower() in ("", "none"):
                return None
            inner = next(a for a in args if a is not type(None))
            return _convert(text, inner, where)
        if origin in (tuple, typing.Tuple):
            item = args[0] if args else int
            return tuple(_convert(part, item, where) for part in text.split(",") if part.strip())
        if annotation is bool:
            if text.lower() not in _BOOLEANS:
                raise ValueError(f"booleano no reconocido '{text}'")
            return _BOOLEANS[text.lower()]
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
        if annotation is str:
            return text
    except ValueError as e:
        raise ConfigError(f"{where}: valor inválido '{raw}' ({e})") from e
    raise ConfigError(f"{where}: tipo de campo no soportado {annotation}")


def _typed_values(section: str, values: Dict[str, str], target: type,
                  extra: tuple = (), reserved: tuple = ()) -> Dict[str, object]:
    hints = typing.get_type_hints(target)
    known = {f.name for f in fields(target)} - set(reserved)
    typed = {}
    for key, raw in values.items():
        if key in extra:
            continue
        if key not in known:
            raise ConfigError(f"clave desconocida '{key}' en la sección [{section}]")
        typed[key] = _convert(raw, hints[key], f"[{section}] {key}")
    return typed


def _choice(section: str, values: Dict[str, str], key: str, choices: tuple, default: str) -> str:
    value = values.get(key, default).strip()
    if value not in choices:
        raise ConfigError(f"[{section}] {key} debe ser uno de {', '.join(choices)}: '{value}'")
    return value


# =============================================================================
# Construcción
# =============================================================================

def build_run_config(sections: Dict[str, Dict[str, str]], seed: int = 0,
                     geometry: Optional[str] = None, source: Optional[str] = None) -> RunConfig:
    """
    Construye las configs tipadas desde secciones ya parseadas.

    Args:
        sections: sección → {clave: valor en texto}
        seed: Semilla global (flag --seed)
        geometry: Geometría de vocoder forzada desde la CLI (--geometry)
    """
    unknown = sorted(set(sections) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"secciones desconocidas: {', '.join('[' + s + ']' for s in unknown)}")

    dsp = DspConfig(**_typed_values("dsp", sections.get("dsp", {}), DspConfig))

    raw = sections.get("predictor", {})
    overrides = _typed_values("predictor", raw, PredictorConfig, extra=_PREDICTOR_EXTRA)
    scale = _choice("predictor", raw, "scale", (SCALE_DESK, SCALE_FULL), config.CURRENT_SCALE)
    output = _choice("predictor", raw, "output", (OUTPUT_MEL, OUTPUT_LINEAR), OUTPUT_MEL)
    if "output_dim" not in overrides:
        overrides["output_dim"] = dsp.fft_bins if output == OUTPUT_LINEAR else dsp.mel_channels
    elif "output" in raw:
        raise ConfigError("[predictor] output y output_dim son incompatibles: usar solo uno")
    predictor = (PredictorConfig.full if scale == SCALE_FULL else PredictorConfig.desk)(**overrides)

    raw = sections.get("vocoder", {})
    overrides = _typed_values("vocoder", raw, VocoderConfig, extra=_VOCODER_EXTRA, reserved=_VOCODER_FROM_DSP)
    overrides.setdefault("conditioning_channels", dsp.mel_channels)
    overrides["hop_length"] = dsp.hop_length
    overrides["sample_rate"] = dsp.sample_rate_hz
    geometry = geometry or raw.get("geometry", "").strip() or None
    if geometry:
        if "scale" in raw:
            raise ConfigError("[vocoder] geometry ya fija la escala desk: no combinar con scale")
        vocoder = VocoderConfig.from_geometry(geometry, **overrides)
    else:
        scale = _choice("vocoder", raw, "scale", (SCALE_DESK, SCALE_FULL), config.CURRENT_SCALE)
        vocoder = (VocoderConfig.full if scale == SCALE_FULL else VocoderConfig.desk)(**overrides)

    common = _typed_values("train", sections.get("train", {}), TrainConfig, reserved=_TRAIN_RESERVED)
    stages = {}
    for stage in (STAGE_PREDICTOR, STAGE_VOCODER):
        name = f"train.{stage}"
        specific = _typed_values(name, sections.get(name, {}), TrainConfig, reserved=_TRAIN_RESERVED)
        stages[stage] = TrainConfig.for_stage(stage, seed=seed, **{**common, **specific})

    return RunConfig(dsp=dsp, predictor=predictor, vocoder=vocoder,
                     train_predictor=stages[STAGE_PREDICTOR], train_vocoder=stages[STAGE_VOCODER],
                     source=source)


def parse_ini(text: str) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"fichero de configuración mal formado: {e}") from e
    return {name: dict(parser[name]) for name in parser.sections()}


def load_run_config(path: Optional[str] = None, seed: int = 0,
                    geometry: Optional[str] = None) -> RunConfig:
    """
    Carga la configuración de la ejecución (defaults si no hay fichero).

    Raises:
        ConfigError: Fichero ilegible, sección/clave desconocida o valor inválido
    """
    if path is None:
        return build_run_config({}, seed=seed, geometry=geometry)
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"no se puede leer la configuración {path}: {e}") from e
    run_cfg = build_run_config(parse_ini(text), seed=seed, geometry=geometry, source=path)
    logger.info(f"Configuración cargada desde {path}")
    return run_cfg
