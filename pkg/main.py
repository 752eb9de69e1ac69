"""
Script principal del sistema de síntesis de voz.

Uso:
    python main.py make-toy-corpus --out corpus
    python main.py preprocess --manifest corpus/manifest.txt --out features
    python main.py train-predictor --data features --out runs/predictor
    python main.py make-gta --data features --checkpoint runs/predictor/predictor_002000.ckpt --out gta
    python main.py train-vocoder --data features --features gta --gta-dir gta --out runs/vocoder
    python main.py synthesize --text "hello world." --predictor P.ckpt --vocoder V.ckpt --out hello.wav
    python main.py vocode --features features/toy_000.mel.tft --vocoder V.ckpt --out copy.wav
    python main.py evaluate --data heldout --predictor P.ckpt
    python main.py analyze-rf --table4

Códigos de salida: 0 éxito, 1 error de validación, 2 error en ejecución.
"""
import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from datetime import datetime

import config
from errors import ErrorType, ValidationError
from evaluation import evaluate
from feature_store import (FEATURES_GROUND_TRUTH, FEATURES_GTA, FEATURES_LINEAR, KIND_LINEAR, KIND_MEL,
                           VOCODER_FEATURE_CHOICES, load_predictor_dataset, load_vocoder_dataset, write_gta)
from pipeline import (GRIFFIN_LIM, analyze_receptive_field, make_toy_corpus, preprocess, synthesize, reference_rows,
                      vocode)
from run_config import load_run_config
from training import (make_gta_features, restore_predictor, restore_vocoder, summarize_log, train_predictor,
                      train_vocoder)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class CliParser(argparse.ArgumentParser):
    """ArgumentParser cuyos errores de flags son errores de validación (código 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"argumentos inválidos: {message}")


def setup_logging(level: str = None):
    """Configura el sistema de logging."""
    # Crear directorio de logs si no existe
    log_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), config.LOG_DIR)
    os.makedirs(log_dir, exist_ok=True)

    # Nombre del archivo de log con fecha
    log_filename = datetime.now().strftime("tts_%Y%m%d_%H%M%S.log")
    log_path = os.path.join(log_dir, log_filename)

    logging.basicConfig(
        level=getattr(logging, (level or config.LOG_LEVEL).upper()),
        format=config.LOG_FORMAT,
        handlers=[
            logging.FileHandler(log_path, encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ]
    )

    return logging.getLogger(__name__)


def report_metrics(logger, metrics: dict):
    """Registra las métricas como JSON en el log y las guarda en un fichero aparte."""
    logger.info("\n📊 MÉTRICAS (JSON):")
    logger.info(json.dumps(metrics, indent=2, ensure_ascii=False))

    metrics_path = os.path.join(
        os.path.dirname(os.path.abspath(__file__)),
        config.LOG_DIR,
        f"metrics_{metrics.get('command', 'run')}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json"
    )
    try:
        os.makedirs(os.path.dirname(metrics_path), exist_ok=True)
        with open(metrics_path, 'w', encoding='utf-8') as f:
            json.dump(metrics, f, indent=2, ensure_ascii=False)
        logger.info(f"Métricas guardadas en: {metrics_path}")
    except OSError as e:
        logger.warning(f"No se pudieron guardar métricas: {e}")


# =============================================================================
# Comandos
# =============================================================================

def run_preprocess(args, run_cfg, logger) -> int:
    logger.info("=== Preproceso ===")
    report = preprocess(args.manifest, args.out, run_cfg.dsp, with_linear=args.linear, workers=args.workers)

    failures = report.failures
    if failures:
        logger.warning(f"\n⚠️  {len(failures)} utterances fallaron:")
        error_counts = {}
        for failure in failures:
            error_counts[failure.error_type] = error_counts.get(failure.error_type, 0) + 1
            logger.warning(f"  • {failure.utt_id} [{failure.error_type}]: {failure.error_message}")
        error_labels = {
            ErrorType.UNREADABLE_WAV: "WAV ilegible o inexistente",
            ErrorType.RATE_MISMATCH: "Frecuencia de muestreo distinta",
            ErrorType.TEXT: "Texto sin normalizar",
            ErrorType.UNKNOWN: "Otros",
        }
        logger.warning("\n📊 Resumen por tipo de error:")
        for error_type, count in sorted(error_counts.items(), key=lambda x: -x[1]):
            logger.warning(f"  • {error_labels.get(error_type, error_type)}: {count}")
    else:
        logger.info("\n✓ Todas las utterances preprocesadas correctamente")

    report_metrics(logger, {
        "command": "preprocess",
        "timestamp": datetime.now().isoformat(),
        "utterances": len(report.results),
        "succeeded": report.succeeded,
        "failed": [{"id": f.utt_id, "error_type": f.error_type} for f in failures],
        "index": report.index_path,
    })
    return EXIT_RUNTIME if failures else EXIT_OK


def run_train_predictor(args, run_cfg, logger) -> int:
    logger.info("=== Entrenamiento del predictor ===")
    model_cfg = run_cfg.predictor
    kind = KIND_LINEAR if model_cfg.output_dim == run_cfg.dsp.fft_bins else KIND_MEL
    dataset = load_predictor_dataset(args.data, kind)
    train_cfg = run_cfg.train_predictor
    if args.steps:
        train_cfg = dataclasses.replace(train_cfg, max_steps=args.steps)

    log_path = os.path.join(args.out, "train_predictor.jsonl")
    os.makedirs(args.out, exist_ok=True)
    start = time.time()
    result = train_predictor(dataset, model_cfg, train_cfg, args.out, resume_from=args.resume, log_path=log_path)

    metrics = {"command": "train-predictor", "timestamp": datetime.now().isoformat(),
               "duration_seconds": int(time.time() - start), "target": kind,
               "final_step": result.final_step, "checkpoints": result.checkpoints}
    if result.records:
        metrics["log"] = summarize_log(log_path)
    report_metrics(logger, metrics)
    return EXIT_OK


def run_make_gta(args, run_cfg, logger) -> int:
    logger.info("=== Features GTA ===")
    model = restore_predictor(args.checkpoint)
    kind = KIND_LINEAR if model.cfg.output_dim == run_cfg.dsp.fft_bins else KIND_MEL
    dataset = load_predictor_dataset(args.data, kind)
    features = make_gta_features(model, dataset, seed=args.seed)
    paths = write_gta(args.out, features)
    report_metrics(logger, {"command": "make-gta", "timestamp": datetime.now().isoformat(),
                            "utterances": len(paths), "frames": {k: int(v.shape[0]) for k, v in features.items()}})
    return EXIT_OK


def run_train_vocoder(args, run_cfg, logger) -> int:
    logger.info(f"=== Entrenamiento del vocoder (features: {args.features}) ===")
    model_cfg = run_cfg.vocoder
    if args.features == FEATURES_LINEAR and model_cfg.conditioning_channels != run_cfg.dsp.fft_bins:
        logger.info(f"Condicionamiento lineal: conditioning_channels = {run_cfg.dsp.fft_bins}")
        model_cfg = dataclasses.replace(model_cfg, conditioning_channels=run_cfg.dsp.fft_bins)
    dataset = load_vocoder_dataset(args.data, args.features, gta_dir=args.gta_dir,
                                   target_scale=model_cfg.target_scale)
    train_cfg = run_cfg.train_vocoder
    if args.steps:
        train_cfg = dataclasses.replace(train_cfg, max_steps=args.steps)

    receptive, ms = model_cfg.receptive_field()
    logger.info(f"Vocoder: {model_cfg.total_layers} capas, ciclo {model_cfg.dilation_cycle_size}, "
                f"campo receptivo {receptive:,} muestras ({ms:.1f} ms)")
    log_path = os.path.join(args.out, "train_vocoder.jsonl")
    os.makedirs(args.out, exist_ok=True)
    start = time.time()
    result = train_vocoder(dataset, model_cfg, train_cfg, args.out, resume_from=args.resume, log_path=log_path)

    metrics = {"command": "train-vocoder", "timestamp": datetime.now().isoformat(),
               "duration_seconds": int(time.time() - start), "features": args.features,
               "final_step": result.final_step, "checkpoints": result.checkpoints}
    if result.records:
        metrics["log"] = summarize_log(log_path)
    report_metrics(logger, metrics)
    return EXIT_OK


def run_synthesize(args, run_cfg, logger) -> int:
    logger.info("=== Síntesis ===")
    result = synthesize(args.text, args.predictor, args.vocoder, args.out, run_cfg.dsp, seed=args.seed)
    print(result.summary())
    return EXIT_OK


def run_vocode(args, run_cfg, logger) -> int:
    logger.info("=== Copy-synthesis ===")
    result = vocode(args.features, args.vocoder, args.out, run_cfg.dsp, seed=args.seed)
    print(result.summary())
    return EXIT_OK


def run_evaluate(args, run_cfg, logger) -> int:
    logger.info("=== Evaluación ===")
    predictor = restore_predictor(args.predictor)
    kind = KIND_LINEAR if predictor.cfg.output_dim == run_cfg.dsp.fft_bins else KIND_MEL
    dataset = load_predictor_dataset(args.data, kind)
    vocoder, vocoder_dataset = None, None
    if args.vocoder:
        vocoder = restore_vocoder(args.vocoder, use_ema=True)
        vocoder_dataset = load_vocoder_dataset(args.data, args.features, gta_dir=args.gta_dir,
                                               target_scale=vocoder.cfg.target_scale)
    metrics = evaluate(predictor, dataset, vocoder, vocoder_dataset, seed=args.seed)
    report_metrics(logger, {"command": "evaluate", "timestamp": datetime.now().isoformat(), **metrics.to_dict()})
    return EXIT_OK


def run_analyze_rf(args, run_cfg, logger) -> int:
    rate = run_cfg.dsp.sample_rate_hz
    if args.table4:
        rows = reference_rows(rate)
    else:
        if None in (args.layers, args.cycles, args.cycle_size):
            raise ValidationError("analyze-rf requiere --layers, --cycles y --cycle-size (o --table4)")
        rows = [analyze_receptive_field(args.layers, args.cycles, args.cycle_size, rate)]
    for row in rows:
        print(row.format())
    return EXIT_OK


def run_make_toy_corpus(args, run_cfg, logger) -> int:
    manifest = make_toy_corpus(args.out, seed=args.seed, sample_rate=run_cfg.dsp.sample_rate_hz)
    print(manifest)
    return EXIT_OK


COMMANDS = {
    "preprocess": run_preprocess,
    "train-predictor": run_train_predictor,
    "make-gta": run_make_gta,
    "train-vocoder": run_train_vocoder,
    "synthesize": run_synthesize,
    "vocode": run_vocode,
    "evaluate": run_evaluate,
    "analyze-rf": run_analyze_rf,
    "make-toy-corpus": run_make_toy_corpus,
}


def build_parser() -> CliParser:
    parser = CliParser(description="Síntesis de voz en dos etapas: predictor de espectrogramas + vocoder")
    parser.add_argument('--seed', type=int, default=0, help='Semilla global de toda la aleatoriedad (default: 0)')
    parser.add_argument('--config', type=str, default=None, help='Fichero INI de configuración (default: presets)')
    parser.add_argument('--log-level', type=str, default=config.LOG_LEVEL,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Nivel de logging')
    parser.add_argument('--geometry', type=str, default=None, choices=sorted(config.REFERENCE_GEOMETRIES),
                        help='Geometría del vocoder de la tabla de campo receptivo')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('preprocess', help='Extraer features de un manifest')
    p.add_argument('--manifest', required=True, help='Manifest id|transcripción|wav')
    p.add_argument('--out', required=True, help='Directorio de features')
    p.add_argument('--linear', action='store_true', help='Guardar también espectrogramas lineales (1025 bins)')
    p.add_argument('--workers', type=int, default=4, help='Workers en paralelo (default: 4)')

    p = sub.add_parser('train-predictor', help='Entrenar el predictor con teacher forcing')
    p.add_argument('--data', required=True, help='Directorio de features')
    p.add_argument('--out', required=True, help='Directorio de checkpoints')
    p.add_argument('--resume', default=None, help='Checkpoint desde el que continuar')
    p.add_argument('--steps', type=int, default=None, help='Sobrescribe max_steps')

    p = sub.add_parser('make-gta', help='Generar features GTA con un predictor entrenado')
    p.add_argument('--data', required=True, help='Directorio de features')
    p.add_argument('--checkpoint', required=True, help='Checkpoint del predictor')
    p.add_argument('--out', required=True, help='Directorio de salida de las features GTA')

    p = sub.add_parser('train-vocoder', help='Entrenar el vocoder WaveNet')
    p.add_argument('--data', required=True, help='Directorio de features')
    p.add_argument('--out', required=True, help='Directorio de checkpoints')
    p.add_argument('--features', choices=VOCODER_FEATURE_CHOICES, default=FEATURES_GTA,
                   help='Features de condicionamiento (default: gta)')
    p.add_argument('--gta-dir', default=None, help='Directorio de make-gta (con --features gta)')
    p.add_argument('--resume', default=None, help='Checkpoint desde el que continuar')
    p.add_argument('--steps', type=int, default=None, help='Sobrescribe max_steps')

    p = sub.add_parser('synthesize', help='Texto → WAV')
    p.add_argument('--text', required=True, help='Texto normalizado (sin dígitos)')
    p.add_argument('--predictor', required=True, help='Checkpoint del predictor')
    p.add_argument('--vocoder', required=True, help=f"Checkpoint del vocoder o '{GRIFFIN_LIM}'")
    p.add_argument('--out', required=True, help='WAV de salida')

    p = sub.add_parser('vocode', help='Features guardadas → WAV (copy-synthesis)')
    p.add_argument('--features', required=True, help='FeatureFile de entrada')
    p.add_argument('--vocoder', required=True, help=f"Checkpoint del vocoder o '{GRIFFIN_LIM}'")
    p.add_argument('--out', required=True, help='WAV de salida')

    p = sub.add_parser('evaluate', help='Métricas objetivas sobre un conjunto reservado')
    p.add_argument('--data', required=True, help='Directorio de features del conjunto reservado')
    p.add_argument('--predictor', required=True, help='Checkpoint del predictor')
    p.add_argument('--vocoder', default=None, help='Checkpoint del vocoder (opcional)')
    p.add_argument('--features', choices=VOCODER_FEATURE_CHOICES, default=FEATURES_GROUND_TRUTH,
                   help='Features para la NLL del vocoder (default: ground-truth)')
    p.add_argument('--gta-dir', default=None, help='Directorio GTA (con --features gta)')

    p = sub.add_parser('analyze-rf', help='Campo receptivo del vocoder')
    p.add_argument('--layers', type=int, default=None)
    p.add_argument('--cycles', type=int, default=None)
    p.add_argument('--cycle-size', type=int, default=None)
    p.add_argument('--table4', '--reference', dest='table4', action='store_true',
                   help='Imprimir las cuatro geometrías de referencia')

    p = sub.add_parser('make-toy-corpus', help='Generar el corpus sintético de juguete')
    p.add_argument('--out', required=True, help='Directorio del corpus')
    return parser


def main(argv=None) -> int:
    """Punto de entrada principal; devuelve el código de salida."""
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    logger = setup_logging(args.log_level)
    logger.info(f"Inicio de ejecución: {datetime.now().isoformat()} ({args.command}, seed={args.seed})")

    try:
        run_cfg = load_run_config(args.config, seed=args.seed, geometry=args.geometry)
        return COMMANDS[args.command](args, run_cfg, logger)
    except ValidationError as e:
        logger.error(f"❌ Error de validación: {e}")
        return EXIT_VALIDATION
    except Exception as e:
        logger.exception(f"❌ Error en ejecución: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
