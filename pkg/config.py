"""
Configuración del sistema de síntesis de voz (predictor de espectrogramas + vocoder).
"""

# =============================================================================
# Front end de señal (DSP)
# =============================================================================

# 16-bit a 24 kHz; tramas de 50 ms con salto de 12.5 ms (300 muestras)
DSP_DEFAULTS = {
    "sample_rate_hz": 24000,
    "frame_length_ms": 50.0,
    "hop_ms": 12.5,
    "fft_size": 2048,
    "mel_channels": 80,
    "mel_fmin_hz": 125.0,
    "mel_fmax_hz": 7600.0,
    "clip_floor": 0.01,
    "griffin_lim_iters": 60,
}

# Semilla de la fase aleatoria inicial de Griffin-Lim
GRIFFIN_LIM_SEED = 0

# Factor de escala de las muestras objetivo del vocoder
TARGET_SCALE = 127.5

# =============================================================================
# Predictor de espectrogramas
# =============================================================================

# Tamaño "full": anchos y profundidades completos
PREDICTOR_FULL = {
    "embedding_dim": 512,
    "encoder_conv_layers": 3,
    "encoder_conv_filters": 512,
    "encoder_conv_width": 5,
    "encoder_lstm_units": 512,
    "attention_dim": 128,
    "location_filters": 32,
    "location_kernel": 31,
    "prenet_units": 256,
    "prenet_layers": 2,
    "decoder_lstm_units": 1024,
    "decoder_lstm_layers": 2,
    "postnet_layers": 5,
    "postnet_filters": 512,
    "postnet_width": 5,
    "max_decoder_steps": 1000,
}

# Tamaño "desk": misma arquitectura, anchos reducidos para CPU
PREDICTOR_DESK = {
    "embedding_dim": 32,
    "encoder_conv_layers": 3,
    "encoder_conv_filters": 32,
    "encoder_conv_width": 5,
    "encoder_lstm_units": 32,
    "attention_dim": 16,
    "location_filters": 8,
    "location_kernel": 31,
    "prenet_units": 32,
    "prenet_layers": 2,
    "decoder_lstm_units": 64,
    "decoder_lstm_layers": 2,
    "postnet_layers": 5,
    "postnet_filters": 32,
    "postnet_width": 5,
    "max_decoder_steps": 400,
}

# =============================================================================
# Vocoder WaveNet
# =============================================================================

VOCODER_FULL = {
    "total_layers": 30,
    "dilation_cycle_size": 10,
    "residual_channels": 512,
    "skip_channels": 256,
}

VOCODER_DESK = {
    "total_layers": 12,
    "dilation_cycle_size": 6,
    "residual_channels": 64,
    "skip_channels": 128,
}

# Geometrías de la tabla de campo receptivo: nombre → (capas, ciclos, tamaño de ciclo)
REFERENCE_GEOMETRIES = {
    "rf-30x3": (30, 3, 10),
    "rf-24x4": (24, 4, 6),
    "rf-12x2": (12, 2, 6),
    "rf-30x30": (30, 30, 1),
}

# Suelo de log-escala de la mezcla de logísticas
LOG_SCALE_FLOOR = -7.0

# =============================================================================
# Entrenamiento
# =============================================================================

TRAIN_PREDICTOR = {
    "batch_size": 8,
    "learning_rate": 1e-3,
    "lr_final": 1e-5,
    "decay_start": 50000,
    "decay_end": 150000,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_epsilon": 1e-6,
    "l2_weight": 1e-6,
    "ema_decay": 0.0,
    "max_steps": 2000,
    "checkpoint_every": 500,
    "log_every": 50,
}

TRAIN_VOCODER = {
    "batch_size": 2,
    "learning_rate": 1e-4,
    "lr_final": 1e-4,
    "decay_start": 0,
    "decay_end": 0,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_epsilon": 1e-8,
    "l2_weight": 0.0,
    "ema_decay": 0.9999,
    "max_steps": 2000,
    "checkpoint_every": 500,
    "log_every": 50,
    "crop_frames": 16,
}

# Momentum de las estadísticas acumuladas de batch normalization
BATCHNORM_MOMENTUM = 0.99

# =============================================================================
# Corpus de juguete
# =============================================================================

# Frases del corpus sintético (texto ya normalizado, sin dígitos)
TOY_CORPUS_SENTENCES = [
    "hello world.",
    "a cat sat.",
    "speech is fun!",
    "go north, then east.",
]

# Duración de cada carácter en el corpus sintético (ms)
TOY_CHAR_MS = 75.0

# =============================================================================
# Configuración de Logging
# =============================================================================

LOG_DIR = "logs"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVEL = "INFO"

# =============================================================================
# Configuración actual
# =============================================================================

# Escala por defecto de los modelos que crea la CLI ("desk" o "full")
CURRENT_SCALE = "desk"
