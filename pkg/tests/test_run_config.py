"""
Tests de la carga de configuración desde INI.

Ejecutar: pytest tests/test_run_config.py -v
"""
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import config
from errors import ConfigError, ValidationError
from run_config import build_run_config, load_run_config, parse_ini


def load(text, **kwargs):
    return build_run_config(parse_ini(text), **kwargs)


class TestDefaults:
    """Tests de la configuración por defecto"""

    def test_defaults_without_file(self):
        cfg = load_run_config(seed=7)
        assert cfg.dsp.hop_length == 300
        assert cfg.predictor.output_dim == 80
        assert cfg.predictor.decoder_lstm_units == config.PREDICTOR_DESK["decoder_lstm_units"]
        assert cfg.vocoder.total_layers == config.VOCODER_DESK["total_layers"]
        assert cfg.vocoder.conditioning_channels == 80
        assert cfg.train_predictor.seed == 7
        assert cfg.train_vocoder.ema_decay == 0.9999
        assert cfg.source is None

    def test_to_dict_sections(self):
        data = load_run_config().to_dict()
        assert set(data) == {"dsp", "predictor", "vocoder", "train.predictor", "train.vocoder"}


class TestSections:
    """Tests de cada sección del INI"""

    def test_typed_values(self):
        cfg = load("[predictor]\nzoneout_p = 0.2\npostnet_enabled = false\n"
                   "[train]\nclip_norm = 1.5\n[train.vocoder]\ncrop_frames = 4\n")
        assert cfg.predictor.zoneout_p == 0.2
        assert cfg.predictor.postnet_enabled is False
        assert cfg.train_predictor.clip_norm == 1.5
        assert cfg.train_vocoder.clip_norm == 1.5
        assert cfg.train_vocoder.crop_frames == 4

    def test_stage_overrides_common(self):
        cfg = load("[train]\nbatch_size = 3\n[train.predictor]\nbatch_size = 5\n")
        assert cfg.train_predictor.batch_size == 5
        assert cfg.train_vocoder.batch_size == 3

    def test_optional_none(self):
        cfg = load("[train]\nclip_norm = none\n")
        assert cfg.train_predictor.clip_norm is None

    def test_linear_output(self):
        cfg = load("[predictor]\noutput = linear\n")
        assert cfg.predictor.output_dim == 1025

    def test_output_and_output_dim_conflict(self):
        with pytest.raises(ConfigError):
            load("[predictor]\noutput = linear\noutput_dim = 12\n")

    def test_full_scale(self):
        cfg = load("[predictor]\nscale = full\n[vocoder]\nscale = full\n")
        assert cfg.predictor.encoder_lstm_units == 512
        assert cfg.vocoder.total_layers == 30

    def test_upsample_factors_tuple(self):
        cfg = load("[dsp]\nhop_ms = 10\n[vocoder]\nupsample_factors = 12, 20\n")
        assert cfg.vocoder.upsample_factors == (12, 20)
        assert cfg.vocoder.hop_length == 240

    def test_geometry(self):
        cfg = load("[vocoder]\ngeometry = rf-12x2\n")
        assert cfg.vocoder.total_layers == 12

    def test_geometry_flag_wins(self):
        cfg = load("[vocoder]\ngeometry = rf-12x2\n", geometry="rf-24x4")
        assert cfg.vocoder.total_layers == 24

    def test_geometry_with_scale_rejected(self):
        with pytest.raises(ConfigError):
            load("[vocoder]\ngeometry = rf-12x2\nscale = full\n")


class TestErrors:
    """Tests de configuraciones inválidas"""

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="secciones desconocidas"):
            load("[decoder]\nunits = 3\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="clave desconocida"):
            load("[predictor]\nwidth = 3\n")

    def test_reserved_seed(self):
        with pytest.raises(ConfigError):
            load("[train]\nseed = 3\n")

    def test_vocoder_hop_is_derived(self):
        with pytest.raises(ConfigError):
            load("[vocoder]\nhop_length = 200\n")

    def test_bad_number(self):
        with pytest.raises(ConfigError, match="valor inválido"):
            load("[dsp]\nfft_size = big\n")

    def test_bad_boolean(self):
        with pytest.raises(ConfigError):
            load("[predictor]\npostnet_enabled = maybe\n")

    def test_invariant_checked_by_dataclass(self):
        with pytest.raises(ConfigError):
            load("[dsp]\nhop_ms = 12.51\n")

    def test_bad_choice(self):
        with pytest.raises(ConfigError):
            load("[predictor]\nscale = huge\n")

    def test_malformed_ini(self):
        with pytest.raises(ConfigError):
            parse_ini("no section header\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(str(tmp_path / "nope.ini"))

    def test_config_error_is_validation_error(self):
        with pytest.raises(ValidationError):
            load("[dsp]\nmel_channels = 0\n")

    def test_loaded_from_file(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train.predictor]\nmax_steps = 3\n", encoding="utf-8")
        cfg = load_run_config(str(path), seed=1)
        assert cfg.train_predictor.max_steps == 3
        assert cfg.source == str(path)
