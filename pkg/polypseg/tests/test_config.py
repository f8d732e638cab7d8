import math
from pathlib import Path

import pydantic
import pytest

from polypseg.cli.deps import load_document
from polypseg.core.config import Settings
from polypseg.core.exceptions import (
    EXCEPTION_EXIT_CODES, CommandFailed, ConfigError, DataError, create_click_exception,
)
from polypseg.schemas.model import (
    AblationVariant, BackboneConfig, DecoderConfig, ModelConfig,
)
from polypseg.schemas.training import LossConfig, TrainConfig
from polypseg.services.trainer import planned_iterations

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


class TestSettings:
    def test_defaults(self):
        s = Settings(_env_file=None)
        assert s.THRESHOLD_LEVELS == 256
        assert s.DEVICE == "cpu"

    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv("POLYPSEG_FROC_STRIDE", "16")
        monkeypatch.setenv("POLYPSEG_LOG_LEVEL", "debug")
        s = Settings(_env_file=None)
        assert s.FROC_STRIDE == 16
        assert s.LOG_LEVEL == "DEBUG"

    def test_unknown_log_level(self, monkeypatch):
        monkeypatch.setenv("POLYPSEG_LOG_LEVEL", "chatty")
        with pytest.raises(pydantic.ValidationError):
            Settings(_env_file=None)


class TestSchemas:
    def test_image_size_multiple_of_32(self):
        with pytest.raises(pydantic.ValidationError):
            TrainConfig(image_size=350)

    def test_even_weight_window(self):
        with pytest.raises(pydantic.ValidationError):
            LossConfig(weight_window=30)

    def test_heads_divide_dims(self):
        with pytest.raises(pydantic.ValidationError):
            BackboneConfig(embed_dims=[64, 128, 320, 512], num_heads=[3, 2, 5, 8])

    def test_nodes_fit_pool(self):
        with pytest.raises(pydantic.ValidationError):
            DecoderConfig(sam_pool=4, sam_nodes=5)

    def test_crop_offset(self):
        cfg = DecoderConfig()
        assert cfg.num_nodes == 16
        assert cfg.crop_offset == 1

    def test_with_variant(self):
        cfg = ModelConfig.desk().with_variant("no_cim")
        assert cfg.decoder.variant is AblationVariant.NO_CIM
        assert cfg.backbone == ModelConfig.desk().backbone

    def test_variant_labels(self):
        assert AblationVariant.FULL.label == "Final"
        assert AblationVariant.BASELINE.label == "Bas."
        assert not AblationVariant.BASELINE.uses_sam


class TestDocuments:
    def test_standard_yaml_matches_defaults(self):
        doc = load_document(CONFIG_DIR / "standard.yaml")
        assert doc.model == ModelConfig.standard()
        assert doc.train.lr == 1e-4
        assert doc.train.clip == 0.5
        assert doc.train.batch == 16

    def test_desk_yaml(self):
        doc = load_document(CONFIG_DIR / "desk.yaml", preset="desk")
        assert doc.model == ModelConfig.desk()
        assert doc.train.image_size == 64

    def test_desk_yaml_reaches_its_iteration_cap(self):
        # the synth command writes eight images; val_fraction 0 keeps them all for training
        train = load_document(CONFIG_DIR / "desk.yaml", preset="desk").train
        assert train.val_fraction == 0.0
        assert train.epochs * math.ceil(8 / train.batch) >= train.max_iterations
        assert planned_iterations(train, 8) == 200

    def test_partial_document_keeps_preset(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("model:\n  decoder:\n    variant: no_sam\ntrain:\n  epochs: 3\n")
        doc = load_document(path, preset="desk")
        assert doc.model.decoder.variant is AblationVariant.NO_SAM
        assert doc.model.backbone == ModelConfig.desk().backbone
        assert doc.train.epochs == 3

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("train:\n  epochs: 3\n")
        doc = load_document(path, overrides={"train": {"epochs": 7}})
        assert doc.train.epochs == 7

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("train:\n  learning_rate: 0.1\n")
        with pytest.raises(ConfigError) as exc:
            load_document(path)
        assert any("learning_rate" in e for e in exc.value.details["errors"])

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_document(path)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_document(preset="huge")


def test_exit_codes():
    exc = create_click_exception(DataError("no pairs", ["a.png"]))
    assert isinstance(exc, CommandFailed)
    assert exc.exit_code == EXCEPTION_EXIT_CODES["DATA_ERROR"]
    assert "DATA_ERROR" in exc.message
