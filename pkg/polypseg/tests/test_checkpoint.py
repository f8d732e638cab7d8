import pytest
import torch

from polypseg.core.exceptions import CheckpointError, FileProcessingError
from polypseg.models.checkpoint import (
    load_checkpoint, load_state, read_checkpoint_config, read_tensor_map, save_checkpoint,
    sidecar_path, write_tensor_map,
)
from polypseg.models.polyp_pvt import PolypPVT
from polypseg.schemas.model import AblationVariant
from polypseg.services.evaluator import score_manifest


def test_round_trip(tmp_path, desk_config):
    model = PolypPVT(desk_config.with_variant(AblationVariant.SAM_CONV))
    path = save_checkpoint(model, tmp_path / "ckpt" / "model.pt",
                           desk_config.with_variant(AblationVariant.SAM_CONV))
    assert sidecar_path(path).is_file()
    assert read_checkpoint_config(path).decoder.variant is AblationVariant.SAM_CONV

    restored, config = load_checkpoint(path)
    assert config == desk_config.with_variant(AblationVariant.SAM_CONV)
    assert not restored.training
    for name, tensor in model.state_dict().items():
        assert torch.equal(restored.state_dict()[name], tensor), name


def test_flat_names(tmp_path, desk_config):
    path = save_checkpoint(PolypPVT(desk_config), tmp_path / "model.pt", desk_config)
    names = set(read_tensor_map(path))
    assert "backbone.stage1.block0.attn.q.weight" in names
    assert "sam.graph.adjacency.weight" in names


def test_variant_mismatch(tmp_path, desk_config):
    path = write_tensor_map(PolypPVT(desk_config).state_dict(), tmp_path / "full.pt")
    model = PolypPVT(desk_config.with_variant(AblationVariant.NO_CIM))
    with pytest.raises(CheckpointError) as exc:
        load_state(model, read_tensor_map(path))
    assert any(k.startswith("cim.") for k in exc.value.details["unexpected"])
    assert not exc.value.details["missing"]


def test_shape_mismatch(tmp_path, desk_config):
    wide = desk_config.model_copy(update={
        "decoder": desk_config.decoder.model_copy(update={"channel": 16}),
    })
    path = write_tensor_map(PolypPVT(wide).state_dict(), tmp_path / "wide.pt")
    with pytest.raises(CheckpointError) as exc:
        load_state(PolypPVT(desk_config), read_tensor_map(path))
    assert "head.p1.weight" in exc.value.details["mismatched"]


def test_missing_sidecar(tmp_path, desk_config):
    path = write_tensor_map(PolypPVT(desk_config).state_dict(), tmp_path / "bare.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileProcessingError):
        read_tensor_map(tmp_path / "nope.pt")


def test_not_a_tensor_map(tmp_path):
    path = tmp_path / "list.pt"
    torch.save({"a": torch.zeros(1), "b": [1, 2]}, path)
    with pytest.raises((CheckpointError, FileProcessingError)):
        read_tensor_map(path)


def test_scores_survive_round_trip(tmp_path, desk_config, synthetic, desk_data):
    model = PolypPVT(desk_config).eval()
    path = save_checkpoint(model, tmp_path / "model.pt", desk_config)
    restored, _ = load_checkpoint(path)
    before = score_manifest(model, synthetic, desk_data, native=False)
    after = score_manifest(restored, synthetic, desk_data, native=False)
    assert before.per_image == after.per_image
