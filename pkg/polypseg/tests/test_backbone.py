import pytest
import torch

from polypseg.core.exceptions import CheckpointError, ShapeError
from polypseg.models.backbone import (
    PyramidVisionTransformer, SRAttention, count_parameters, load_pretrained,
)
from polypseg.models.checkpoint import write_tensor_map
from polypseg.models.layers import count_parameters as module_parameters
from polypseg.schemas.model import BackboneConfig, ModelConfig

DEFAULT_BACKBONE_PARAMETERS = 44_725_696


@pytest.fixture
def desk_backbone(desk_config):
    return PyramidVisionTransformer(desk_config.backbone).eval()


def test_pyramid_shapes(desk_backbone):
    feats = desk_backbone(torch.randn(2, 3, 64, 64))
    assert feats.x1.shape == (2, 16, 16, 16)
    assert feats.x2.shape == (2, 32, 8, 8)
    assert feats.x3.shape == (2, 48, 4, 4)
    assert feats.x4.shape == (2, 64, 2, 2)


def test_non_square_input(desk_backbone):
    feats = desk_backbone(torch.randn(1, 3, 64, 96))
    assert feats.x4.shape == (1, 64, 2, 3)


def test_rejects_indivisible_size(desk_backbone):
    with pytest.raises(ShapeError) as exc:
        desk_backbone(torch.randn(1, 3, 60, 64))
    assert exc.value.details["stage"] == "input"


def test_rejects_wrong_channels(desk_backbone):
    with pytest.raises(ShapeError):
        desk_backbone(torch.randn(1, 1, 64, 64))


def test_stage_names(desk_backbone):
    names = set(desk_backbone.state_dict())
    assert "stage1.patch_embed.proj.weight" in names
    assert "stage3.block1.attn.sr.weight" in names
    assert "stage4.block0.attn.kv.weight" in names
    # stage 4 attends at full resolution
    assert not any(n.startswith("stage4.block0.attn.sr") for n in names)


def test_spatial_reduction_attention():
    attn = SRAttention(16, num_heads=2, sr_ratio=2).eval()
    out, weights = attn(torch.randn(1, 64, 16), 8, 8, return_attention=True)
    assert out.shape == (1, 64, 16)
    assert weights.shape == (1, 2, 64, 16)
    torch.testing.assert_close(weights.sum(-1), torch.ones(1, 2, 64))


def test_eval_outputs_are_bitwise_repeatable(desk_backbone):
    x = torch.randn(2, 3, 64, 64)
    with torch.no_grad():
        first = desk_backbone(x)
        second = desk_backbone(x)
    for a, b in zip(first, second):
        assert torch.equal(a, b)


def test_single_token_attention_is_value_projection():
    attn = SRAttention(16, num_heads=4, sr_ratio=1).eval()
    x = torch.randn(3, 1, 16)
    with torch.no_grad():
        expected = attn.proj(attn.kv(x)[..., 16:])
        torch.testing.assert_close(attn(x, 1, 1), expected)


@pytest.mark.parametrize("cfg", [
    ModelConfig.desk().backbone,
    ModelConfig.desk().backbone.model_copy(update={"qkv_bias": False, "depths": [1, 3, 2, 1]}),
    BackboneConfig(embed_dims=[8, 16, 24, 32], num_heads=[1, 1, 2, 2], mlp_ratios=[2, 2, 2, 2],
                   depths=[1, 1, 1, 1], sr_ratios=[4, 2, 1, 1], patch_size=2),
])
def test_closed_form_parameter_count(cfg):
    assert count_parameters(cfg) == module_parameters(PyramidVisionTransformer(cfg))


def test_default_parameter_count():
    assert count_parameters(BackboneConfig()) == DEFAULT_BACKBONE_PARAMETERS


@pytest.mark.slow
def test_default_backbone_instantiates():
    backbone = PyramidVisionTransformer(BackboneConfig()).eval()
    assert module_parameters(backbone) == DEFAULT_BACKBONE_PARAMETERS
    with torch.no_grad():
        feats = backbone(torch.randn(1, 3, 352, 352))
    assert feats.x1.shape == (1, 64, 88, 88)
    assert feats.x4.shape == (1, 512, 11, 11)


class TestLoadPretrained:
    def test_round_trip(self, tmp_path, desk_config):
        source = PyramidVisionTransformer(desk_config.backbone)
        weights = write_tensor_map(
            {f"backbone.{k}": v for k, v in source.state_dict().items()}, tmp_path / "w.pt",
        )
        target = PyramidVisionTransformer(desk_config.backbone)
        report = load_pretrained(target, weights)
        assert report.complete
        for k, v in source.state_dict().items():
            torch.testing.assert_close(target.state_dict()[k], v)

    def test_shape_mismatch(self, tmp_path, desk_config):
        other = desk_config.backbone.model_copy(update={"embed_dims": [16, 32, 48, 96]})
        weights = write_tensor_map(PyramidVisionTransformer(other).state_dict(), tmp_path / "w.pt")
        with pytest.raises(CheckpointError) as exc:
            load_pretrained(PyramidVisionTransformer(desk_config.backbone), weights, strict=False)
        assert exc.value.details["mismatched"]

    def test_partial_load(self, tmp_path, desk_config):
        state = PyramidVisionTransformer(desk_config.backbone).state_dict()
        partial = {k: v for k, v in state.items() if k.startswith("stage1.")}
        weights = write_tensor_map(partial, tmp_path / "w.pt")
        target = PyramidVisionTransformer(desk_config.backbone)
        with pytest.raises(CheckpointError):
            load_pretrained(target, weights)
        report = load_pretrained(target, weights, strict=False)
        assert len(report.loaded) == len(partial)
        assert all(not k.startswith("stage1.") for k in report.missing)
