import numpy as np
import pytest
import torch

from polypseg.core.exceptions import ConfigError, ShapeError
from polypseg.models.cfm import CFM, plain_fusion
from polypseg.models.cim import CIM, ChannelAttention
from polypseg.models.layers import count_parameters, resize
from polypseg.models.polyp_pvt import PolypPVT, build_model, parameter_groups
from polypseg.models.sam import SAM, GraphConv, build_graph_layer, zero_residual
from polypseg.schemas.model import AblationVariant, DecoderConfig
from polypseg.services.gradcheck import decoder_oracle_suites, run_gradcheck


def _names(cfg, variant):
    return set(PolypPVT(cfg.with_variant(variant)).state_dict())


def _prefixes(names):
    return {n.split(".")[0] for n in names}


class TestPolypPVT:
    def test_prediction_triple(self, desk_config):
        model = build_model(desk_config).eval()
        with torch.no_grad():
            pred = model(torch.randn(2, 3, 64, 64))
        for logits in pred:
            assert logits.shape == (2, 1, 64, 64)
        torch.testing.assert_close(pred.p_final, pred.p1 + pred.p2)

    def test_decoder_strides(self, desk_config):
        model = PolypPVT(desk_config).eval()
        with torch.no_grad():
            out = model.decode(model.backbone(torch.randn(1, 3, 64, 64)))
        assert out.t1.shape == (1, 8, 8, 8)
        assert out.t2.shape == (1, 16, 16, 16)
        assert out.z.shape == (1, 8, 8, 8)

    @pytest.mark.parametrize("variant", list(AblationVariant))
    def test_every_variant_runs(self, desk_config, variant):
        model = PolypPVT(desk_config.with_variant(variant)).eval()
        with torch.no_grad():
            pred = model(torch.randn(1, 3, 64, 64))
        assert pred.p_final.shape == (1, 1, 64, 64)
        assert torch.isfinite(pred.p_final).all()

    def test_structural_wiring(self, desk_config):
        full = _prefixes(_names(desk_config, AblationVariant.FULL))
        assert full == {"backbone", "reduce", "cfm", "cim", "sam", "head"}
        assert _prefixes(_names(desk_config, AblationVariant.NO_CFM)) == full - {"cfm"}
        assert _prefixes(_names(desk_config, AblationVariant.NO_CIM)) == full - {"cim"}
        assert _prefixes(_names(desk_config, AblationVariant.NO_SAM)) == full - {"sam"} | {"fuse"}
        assert _prefixes(_names(desk_config, AblationVariant.BASELINE)) == {
            "backbone", "reduce", "head",
        }

    def test_graph_variants_differ_only_in_graph(self, desk_config):
        full = _names(desk_config, AblationVariant.FULL)
        nogcn = _names(desk_config, AblationVariant.SAM_NOGCN)
        conv = _names(desk_config, AblationVariant.SAM_CONV)
        assert full - nogcn == {n for n in full if n.startswith("sam.graph.")}
        assert nogcn < conv
        assert conv - nogcn == {"sam.graph.conv.weight", "sam.graph.conv.bias"}

    def test_sam_parameter_ordering(self, desk_config):
        counts = {
            v: count_parameters(PolypPVT(desk_config.with_variant(v)))
            for v in (AblationVariant.SAM_NOGCN, AblationVariant.SAM_CONV, AblationVariant.FULL)
        }
        assert counts[AblationVariant.SAM_NOGCN] < counts[AblationVariant.SAM_CONV]
        assert counts[AblationVariant.SAM_CONV] <= counts[AblationVariant.FULL]

    def test_parameter_groups(self, desk_config):
        model = PolypPVT(desk_config)
        groups = parameter_groups(model)
        assert sum(groups.values()) == count_parameters(model)


class TestCFM:
    def test_output_at_x2_resolution(self):
        cfm = CFM(4).eval()
        out = cfm(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4), torch.randn(1, 4, 2, 2))
        assert out.shape == (1, 4, 8, 8)

    def test_stride_gap_enforced(self):
        with pytest.raises(ShapeError):
            CFM(4)(torch.randn(1, 4, 8, 8), torch.randn(1, 4, 4, 4), torch.randn(1, 4, 4, 4))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            CFM(4)(torch.randn(1, 4, 8, 8), torch.randn(1, 5, 4, 4), torch.randn(1, 4, 2, 2))

    def test_plain_fusion_of_constants(self):
        out = plain_fusion(torch.ones(1, 2, 8, 8), 2 * torch.ones(1, 2, 4, 4),
                           3 * torch.ones(1, 2, 2, 2))
        torch.testing.assert_close(out, 6 * torch.ones(1, 2, 8, 8))

    def test_zero_x3_collapses_products(self):
        cfm = CFM(4).eval()
        x2, x4 = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 2, 2)
        zero = torch.zeros(1, 4, 4, 4)
        with torch.no_grad():
            out = cfm(x2, zero, x4)
            up = resize(x4, (4, 4))
            x34 = cfm.f3(torch.cat([torch.zeros_like(up), cfm.f2(up)], dim=1))
            torch.testing.assert_close(cfm.part1(zero, x4), x34)
            size = (8, 8)
            product = cfm.f4(resize(x4, size)) * cfm.f5(torch.zeros(1, 4, 8, 8)) * x2
            expected = cfm.f8(cfm.f7(torch.cat([product, cfm.f6(resize(x34, size))], dim=1)))
        torch.testing.assert_close(out, expected)


class TestCIM:
    def test_shape_preserved(self):
        x = torch.randn(2, 16, 8, 8)
        assert CIM(16, reduction=4)(x).shape == x.shape

    def test_gates_bounded(self):
        ca = ChannelAttention(16, reduction=4)
        gate = ca.gate(torch.randn(1, 16, 8, 8))
        assert gate.shape == (1, 16, 1, 1)
        assert ((gate > 0) & (gate < 1)).all()

    def test_reduction_must_divide(self):
        with pytest.raises(ConfigError):
            ChannelAttention(10, reduction=4)

    def test_zero_input_gives_zero(self):
        cim = CIM(16, reduction=4).eval()
        zero = torch.zeros(2, 16, 8, 8)
        assert torch.equal(cim(zero), zero)


class TestSAM:
    @pytest.fixture
    def cfg(self):
        return DecoderConfig(channel=8, sam_pool=6, sam_nodes=4, sam_state=4)

    def test_trace_shapes(self, cfg):
        sam = SAM(cfg, t2_channels=16).eval()
        with torch.no_grad():
            trace = sam(torch.randn(2, 8, 8, 8), torch.randn(2, 16, 16, 16), trace=True)
        assert trace.attention.shape == (2, 1, 8, 8)
        assert trace.v.shape == (2, 4, 16)
        assert trace.f.shape == (2, 16, 64)
        torch.testing.assert_close(trace.f.sum(-1), torch.ones(2, 16))
        assert trace.z.shape == (2, 8, 8, 8)

    def test_zero_residual_is_identity(self, cfg):
        sam = SAM(cfg, t2_channels=16).eval()
        zero_residual(sam)
        t1 = torch.randn(1, 8, 8, 8)
        with torch.no_grad():
            torch.testing.assert_close(sam(t1, torch.randn(1, 16, 16, 16)), t1)

    def test_lifted_wz(self, cfg):
        lifted = cfg.model_copy(update={"sam_wz_in": 8})
        sam = SAM(lifted, t2_channels=16).eval()
        assert isinstance(sam.lift, torch.nn.Conv2d)
        with torch.no_grad():
            assert sam(torch.randn(1, 8, 8, 8), torch.randn(1, 16, 16, 16)).shape == (1, 8, 8, 8)

    def test_rejects_wrong_t1_channels(self, cfg):
        with pytest.raises(ShapeError):
            SAM(cfg, t2_channels=16)(torch.randn(1, 6, 8, 8), torch.randn(1, 16, 16, 16))

    def test_graph_layer_formula(self):
        layer = GraphConv(num_state=3, num_node=4).double()
        x = torch.randn(2, 3, 4, dtype=torch.float64)
        a = layer.adjacency.weight[:, :, 0]
        ws = layer.state.weight[:, :, 0]
        expected = torch.relu(ws @ (x @ a.T + layer.adjacency.bias - x))
        torch.testing.assert_close(layer(x), expected)

    def test_no_graph_for_ablated_sam(self):
        with pytest.raises(ConfigError):
            build_graph_layer(AblationVariant.NO_SAM, 4, 4)


def test_dense_oracles():
    results = decoder_oracle_suites()
    assert {r.suite for r in results} == {
        "decoder.cfm", "decoder.cim", "decoder.sam[full]", "decoder.sam[sam_conv]",
        "decoder.sam[sam_nogcn]",
    }
    for r in results:
        assert r.max_error < 1e-5, r.suite


@pytest.mark.parametrize("module", ["cfm", "cim", "sam"])
def test_decoder_gradients(module):
    report = run_gradcheck(module, seed=0)
    assert report.passed, [(r.suite, r.max_error) for r in report.results]
    assert all(len(r.entries) == 10 for r in report.results)
    assert np.isfinite([r.max_error for r in report.results]).all()
