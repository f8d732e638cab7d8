from typing import Dict, NamedTuple, Optional

import torch
import torch.nn as nn

from polypseg.core.logger import get_logger
from polypseg.models.backbone import PyramidFeatures, PyramidVisionTransformer
from polypseg.models.cfm import CFM, ChannelReduction, plain_fusion
from polypseg.models.cim import CIM
from polypseg.models.layers import BasicConv2d, count_parameters, resize
from polypseg.models.sam import SAM
from polypseg.schemas.model import AblationVariant, ModelConfig

logger = get_logger(__name__)


class PredictionTriple(NamedTuple):
    p1: torch.Tensor
    p2: torch.Tensor
    p_final: torch.Tensor


class DecoderOutputs(NamedTuple):
    t1: torch.Tensor
    t2: Optional[torch.Tensor]
    z: torch.Tensor


class PolypPVT(nn.Module):
    """PVT encoder + CFM / CIM / SAM decoder with two 1×1 prediction heads.

    The decoder variant decides which modules are built; modules that a
    variant does not use are absent from the state dict.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        variant = cfg.decoder.variant
        dims = cfg.backbone.embed_dims
        channel = cfg.decoder.channel

        self.backbone = PyramidVisionTransformer(cfg.backbone)
        self.reduce = ChannelReduction(dims[1:], channel)
        if variant.uses_cfm:
            self.cfm = CFM(channel)
        if variant.uses_cim:
            self.cim = CIM(dims[0], cfg.decoder.cim_reduction)
        if variant.uses_sam:
            self.sam = SAM(cfg.decoder, dims[0])
        elif variant == AblationVariant.NO_SAM:
            self.fuse = BasicConv2d(dims[0], channel, kernel_size=1)
        self.head = nn.ModuleDict({
            "p1": nn.Conv2d(channel, 1, kernel_size=1),
            "p2": nn.Conv2d(channel, 1, kernel_size=1),
        })

    @property
    def variant(self) -> AblationVariant:
        return self.cfg.decoder.variant

    def decode(self, feats: PyramidFeatures) -> DecoderOutputs:
        x2, x3, x4 = self.reduce(feats.x2, feats.x3, feats.x4)
        t1 = self.cfm(x2, x3, x4) if self.variant.uses_cfm else plain_fusion(x2, x3, x4)

        if self.variant == AblationVariant.BASELINE:
            return DecoderOutputs(t1, None, t1)

        t2 = self.cim(feats.x1) if self.variant.uses_cim else feats.x1
        if self.variant.uses_sam:
            z = self.sam(t1, t2)
        else:
            z = t1 + resize(self.fuse(t2), t1.shape[-2:])
        return DecoderOutputs(t1, t2, z)

    def forward(self, img: torch.Tensor) -> PredictionTriple:
        size = img.shape[-2:]
        out = self.decode(self.backbone(img))
        p1 = resize(self.head["p1"](out.t1), size)
        p2 = resize(self.head["p2"](out.z), size)
        return PredictionTriple(p1, p2, p1 + p2)


def parameter_groups(model: PolypPVT) -> Dict[str, int]:
    """Parameter count per top-level submodule"""
    return {name: count_parameters(child) for name, child in model.named_children()}


def build_model(cfg: ModelConfig, weight_file: Optional[str] = None) -> PolypPVT:
    model = PolypPVT(cfg)
    if weight_file:
        from polypseg.models.backbone import load_pretrained
        load_pretrained(model.backbone, weight_file, strict=False)
    logger.info(
        f"Built {cfg.decoder.variant.value} model with {count_parameters(model):,} parameters"
    )
    return model
