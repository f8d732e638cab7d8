from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BackboneConfig(BaseModel):
    """Pyramid vision transformer encoder hyperparameters"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    in_chans: int = Field(3, gt=0)
    patch_size: int = Field(4, gt=0)
    embed_dims: List[int] = Field(default=[64, 128, 320, 512])
    num_heads: List[int] = Field(default=[1, 2, 5, 8])
    mlp_ratios: List[int] = Field(default=[8, 8, 4, 4])
    depths: List[int] = Field(default=[3, 4, 18, 3])
    sr_ratios: List[int] = Field(default=[8, 4, 2, 1])
    qkv_bias: bool = True
    drop_rate: float = Field(0.0, ge=0, lt=1)
    drop_path_rate: float = Field(0.1, ge=0, lt=1)
    norm_eps: float = Field(1e-6, gt=0)

    @field_validator("embed_dims", "num_heads", "mlp_ratios", "depths", "sr_ratios")
    @classmethod
    def four_positive_entries(cls, v: List[int]) -> List[int]:
        if len(v) != 4:
            raise ValueError("per-stage lists need exactly 4 entries")
        if any(x <= 0 for x in v):
            raise ValueError("per-stage entries must be positive")
        return v

    @model_validator(mode="after")
    def heads_divide_dims(self) -> "BackboneConfig":
        for i, (dim, heads) in enumerate(zip(self.embed_dims, self.num_heads)):
            if dim % heads:
                raise ValueError(
                    f"embed_dims[{i}]={dim} is not divisible by num_heads[{i}]={heads}"
                )
        return self


class AblationVariant(str, Enum):
    """Decoder wiring used by the ablation study"""
    FULL = "full"
    NO_CFM = "no_cfm"
    NO_CIM = "no_cim"
    NO_SAM = "no_sam"
    SAM_NOGCN = "sam_nogcn"
    SAM_CONV = "sam_conv"
    BASELINE = "baseline"

    @property
    def label(self) -> str:
        return VARIANT_LABELS[self]

    @property
    def uses_cfm(self) -> bool:
        return self not in (AblationVariant.NO_CFM, AblationVariant.BASELINE)

    @property
    def uses_cim(self) -> bool:
        return self not in (AblationVariant.NO_CIM, AblationVariant.BASELINE)

    @property
    def uses_sam(self) -> bool:
        return self not in (AblationVariant.NO_SAM, AblationVariant.BASELINE)


VARIANT_LABELS = {
    AblationVariant.BASELINE: "Bas.",
    AblationVariant.NO_CFM: "w/o CFM",
    AblationVariant.NO_CIM: "w/o CIM",
    AblationVariant.NO_SAM: "w/o SAM",
    AblationVariant.SAM_NOGCN: "w/o GCN",
    AblationVariant.SAM_CONV: "w/ Conv",
    AblationVariant.FULL: "Final",
}


class DecoderConfig(BaseModel):
    """CFM / CIM / SAM decoder hyperparameters"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    channel: int = Field(32, gt=1)
    sam_pool: int = Field(6, gt=0)
    sam_nodes: int = Field(4, gt=0)
    sam_state: int = Field(16, gt=0)
    sam_wz_in: Optional[int] = Field(None, gt=0)
    cim_reduction: int = Field(16, gt=0)
    variant: AblationVariant = AblationVariant.FULL

    @model_validator(mode="after")
    def check_sizes(self) -> "DecoderConfig":
        if self.sam_nodes > self.sam_pool:
            raise ValueError(
                f"sam_nodes={self.sam_nodes} exceeds sam_pool={self.sam_pool}"
            )
        if self.sam_state > self.channel:
            raise ValueError(
                f"sam_state={self.sam_state} exceeds channel={self.channel}"
            )
        return self

    @property
    def num_nodes(self) -> int:
        return self.sam_nodes * self.sam_nodes

    @property
    def crop_offset(self) -> int:
        return (self.sam_pool - self.sam_nodes) // 2


class ModelConfig(BaseModel):
    """Complete architecture description"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)

    def with_variant(self, variant: AblationVariant) -> "ModelConfig":
        decoder = self.decoder.model_copy(update={"variant": AblationVariant(variant)})
        return self.model_copy(update={"decoder": decoder})

    @classmethod
    def standard(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def desk(cls, variant: AblationVariant = AblationVariant.FULL) -> "ModelConfig":
        return cls(
            backbone=BackboneConfig(
                embed_dims=[16, 32, 48, 64],
                num_heads=[1, 2, 3, 4],
                mlp_ratios=[4, 4, 4, 4],
                depths=[2, 2, 2, 2],
                sr_ratios=[8, 4, 2, 1],
            ),
            decoder=DecoderConfig(
                channel=8, sam_state=8, cim_reduction=4, variant=variant,
            ),
        )
