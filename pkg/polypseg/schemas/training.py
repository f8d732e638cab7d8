from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from polypseg.schemas.model import ModelConfig
from polypseg.schemas.metrics import ScoreVector


class LossConfig(BaseModel):
    """Weighted BCE + weighted IoU parameters"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    weight_window: int = Field(31, gt=0)
    weight_gain: float = Field(5.0, ge=0)
    eps: float = Field(1.0, gt=0)

    @field_validator("weight_window")
    @classmethod
    def odd_window(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"weight_window must be odd, got {v}")
        return v


class LossReport(BaseModel):
    """Per-term breakdown of the dual-supervision loss"""
    total: float = Field(..., ge=0)
    main: float
    aux: float
    wbce_main: float
    wiou_main: float
    wbce_aux: float
    wiou_aux: float


class TrainConfig(BaseModel):
    """Optimisation protocol"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    epochs: int = Field(100, ge=0)
    batch: int = Field(16, gt=0)
    clip: float = Field(0.5, gt=0)
    decay_rate: float = Field(0.1, gt=0)
    decay_epoch: int = Field(50, gt=0)
    image_size: int = Field(352, gt=0)
    optimizer: Literal["adamw"] = "adamw"
    seed: int = 2021
    scales: List[float] = Field(default=[0.75, 1.0, 1.25])
    max_iterations: Optional[int] = Field(None, gt=0)
    val_fraction: float = Field(0.1, ge=0, lt=1)
    eval_every: int = Field(1, gt=0)

    @field_validator("image_size")
    @classmethod
    def multiple_of_32(cls, v: int) -> int:
        if v % 32:
            raise ValueError(f"image_size must be a multiple of 32, got {v}")
        return v


class DataConfig(BaseModel):
    """Dataset locations and normalisation constants"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    root: Optional[Path] = None
    train_dataset: str = "TrainDataset"
    test_datasets: List[str] = Field(default=[
        "CVC-300", "CVC-ClinicDB", "Kvasir", "CVC-ColonDB", "ETIS-LaribPolypDB",
    ])
    image_size: int = Field(352, gt=0)
    mean: List[float] = Field(default=[0.485, 0.456, 0.406])
    std: List[float] = Field(default=[0.229, 0.224, 0.225])

    @field_validator("mean", "std")
    @classmethod
    def three_channels(cls, v: List[float]) -> List[float]:
        if len(v) != 3:
            raise ValueError("normalisation needs one value per RGB channel")
        return v


class EpochRecord(BaseModel):
    """Losses and validation scores of one epoch"""
    epoch: int
    lr: float
    iterations: int
    loss: LossReport
    max_grad_norm: float = 0.0
    val: Optional[ScoreVector] = None


class RunRecord(BaseModel):
    """Append-only summary of a training run"""
    name: str
    config: Dict[str, Any] = Field(default_factory=dict)
    epochs: List[EpochRecord] = Field(default_factory=list)
    eval_scores: Dict[str, ScoreVector] = Field(default_factory=dict)
    checkpoints: Dict[str, str] = Field(default_factory=dict)
    best_epoch: Optional[int] = None
    best_mdic: Optional[float] = None
    iterations: int = 0
    wall_clock_seconds: float = 0.0
    started_at: datetime = Field(default_factory=datetime.now)

    def final_loss(self) -> Optional[float]:
        return self.epochs[-1].loss.total if self.epochs else None


class ExperimentDocument(BaseModel):
    """Declarative experiment file (YAML)"""
    model_config = ConfigDict(extra="forbid")

    name: str = "polyp_pvt"
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    data: DataConfig = Field(default_factory=DataConfig)
