from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

METRIC_FIELDS = ["mDic", "mIoU", "wfm", "smeasure", "mEm", "maxEm", "mae"]
METRIC_COLUMNS = ["mDic", "mIoU", "F^w_β", "S_α", "mE_ξ", "maxE_ξ", "MAE"]


class ScoreVector(BaseModel):
    """The seven reported numbers for one image or one dataset"""
    mDic: float = Field(..., ge=0, le=1)
    mIoU: float = Field(..., ge=0, le=1)
    wfm: float = Field(..., ge=0, le=1)
    smeasure: float = Field(..., ge=0, le=1)
    mEm: float = Field(..., ge=0, le=1)
    maxEm: float = Field(..., ge=0, le=1)
    mae: float = Field(..., ge=0, le=1)

    @model_validator(mode="after")
    def mean_below_max(self) -> "ScoreVector":
        if self.mEm > self.maxEm + 1e-12:
            raise ValueError(f"mEm={self.mEm} exceeds maxEm={self.maxEm}")
        return self

    def as_row(self) -> List[float]:
        return [getattr(self, name) for name in METRIC_FIELDS]

    @classmethod
    def mean_of(cls, vectors: List["ScoreVector"]) -> "ScoreVector":
        rows = np.array([v.as_row() for v in vectors], dtype=np.float64)
        means = rows.mean(axis=0)
        return cls(**{name: float(np.clip(m, 0.0, 1.0)) for name, m in zip(METRIC_FIELDS, means)})


class FrocPoint(BaseModel):
    threshold: float
    tpr: float
    fp_per_image: float


class DatasetScores(BaseModel):
    """Per-image and aggregated scores of one dataset"""
    name: str = ""
    images: List[str] = Field(default_factory=list)
    per_image: List[ScoreVector] = Field(default_factory=list)
    mean: Optional[ScoreVector] = None
    std_mDic: float = 0.0
    missing: List[str] = Field(default_factory=list)
    complete: bool = True
    froc: List[FrocPoint] = Field(default_factory=list)
