from pathlib import Path
from typing import List, Literal, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator


class ImagePair(BaseModel):
    """One image file and its mask, matched by stem"""
    model_config = ConfigDict(frozen=True)

    stem: str
    image: Path
    mask: Path


class DatasetManifest(BaseModel):
    """Deterministic list of image/mask pairs of one dataset"""
    name: str
    image_dir: Path
    mask_dir: Path
    split: Literal["train", "test"] = "test"
    pairs: List[ImagePair] = Field(default_factory=list)

    @model_validator(mode="after")
    def unique_stems(self) -> "DatasetManifest":
        stems = [p.stem for p in self.pairs]
        if len(stems) != len(set(stems)):
            raise ValueError(f"duplicate stems in manifest {self.name}")
        return self

    def __len__(self) -> int:
        return len(self.pairs)

    def subset(self, indices: List[int], name: str = "") -> "DatasetManifest":
        return self.model_copy(update={
            "name": name or self.name,
            "pairs": [self.pairs[i] for i in indices],
        })


class Sample(BaseModel):
    """Normalised image tensor (3×H×W) with a binary mask (1×H×W)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    image: torch.Tensor
    mask: torch.Tensor
    original_size: Tuple[int, int]
    source: str = ""

    @model_validator(mode="after")
    def aligned(self) -> "Sample":
        if self.image.dim() != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be 3×H×W, got {tuple(self.image.shape)}")
        if self.mask.shape != (1, *self.image.shape[1:]):
            raise ValueError(
                f"mask {tuple(self.mask.shape)} not aligned with image {tuple(self.image.shape)}"
            )
        if not torch.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask must be binary")
        return self
