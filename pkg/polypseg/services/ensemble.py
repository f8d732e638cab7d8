"""Fold ensembles: pixel voting across fold models, then mask clean-up.

Each fold model's probability map is binarized at ``threshold``. A pixel is
foreground when at least ``min_votes`` models mark it. Voting leaves
isolated pixels along object edges, so the voted mask is opened with a
square structuring element and connected components smaller than
``min_area`` pixels are dropped.
"""
from typing import Iterator, Optional, Sequence

import numpy as np
import torch.nn as nn
from scipy import ndimage

from polypseg.core.exceptions import ValidationError
from polypseg.core.logger import get_logger
from polypseg.schemas.data import DatasetManifest
from polypseg.schemas.training import DataConfig
from polypseg.services.evaluator import Prediction, predict_manifest
from polypseg.utils.validation import check_probability_map, check_same_shape

logger = get_logger(__name__)


def minority_votes(models: int) -> int:
    """Default vote count: the largest minority, at least one"""
    return max(1, (models - 1) // 2)


def vote_masks(probs: Sequence[np.ndarray], min_votes: Optional[int] = None,
               threshold: float = 0.5) -> np.ndarray:
    if not probs:
        raise ValidationError("voting needs at least one prediction")
    min_votes = minority_votes(len(probs)) if min_votes is None else min_votes
    if not 1 <= min_votes <= len(probs):
        raise ValidationError(
            f"min_votes must be in [1, {len(probs)}], got {min_votes}",
            {"models": len(probs), "min_votes": min_votes},
        )
    first = check_probability_map(probs[0])
    votes = np.zeros(first.shape, dtype=np.int64)
    for prob in probs:
        prob = check_probability_map(prob)
        check_same_shape(prob, first, "fold predictions")
        votes += prob > threshold
    return (votes >= min_votes).astype(np.float64)


def remove_small_regions(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected components with fewer than ``min_area`` pixels"""
    fg = np.asarray(mask) > 0.5
    if min_area <= 1 or not fg.any():
        return fg.astype(np.float64)
    labels, count = ndimage.label(fg, structure=np.ones((3, 3)))
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels].astype(np.float64)


def clean_mask(mask: np.ndarray, opening: int = 3, min_area: int = 0) -> np.ndarray:
    fg = np.asarray(mask) > 0.5
    if opening > 1:
        fg = ndimage.binary_opening(fg, structure=np.ones((opening, opening), dtype=bool))
    return remove_small_regions(fg, min_area)


def ensemble_predictions(models: Sequence[nn.Module], manifest: DatasetManifest,
                         data_cfg: DataConfig = DataConfig(),
                         min_votes: Optional[int] = None, opening: int = 3,
                         min_area: int = 0) -> Iterator[Prediction]:
    """Yield (stem, cleaned voted mask, ground truth) per image at native resolution"""
    if not models:
        raise ValidationError("an ensemble needs at least one model")
    votes = minority_votes(len(models)) if min_votes is None else min_votes
    logger.info(f"{manifest.name}: voting {len(models)} models, {votes} votes per pixel, "
                f"opening {opening}, min area {min_area}")
    streams = [predict_manifest(m, manifest, data_cfg, native=True) for m in models]
    for outputs in zip(*streams):
        stem, _, gt = outputs[0]
        voted = vote_masks([prob for _, prob, _ in outputs], votes)
        yield stem, clean_mask(voted, opening, min_area), gt
