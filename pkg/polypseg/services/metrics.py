"""Evaluation toolbox: Dice/IoU sweeps, weighted F, S-measure, E-measure, MAE, FROC.

Threshold sweeps binarize a [0, 1] map at ``levels`` uniformly spaced
levels τ_k = k/levels (k = 0..levels-1) with a strict ``pred > τ_k``, so a
binary prediction equal to the ground truth is perfect at every level.
Per-level confusion counts come from one histogram of the per-pixel number
of levels at which the pixel is positive.
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from scipy import ndimage
from scipy.ndimage import convolve, distance_transform_edt as bwdist

from polypseg.core.config import settings
from polypseg.core.exceptions import FileProcessingError, ValidationError
from polypseg.core.logger import get_logger
from polypseg.models.layers import resize
from polypseg.schemas.metrics import (
    METRIC_COLUMNS, METRIC_FIELDS, DatasetScores, FrocPoint, ScoreVector,
)
from polypseg.utils.image_io import read_gray, read_mask
from polypseg.utils.validation import (
    check_binary_mask, check_probability_map, check_same_shape, to_unit_range,
)

logger = get_logger(__name__)

_EPS = np.spacing(1)


class ConfusionCurve(NamedTuple):
    """Per-level pixel counts; arrays of length ``levels``"""
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def total(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])


class FrocCounts(NamedTuple):
    """Lesion-level detections per FROC threshold for one image"""
    thresholds: np.ndarray
    detected: np.ndarray
    lesions: int
    false_positives: np.ndarray


def _prepare(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = check_probability_map(pred)
    gt = np.asarray(gt, dtype=np.float64)
    check_binary_mask(gt, "ground truth")
    check_same_shape(pred, gt)
    return pred, gt


def positive_levels(pred: np.ndarray, levels: int) -> np.ndarray:
    """Number of levels k with pred > k/levels, per pixel"""
    return np.clip(np.ceil(pred * levels), 0, levels).astype(np.int64)


def confusion_curve(pred: np.ndarray, gt: np.ndarray,
                    levels: Optional[int] = None) -> ConfusionCurve:
    levels = levels or settings.THRESHOLD_LEVELS
    pred, gt = _prepare(pred, gt)
    counts = positive_levels(pred, levels)
    fg = gt > 0.5

    # positives at level k are pixels with count > k
    def above(c: np.ndarray) -> np.ndarray:
        hist = np.bincount(c, minlength=levels + 1)
        return np.cumsum(hist[::-1])[::-1][1:].astype(np.float64)

    tp = above(counts[fg])
    fp = above(counts[~fg])
    n_fg, n_bg = float(fg.sum()), float((~fg).sum())
    return ConfusionCurve(tp=tp, fp=fp, fn=n_fg - tp, tn=n_bg - fp)


def _ratio_or_one(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.ones_like(num, dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def dice_iou_curves(pred: np.ndarray, gt: np.ndarray,
                    levels: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    c = confusion_curve(pred, gt, levels)
    dice = _ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    iou = _ratio_or_one(c.tp, c.tp + c.fp + c.fn)
    return dice, iou


def dice_iou_sweep(pred: np.ndarray, gt: np.ndarray,
                   levels: Optional[int] = None) -> Tuple[float, float]:
    """(mDic, mIoU): Dice and IoU averaged over the threshold levels.

    The levels are τ_k = k/levels for k = 0..levels-1 (k/256, k = 0..255 by
    default) and a pixel is positive at τ_k when ``pred > τ_k`` strictly.
    A level where both the prediction and the ground truth are empty scores 1.
    """
    dice, iou = dice_iou_curves(pred, gt, levels)
    return float(dice.mean()), float(iou.mean())


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    """Normalized kernel with tiny entries cut, as MATLAB's fspecial does"""
    m = (size - 1) / 2
    y, x = np.ogrid[-m:m + 1, -m:m + 1]
    h = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    return h / h.sum()


_AXIS_FLIPS = (
    lambda a: a,
    np.fliplr,
    np.flipud,
    lambda a: a[::-1, ::-1],
)


def nearest_foreground_error(err: np.ndarray, fg: np.ndarray) -> np.ndarray:
    """Error at the nearest foreground pixel, for every pixel.

    The distance transform picks one pixel among equally near ones, so the
    lookup is repeated on each axis flip and the four results are averaged.
    Without ties all four agree; with ties the result no longer depends on
    the image orientation.
    """
    acc = np.zeros_like(err, dtype=np.float64)
    for flip in _AXIS_FLIPS:
        e, f = flip(err), flip(fg)
        _, idx = bwdist(~f, return_indices=True)
        acc += flip(e[idx[0], idx[1]])
    return acc / len(_AXIS_FLIPS)


def weighted_fmeasure(pred: np.ndarray, gt: np.ndarray, beta2: float = 1.0) -> float:
    pred, gt = _prepare(pred, gt)
    fg = gt > 0.5
    if not fg.any():
        return 1.0 if not (pred > 0.5).any() else 0.0

    dst = bwdist(~fg)
    err = np.abs(pred - gt)
    err_t = np.where(fg, err, nearest_foreground_error(err, fg))

    ea = convolve(err_t, weights=_gaussian_kernel(7, 5.0), mode="constant", cval=0.0)
    min_e_ea = np.where(fg & (ea < err), ea, err)
    importance = np.where(fg, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dst))
    ew = min_e_ea * importance

    tpw = fg.sum() - ew[fg].sum()
    fpw = ew[~fg].sum()
    recall = 1.0 - ew[fg].mean()
    precision = tpw / (tpw + fpw + _EPS)
    score = (1 + beta2) * recall * precision / (recall + beta2 * precision + _EPS)
    return float(np.clip(score, 0.0, 1.0))


def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    return 2.0 * x / (x * x + 1.0 + values.std() + _EPS)


def _s_object(pred: np.ndarray, fg: np.ndarray) -> float:
    u = fg.mean()
    o_fg = _object_score(pred[fg])
    o_bg = _object_score(1.0 - pred[~fg])
    return u * o_fg + (1 - u) * o_bg


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    x, y = pred.mean(), gt.mean()
    sigma_x2 = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sigma_y2 = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sigma_xy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    alpha = 4 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x2 + sigma_y2)
    if alpha != 0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0 else 0.0


def split_points(counts: np.ndarray) -> Tuple[int, ...]:
    """Quadrant boundaries nearest the foreground centroid along one axis.

    Pixel i spans [i, i + 1), so the centroid sits at mean(i) + 0.5 and the
    boundary is the closest integer to it. A centroid halfway between two
    boundaries returns both. Integer arithmetic keeps the tie test exact.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    num = 2 * int((counts * np.arange(len(counts))).sum()) + total
    den = 2 * total
    lo, rem = divmod(num, den)
    if 2 * rem < den:
        return (lo,)
    if 2 * rem > den:
        return (lo + 1,)
    return (lo, lo + 1)


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = gt > 0.5
    xs = split_points(fg.sum(axis=0))
    ys = split_points(fg.sum(axis=1))
    scores = [_region_at(pred, gt, cx, cy) for cx in xs for cy in ys]
    return float(np.mean(scores))


def _region_at(pred: np.ndarray, gt: np.ndarray, cx: int, cy: int) -> float:
    h, w = gt.shape
    area = float(h * w)
    quadrants = [
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ]
    score = 0.0
    for rows, cols in quadrants:
        g = gt[rows, cols]
        if g.size == 0:
            continue
        score += g.size / area * _ssim(pred[rows, cols], g)
    return score


def smeasure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    pred, gt = _prepare(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt > 0.5) + (1 - alpha) * _s_region(pred, gt)
    return float(np.clip(score, 0.0, 1.0))


def emeasure_curve(pred: np.ndarray, gt: np.ndarray,
                   levels: Optional[int] = None) -> np.ndarray:
    """Enhanced alignment per level, averaged over pixels"""
    c = confusion_curve(pred, gt, levels)
    n = float(c.total)
    n_fg = c.tp[0] + c.fn[0]
    if n_fg == 0:
        return c.tn / n
    if n_fg == n:
        return c.tp / n

    mu_g = n_fg / n
    mu_b = (c.tp + c.fp) / n
    score = np.zeros_like(c.tp)
    # the alignment value only depends on (gt, binary) so four pixel classes cover every pixel
    for g, b, count in ((1, 1, c.tp), (1, 0, c.fn), (0, 1, c.fp), (0, 0, c.tn)):
        dg = g - mu_g
        db = b - mu_b
        align = 2 * dg * db / (dg * dg + db * db + _EPS)
        score += count * ((align + 1) ** 2) / 4
    return score / n


def emeasure(pred: np.ndarray, gt: np.ndarray,
             levels: Optional[int] = None) -> Tuple[float, float]:
    """(mEm, maxEm)"""
    curve = emeasure_curve(pred, gt, levels)
    return float(np.clip(curve.mean(), 0, 1)), float(np.clip(curve.max(), 0, 1))


def froc_thresholds(levels: Optional[int] = None, stride: Optional[int] = None) -> np.ndarray:
    levels = levels or settings.THRESHOLD_LEVELS
    stride = stride or settings.FROC_STRIDE
    return np.arange(0, levels, stride, dtype=np.float64) / levels


def froc_counts(pred: np.ndarray, gt: np.ndarray,
                thresholds: Optional[np.ndarray] = None) -> FrocCounts:
    """Lesions are GT connected components; a lesion is detected when any
    predicted component overlaps it and a predicted component touching no
    lesion is a false positive."""
    pred, gt = _prepare(pred, gt)
    thresholds = froc_thresholds() if thresholds is None else np.asarray(thresholds)
    fg = gt > 0.5
    lesion_map, lesions = ndimage.label(fg)

    detected = np.zeros(len(thresholds), dtype=np.int64)
    false_pos = np.zeros(len(thresholds), dtype=np.int64)
    for i, tau in enumerate(thresholds):
        binary = pred > tau
        if lesions:
            hit = np.unique(lesion_map[binary & fg])
            detected[i] = int((hit > 0).sum())
        comp_map, comps = ndimage.label(binary)
        if comps:
            touching = np.unique(comp_map[binary & fg])
            false_pos[i] = comps - int((touching > 0).sum())
    return FrocCounts(thresholds, detected, lesions, false_pos)


def aggregate_froc(counts: Sequence[FrocCounts]) -> List[FrocPoint]:
    if not counts:
        return []
    thresholds = counts[0].thresholds
    lesions = sum(c.lesions for c in counts)
    detected = np.sum([c.detected for c in counts], axis=0)
    false_pos = np.sum([c.false_positives for c in counts], axis=0)
    tpr = detected / lesions if lesions else np.ones_like(thresholds)
    return [
        FrocPoint(threshold=float(t), tpr=float(r), fp_per_image=float(f) / len(counts))
        for t, r, f in zip(thresholds, tpr, false_pos)
    ]


def score_image(pred: np.ndarray, gt: np.ndarray) -> ScoreVector:
    """All seven numbers for one map; raw logits are min-max normalized first"""
    pred = to_unit_range(pred)
    mdic, miou = dice_iou_sweep(pred, gt)
    m_em, max_em = emeasure(pred, gt)
    return ScoreVector(
        mDic=mdic, mIoU=miou, wfm=weighted_fmeasure(pred, gt), smeasure=smeasure(pred, gt),
        mEm=m_em, maxEm=max_em, mae=mae(pred, gt),
    )


def aggregate(name: str, images: List[str], per_image: List[ScoreVector],
              froc: Optional[Sequence[FrocCounts]] = None,
              missing: Optional[List[str]] = None) -> DatasetScores:
    missing = missing or []
    mean = ScoreVector.mean_of(per_image) if per_image else None
    std = float(np.std([v.mDic for v in per_image], ddof=0)) if per_image else 0.0
    return DatasetScores(
        name=name, images=images, per_image=per_image, mean=mean, std_mDic=std,
        missing=missing, complete=not missing, froc=aggregate_froc(froc or []),
    )


def score_arrays(name: str, items: Sequence[Tuple[str, np.ndarray, np.ndarray]],
                 with_froc: bool = True) -> DatasetScores:
    """Score in-memory (stem, prediction, ground truth) triples"""
    images, vectors, frocs = [], [], []
    for stem, pred, gt in items:
        pred = to_unit_range(pred)
        images.append(stem)
        vectors.append(score_image(pred, gt))
        if with_froc:
            frocs.append(froc_counts(pred, gt))
    return aggregate(name, images, vectors, frocs)


def resize_to(pred: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a 2-D map to (H, W)"""
    if tuple(pred.shape) == tuple(size):
        return np.asarray(pred, dtype=np.float64)
    t = torch.from_numpy(np.asarray(pred, dtype=np.float64))[None, None]
    return resize(t, size)[0, 0].numpy()


def _score_file_pair(pair: Tuple[Path, Path]) -> Tuple[ScoreVector, FrocCounts]:
    pred_file, gt_file = pair
    gt = read_mask(gt_file)
    pred = np.clip(resize_to(read_gray(pred_file), gt.shape), 0.0, 1.0)
    return score_image(pred, gt), froc_counts(pred, gt)


def score_dataset(pairs: Sequence[Tuple[Union[str, Path], Union[str, Path]]],
                  name: str = "", workers: Optional[int] = None) -> DatasetScores:
    """Score (prediction file, ground-truth file) pairs at ground-truth resolution.

    Pairs with a missing file are listed in ``missing`` and mark the dataset
    incomplete instead of failing the whole run.
    """
    present, missing = [], []
    for pred_file, gt_file in pairs:
        pred_file, gt_file = Path(pred_file), Path(gt_file)
        if pred_file.is_file() and gt_file.is_file():
            present.append((pred_file, gt_file))
        else:
            missing.append(gt_file.stem)
    if missing:
        logger.warning(f"{name}: {len(missing)} prediction/mask pairs missing")

    workers = workers or settings.MAX_EVAL_WORKERS
    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(_score_file_pair, present))
    except (FileProcessingError, ValidationError):
        raise
    except Exception as e:
        raise FileProcessingError(f"Scoring {name} failed: {str(e)}")

    images = [gt.stem for _, gt in present]
    return aggregate(
        name, images, [r[0] for r in results], [r[1] for r in results], missing,
    )


def scores_frame(scores: Dict[str, DatasetScores]) -> pd.DataFrame:
    rows = {
        name: ds.mean.as_row() if ds.mean is not None else [np.nan] * len(METRIC_FIELDS)
        for name, ds in scores.items()
    }
    return pd.DataFrame.from_dict(rows, orient="index", columns=METRIC_COLUMNS)


def format_table(scores: Dict[str, DatasetScores]) -> str:
    """Fixed-width table, one row per dataset, columns in report order"""
    if not scores:
        return "(no datasets)"
    return scores_frame(scores).to_string(float_format=lambda v: f"{v:.3f}", na_rep="-")


def format_sd_table(scores: Dict[str, DatasetScores]) -> str:
    """mean ± SD of mDic per dataset"""
    frame = pd.DataFrame({
        "mDic": [ds.mean.mDic if ds.mean else np.nan for ds in scores.values()],
        "SD": [ds.std_mDic for ds in scores.values()],
        "images": [len(ds.per_image) for ds in scores.values()],
    }, index=list(scores.keys()))
    return frame.to_string(float_format=lambda v: f"{v:.3f}", na_rep="-")


def froc_frame(scores: DatasetScores) -> pd.DataFrame:
    return pd.DataFrame(
        [p.model_dump() for p in scores.froc], columns=["threshold", "tpr", "fp_per_image"],
    )
