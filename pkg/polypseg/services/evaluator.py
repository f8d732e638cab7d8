from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import torch
import torch.nn as nn
from tqdm import tqdm

from polypseg.core.config import settings
from polypseg.core.logger import get_logger
from polypseg.schemas.data import DatasetManifest, Sample
from polypseg.schemas.metrics import DatasetScores
from polypseg.schemas.training import DataConfig
from polypseg.services.data_pipeline import make_sample, rotate_eval
from polypseg.services.metrics import (
    format_sd_table, format_table, froc_frame, resize_to, score_arrays,
)
from polypseg.utils.image_io import read_mask, write_gray_png

logger = get_logger(__name__)

Prediction = Tuple[str, np.ndarray, np.ndarray]


@torch.no_grad()
def predict(model: nn.Module, image: torch.Tensor) -> np.ndarray:
    """sigmoid(P_final) for one normalized 3×H×W image, as an H×W array"""
    model.eval()
    device = next(model.parameters()).device
    pred = model(image[None].to(device))
    return torch.sigmoid(pred.p_final)[0, 0].double().cpu().numpy()


def predict_manifest(model: Optional[nn.Module], manifest: DatasetManifest,
                     data_cfg: DataConfig = DataConfig(), native: bool = True,
                     degrees: float = 0.0,
                     gt_as_prediction: bool = False) -> Iterator[Prediction]:
    """Yield (stem, probability map, ground truth) per image.

    With ``native`` the map is resized to the mask file's resolution and
    compared against the mask as stored on disk; rotated evaluation always
    scores at sample resolution, where the rotated mask lives.
    """
    native = native and degrees % 360 == 0
    for pair in tqdm(manifest.pairs, desc=manifest.name, leave=False,
                     disable=not settings.PROGRESS):
        sample: Sample = make_sample(pair, train=False, cfg=data_cfg)
        sample = rotate_eval(sample, degrees)
        gt = read_mask(pair.mask) if native else sample.mask[0].double().numpy()
        if gt_as_prediction:
            yield pair.stem, gt.copy(), gt
            continue
        prob = predict(model, sample.image)
        if native:
            prob = np.clip(resize_to(prob, gt.shape), 0.0, 1.0)
        yield pair.stem, prob, gt


def score_manifest(model: Optional[nn.Module], manifest: DatasetManifest,
                   data_cfg: DataConfig = DataConfig(), native: bool = True,
                   degrees: float = 0.0, gt_as_prediction: bool = False,
                   save_dir: Optional[Union[str, Path]] = None,
                   with_froc: bool = False) -> DatasetScores:
    was_training = model.training if model is not None else False
    items: List[Prediction] = []
    for stem, prob, gt in predict_manifest(model, manifest, data_cfg, native, degrees,
                                           gt_as_prediction):
        if save_dir is not None:
            write_gray_png(prob, Path(save_dir) / manifest.name / f"{stem}.png")
        items.append((stem, prob, gt))
    if model is not None and was_training:
        model.train()
    return score_arrays(manifest.name, items, with_froc=with_froc)


def evaluate(model: Optional[nn.Module], manifests: Sequence[DatasetManifest],
             data_cfg: DataConfig = DataConfig(), gt_as_prediction: bool = False,
             save_dir: Optional[Union[str, Path]] = None,
             degrees: float = 0.0) -> Dict[str, DatasetScores]:
    """Score every manifest; ``gt_as_prediction`` bypasses the model entirely"""
    scores = {}
    for manifest in manifests:
        if len(manifest) == 0:
            logger.warning(f"Skipping empty dataset {manifest.name}")
            scores[manifest.name] = DatasetScores(name=manifest.name)
            continue
        scores[manifest.name] = score_manifest(
            model, manifest, data_cfg, native=True, degrees=degrees,
            gt_as_prediction=gt_as_prediction, save_dir=save_dir, with_froc=True,
        )
        mean = scores[manifest.name].mean
        logger.info(f"{manifest.name}: mDic {mean.mDic:.4f}, mIoU {mean.mIoU:.4f}")
    return scores


def rotation_delta(before: Dict[str, DatasetScores],
                   after: Dict[str, DatasetScores]) -> Dict[str, float]:
    """mDic change per dataset caused by rotation"""
    return {
        name: after[name].mean.mDic - before[name].mean.mDic
        for name in before
        if name in after and before[name].mean is not None and after[name].mean is not None
    }


def write_report(scores: Dict[str, DatasetScores], out_dir: Union[str, Path]) -> Path:
    """One JSON per dataset, the metric table, the mean±SD table and FROC CSVs"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in scores.items():
        (out / f"{name}.json").write_bytes(
            orjson.dumps(ds.model_dump(mode="json"), option=orjson.OPT_INDENT_2)
        )
        if ds.froc:
            froc_frame(ds).to_csv(out / f"{name}_froc.csv", index=False)
    (out / "table.txt").write_text(format_table(scores) + "\n")
    (out / "sd_table.txt").write_text(format_sd_table(scores) + "\n")
    return out
