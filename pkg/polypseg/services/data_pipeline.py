from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import torch
import torchvision.transforms.functional as TF
from scipy.ndimage import gaussian_filter
from torch.utils.data import Dataset
from torchvision.transforms import InterpolationMode

from polypseg.core.config import settings
from polypseg.core.exceptions import DataError, ValidationError
from polypseg.core.logger import get_logger
from polypseg.models.layers import resize
from polypseg.schemas.data import DatasetManifest, ImagePair, Sample
from polypseg.schemas.training import DataConfig
from polypseg.utils.image_io import (
    list_images, read_gray, read_rgb, write_gray_png, write_rgb_png,
)

logger = get_logger(__name__)

PathLike = Union[str, Path]

IMAGE_DIR_NAMES = ("images", "image")
MASK_DIR_NAMES = ("masks", "mask")


def _find_dir(base: Path, names: Sequence[str]) -> Path:
    for name in names:
        if (base / name).is_dir():
            return base / name
    return base / names[0]


def load_manifest(root: PathLike, name: str, split: str = "test") -> DatasetManifest:
    """Pair ``<root>/<name>/images/*`` with ``<root>/<name>/masks/*`` by file stem"""
    base = Path(root) / name
    if not base.is_dir():
        raise DataError(f"dataset directory {base} does not exist", [str(base)])
    image_dir = _find_dir(base, IMAGE_DIR_NAMES)
    mask_dir = _find_dir(base, MASK_DIR_NAMES)

    images = {p.stem: p for p in list_images(image_dir)}
    masks = {p.stem: p for p in list_images(mask_dir)}
    if not images and not masks:
        logger.warning(f"Dataset {name} at {base} is empty")
        return DatasetManifest(name=name, image_dir=image_dir, mask_dir=mask_dir, split=split)

    unmatched = sorted(
        [str(images[s]) for s in images.keys() - masks.keys()]
        + [str(masks[s]) for s in masks.keys() - images.keys()]
    )
    if unmatched:
        raise DataError(
            f"dataset {name}: {len(unmatched)} files without a counterpart "
            f"(first: {Path(unmatched[0]).stem})",
            unmatched,
        )

    pairs = [ImagePair(stem=s, image=images[s], mask=masks[s]) for s in sorted(images)]
    logger.info(f"Loaded manifest {name}: {len(pairs)} pairs")
    return DatasetManifest(
        name=name, image_dir=image_dir, mask_dir=mask_dir, split=split, pairs=pairs,
    )


def save_manifest(manifest: DatasetManifest, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(manifest.model_dump(mode="json"), option=orjson.OPT_INDENT_2))
    return path


def read_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest cache {path} does not exist", [str(path)])
    return DatasetManifest.model_validate(orjson.loads(path.read_bytes()))


def scaled_size(image_size: int, scale: float) -> int:
    """Side length for a training scale, snapped to the nearest multiple of 32"""
    return max(32, int(round(image_size * scale / 32)) * 32)


def binarize(mask: torch.Tensor) -> torch.Tensor:
    """Threshold at half of the maximum; an all-zero map stays zero"""
    peak = mask.max()
    if peak <= 0:
        return torch.zeros_like(mask)
    return (mask >= 0.5 * peak).to(mask.dtype)


def normalize(image: torch.Tensor, cfg: DataConfig) -> torch.Tensor:
    mean = torch.tensor(cfg.mean, dtype=image.dtype).view(-1, 1, 1)
    std = torch.tensor(cfg.std, dtype=image.dtype).view(-1, 1, 1)
    return (image - mean) / std


def make_sample(pair: ImagePair, train: bool = False, scale: float = 1.0,
                cfg: DataConfig = DataConfig()) -> Sample:
    if not train and scale != 1.0:
        raise ValidationError(f"test samples use scale 1, got {scale}")
    size = scaled_size(cfg.image_size, scale)

    rgb = read_rgb(pair.image)
    gray = read_gray(pair.mask)
    if rgb.shape[:2] != gray.shape:
        raise DataError(
            f"{pair.stem}: image {rgb.shape[:2]} and mask {gray.shape} differ in size",
            [str(pair.image), str(pair.mask)],
        )

    image = torch.from_numpy(rgb).permute(2, 0, 1).float().div(255.0)
    image = resize(image[None], (size, size))[0]
    mask = resize(torch.from_numpy(gray).float()[None, None], (size, size))[0]
    return Sample(
        image=normalize(image, cfg), mask=binarize(mask),
        original_size=tuple(gray.shape), source=pair.stem,
    )


def rotate_eval(sample: Sample, degrees: float) -> Sample:
    """Rotate image (bilinear) and mask (nearest) about the center; corners are zero"""
    if degrees % 360 == 0:
        return sample
    image = TF.rotate(sample.image, degrees, interpolation=InterpolationMode.BILINEAR, fill=0.0)
    mask = TF.rotate(sample.mask, degrees, interpolation=InterpolationMode.NEAREST, fill=0.0)
    return Sample(
        image=image, mask=(mask > 0.5).to(sample.mask.dtype),
        original_size=sample.original_size, source=sample.source,
    )


def rescale_batch(images: torch.Tensor, masks: torch.Tensor,
                  size: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Resize an N×3×H×W / N×1×H×W batch; masks are re-binarized at 0.5"""
    if images.shape[-1] == size and images.shape[-2] == size:
        return images, masks
    images = resize(images, (size, size))
    masks = (resize(masks, (size, size)) >= 0.5).to(masks.dtype)
    return images, masks


class SegmentationDataset(Dataset):
    """Map-style dataset over a manifest; samples at the base image size"""

    def __init__(self, manifest: DatasetManifest, cfg: DataConfig = DataConfig(),
                 train: bool = True):
        self.manifest = manifest
        self.cfg = cfg
        self.train = train

    def __len__(self) -> int:
        return len(self.manifest)

    def __getitem__(self, index: int) -> Tuple[torch.Tensor, torch.Tensor]:
        sample = make_sample(self.manifest.pairs[index], train=self.train, cfg=self.cfg)
        return sample.image, sample.mask


def train_val_split(manifest: DatasetManifest, val_fraction: float = 0.1,
                    seed: int = 2021) -> Tuple[DatasetManifest, DatasetManifest]:
    """Seeded hold-out split; with val_fraction 0 the training set doubles as validation"""
    if not 0 <= val_fraction < 1:
        raise ValidationError(f"val_fraction must be in [0, 1), got {val_fraction}")
    n = len(manifest)
    if val_fraction == 0 or n < 2:
        return manifest, manifest.subset(list(range(n)), f"{manifest.name}-val")
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(n - 1, max(1, int(round(n * val_fraction))))
    val_idx = sorted(order[:n_val].tolist())
    train_idx = sorted(order[n_val:].tolist())
    return (manifest.subset(train_idx, f"{manifest.name}-train"),
            manifest.subset(val_idx, f"{manifest.name}-val"))


def kfold_splits(manifest: DatasetManifest, k: int = 5,
                 seed: int = 2021) -> List[Tuple[DatasetManifest, DatasetManifest]]:
    n = len(manifest)
    if k < 2 or k > n:
        raise ValidationError(f"k-fold needs 2 <= k <= {n}, got {k}")
    folds = np.array_split(np.random.default_rng(seed).permutation(n), k)
    splits = []
    for i, held_out in enumerate(folds):
        rest = np.concatenate([f for j, f in enumerate(folds) if j != i])
        splits.append((
            manifest.subset(sorted(rest.tolist()), f"{manifest.name}-fold{i}-train"),
            manifest.subset(sorted(held_out.tolist()), f"{manifest.name}-fold{i}-val"),
        ))
    return splits


def _ellipse_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    fraction = rng.uniform(0.08, 0.35)
    ratio = rng.uniform(0.6, 1.0)
    a = np.sqrt(fraction * size * size / (np.pi * ratio))
    b = ratio * a
    cy, cx = rng.uniform(a, size - a, size=2)
    theta = rng.uniform(0, np.pi)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.float64)


def synth_image(rng: np.random.Generator, size: int = 128) -> Tuple[np.ndarray, np.ndarray]:
    """Elliptic blob on a smooth noise texture; returns (uint8 RGB, binary mask)"""
    mask = _ellipse_mask(rng, size)
    texture = gaussian_filter(rng.normal(size=(size, size, 3)), sigma=(3, 3, 0))
    texture = (texture - texture.min()) / (texture.max() - texture.min() + 1e-12)

    background = np.array([0.55, 0.30, 0.25]) + rng.uniform(-0.05, 0.05, size=3)
    foreground = np.array([0.85, 0.65, 0.45]) + rng.uniform(-0.05, 0.05, size=3)
    colour = np.where(mask[..., None] > 0, foreground, background)
    image = np.clip(0.7 * colour + 0.3 * texture, 0, 1)
    return np.rint(image * 255).astype(np.uint8), mask


def synth_dataset(n: int, seed: int, root: PathLike, size: int = 128,
                  name: str = "synthetic") -> DatasetManifest:
    """Write ``n`` deterministic blob images with exact masks under ``<root>/<name>``"""
    if n < 0:
        raise ValidationError(f"n must be non-negative, got {n}")
    base = Path(root) / name
    image_dir, mask_dir = base / "images", base / "masks"
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        image, mask = synth_image(rng, size)
        stem = f"{i:04d}"
        pairs.append(ImagePair(
            stem=stem,
            image=write_rgb_png(image, image_dir / f"{stem}.png"),
            mask=write_gray_png(mask, mask_dir / f"{stem}.png"),
        ))
    logger.info(f"Wrote {n} synthetic pairs to {base}")
    return DatasetManifest(name=name, image_dir=image_dir, mask_dir=mask_dir, split="train",
                           pairs=pairs)


def manifest_for(data: DataConfig, name: str, split: str = "test",
                 root: Optional[PathLike] = None) -> DatasetManifest:
    root = root or data.root or settings.DATA_ROOT
    if root is None:
        raise DataError("no data root configured (set data.root or POLYPSEG_DATA_ROOT)")
    return load_manifest(root, name, split)


def available_manifests(data: DataConfig, names: Sequence[str],
                        root: Optional[PathLike] = None) -> List[DatasetManifest]:
    """Manifests of the named datasets that exist under the data root; others are skipped"""
    root = root or data.root or settings.DATA_ROOT
    if root is None:
        return []
    found = []
    for name in names:
        if not (Path(root) / name).is_dir():
            logger.warning(f"Dataset {name} not found under {root}; skipping")
            continue
        found.append(load_manifest(root, name, "test"))
    return found
