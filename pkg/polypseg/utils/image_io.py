from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image

from polypseg.core.exceptions import FileProcessingError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

PathLike = Union[str, Path]


def list_images(directory: PathLike) -> List[Path]:
    """Image files of a directory, sorted by stem"""
    directory = Path(directory)
    if not directory.is_dir():
        return []
    files = [p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS]
    return sorted(files, key=lambda p: (p.stem, p.suffix))


def read_rgb(path: PathLike) -> np.ndarray:
    """H×W×3 uint8 array"""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except Exception as e:
        raise FileProcessingError(f"Could not read image {path}: {str(e)}")


def read_gray(path: PathLike) -> np.ndarray:
    """H×W float64 array scaled to [0, 1]"""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except Exception as e:
        raise FileProcessingError(f"Could not read mask {path}: {str(e)}")


def read_mask(path: PathLike) -> np.ndarray:
    """Binary H×W float64 mask, thresholded at half of the file's maximum"""
    gray = read_gray(path)
    peak = gray.max()
    if peak <= 0:
        return np.zeros_like(gray)
    return (gray >= 0.5 * peak).astype(np.float64)


def write_gray_png(array: np.ndarray, path: PathLike) -> Path:
    """Write a [0, 1] map as an 8-bit grayscale PNG"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        data = np.clip(np.rint(np.asarray(array, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(data, mode="L").save(path)
        return path
    except Exception as e:
        raise FileProcessingError(f"Could not write {path}: {str(e)}")


def write_rgb_png(array: np.ndarray, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.asarray(array, dtype=np.uint8), mode="RGB").save(path)
        return path
    except Exception as e:
        raise FileProcessingError(f"Could not write {path}: {str(e)}")
