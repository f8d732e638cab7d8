from typing import Union

import numpy as np
import torch

from polypseg.core.exceptions import ShapeError, ValidationError

ArrayLike = Union[np.ndarray, torch.Tensor]


def is_binary(x: ArrayLike) -> bool:
    """True when every entry is exactly 0 or 1"""
    if torch.is_tensor(x):
        return bool(torch.all((x == 0) | (x == 1)))
    x = np.asarray(x)
    return bool(np.all((x == 0) | (x == 1)))


def is_finite(x: ArrayLike) -> bool:
    if torch.is_tensor(x):
        return bool(torch.isfinite(x).all())
    return bool(np.isfinite(np.asarray(x, dtype=np.float64)).all())


def check_finite(x: ArrayLike, what: str = "input") -> None:
    if not is_finite(x):
        raise ValidationError(f"{what} contains NaN or infinite values")


def check_binary_mask(g: ArrayLike, what: str = "mask") -> None:
    check_finite(g, what)
    if not is_binary(g):
        raise ValidationError(f"{what} must be binary (values in {{0, 1}})")


def check_same_shape(a: ArrayLike, b: ArrayLike, what: str = "prediction and mask") -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(
            f"{what} differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}",
            stage="compare",
        )


def check_probability_map(pred: np.ndarray, what: str = "prediction") -> np.ndarray:
    """float64 copy of a map that must already lie in [0, 1]"""
    pred = np.asarray(pred, dtype=np.float64)
    check_finite(pred, what)
    if pred.size and (pred.min() < 0.0 or pred.max() > 1.0):
        raise ValidationError(
            f"{what} must lie in [0, 1], got range [{pred.min():.4g}, {pred.max():.4g}]"
        )
    return pred


def to_unit_range(pred: np.ndarray) -> np.ndarray:
    """Probabilities pass through; anything outside [0, 1] is min-max normalized"""
    pred = np.asarray(pred, dtype=np.float64)
    check_finite(pred, "prediction")
    if pred.size == 0 or (pred.min() >= 0.0 and pred.max() <= 1.0):
        return pred
    lo, hi = pred.min(), pred.max()
    if hi - lo <= 0:
        return np.zeros_like(pred)
    return (pred - lo) / (hi - lo)
