from pathlib import Path
from typing import Dict, Tuple, Union

import orjson
import torch
import torch.nn as nn

from polypseg.core.exceptions import CheckpointError, FileProcessingError
from polypseg.schemas.model import ModelConfig

TensorMap = Dict[str, torch.Tensor]


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".json")


def write_tensor_map(tensors: TensorMap, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({k: v.detach().cpu().clone() for k, v in tensors.items()}, path)
    return path


def read_tensor_map(path: Union[str, Path]) -> TensorMap:
    path = Path(path)
    if not path.is_file():
        raise FileProcessingError(f"weight file {path} does not exist")
    try:
        tensors = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise FileProcessingError(f"could not read weight file {path}: {str(e)}")
    if not isinstance(tensors, dict) or not all(torch.is_tensor(v) for v in tensors.values()):
        raise CheckpointError(f"{path} is not a flat name→tensor map")
    return tensors


def save_checkpoint(model: nn.Module, path: Union[str, Path], config: ModelConfig) -> Path:
    """Flat state dict plus a JSON sidecar holding the model config"""
    path = write_tensor_map(model.state_dict(), path)
    sidecar_path(path).write_bytes(
        orjson.dumps({"model": config.model_dump(mode="json")}, option=orjson.OPT_INDENT_2)
    )
    return path


def read_checkpoint_config(path: Union[str, Path]) -> ModelConfig:
    meta = sidecar_path(path)
    if not meta.is_file():
        raise CheckpointError(f"checkpoint {path} has no config sidecar {meta.name}")
    return ModelConfig.model_validate(orjson.loads(meta.read_bytes())["model"])


def load_state(model: nn.Module, tensors: TensorMap) -> None:
    own = model.state_dict()
    mismatched = sorted(k for k in own.keys() & tensors.keys() if own[k].shape != tensors[k].shape)
    missing = sorted(own.keys() - tensors.keys())
    unexpected = sorted(tensors.keys() - own.keys())
    if mismatched or missing or unexpected:
        raise CheckpointError(
            "checkpoint does not match the model architecture",
            mismatched=mismatched, missing=missing, unexpected=unexpected,
        )
    model.load_state_dict(tensors)


def load_checkpoint(path: Union[str, Path]) -> Tuple[nn.Module, ModelConfig]:
    """Rebuild the model described by the sidecar and load its weights"""
    from polypseg.models.polyp_pvt import PolypPVT

    config = read_checkpoint_config(path)
    model = PolypPVT(config)
    load_state(model, read_tensor_map(path))
    model.eval()
    return model, config
