from pathlib import Path
from typing import Any, Dict, Optional

import click
import pydantic
import yaml

from polypseg.core.exceptions import BaseCustomException, ConfigError, create_click_exception
from polypseg.experiments.base_experiment import (
    ExperimentConfig, ExperimentState, experiment_registry,
)
from polypseg.schemas.model import ModelConfig
from polypseg.schemas.training import ExperimentDocument

PRESETS = {
    "standard": ModelConfig.standard,
    "desk": ModelConfig.desk,
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_document(config_file: Optional[Path] = None, preset: str = "standard",
                  overrides: Optional[Dict[str, Any]] = None) -> ExperimentDocument:
    """Experiment document from YAML, layered over the model preset.

    Keys present in the file win over the preset; ``overrides`` (from
    command-line flags) win over both.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    raw: Dict[str, Any] = {"model": PRESETS[preset]().model_dump(mode="json")}
    if config_file is not None:
        try:
            loaded = yaml.safe_load(Path(config_file).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {config_file}: {str(e)}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {config_file} must be a mapping at the top level")
        raw = _merge(raw, loaded)
    raw = _merge(raw, overrides or {})
    try:
        return ExperimentDocument.model_validate(raw)
    except pydantic.ValidationError as e:
        raise ConfigError(f"invalid experiment document: {e.error_count()} errors",
                          {"errors": [f"{'.'.join(map(str, err['loc']))}: {err['msg']}"
                                      for err in e.errors()]})


def build_config(config_class: type, **fields: Any) -> ExperimentConfig:
    try:
        return config_class(**fields)
    except pydantic.ValidationError as e:
        raise create_click_exception(ConfigError(str(e)))


def run_experiment(name: str, config: ExperimentConfig) -> ExperimentState:
    """Create the registered experiment and run it; typed failures become exit codes"""
    try:
        experiment = experiment_registry.create_experiment(name, config)
        return experiment.run()
    except BaseCustomException as e:
        raise create_click_exception(e)


def echo_outputs(state: ExperimentState, *keys: str) -> None:
    for key in keys:
        value = state.output_data.get(key)
        if value is None:
            continue
        click.echo(value if isinstance(value, str) else f"{key}: {value}")


def cli_document(config_file: Optional[Path], preset: str,
                 overrides: Optional[Dict[str, Any]] = None) -> ExperimentDocument:
    try:
        return load_document(config_file, preset, overrides)
    except BaseCustomException as e:
        raise create_click_exception(e)


def data_overrides(data_root: Optional[Path]) -> Dict[str, Any]:
    return {"data": {"root": str(data_root)}} if data_root is not None else {}
