from pathlib import Path
from typing import Optional

import click

from polypseg.cli.deps import (
    PRESETS, build_config, cli_document, data_overrides, echo_outputs, run_experiment,
)
from polypseg.experiments.train import TrainExperimentConfig


@click.command("train")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="YAML experiment document")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default="standard", show_default=True)
@click.option("--data-root", type=click.Path(file_okay=False, path_type=Path))
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--weights", "weight_file", type=click.Path(exists=True, dir_okay=False),
              help="Pretrained encoder weights")
@click.option("--epochs", type=int, help="Override train.epochs")
@click.option("--seed", type=int, help="Override train.seed")
def train_command(config_file: Optional[Path], preset: str, data_root: Optional[Path],
                  output_dir: Optional[Path], weight_file: Optional[str],
                  epochs: Optional[int], seed: Optional[int]):
    """Train a model from an experiment document"""
    overrides = data_overrides(data_root)
    train_overrides = {k: v for k, v in (("epochs", epochs), ("seed", seed)) if v is not None}
    if train_overrides:
        overrides["train"] = train_overrides
    document = cli_document(config_file, preset, overrides)

    fields = {"name": document.name, "document": document, "seed": document.train.seed,
              "weight_file": weight_file}
    if output_dir is not None:
        fields["output_dir"] = output_dir
    state = run_experiment("train", build_config(TrainExperimentConfig, **fields))
    echo_outputs(state, "table", "final_loss", "run_record")
