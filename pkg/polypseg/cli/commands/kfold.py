from pathlib import Path
from typing import Optional

import click

from polypseg.cli.deps import (
    PRESETS, build_config, cli_document, data_overrides, echo_outputs, run_experiment,
)
from polypseg.experiments.kfold import KFoldExperimentConfig


@click.command("kfold")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default="standard", show_default=True)
@click.option("--data-root", type=click.Path(file_okay=False, path_type=Path))
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--folds", type=click.IntRange(min=2), default=5, show_default=True)
@click.option("--min-votes", type=click.IntRange(min=1),
              help="Fold models that must mark a pixel [default: (folds - 1) // 2]")
@click.option("--opening", type=click.IntRange(min=1), default=3, show_default=True,
              help="Side of the square opening element; 1 disables the opening")
@click.option("--min-area", type=click.IntRange(min=0), default=50, show_default=True,
              help="Smallest connected region kept, in pixels")
@click.option("--epochs", type=int, help="Override train.epochs for every fold")
@click.option("--weights", "weight_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--save-predictions", is_flag=True, help="Write the cleaned masks as PNGs")
def kfold_command(config_file: Optional[Path], preset: str, data_root: Optional[Path],
                  output_dir: Optional[Path], folds: int, min_votes: Optional[int],
                  opening: int, min_area: int, epochs: Optional[int],
                  weight_file: Optional[str], save_predictions: bool):
    """Train one model per fold and score their voted ensemble"""
    overrides = data_overrides(data_root)
    if epochs is not None:
        overrides["train"] = {"epochs": epochs}
    document = cli_document(config_file, preset, overrides)

    fields = {"name": f"{document.name}_kfold", "document": document,
              "seed": document.train.seed, "folds": folds, "min_votes": min_votes,
              "opening": opening, "min_area": min_area, "weight_file": weight_file,
              "save_predictions": save_predictions}
    if output_dir is not None:
        fields["output_dir"] = output_dir
    state = run_experiment("kfold", build_config(KFoldExperimentConfig, **fields))
    echo_outputs(state, "table", "report_dir")
