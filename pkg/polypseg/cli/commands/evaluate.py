from pathlib import Path
from typing import Optional, Tuple

import click

from polypseg.cli.deps import (
    PRESETS, build_config, cli_document, data_overrides, echo_outputs, run_experiment,
)
from polypseg.experiments.evaluate import EvaluateExperimentConfig, RotateEvalExperimentConfig


def _evaluation_options(command):
    options = [
        click.option("--ckpt", "checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path)),
        click.option("--data", "data_root", type=click.Path(exists=True, file_okay=False, path_type=Path),
                     help="Directory holding one folder per test dataset"),
        click.option("--dataset", "datasets", multiple=True,
                     help="Dataset folder to score (repeatable); default: all known test sets found"),
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     help="Experiment document supplying data settings"),
        click.option("--preset", type=click.Choice(sorted(PRESETS)), default="standard"),
        click.option("--gt-as-prediction", is_flag=True,
                     help="Score the ground truth against itself (toolbox check)"),
        click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path)),
        click.option("--name", default="eval", show_default=True),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _fields(name: str, checkpoint: Optional[Path], data_root: Optional[Path],
            datasets: Tuple[str, ...], config_file: Optional[Path], preset: str,
            gt_as_prediction: bool, output_dir: Optional[Path]) -> dict:
    document = cli_document(config_file, preset, data_overrides(data_root))
    fields = {"name": name, "checkpoint": checkpoint, "data": document.data,
              "datasets": list(datasets), "gt_as_prediction": gt_as_prediction}
    if output_dir is not None:
        fields["output_dir"] = output_dir
    return fields


@click.command("eval")
@_evaluation_options
@click.option("--save-predictions", is_flag=True, help="Write probability maps as 8-bit PNGs")
def evaluate_command(checkpoint, data_root, datasets, config_file, preset, gt_as_prediction,
                     output_dir, name, save_predictions):
    """Score a checkpoint on the test datasets at native resolution"""
    fields = _fields(name, checkpoint, data_root, datasets, config_file, preset,
                     gt_as_prediction, output_dir)
    config = build_config(EvaluateExperimentConfig, save_predictions=save_predictions, **fields)
    state = run_experiment("evaluate", config)
    echo_outputs(state, "table", "report_dir")


@click.command("rotate-eval")
@_evaluation_options
@click.option("--degrees", type=float, default=15.0, show_default=True)
def rotate_eval_command(checkpoint, data_root, datasets, config_file, preset, gt_as_prediction,
                        output_dir, name, degrees):
    """Score upright and rotated test samples and report the mDic change"""
    fields = _fields(name, checkpoint, data_root, datasets, config_file, preset,
                     gt_as_prediction, output_dir)
    config = build_config(RotateEvalExperimentConfig, degrees=degrees, **fields)
    state = run_experiment("rotate-eval", config)
    echo_outputs(state, "table", "rotated_table", "delta_mDic")
