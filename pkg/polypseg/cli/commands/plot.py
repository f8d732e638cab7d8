from pathlib import Path
from typing import Tuple

import click

from polypseg.core.exceptions import BaseCustomException, create_click_exception
from polypseg.services.plotting import load_scores, plot_froc, plot_loss_curves
from polypseg.services.trainer import read_run_record


@click.command("plot")
@click.option("--run", "runs", multiple=True, type=click.Path(exists=True, path_type=Path),
              help="Run directory or run.json (repeatable)")
@click.option("--scores", multiple=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Dataset report .json or FROC .csv (repeatable)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              default=Path("plots"), show_default=True)
def plot_command(runs: Tuple[Path, ...], scores: Tuple[Path, ...], out_dir: Path):
    """Loss curves from run records and FROC curves from evaluation reports"""
    if not runs and not scores:
        raise click.UsageError("pass at least one --run or --scores")
    try:
        if runs:
            records = [read_run_record(p) for p in runs]
            click.echo(str(plot_loss_curves(records, out_dir / "loss_curves.png")))
        if scores:
            for path in plot_froc(load_scores(scores), out_dir):
                click.echo(str(path))
    except BaseCustomException as e:
        raise create_click_exception(e)
