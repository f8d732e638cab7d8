from pathlib import Path

import click

from polypseg.core.exceptions import BaseCustomException, create_click_exception
from polypseg.services.data_pipeline import synth_dataset


@click.command("synth")
@click.option("--root", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--n", "count", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", type=int, default=128, show_default=True)
@click.option("--name", default="synthetic", show_default=True)
def synth_command(root: Path, count: int, seed: int, size: int, name: str):
    """Write a deterministic blob dataset (images/ + masks/) for smoke runs"""
    try:
        manifest = synth_dataset(count, seed, root, size=size, name=name)
    except BaseCustomException as e:
        raise create_click_exception(e)
    click.echo(f"{len(manifest)} pairs in {root / name}")
