from pathlib import Path
from typing import List, Optional

import click

from polypseg.cli.deps import (
    PRESETS, build_config, cli_document, data_overrides, echo_outputs, run_experiment,
)
from polypseg.experiments.ablation import AblationExperimentConfig
from polypseg.schemas.model import AblationVariant


def parse_variants(ctx, param, value: Optional[str]) -> Optional[List[AblationVariant]]:
    if value is None:
        return None
    try:
        return [AblationVariant(v.strip()) for v in value.split(",") if v.strip()]
    except ValueError:
        choices = ", ".join(v.value for v in AblationVariant)
        raise click.BadParameter(f"expected a comma-separated list of: {choices}")


@click.command("ablate")
@click.option("--variants", callback=parse_variants,
              help="Comma-separated variants, e.g. baseline,no_cfm,no_cim,no_sam,full")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default="standard", show_default=True)
@click.option("--data-root", type=click.Path(file_okay=False, path_type=Path))
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--epochs", type=int, help="Override train.epochs for every variant")
def ablate_command(variants, config_file, preset, data_root, output_dir, epochs):
    """Train and score decoder variants under one protocol"""
    overrides = data_overrides(data_root)
    if epochs is not None:
        overrides["train"] = {"epochs": epochs}
    document = cli_document(config_file, preset, overrides)

    fields = {"name": f"{document.name}_ablation", "document": document,
              "seed": document.train.seed}
    if variants:
        fields["variants"] = variants
    if output_dir is not None:
        fields["output_dir"] = output_dir
    state = run_experiment("ablate", build_config(AblationExperimentConfig, **fields))
    echo_outputs(state, "table")
