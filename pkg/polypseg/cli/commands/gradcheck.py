from pathlib import Path
from typing import Optional

import click

from polypseg.cli.deps import build_config, run_experiment
from polypseg.experiments.gradcheck import GradCheckExperimentConfig
from polypseg.services.gradcheck import SUITES


@click.command("gradcheck")
@click.option("--module", "module_name", type=click.Choice(sorted(SUITES)), default="all",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path))
def gradcheck_command(module_name: str, seed: int, output_dir: Optional[Path]):
    """Finite-difference and dense-oracle checks; exits non-zero on failure"""
    fields = {"name": "gradcheck", "module": module_name, "seed": seed}
    if output_dir is not None:
        fields["output_dir"] = output_dir
    state = run_experiment("gradcheck", build_config(GradCheckExperimentConfig, **fields))
    for suite, result in state.output_data["suites"].items():
        mark = "ok" if result["passed"] else "FAIL"
        click.echo(f"{mark:4} {suite:24} {result['kind']:9} {result['max_error']:.3e}")
