import click

from polypseg.cli.commands import ablate, evaluate, gradcheck, kfold, plot, synth, train
from polypseg.core.config import settings
from polypseg.experiments.ablation import AblationExperiment
from polypseg.experiments.base_experiment import experiment_registry
from polypseg.experiments.evaluate import EvaluateExperiment, RotateEvalExperiment
from polypseg.experiments.gradcheck import GradCheckExperiment
from polypseg.experiments.kfold import KFoldExperiment
from polypseg.experiments.train import TrainExperiment


def register_experiments() -> None:
    """Bind command names to experiment classes"""
    experiment_registry.register("train", TrainExperiment)
    experiment_registry.register("evaluate", EvaluateExperiment)
    experiment_registry.register("rotate-eval", RotateEvalExperiment)
    experiment_registry.register("ablate", AblationExperiment)
    experiment_registry.register("gradcheck", GradCheckExperiment)
    experiment_registry.register("kfold", KFoldExperiment)


@click.group(help=f"{settings.PROJECT_NAME} v{settings.VERSION}")
@click.version_option(settings.VERSION)
def cli():
    register_experiments()


cli.add_command(train.train_command)
cli.add_command(evaluate.evaluate_command)
cli.add_command(evaluate.rotate_eval_command)
cli.add_command(ablate.ablate_command)
cli.add_command(kfold.kfold_command)
cli.add_command(gradcheck.gradcheck_command)
cli.add_command(plot.plot_command)
cli.add_command(synth.synth_command)
