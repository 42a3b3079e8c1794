# normunit/commands/translation.py
import click

from normunit.commands.common import pass_experiment, report_artifact
from normunit.services.experiment_service import ExperimentService


@click.command('train-duration')
@pass_experiment
def train_duration(ctx):
    """Train the unit duration predictor."""
    return report_artifact(ExperimentService.train_duration(ctx, force=True))


@click.command('train-s2ut')
@pass_experiment
def train_s2ut(ctx):
    """Train the speech-to-unit translation model."""
    return report_artifact(ExperimentService.train_s2ut(ctx, force=True))


@click.command('translate')
@pass_experiment
def translate(ctx):
    """Beam-decode the test set."""
    return report_artifact(ExperimentService.translate(ctx, force=True))


translation_commands = [train_duration, train_s2ut, translate]
