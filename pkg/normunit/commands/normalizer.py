# normunit/commands/normalizer.py
import click

from normunit.commands.common import pass_experiment, report_artifact
from normunit.services.experiment_service import ExperimentService


@click.command('train-normalizer')
@pass_experiment
def train_normalizer(ctx):
    """Pretrain and CTC-finetune the speech normalizer on its tier."""
    return report_artifact(ExperimentService.train_normalizer(ctx, force=True))


@click.command('normalize')
@pass_experiment
def normalize(ctx):
    """Decode the normalizer language's speech to norm-units."""
    return report_artifact(ExperimentService.normalize(ctx, force=True))


normalizer_commands = [train_normalizer, normalize]
