# normunit/commands/evaluation.py
import click

from normunit.commands.common import pass_experiment, report_artifact
from normunit.services.experiment_service import ExperimentService


@click.command('evaluate')
@pass_experiment
def evaluate(ctx):
    """Score the test translations (BLEU and UER)."""
    return report_artifact(ExperimentService.evaluate(ctx, force=True))


@click.command('sweep-threshold')
@pass_experiment
def sweep_threshold(ctx):
    """Train one system per mined-score threshold."""
    return report_artifact(ExperimentService.sweep_threshold(ctx, force=True))


evaluation_commands = [evaluate, sweep_threshold]
