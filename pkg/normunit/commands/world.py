# normunit/commands/world.py
import click

from normunit.commands.common import pass_experiment, report_artifact
from normunit.services.experiment_service import ExperimentService


@click.command('gen-world')
@pass_experiment
def gen_world(ctx):
    """Generate the synthetic world and render every split."""
    return report_artifact(ExperimentService.gen_world(ctx, force=True))


@click.command('fit-codebook')
@pass_experiment
def fit_codebook(ctx):
    """Fit the per-language k-means codebooks."""
    return report_artifact(ExperimentService.fit_codebook(ctx, force=True))


@click.command('quantize')
@pass_experiment
def quantize(ctx):
    """Write orig-units and reference units for every split."""
    return report_artifact(ExperimentService.quantize(ctx, force=True))


world_commands = [gen_world, fit_codebook, quantize]
