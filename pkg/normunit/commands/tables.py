# normunit/commands/tables.py
import click

from normunit.commands.common import pass_experiment, report_artifact
from normunit.services.experiment_service import ExperimentService

TABLES = {
    'reproduce-table2': ExperimentService.reproduce_table2,
    'reproduce-table3': ExperimentService.reproduce_table3,
    'reproduce-table5': ExperimentService.reproduce_table5,
    'reproduce-table6': ExperimentService.reproduce_table6,
}


def _table_command(name, producer):
    @click.command(name, help=producer.__doc__.strip().split('\n')[0])
    @pass_experiment
    def command(ctx):
        return report_artifact(producer(ctx, force=True))
    return command


table_commands = [_table_command(name, producer) for name, producer in TABLES.items()]
