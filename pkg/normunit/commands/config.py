# normunit/commands/config.py
import json

import click


@click.command('validate-config')
@click.pass_obj
def validate_config_command(state):
    """Print the normalized config, or fail listing every violation."""
    config = state.load_config()
    click.echo(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return config


config_commands = [validate_config_command]
