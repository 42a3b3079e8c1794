# normunit/__init__.py
import logging

import click

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler()]
)
logger = logging.getLogger(__name__)


def create_cli(settings=None):
    """
    CLI factory.

    Args:
        settings: Config class supplying the default output root and worker count

    Returns:
        click group with every subcommand registered
    """
    from normunit.commands.common import CliState
    from normunit.config import get_config

    settings = settings or get_config()

    @click.group()
    @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                  help='Experiment JSON file (defaults apply when omitted)')
    @click.option('--seed', type=int, default=None, help='Training seed (overrides the config)')
    @click.option('--out', default=None, help='Artifact root directory')
    @click.option('--workers', type=int, default=None, help='Worker processes for parallel-safe stages')
    @click.option('--override', 'overrides', multiple=True, help='key.path=value patch, repeatable')
    @click.pass_context
    def cli(ctx, config_path, seed, out, workers, overrides):
        """Desk-scale textless speech-to-speech translation experiments."""
        ctx.obj = CliState(
            config_path=config_path,
            seed=seed,
            out=out or settings.OUTPUT_ROOT,
            workers=workers or settings.WORKERS,
            overrides=list(overrides)
        )

    # Register command modules
    from normunit.commands.config import config_commands
    from normunit.commands.evaluation import evaluation_commands
    from normunit.commands.normalizer import normalizer_commands
    from normunit.commands.tables import table_commands
    from normunit.commands.translation import translation_commands
    from normunit.commands.world import world_commands

    for commands in (config_commands, world_commands, normalizer_commands, translation_commands,
                     evaluation_commands, table_commands):
        for command in commands:
            cli.add_command(command)

    logger.debug(f"CLI initialized with output root {settings.OUTPUT_ROOT}")
    return cli
