# run.py
import json
import logging
import sys

import click

from normunit import create_cli
from normunit.utils.errors import PipelineError

logger = logging.getLogger(__name__)


def main(argv=None):
    """
    Run the CLI and map errors to exit codes.

    Returns:
        0 on success, the error's exit code for pipeline errors, 1 otherwise
    """
    cli = create_cli()
    try:
        cli.main(args=argv, prog_name='normunit', standalone_mode=False)
    except PipelineError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        click.echo(json.dumps(e.to_dict(), sort_keys=True), err=True)
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {str(e)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
