# normunit/commands/common.py
import functools
import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import click

from normunit.config import validate_config
from normunit.services.experiment_service import ExperimentContext
from normunit.utils.artifacts import ArtifactStore

logger = logging.getLogger(__name__)


@dataclass
class CliState:
    """Root options shared by every subcommand."""

    config_path: Optional[str] = None
    seed: Optional[int] = None
    out: str = 'artifacts'
    workers: int = 1
    overrides: List[str] = field(default_factory=list)

    def load_config(self):
        overrides = list(self.overrides)
        if self.seed is not None:
            overrides.append(f"seed={self.seed}")
        return validate_config(self.config_path, overrides)

    def context(self):
        return ExperimentContext(config=self.load_config(), store=ArtifactStore(self.out), workers=self.workers)


def pass_experiment(command):
    """Hand the command an ExperimentContext built from the root options."""
    @click.pass_obj
    @functools.wraps(command)
    def wrapper(state, *args, **kwargs):
        return command(state.context(), *args, **kwargs)
    return wrapper


def report_artifact(artifact):
    click.echo(json.dumps({
        'stage': artifact.stage,
        'path': str(artifact.path),
        'fingerprint': artifact.fingerprint,
        'content_hash': artifact.content_hash()
    }))
    return artifact
