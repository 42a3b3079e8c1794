# normunit/utils/errors.py
"""
Exception hierarchy for the pipeline.

Every error carries the process exit code the CLI should use when it
surfaces there. Library callers can catch ``PipelineError`` for all of them.
"""


class PipelineError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1

    def __init__(self, message, exit_code=None):
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code

    def to_dict(self):
        """Convert the error to a dictionary."""
        return {
            'error': self.message,
            'type': type(self).__name__,
            'exit_code': self.exit_code
        }


class ConfigError(PipelineError):
    """Invalid configuration, schema violation or shape mismatch."""

    exit_code = 2

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]

    def to_dict(self):
        result = super().to_dict()
        result['errors'] = self.errors
        return result


# Layer shape mismatches are configuration errors.
ConfigurationError = ConfigError


class MissingArtifactError(PipelineError):
    """An upstream artifact required by a subcommand does not exist."""

    exit_code = 3

    def __init__(self, stage, path):
        super().__init__(
            f"Missing artifact for stage '{stage}' at {path}; "
            f"run the '{stage}' subcommand first"
        )
        self.stage = stage
        self.path = str(path)


class TrainingDivergenceError(PipelineError):
    """Training produced a non-finite loss."""

    exit_code = 4


class UsageError(PipelineError):
    """An operation was called outside its contract."""


class CorpusError(PipelineError):
    """The data cannot support the requested operation."""


class DataError(PipelineError):
    """A datum is malformed (e.g. zero duration)."""


class MetricError(PipelineError):
    """A metric is undefined for its inputs."""


class TrainingError(PipelineError):
    """Training cannot proceed (e.g. no usable examples)."""


class EvaluationError(PipelineError):
    """Hypotheses and references do not line up."""

    def __init__(self, message, missing_ids=None):
        super().__init__(message)
        self.missing_ids = sorted(missing_ids or [])

    def to_dict(self):
        result = super().to_dict()
        result['missing_ids'] = self.missing_ids
        return result
