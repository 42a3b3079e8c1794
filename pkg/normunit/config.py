# normunit/config.py
import json
import logging
import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError

from normunit.models.experiment import ExperimentConfig, FloatRange, IntRange
from normunit.services.duration_service import MIN_AUDIBLE_FRAMES
from normunit.services.world_service import WorldService
from normunit.utils.errors import ConfigError
from normunit.utils.validators import is_ascending, validate_workers

load_dotenv()

logger = logging.getLogger(__name__)


class Config:
    """Base configuration; only the output root and worker count come from the environment."""

    OUTPUT_ROOT = os.environ.get('NORMUNIT_OUTPUT_ROOT', 'artifacts')
    WORKERS = validate_workers(os.environ.get('NORMUNIT_WORKERS', 1))
    TESTING = False


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    WORKERS = 1


def get_config(testing=False):
    return TestingConfig if testing or os.environ.get('NORMUNIT_ENV') == 'testing' else Config


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(document, overrides):
    """
    Patch a raw config document with ``key.path=value`` overrides.

    Values are parsed as JSON literals where possible, else kept as strings.

    Raises:
        ConfigError: On an override without ``=`` or one that descends into a non-mapping
    """
    errors = []
    for override in overrides or ():
        if '=' not in override:
            errors.append(f"override '{override}': expected key.path=value")
            continue
        path, raw = override.split('=', 1)
        keys = [key for key in path.strip().split('.') if key]
        if not keys:
            errors.append(f"override '{override}': empty key path")
            continue
        node = document
        for depth, key in enumerate(keys[:-1]):
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                errors.append(f"override '{override}': {'.'.join(keys[:depth + 1])} is not a block")
                break
            node = child
        else:
            node[keys[-1]] = _parse_value(raw.strip())
    if errors:
        raise ConfigError(f"{len(errors)} invalid override(s)", errors=errors)
    return document


def _range_errors(model, prefix=''):
    errors = []
    for name in type(model).model_fields:
        value = getattr(model, name)
        path = f"{prefix}{name}"
        if isinstance(value, (IntRange, FloatRange)):
            if value.min > value.max:
                errors.append(f"{path}: min {value.min} exceeds max {value.max}")
        elif hasattr(type(value), 'model_fields'):
            errors.extend(_range_errors(value, prefix=f"{path}."))
    return errors


def derived_errors(config):
    """Cross-field checks pydantic field validation cannot express."""
    errors = _range_errors(config)
    world, normalizer, s2ut = config.world, config.normalizer, config.s2ut
    sizes = world.sizes

    if normalizer.frozen_updates >= normalizer.total_updates:
        errors.append(
            f"normalizer.frozen_updates: {normalizer.frozen_updates} must be below "
            f"total_updates {normalizer.total_updates}"
        )
    if normalizer.width % normalizer.heads:
        errors.append(f"normalizer.heads: width {normalizer.width} is not divisible by {normalizer.heads}")
    if normalizer.width % 2:
        errors.append(f"normalizer.width: {normalizer.width} must be even for sinusoidal positions")
    if normalizer.stride > world.base_duration.min:
        errors.append(
            f"normalizer.stride: downsampling {normalizer.stride} exceeds the minimum base unit "
            f"duration {world.base_duration.min}, so CTC targets may be infeasible"
        )
    if world.base_duration.min < MIN_AUDIBLE_FRAMES:
        errors.append(
            f"world.base_duration: min {world.base_duration.min} is below the {MIN_AUDIBLE_FRAMES} frames "
            "the resynthesis proxy can hear"
        )
    for path, kernel in (('normalizer.kernel_size', normalizer.kernel_size),
                         ('duration.kernel_size', config.duration.kernel_size)):
        if kernel % 2 == 0:
            errors.append(f"{path}: {kernel} must be odd to keep sequence length")
    if s2ut.target == 'norm' and normalizer.language != 'tgt':
        errors.append("normalizer.language: norm-unit S2UT targets need a 'tgt' normalizer")
    if s2ut.aux_layer > s2ut.encoder_layers:
        errors.append(f"s2ut.aux_layer: {s2ut.aux_layer} exceeds encoder depth {s2ut.encoder_layers}")
    if s2ut.width % s2ut.heads:
        errors.append(f"s2ut.heads: width {s2ut.width} is not divisible by {s2ut.heads}")
    if s2ut.width % 2:
        errors.append(f"s2ut.width: {s2ut.width} must be even for sinusoidal positions")
    if not (sizes.norm_10min < sizes.norm_1hr < sizes.norm_10hr):
        errors.append(
            "world.sizes: normalizer tiers must strictly increase "
            f"(10min={sizes.norm_10min}, 1hr={sizes.norm_1hr}, 10hr={sizes.norm_10hr})"
        )
    if sizes.xspk > 0 and world.speakers_per_language < 3:
        errors.append("world.speakers_per_language: cross-speaker pairs need two non-reference speakers")
    if not is_ascending(config.eval.thresholds):
        errors.append("eval.thresholds: must be strictly ascending")

    errors.extend(WorldService.capacity_errors(world))
    return errors


def validate_config(source=None, overrides=None):
    """
    Load, patch and validate an experiment config.

    Args:
        source: Path to a JSON file, an already-parsed mapping, or None for defaults
        overrides: Iterable of ``key.path=value`` strings

    Returns:
        Normalized ExperimentConfig with defaults filled in

    Raises:
        ConfigError: Carrying every violation found, each with its field path
    """
    if source is None:
        document = {}
    elif isinstance(source, dict):
        document = json.loads(json.dumps(source))
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"Config file {path} does not exist")
        text = path.read_text(encoding='utf-8')
        if not text.strip():
            raise ConfigError(f"Config file {path} is empty", errors=["<root>: empty document"])
        try:
            document = json.loads(text)
        except ValueError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {str(e)}")
        if not isinstance(document, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object",
                              errors=["<root>: expected an object"])

    document = apply_overrides(document, overrides)
    try:
        config = ExperimentConfig.model_validate(document)
    except ValidationError as e:
        errors = [
            f"{'.'.join(str(part) for part in error['loc']) or '<root>'}: {error['msg']}"
            for error in e.errors()
        ]
        logger.error(f"Config rejected with {len(errors)} error(s)")
        raise ConfigError(f"Config has {len(errors)} schema error(s)", errors=errors)

    errors = derived_errors(config)
    if errors:
        logger.error(f"Config rejected with {len(errors)} error(s)")
        raise ConfigError(f"Config has {len(errors)} error(s)", errors=errors)
    return config
