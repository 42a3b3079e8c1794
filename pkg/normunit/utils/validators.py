# normunit/utils/validators.py
import math


def is_valid_unit_seq(units, k):
    """
    Check that every token is an integer in [0, k).

    Args:
        units: Token sequence
        k: Inventory size

    Returns:
        Boolean indicating if valid
    """
    try:
        return all(0 <= int(unit) < k and int(unit) == unit for unit in units)
    except (ValueError, TypeError):
        return False


def is_reduced(units):
    """Check that no two adjacent tokens are equal."""
    units = list(units)
    return all(a != b for a, b in zip(units, units[1:]))


def is_valid_duration_seq(durations, reduced=None):
    """
    Check that durations are positive integers, one per reduced token.

    Args:
        durations: Per-token frame counts
        reduced: Optional paired reduced sequence

    Returns:
        Boolean indicating if valid
    """
    try:
        if any(int(duration) < 1 or int(duration) != duration for duration in durations):
            return False
    except (ValueError, TypeError):
        return False
    return reduced is None or len(reduced) == len(durations)


def is_ascending(values):
    values = list(values)
    return all(a < b for a, b in zip(values, values[1:]))


def is_finite_number(value):
    try:
        return math.isfinite(float(value))
    except (ValueError, TypeError):
        return False


def validate_workers(workers, default=1):
    """
    Validate and normalize a worker count.

    Args:
        workers: Requested worker count (any int-like)
        default: Value used when the request is unusable

    Returns:
        Worker count >= 1
    """
    try:
        workers = int(workers)
    except (ValueError, TypeError):
        return default
    return max(1, workers)
