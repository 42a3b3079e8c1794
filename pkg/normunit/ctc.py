# normunit/ctc.py
"""
Connectionist Temporal Classification.

The blank symbol sits one past the unit inventory: with V units the
log-probability matrix has V + 1 columns and the blank id is V, so unit
files never contain it.
"""
import itertools
import logging

import numpy as np

from normunit.numcore import tensor as T
from normunit.utils.errors import UsageError

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_FRAMES = 8
BRUTE_FORCE_MAX_UNITS = 5


def _logsumexp(values, axis):
    peak = values.max(axis=axis, keepdims=True)
    safe_peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide='ignore'):
        summed = np.log(np.exp(values - safe_peak).sum(axis=axis, keepdims=True))
    return np.squeeze(summed + safe_peak, axis=axis)


def _shift(values, offset, fill=-np.inf):
    """Shift right by ``offset`` (left when negative), filling vacated slots."""
    shifted = np.full_like(values, fill)
    if offset > 0 and offset < len(values):
        shifted[offset:] = values[:-offset]
    elif offset < 0 and -offset < len(values):
        shifted[:offset] = values[-offset:]
    return shifted


def _extended(target, blank):
    extended = [blank]
    for unit in target:
        extended.extend([unit, blank])
    return np.asarray(extended, dtype=np.int64)


def required_frames(target):
    """Fewest frames that can emit ``target``: one per unit plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def is_feasible(target, frames):
    return required_frames(target) <= frames


def _validate(log_probs, target, blank):
    if log_probs.ndim != 2:
        raise UsageError(f"log_probs must be (T, V+1), got shape {log_probs.shape}")
    if any(unit == blank for unit in target):
        raise UsageError("CTC target must not contain the blank symbol")
    if any(unit < 0 or unit >= log_probs.shape[1] for unit in target):
        raise UsageError(f"CTC target unit out of range for {log_probs.shape[1]} symbols")


def ctc_loss(log_probs, target, blank=None, validate=True):
    """
    Negative log-likelihood of ``target`` and its gradient.

    Forward-backward runs entirely in log space. The gradient is taken
    w.r.t. the entries of ``log_probs`` as free inputs.

    Args:
        log_probs: (T, V+1) array of per-frame log-distributions
        target: Unit sequence without blanks
        blank: Blank id (defaults to the last column)
        validate: Check that rows are log-distributions

    Returns:
        Tuple of (loss, gradient); an infeasible target gives (inf, zeros)
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    target = [int(unit) for unit in target]
    blank = log_probs.shape[1] - 1 if blank is None else blank
    _validate(log_probs, target, blank)
    if validate and log_probs.shape[0]:
        row_mass = _logsumexp(log_probs, axis=1)
        if np.abs(row_mass).max() > 1e-6:
            raise UsageError("log_probs rows are not normalized log-distributions")

    frames = log_probs.shape[0]
    grad = np.zeros_like(log_probs)
    if not is_feasible(target, frames):
        return float('inf'), grad
    if frames == 0:
        return 0.0, grad

    extended = _extended(target, blank)
    states = len(extended)
    emissions = log_probs[:, extended]
    skip = np.zeros(states, dtype=bool)
    skip[2:] = (extended[2:] != blank) & (extended[2:] != extended[:-2])

    alpha = np.full((frames, states), -np.inf)
    alpha[0, 0] = emissions[0, 0]
    if states > 1:
        alpha[0, 1] = emissions[0, 1]
    for t in range(1, frames):
        previous = alpha[t - 1]
        one_back = _shift(previous, 1)
        two_back = np.where(skip, _shift(previous, 2), -np.inf)
        alpha[t] = np.logaddexp(np.logaddexp(previous, one_back), two_back) + emissions[t]

    # beta[t, s]: log-probability of completing the path from state s at t,
    # excluding the emission at t.
    beta = np.full((frames, states), -np.inf)
    beta[-1, -1] = 0.0
    if states > 1:
        beta[-1, -2] = 0.0
    skip_from = _shift(skip.astype(float), -2, fill=0.0) > 0.0
    for t in range(frames - 2, -1, -1):
        following = beta[t + 1] + emissions[t + 1]
        one_ahead = _shift(following, -1)
        two_ahead = np.where(skip_from, _shift(following, -2), -np.inf)
        beta[t] = np.logaddexp(np.logaddexp(following, one_ahead), two_ahead)

    final = alpha[-1, -1] if states == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    if not np.isfinite(final):
        return float('inf'), grad

    occupancy = alpha + beta
    for symbol in np.unique(extended):
        columns = occupancy[:, extended == symbol]
        grad[:, symbol] = -np.exp(_logsumexp(columns, axis=1) - final)
    return float(-final), grad


def ctc_brute_force(log_probs, target, blank=None):
    """
    Exact probability of ``target`` by enumerating every alignment path.

    All (V + 1)^T frame labelings are generated, each is collapsed (merge
    repeats, drop blanks) and the probabilities of those equal to
    ``target`` are summed.

    Raises:
        UsageError: If T > 8 or V > 5
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    frames, symbols = log_probs.shape
    if frames > BRUTE_FORCE_MAX_FRAMES or symbols - 1 > BRUTE_FORCE_MAX_UNITS:
        raise UsageError(
            f"Brute-force CTC limited to T <= {BRUTE_FORCE_MAX_FRAMES} and "
            f"V <= {BRUTE_FORCE_MAX_UNITS}, got T={frames}, V={symbols - 1}"
        )
    blank = symbols - 1 if blank is None else blank
    target = tuple(int(unit) for unit in target)
    _validate(log_probs, target, blank)
    if frames == 0:
        return 1.0 if not target else 0.0

    labels = itertools.chain.from_iterable(itertools.product(range(symbols), repeat=frames))
    paths = np.fromiter(labels, dtype=np.int8, count=symbols ** frames * frames).reshape(-1, frames)
    expected = np.asarray(target + (-1,), dtype=np.int64)
    emitted = np.zeros(len(paths), dtype=np.int64)
    matches = np.ones(len(paths), dtype=bool)
    previous = np.full(len(paths), -1, dtype=np.int64)
    path_log_probs = np.zeros(len(paths))
    for t in range(frames):
        label = paths[:, t].astype(np.int64)
        path_log_probs += log_probs[t, label]
        new = (label != blank) & (label != previous)
        matches &= ~new | (expected[np.minimum(emitted, len(target))] == label)
        emitted += new
        previous = label
    matches &= emitted == len(target)
    return float(np.exp(path_log_probs[matches]).sum())


def best_path_decode(log_probs, blank=None):
    """
    Greedy decoding: per-frame argmax, collapse repeats, then drop blanks.

    Returns:
        Reduced unit sequence without blanks
    """
    log_probs = np.asarray(log_probs)
    if log_probs.shape[0] == 0:
        return []
    blank = log_probs.shape[1] - 1 if blank is None else blank
    best = np.argmax(log_probs, axis=1)
    decoded = []
    previous = None
    for symbol in best:
        symbol = int(symbol)
        if symbol != previous and symbol != blank:
            decoded.append(symbol)
        previous = symbol
    return decoded


def ctc_loss_op(log_probs, target, blank=None):
    """CTC negative log-likelihood as a graph node over a (T, V+1) log-probability tensor."""
    loss, grad = ctc_loss(log_probs.data, target, blank=blank, validate=False)
    return T._result(np.asarray(loss), (log_probs,), lambda g: (g * grad,), 'ctc')
