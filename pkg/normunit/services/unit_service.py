# normunit/services/unit_service.py
import logging
from dataclasses import dataclass

import numpy as np

from normunit.models.codebook import Codebook
from normunit.utils.errors import ConfigError, CorpusError, MetricError, UsageError
from normunit.utils.event_publisher import EventPublisher
from normunit.utils import validators

logger = logging.getLogger(__name__)

DISTANCE_CHUNK = 1024


@dataclass(frozen=True)
class EditCounts:
    """Levenshtein distance with the operation counts of one optimal alignment."""

    distance: int
    substitutions: int
    insertions: int
    deletions: int

    def to_dict(self):
        return {
            'distance': self.distance,
            'substitutions': self.substitutions,
            'insertions': self.insertions,
            'deletions': self.deletions
        }


def _squared_distances(frames, centroids):
    """Exact squared Euclidean distances, computed in chunks of frames."""
    distances = np.empty((frames.shape[0], centroids.shape[0]))
    for start in range(0, frames.shape[0], DISTANCE_CHUNK):
        chunk = frames[start:start + DISTANCE_CHUNK]
        difference = chunk[:, None, :] - centroids[None, :, :]
        distances[start:start + DISTANCE_CHUNK] = (difference * difference).sum(axis=2)
    return distances


def reseed_duplicates(frames, centroids):
    """
    Move every repeated centroid onto the frame farthest from the codebook, in place.

    With at least K distinct frames there is always a frame no centroid
    sits on, so the result is pairwise distinct. Returns the moved indices.
    """
    _, first = np.unique(centroids, axis=0, return_index=True)
    repeated = sorted(set(range(centroids.shape[0])) - set(int(i) for i in first))
    for index in repeated:
        farthest = int(np.argmax(_squared_distances(frames, centroids).min(axis=1)))
        centroids[index] = frames[farthest]
    return repeated


class UnitService:
    """Codebook learning, quantization, run-length reduction and edit-distance metrics."""

    @staticmethod
    def kmeans_fit(frames, k, seed, tolerance=1e-6, max_iter=100):
        """
        Fit a codebook with k-means++ seeding and Lloyd iterations.

        Args:
            frames: (N, D) array of feature frames
            k: Number of clusters
            seed: Seed for the k-means++ draws
            tolerance: Stop when relative inertia improvement falls below this
            max_iter: Iteration cap

        Returns:
            Codebook with the per-iteration inertia history

        Raises:
            CorpusError: If there are fewer distinct frames than clusters
        """
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise CorpusError(f"kmeans_fit needs a non-empty (N, D) frame matrix, got shape {frames.shape}")
        distinct = np.unique(frames, axis=0).shape[0]
        if distinct < k:
            raise CorpusError(f"kmeans_fit needs at least {k} distinct frames, got {distinct}")

        rng = np.random.default_rng(seed)
        count = frames.shape[0]
        chosen = [int(rng.integers(count))]
        nearest = _squared_distances(frames, frames[chosen])[:, 0]
        while len(chosen) < k:
            index = int(rng.choice(count, p=nearest / nearest.sum()))
            chosen.append(index)
            nearest = np.minimum(nearest, _squared_distances(frames, frames[[index]])[:, 0])
        centroids = frames[chosen].copy()

        history = []
        for iteration in range(max_iter):
            distances = _squared_distances(frames, centroids)
            labels = np.argmin(distances, axis=1)
            inertia = float(distances[np.arange(count), labels].sum())
            history.append(inertia)
            if len(history) > 1 and history[-2] - inertia <= tolerance * max(history[-2], 1e-300):
                break
            sums = np.zeros_like(centroids)
            np.add.at(sums, labels, frames)
            sizes = np.bincount(labels, minlength=k)
            occupied = sizes > 0
            centroids[occupied] = sums[occupied] / sizes[occupied, None]
            moved = reseed_duplicates(frames, centroids)
            if moved:
                logger.info(f"k-means iteration {iteration}: reseeded collapsed centroids {moved}")

        logger.info(f"k-means converged after {len(history)} iterations, inertia {history[-1]:.4f}")
        EventPublisher.publish('codebook.fitted', {'k': k, 'iterations': len(history), 'inertia': history[-1]})
        return Codebook(centroids, inertia_history=history, min_k=1)

    @staticmethod
    def quantize(features, codebook):
        """
        Map each frame to its nearest centroid (ties to the lowest index).

        Raises:
            ConfigError: If the feature dimension differs from the codebook's
        """
        features = np.asarray(features, dtype=np.float64)
        if features.size == 0:
            return []
        if features.ndim != 2 or features.shape[1] != codebook.dim:
            raise ConfigError(
                f"Feature shape {features.shape} does not match codebook dimension {codebook.dim}"
            )
        return [int(unit) for unit in np.argmin(_squared_distances(features, codebook.centroids), axis=1)]

    @staticmethod
    def reduce(units):
        """
        Collapse runs of equal adjacent units.

        Returns:
            Tuple of (reduced units, run lengths)
        """
        reduced, durations = [], []
        for unit in units:
            unit = int(unit)
            if reduced and reduced[-1] == unit:
                durations[-1] += 1
            else:
                reduced.append(unit)
                durations.append(1)
        return reduced, durations

    @staticmethod
    def expand(reduced, durations):
        """
        Inverse of ``reduce``.

        Raises:
            UsageError: On a length mismatch or a duration below one
        """
        if len(reduced) != len(durations):
            raise UsageError(
                f"expand needs one duration per unit, got {len(reduced)} units and {len(durations)} durations"
            )
        if not validators.is_valid_duration_seq(durations, reduced):
            raise UsageError("expand needs integer durations >= 1")
        expanded = []
        for unit, duration in zip(reduced, durations):
            expanded.extend([int(unit)] * int(duration))
        return expanded

    @staticmethod
    def edit_distance(a, b):
        """
        Levenshtein distance turning ``a`` into ``b`` with unit costs.

        The backtrace prefers substitution (or match), then deletion, then
        insertion, so the operation counts are reproducible.
        """
        a, b = list(a), list(b)
        rows, cols = len(a) + 1, len(b) + 1
        cost = np.zeros((rows, cols), dtype=np.int64)
        cost[:, 0] = np.arange(rows)
        cost[0, :] = np.arange(cols)
        for i in range(1, rows):
            for j in range(1, cols):
                cost[i, j] = min(
                    cost[i - 1, j - 1] + (a[i - 1] != b[j - 1]),
                    cost[i - 1, j] + 1,
                    cost[i, j - 1] + 1
                )

        substitutions = insertions = deletions = 0
        i, j = rows - 1, cols - 1
        while i > 0 or j > 0:
            if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (a[i - 1] != b[j - 1]):
                substitutions += int(a[i - 1] != b[j - 1])
                i, j = i - 1, j - 1
            elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
                deletions += 1
                i -= 1
            else:
                insertions += 1
                j -= 1
        return EditCounts(int(cost[-1, -1]), substitutions, insertions, deletions)

    @staticmethod
    def uer(hyp, ref):
        """
        Unit error rate in percent.

        Raises:
            MetricError: If the reference is empty
        """
        if len(ref) == 0:
            raise MetricError("UER is undefined for an empty reference")
        return 100.0 * UnitService.edit_distance(hyp, ref).distance / len(ref)

    @staticmethod
    def corpus_uer(hyps, refs):
        """Total edits over total reference length, in percent."""
        if len(hyps) != len(refs):
            raise MetricError(f"corpus_uer needs paired sequences, got {len(hyps)} and {len(refs)}")
        total = sum(len(ref) for ref in refs)
        if total == 0:
            raise MetricError("UER is undefined for an empty reference corpus")
        edits = sum(UnitService.edit_distance(hyp, ref).distance for hyp, ref in zip(hyps, refs))
        return 100.0 * edits / total

    @staticmethod
    def is_reduced(units):
        return validators.is_reduced(units)
