# test_units.py
from functools import lru_cache
from itertools import product

import numpy as np
import pytest

from normunit.models.codebook import Codebook
from normunit.services.unit_service import UnitService, reseed_duplicates
from normunit.utils.errors import ConfigError, CorpusError, MetricError, UsageError


def _levenshtein(a, b):
    @lru_cache(maxsize=None)
    def distance(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(distance(i - 1, j - 1) + (a[i - 1] != b[j - 1]), distance(i - 1, j) + 1, distance(i, j - 1) + 1)
    return distance(len(a), len(b))


def test_reduce_expand_identity(rng):
    for _ in range(1000):
        units = [int(u) for u in rng.integers(0, 4, size=int(rng.integers(0, 30)))]
        reduced, durations = UnitService.reduce(units)
        assert UnitService.is_reduced(reduced)
        assert sum(durations) == len(units)
        assert UnitService.expand(reduced, durations) == units


def test_reduce_examples():
    assert UnitService.reduce([5, 5, 5, 2, 2, 7, 5]) == ([5, 2, 7, 5], [3, 2, 1, 1])
    assert UnitService.reduce([]) == ([], [])


def test_expand_rejects_bad_durations():
    with pytest.raises(UsageError):
        UnitService.expand([1, 2], [1])
    with pytest.raises(UsageError):
        UnitService.expand([1, 2], [1, 0])


def test_edit_distance_matches_exhaustive_oracle():
    alphabet = (0, 1, 2)
    strings = [s for length in range(0, 5) for s in product(alphabet, repeat=length)]
    rng = np.random.default_rng(3)
    strings += [tuple(int(u) for u in rng.integers(0, 3, size=7)) for _ in range(40)]
    for a in strings[::7]:
        for b in strings[::11]:
            counts = UnitService.edit_distance(a, b)
            assert counts.distance == _levenshtein(a, b)
            assert counts.substitutions + counts.insertions + counts.deletions == counts.distance


def test_edit_counts_prefer_substitution():
    counts = UnitService.edit_distance([1, 2, 3], [1, 4, 3, 5])
    assert counts.to_dict() == {'distance': 2, 'substitutions': 1, 'insertions': 1, 'deletions': 0}


def test_uer_and_corpus_uer():
    assert UnitService.uer([1, 2, 3, 4], [1, 2, 3, 4]) == 0.0
    assert UnitService.uer([1, 3], [1, 2, 3, 4]) == 50.0
    assert UnitService.corpus_uer([[1], [2, 2]], [[1], [2, 3, 4]]) == pytest.approx(100.0 * 2 / 4)
    with pytest.raises(MetricError):
        UnitService.uer([1], [])


def _blobs(rng, centers, per_blob=50, scale=0.05):
    return np.concatenate([center + scale * rng.standard_normal((per_blob, len(center))) for center in centers])


def test_kmeans_recovers_separated_blobs(rng, events):
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    frames = _blobs(rng, centers)
    codebook = UnitService.kmeans_fit(frames, 3, seed=0)
    labels = UnitService.quantize(frames, codebook)
    for blob in range(3):
        assert len(set(labels[blob * 50:(blob + 1) * 50])) == 1
    assert len(set(labels)) == 3
    assert codebook.inertia_history == sorted(codebook.inertia_history, reverse=True)
    assert events[-1]['event_type'] == 'codebook.fitted'


def test_kmeans_is_deterministic(rng):
    frames = _blobs(rng, np.eye(4) * 3.0)
    first = UnitService.kmeans_fit(frames, 4, seed=5)
    second = UnitService.kmeans_fit(frames, 4, seed=5)
    np.testing.assert_array_equal(first.centroids, second.centroids)


def test_kmeans_needs_enough_distinct_frames():
    with pytest.raises(CorpusError):
        UnitService.kmeans_fit(np.zeros((10, 2)), 2, seed=0)


def test_quantize_ties_and_shapes():
    codebook = Codebook([[0.0, 0.0], [2.0, 0.0]])
    assert UnitService.quantize([[1.0, 0.0], [1.9, 0.0], [0.1, 0.0]], codebook) == [0, 1, 0]
    assert UnitService.quantize(np.zeros((0, 2)), codebook) == []
    with pytest.raises(ConfigError):
        UnitService.quantize(np.zeros((3, 5)), codebook)


def test_codebook_rejects_duplicate_centroids():
    with pytest.raises(ConfigError):
        Codebook([[1.0, 1.0], [1.0, 1.0]])


def test_edit_distance_is_a_metric(rng):
    def sample():
        return [int(u) for u in rng.integers(0, 4, size=int(rng.integers(0, 9)))]

    for _ in range(300):
        a, b, c = sample(), sample(), sample()
        ab = UnitService.edit_distance(a, b).distance
        assert ab == UnitService.edit_distance(b, a).distance
        assert UnitService.edit_distance(a, a).distance == 0
        assert (ab == 0) == (a == b)
        assert UnitService.edit_distance(a, c).distance <= ab + UnitService.edit_distance(b, c).distance


def test_reduce_is_idempotent(rng):
    for _ in range(200):
        reduced, _ = UnitService.reduce([int(u) for u in rng.integers(0, 3, size=int(rng.integers(0, 20)))])
        assert UnitService.reduce(reduced) == (reduced, [1] * len(reduced))


def test_quantizing_centroids_recovers_units(rng):
    codebook = Codebook(rng.normal(size=(12, 5)))
    for _ in range(50):
        units = [int(u) for u in rng.integers(0, 12, size=int(rng.integers(1, 30)))]
        assert UnitService.quantize(codebook.centroids[units], codebook) == units


def test_single_cluster_is_the_mean(rng):
    frames = rng.normal(size=(40, 3))
    codebook = UnitService.kmeans_fit(frames, 1, seed=0)
    np.testing.assert_allclose(codebook.centroids[0], frames.mean(axis=0))


def test_two_blobs_land_on_their_means(rng):
    centers = np.array([[0.0, 0.0, 0.0], [6.0, 6.0, 0.0]])
    frames = _blobs(rng, centers, per_blob=200, scale=0.3)
    codebook = UnitService.kmeans_fit(frames, 2, seed=1)
    found = codebook.centroids[np.argsort(codebook.centroids[:, 0])]
    for blob, centroid in enumerate(found):
        mean = frames[blob * 200:(blob + 1) * 200].mean(axis=0)
        assert np.linalg.norm(centroid - mean) < 0.1


def test_collapsed_centroids_are_reseeded():
    frames = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [9.0, 9.0]])
    centroids = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0]])
    assert reseed_duplicates(frames, centroids) == [1]
    np.testing.assert_array_equal(centroids[1], [9.0, 9.0])
    assert Codebook(centroids).k == 3
    assert reseed_duplicates(frames, centroids) == []
