# normunit/models/codebook.py
import numpy as np

from normunit.utils.errors import ConfigError


class Codebook:
    """K centroid vectors over D-dimensional feature frames."""

    def __init__(self, centroids, inertia_history=None, min_k=2):
        centroids = np.array(centroids, dtype=np.float64)
        if centroids.ndim != 2:
            raise ConfigError(f"Codebook centroids must be a K x D matrix, got shape {centroids.shape}")
        if centroids.shape[0] < min_k:
            raise ConfigError(f"Codebook needs K >= {min_k} centroids, got {centroids.shape[0]}")
        if np.unique(centroids, axis=0).shape[0] != centroids.shape[0]:
            raise ConfigError("Codebook centroids must be pairwise distinct")
        self.centroids = centroids
        self.inertia_history = list(inertia_history or [])

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]

    def to_dict(self):
        """Convert the codebook to a dictionary."""
        return {
            'k': self.k,
            'dim': self.dim,
            'iterations': len(self.inertia_history),
            'final_inertia': self.inertia_history[-1] if self.inertia_history else None
        }
