# normunit/networks/duration_net.py
import numpy as np

from normunit.numcore import functional as F
from normunit.numcore import tensor as T
from normunit.numcore.modules import Conv1d, Embedding, LayerNorm, Linear, Module


class DurationNet(Module):
    """Unit embedding, two conv/ReLU/LayerNorm layers and a linear log-duration output."""

    def __init__(self, vocab_size, config, rng):
        super().__init__()
        width = config.width
        self.embedding = Embedding(vocab_size, width, rng)
        self.first = Conv1d(width, width, config.kernel_size, rng)
        self.first_norm = LayerNorm(width)
        self.second = Conv1d(width, width, config.kernel_size, rng)
        self.second_norm = LayerNorm(width)
        self.output = Linear(width, 1, rng)
        object.__setattr__(self, 'vocab_size', vocab_size)
        object.__setattr__(self, 'dropout', config.dropout)
        object.__setattr__(self, 'rng', np.random.default_rng(rng.integers(2 ** 32)))

    def __call__(self, units):
        """(B, L) unit ids -> (B, L) predicted log durations."""
        units = np.asarray(units, dtype=np.int64)
        x = self.embedding(units)
        x = self.first_norm(T.relu(self.first(x)))
        x = F.dropout(x, self.dropout, self.rng, self.training)
        x = self.second_norm(T.relu(self.second(x)))
        x = F.dropout(x, self.dropout, self.rng, self.training)
        batch, length = units.shape
        return self.output(x).reshape((batch, length))
