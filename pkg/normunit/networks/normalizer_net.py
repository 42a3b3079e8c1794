# normunit/networks/normalizer_net.py
import numpy as np

from normunit.numcore import functional as F
from normunit.numcore import tensor as T
from normunit.numcore.modules import (Conv1d, EncoderBlock, LayerNorm, Linear, Module, ModuleList,
                                      padding_mask, sinusoidal_positions)
from normunit.numcore.tensor import Parameter


class NormalizerNet(Module):
    """
    Convolutional front-end, transformer encoder and CTC head over ``vocab_size + 1`` symbols.

    A second head predicts orig-units at masked frames for the pretraining
    proxy. The learned mask vector replaces masked input frames.
    """

    def __init__(self, feature_dim, vocab_size, config, rng):
        super().__init__()
        width = config.width
        self.front = Conv1d(feature_dim, 2 * width, config.kernel_size, rng, stride=config.stride)
        self.blocks = ModuleList([
            EncoderBlock(width, config.heads, config.ffn, rng, dropout=config.dropout)
            for _ in range(config.depth)
        ])
        self.final_norm = LayerNorm(width)
        self.ctc_head = Linear(width, vocab_size + 1, rng)
        self.unit_head = Linear(width, vocab_size, rng)
        self.mask_vector = Parameter(rng.normal(0.0, 0.1, size=feature_dim))
        object.__setattr__(self, 'vocab_size', vocab_size)
        object.__setattr__(self, 'feature_dim', feature_dim)
        object.__setattr__(self, 'width', width)

    @property
    def blank(self):
        return self.vocab_size

    @property
    def downsampling(self):
        return self.front.stride

    def output_lengths(self, lengths):
        return [self.front.output_length(int(length)) for length in lengths]

    def freeze_blocks(self):
        self.blocks.freeze()

    def unfreeze_blocks(self):
        self.blocks.unfreeze()

    def encode(self, features, lengths, mask=None):
        """
        Args:
            features: (B, T, D) array, zero-padded
            lengths: Valid frame counts
            mask: Optional (B, T) bool array of frames replaced by the mask vector

        Returns:
            Tuple of (hidden (B, T', W) tensor, output lengths)
        """
        x = T.Tensor(features)
        if mask is not None:
            x = T.where(np.asarray(mask, dtype=bool)[:, :, None], self.mask_vector, x)
        hidden = F.glu(self.front(x))
        out_lengths = self.output_lengths(lengths)
        hidden = hidden + sinusoidal_positions(hidden.shape[1], self.width)[None, :, :]
        key_mask = padding_mask(out_lengths, hidden.shape[1])
        for block in self.blocks:
            hidden = block(hidden, padding_mask=key_mask)
        return self.final_norm(hidden), out_lengths

    def ctc_log_probs(self, features, lengths, mask=None):
        hidden, out_lengths = self.encode(features, lengths, mask)
        return T.log_softmax(self.ctc_head(hidden), axis=-1), out_lengths

    def unit_logits(self, features, lengths, mask=None):
        hidden, out_lengths = self.encode(features, lengths, mask)
        return self.unit_head(hidden), out_lengths
