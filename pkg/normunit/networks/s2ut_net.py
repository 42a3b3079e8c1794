# normunit/networks/s2ut_net.py
"""
Speech-to-unit translation network.

Unit vocabularies reserve three symbols past the inventory: BOS = K,
EOS = K + 1 and PAD = K + 2.
"""
import numpy as np

from normunit.numcore import functional as F
from normunit.numcore import tensor as T
from normunit.numcore.modules import (Conv1d, DecoderBlock, Embedding, EncoderBlock, LayerNorm, Linear, Module,
                                      ModuleList, padding_mask, sinusoidal_positions)
from normunit.numcore.tensor import Parameter
from normunit.utils.errors import ConfigError


def special_symbols(k):
    """(BOS, EOS, PAD) for an inventory of ``k`` units."""
    return k, k + 1, k + 2


class Downsampler(Module):
    """Two stride-2 convolutions, each followed by a GLU: length ceil(ceil(T / 2) / 2)."""

    def __init__(self, feature_dim, width, rng):
        super().__init__()
        self.first = Conv1d(feature_dim, 2 * width, 3, rng, stride=2)
        self.second = Conv1d(width, 2 * width, 3, rng, stride=2)

    def output_length(self, length):
        return self.second.output_length(self.first.output_length(length))

    def __call__(self, x):
        return F.glu(self.second(F.glu(self.first(x))))


class SpeakerFusion(Module):
    """Concatenate a speaker vector to every frame, then project back to the encoder width."""

    def __init__(self, width, speaker_dim):
        super().__init__()
        weight = np.zeros((width + speaker_dim, width))
        weight[:width] = np.eye(width)
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(width))
        object.__setattr__(self, 'width', width)
        object.__setattr__(self, 'speaker_dim', speaker_dim)

    def __call__(self, states, speakers):
        speakers = np.asarray(speakers, dtype=np.float64)
        if speakers.ndim != 2 or speakers.shape[1] != self.speaker_dim:
            raise ConfigError(
                f"Speaker vectors of shape {speakers.shape} do not match speaker width {self.speaker_dim}"
            )
        if states.shape[-1] != self.width:
            raise ConfigError(f"Encoder states of shape {states.shape} do not match width {self.width}")
        batch, length, _ = states.shape
        tiled = np.broadcast_to(speakers[:, None, :], (batch, length, self.speaker_dim))
        return F.affine(T.concat([states, T.Tensor(tiled)], axis=-1), self.weight, self.bias)


class UnitDecoder(Module):
    """Autoregressive transformer decoder over a unit vocabulary with three special symbols."""

    def __init__(self, k, width, heads, ffn, layers, rng, dropout=0.0):
        super().__init__()
        self.embedding = Embedding(k + 3, width, rng)
        self.blocks = ModuleList([DecoderBlock(width, heads, ffn, rng, dropout=dropout) for _ in range(layers)])
        self.final_norm = LayerNorm(width)
        self.output = Linear(width, k + 3, rng)
        object.__setattr__(self, 'k', k)
        object.__setattr__(self, 'width', width)

    def __call__(self, tokens, memory, memory_padding_mask=None, token_lengths=None):
        tokens = np.asarray(tokens, dtype=np.int64)
        length = tokens.shape[1]
        x = self.embedding(tokens) * np.sqrt(self.width)
        x = x + sinusoidal_positions(length, self.width)[None, :, :]
        token_mask = None if token_lengths is None else padding_mask(token_lengths, length)
        for block in self.blocks:
            x = block(x, memory, memory_padding_mask=memory_padding_mask, padding_mask=token_mask)
        return self.output(self.final_norm(x))


class S2utNet(Module):
    """
    Downsampler, transformer encoder, unit decoder and training-only auxiliary decoder.

    The auxiliary decoder reads the output of encoder layer ``aux_layer``
    and reconstructs the reduced orig-units of the source.
    """

    def __init__(self, feature_dim, src_k, tgt_k, config, rng, speaker_dim=0):
        super().__init__()
        width = config.width
        self.downsampler = Downsampler(feature_dim, width, rng)
        self.encoder = ModuleList([
            EncoderBlock(width, config.heads, config.ffn, rng, dropout=config.dropout)
            for _ in range(config.encoder_layers)
        ])
        self.encoder_norm = LayerNorm(width)
        self.aux_norm = LayerNorm(width)
        self.decoder = UnitDecoder(tgt_k, width, config.heads, config.ffn, config.decoder_layers, rng,
                                   dropout=config.dropout)
        self.aux_decoder = UnitDecoder(src_k, width, config.heads, config.ffn, config.aux_decoder_layers, rng,
                                       dropout=config.dropout)
        self.fusion = SpeakerFusion(width, speaker_dim) if config.speaker_fusion else None
        object.__setattr__(self, 'width', width)
        object.__setattr__(self, 'aux_layer', config.aux_layer)
        object.__setattr__(self, 'src_k', src_k)
        object.__setattr__(self, 'tgt_k', tgt_k)
        object.__setattr__(self, 'speaker_dim', speaker_dim)

    def encoder_lengths(self, lengths):
        return [self.downsampler.output_length(int(length)) for length in lengths]

    def encode(self, features, lengths, speakers=None, with_aux=True):
        """
        Args:
            features: (B, T, D) zero-padded array
            lengths: Valid frame counts
            speakers: (B, S) speaker vectors when fusion is enabled
            with_aux: Also return the auxiliary memory

        Returns:
            Tuple of (memory, aux memory or None, memory padding mask)
        """
        hidden = self.downsampler(T.Tensor(features))
        out_lengths = self.encoder_lengths(lengths)
        hidden = hidden + sinusoidal_positions(hidden.shape[1], self.width)[None, :, :]
        key_mask = padding_mask(out_lengths, hidden.shape[1])
        aux_memory = None
        for depth, block in enumerate(self.encoder, start=1):
            hidden = block(hidden, padding_mask=key_mask)
            if with_aux and depth == self.aux_layer:
                aux_memory = self.aux_norm(hidden)
        memory = self.encoder_norm(hidden)
        if self.fusion is not None:
            if speakers is None:
                raise ConfigError("Speaker fusion is enabled but no speaker vectors were given")
            memory = self.fusion(memory, speakers)
        return memory, aux_memory, key_mask

    def decode(self, tokens, memory, memory_padding_mask, token_lengths=None):
        return self.decoder(tokens, memory, memory_padding_mask, token_lengths)

    def aux_decode(self, tokens, aux_memory, memory_padding_mask, token_lengths=None):
        return self.aux_decoder(tokens, aux_memory, memory_padding_mask, token_lengths)
