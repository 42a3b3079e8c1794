# normunit/numcore/modules.py
"""
Parameter containers for the layers in ``functional``.

Modules register ``Parameter`` and child ``Module`` attributes in assignment
order, so ``named_parameters`` is deterministic and checkpoint names are
stable across runs.
"""
import logging
from contextlib import contextmanager

import numpy as np

from normunit.numcore import functional as F
from normunit.numcore import tensor as T
from normunit.numcore.tensor import Parameter
from normunit.utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


def xavier_uniform(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class: tracks parameters, children and train/eval mode."""

    def __init__(self):
        object.__setattr__(self, '_parameters', {})
        object.__setattr__(self, '_modules', {})
        object.__setattr__(self, 'training', True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
            if value.name is None:
                value.name = name
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=''):
        for name, param in self._parameters.items():
            yield f"{prefix}{name}", param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [param for _, param in self.named_parameters()]

    def train(self):
        self._set_mode(True)
        return self

    def eval(self):
        self._set_mode(False)
        return self

    @contextmanager
    def evaluating(self):
        """Eval mode inside the block; the previous mode comes back on exit."""
        was_training = self.training
        self.eval()
        try:
            yield self
        finally:
            self._set_mode(was_training)

    def _set_mode(self, training):
        object.__setattr__(self, 'training', training)
        for module in self._modules.values():
            module._set_mode(training)

    def freeze(self):
        for param in self.parameters():
            param.frozen = True

    def unfreeze(self):
        for param in self.parameters():
            param.frozen = False

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def state_dict(self):
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state):
        """
        Copy arrays into parameters by name.

        Raises:
            ConfigurationError: On missing names or shape mismatches
        """
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise ConfigurationError(f"State is missing parameters: {', '.join(missing)}")
        for name, param in own.items():
            value = np.asarray(state[name], dtype=T.DTYPE)
            if value.shape != param.shape:
                raise ConfigurationError(
                    f"Parameter '{name}' has shape {param.shape}, state has shape {value.shape}"
                )
            param.data = value.copy()

    def num_parameters(self):
        return int(sum(param.size for param in self.parameters()))


class ModuleList(Module):
    """Ordered list of child modules."""

    def __init__(self, modules):
        super().__init__()
        object.__setattr__(self, '_items', [])
        for index, module in enumerate(modules):
            self._items.append(module)
            self._modules[str(index)] = module

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, in_features, out_features, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x):
        return F.affine(x, self.weight, self.bias)


class Conv1d(Module):
    """Channel-last convolution; padding keeps ``ceil(T / stride)`` for odd kernels."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1):
        super().__init__()
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        self.weight = Parameter(xavier_uniform(rng, fan_in, fan_out, (kernel_size, in_channels, out_channels)))
        self.bias = Parameter(np.zeros(out_channels))
        object.__setattr__(self, 'stride', stride)
        object.__setattr__(self, 'padding', kernel_size // 2)
        object.__setattr__(self, 'kernel_size', kernel_size)

    def output_length(self, length):
        return F.conv1d_output_length(length, self.kernel_size, self.stride, self.padding)

    def __call__(self, x):
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, width):
        super().__init__()
        self.gamma = Parameter(np.ones(width))
        self.beta = Parameter(np.zeros(width))

    def __call__(self, x):
        return F.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, count, width, rng):
        super().__init__()
        self.weight = Parameter(rng.normal(0.0, width ** -0.5, size=(count, width)))

    def __call__(self, ids):
        return F.embedding(ids, self.weight)


class MultiHeadAttention(Module):
    def __init__(self, width, heads, rng):
        super().__init__()
        if width % heads:
            raise ConfigurationError(f"Attention width {width} is not divisible by {heads} heads")
        object.__setattr__(self, 'heads', heads)
        for name in ('q', 'k', 'v', 'o'):
            setattr(self, f"w{name}", Parameter(xavier_uniform(rng, width, width, (width, width))))
            setattr(self, f"b{name}", Parameter(np.zeros(width)))

    def __call__(self, query, key_value=None, key_padding_mask=None, causal=False):
        key_value = query if key_value is None else key_value
        params = {name: getattr(self, name) for name in ('wq', 'bq', 'wk', 'bk', 'wv', 'bv', 'wo', 'bo')}
        return F.multi_head_attention(query, key_value, params, self.heads,
                                      key_padding_mask=key_padding_mask, causal=causal)


class FeedForward(Module):
    def __init__(self, width, hidden, rng):
        super().__init__()
        self.inner = Linear(width, hidden, rng)
        self.outer = Linear(hidden, width, rng)

    def __call__(self, x):
        return self.outer(T.relu(self.inner(x)))


class EncoderBlock(Module):
    """Pre-norm transformer encoder block."""

    def __init__(self, width, heads, hidden, rng, dropout=0.0):
        super().__init__()
        self.attention_norm = LayerNorm(width)
        self.attention = MultiHeadAttention(width, heads, rng)
        self.ffn_norm = LayerNorm(width)
        self.ffn = FeedForward(width, hidden, rng)
        object.__setattr__(self, 'dropout', dropout)
        object.__setattr__(self, 'rng', np.random.default_rng(rng.integers(2 ** 32)))

    def __call__(self, x, padding_mask=None):
        attended = self.attention(self.attention_norm(x), key_padding_mask=padding_mask)
        x = x + F.dropout(attended, self.dropout, self.rng, self.training)
        return x + F.dropout(self.ffn(self.ffn_norm(x)), self.dropout, self.rng, self.training)


class DecoderBlock(Module):
    """Pre-norm transformer decoder block: causal self-attention, cross-attention, feed-forward."""

    def __init__(self, width, heads, hidden, rng, dropout=0.0):
        super().__init__()
        self.self_norm = LayerNorm(width)
        self.self_attention = MultiHeadAttention(width, heads, rng)
        self.cross_norm = LayerNorm(width)
        self.cross_attention = MultiHeadAttention(width, heads, rng)
        self.ffn_norm = LayerNorm(width)
        self.ffn = FeedForward(width, hidden, rng)
        object.__setattr__(self, 'dropout', dropout)
        object.__setattr__(self, 'rng', np.random.default_rng(rng.integers(2 ** 32)))

    def __call__(self, x, memory, memory_padding_mask=None, padding_mask=None):
        attended = self.self_attention(self.self_norm(x), key_padding_mask=padding_mask, causal=True)
        x = x + F.dropout(attended, self.dropout, self.rng, self.training)
        crossed = self.cross_attention(self.cross_norm(x), memory, key_padding_mask=memory_padding_mask)
        x = x + F.dropout(crossed, self.dropout, self.rng, self.training)
        return x + F.dropout(self.ffn(self.ffn_norm(x)), self.dropout, self.rng, self.training)


def sinusoidal_positions(length, width):
    positions = np.arange(length)[:, None]
    rates = np.exp(np.arange(0, width, 2) * (-np.log(10000.0) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: width // 2])
    return table


def padding_mask(lengths, max_length):
    """True at padded positions."""
    lengths = np.asarray(lengths)
    return np.arange(max_length)[None, :] >= lengths[:, None]
