# normunit/numcore/functional.py
"""
Layer functions built on the tensor primitives.

Every layer kind the pipeline needs is reachable through ``forward_layer``
by name; the functions can also be called directly.
"""
import logging

import numpy as np

from normunit.numcore import tensor as T
from normunit.utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


def _check(condition, message):
    if not condition:
        raise ConfigurationError(message)


def affine(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    _check(
        x.shape[-1] == weight.shape[0],
        f"affine: input shape {x.shape} does not match weight shape {weight.shape}"
    )
    out = T.matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out


def conv1d_output_length(length, kernel_size, stride, padding):
    return (length + 2 * padding - kernel_size) // stride + 1


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """
    Channel-last 1-D convolution.

    Args:
        x: Input of shape (B, T, C_in)
        weight: Kernel of shape (K, C_in, C_out)
        bias: Optional bias of shape (C_out,)
        stride: Step between windows
        padding: Zeros added on both ends of the time axis

    Returns:
        Tensor of shape (B, T_out, C_out)
    """
    _check(x.ndim == 3, f"conv1d: input shape {x.shape} is not (B, T, C)")
    kernel, in_channels, out_channels = weight.shape
    _check(
        x.shape[2] == in_channels,
        f"conv1d: input shape {x.shape} does not match weight shape {weight.shape}"
    )
    batch, length, _ = x.shape
    out_length = conv1d_output_length(length, kernel, stride, padding)
    _check(out_length >= 1, f"conv1d: input shape {x.shape} too short for kernel {kernel}")

    padded = T.pad(x, padding, axis=1)
    index = np.arange(out_length)[:, None] * stride + np.arange(kernel)[None, :]
    windows = padded[(slice(None), index, slice(None))]
    columns = windows.reshape((batch, out_length, kernel * in_channels))
    out = T.matmul(columns, weight.reshape((kernel * in_channels, out_channels)))
    if bias is not None:
        out = out + bias
    return out


def glu(x):
    """Gated linear unit over the last axis: first half times sigmoid of second half."""
    _check(x.shape[-1] % 2 == 0, f"glu: last axis of input shape {x.shape} must be even")
    half = x.shape[-1] // 2
    lead = (slice(None),) * (x.ndim - 1)
    return x[lead + (slice(0, half),)] * T.sigmoid(x[lead + (slice(half, None),)])


def layer_norm(x, gamma, beta, eps=1e-5):
    _check(
        x.shape[-1] == gamma.shape[-1],
        f"layer_norm: input shape {x.shape} does not match scale shape {gamma.shape}"
    )
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * T.power(variance + eps, -0.5) * gamma + beta


def embedding(ids, weight):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size:
        _check(
            ids.min() >= 0 and ids.max() < weight.shape[0],
            f"embedding: ids of shape {ids.shape} out of range for table shape {weight.shape}"
        )
    return T.take(weight, ids)


def softmax(x, axis=-1):
    return T.softmax(x, axis=axis)


def log_softmax(x, axis=-1):
    return T.log_softmax(x, axis=axis)


def dropout(x, p, rng, training):
    if not training or p <= 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return x * (keep / (1.0 - p))


def causal_mask(query_length, key_length):
    """Boolean mask, True where a query may not look (future keys)."""
    return np.triu(np.ones((query_length, key_length), dtype=bool), k=1 + key_length - query_length)


def multi_head_attention(query, key_value, params, heads, key_padding_mask=None, causal=False):
    """
    Scaled dot-product multi-head attention.

    Args:
        query: (B, Tq, W)
        key_value: (B, Tk, W)
        params: Mapping with wq, bq, wk, bk, wv, bv, wo, bo
        heads: Number of heads; must divide W
        key_padding_mask: Optional bool array (B, Tk), True at padded keys
        causal: Block attention to later positions

    Returns:
        Tensor (B, Tq, W)
    """
    batch, query_length, width = query.shape
    _check(
        key_value.shape[0] == batch and key_value.shape[2] == width,
        f"attention: query shape {query.shape} does not match key/value shape {key_value.shape}"
    )
    _check(width % heads == 0, f"attention: width {width} not divisible by {heads} heads")
    key_length = key_value.shape[1]
    head_dim = width // heads

    def split(x, length):
        return x.reshape((batch, length, heads, head_dim)).transpose((0, 2, 1, 3))

    q = split(affine(query, params['wq'], params['bq']), query_length)
    k = split(affine(key_value, params['wk'], params['bk']), key_length)
    v = split(affine(key_value, params['wv'], params['bv']), key_length)

    scores = T.matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(head_dim))
    blocked = None
    if key_padding_mask is not None:
        key_padding_mask = np.asarray(key_padding_mask, dtype=bool)
        _check(
            key_padding_mask.shape == (batch, key_length),
            f"attention: padding mask shape {key_padding_mask.shape} does not match keys {(batch, key_length)}"
        )
        blocked = key_padding_mask[:, None, None, :]
    if causal:
        future = causal_mask(query_length, key_length)[None, None, :, :]
        blocked = future if blocked is None else (blocked | future)
    if blocked is not None:
        scores = T.masked_fill(scores, np.broadcast_to(blocked, scores.shape), MASK_VALUE)

    weights = T.softmax(scores, axis=-1)
    context = T.matmul(weights, v).transpose((0, 2, 1, 3)).reshape((batch, query_length, width))
    return affine(context, params['wo'], params['bo'])


def cross_entropy(logits, targets, smoothing=0.0, ignore_index=None):
    """
    Mean token cross-entropy with optional uniform label smoothing.

    With ``smoothing == 0`` this is exactly the plain negative log-likelihood.
    """
    targets = np.asarray(targets, dtype=np.int64)
    _check(
        logits.shape[:-1] == targets.shape,
        f"cross_entropy: logits shape {logits.shape} does not match targets shape {targets.shape}"
    )
    vocab = logits.shape[-1]
    flat_targets = targets.reshape(-1)
    count = flat_targets.shape[0]
    log_probs = T.log_softmax(logits.reshape((count, vocab)), axis=-1)

    weights = np.ones(count)
    if ignore_index is not None:
        weights = (flat_targets != ignore_index).astype(float)
    safe_targets = np.where(weights > 0, flat_targets, 0)
    _check(
        safe_targets.size == 0 or (safe_targets.min() >= 0 and safe_targets.max() < vocab),
        f"cross_entropy: targets out of range for logits shape {logits.shape}"
    )
    total = max(weights.sum(), 1.0)

    per_token = -log_probs[(np.arange(count), safe_targets)]
    if smoothing > 0.0:
        uniform = -log_probs.mean(axis=-1)
        per_token = per_token * (1.0 - smoothing) + uniform * smoothing
    return (per_token * weights).sum() * (1.0 / total)


LAYER_KINDS = (
    'affine', 'conv1d', 'glu', 'layer_norm', 'embedding',
    'attention', 'softmax', 'cross_entropy'
)


def forward_layer(kind, inputs, params=None):
    """
    Apply a layer by kind.

    Args:
        kind: One of LAYER_KINDS
        inputs: Input tensor (ids array for 'embedding'; logits for 'cross_entropy')
        params: Mapping of the layer's parameters and options

    Returns:
        Output tensor
    """
    params = params or {}
    if kind == 'affine':
        return affine(inputs, params['weight'], params.get('bias'))
    if kind == 'conv1d':
        return conv1d(inputs, params['weight'], params.get('bias'),
                      stride=params.get('stride', 1), padding=params.get('padding', 0))
    if kind == 'glu':
        return glu(inputs)
    if kind == 'layer_norm':
        return layer_norm(inputs, params['gamma'], params['beta'], params.get('eps', 1e-5))
    if kind == 'embedding':
        return embedding(inputs, params['weight'])
    if kind == 'attention':
        return multi_head_attention(
            inputs, params.get('key_value', inputs), params, params['heads'],
            key_padding_mask=params.get('key_padding_mask'), causal=params.get('causal', False)
        )
    if kind == 'softmax':
        return softmax(inputs, params.get('axis', -1))
    if kind == 'cross_entropy':
        return cross_entropy(inputs, params['targets'], params.get('smoothing', 0.0),
                             params.get('ignore_index'))
    raise ConfigurationError(f"Unknown layer kind '{kind}'; expected one of {', '.join(LAYER_KINDS)}")
