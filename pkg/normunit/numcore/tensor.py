# normunit/numcore/tensor.py
"""
Dense tensors with reverse-mode differentiation.

A ``Tensor`` wraps a float64 numpy array. Operations on tensors that require
gradients record their parents and a backward function; ``backward`` walks
the recorded graph in reverse topological order and accumulates gradients
into the leaf ``Parameter`` objects it reaches.
"""
import contextlib
import logging

import numpy as np

from normunit.utils.errors import UsageError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    """A value in the computation graph."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op=''):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    def __len__(self):
        return self.data.shape[0]

    # Operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


class Parameter(Tensor):
    """A trainable leaf tensor with a gradient buffer and a freeze flag."""

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True, op='param')
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.frozen = False
        self.touched = False

    def accumulate(self, grad):
        self.grad = self.grad + grad
        self.touched = True

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)
        self.touched = False

    def __repr__(self):
        return f"Parameter(name={self.name}, shape={self.shape}, frozen={self.frozen})"


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data, parents, backward_fn, op):
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        'add'
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        'sub'
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        'mul'
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data / b.data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        ),
        'div'
    )


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,), 'neg')


def power(a, exponent):
    exponent = float(exponent)
    return _result(
        a.data ** exponent, (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1.0),),
        'pow'
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _result(a.data @ b.data, (a, b), backward, 'matmul')


# Reductions and shape manipulation

def tensor_sum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, 'sum')


def tensor_mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))


def reshape(a, shape):
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a, axes):
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), 'transpose')


def getitem(a, index):
    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _result(a.data[index], (a,), backward, 'getitem')


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    boundaries = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, boundaries, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, 'concat')


def pad(a, width, axis):
    """Zero-pad ``width`` entries on both sides of ``axis``."""
    if width == 0:
        return a
    axis = axis % a.ndim
    pad_width = [(0, 0)] * a.ndim
    pad_width[axis] = (width, width)
    index = [slice(None)] * a.ndim
    index[axis] = slice(width, width + a.shape[axis])
    index = tuple(index)
    return _result(np.pad(a.data, pad_width), (a,), lambda g: (g[index],), 'pad')


def take(weight, ids):
    """Row lookup ``weight[ids]`` with scatter-add gradient."""
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        grad = np.zeros_like(weight.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result(weight.data[ids], (weight,), backward, 'take')


def where(condition, a, b):
    condition = np.asarray(condition, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        np.where(condition, a.data, b.data), (a, b),
        lambda g: (
            _unbroadcast(np.where(condition, g, 0.0), a.shape),
            _unbroadcast(np.where(condition, 0.0, g), b.shape)
        ),
        'where'
    )


def masked_fill(a, mask, value):
    return where(mask, Tensor(np.full((), value)), a)


# Nonlinearities

def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), 'exp')


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), 'tanh')


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), 'sigmoid')


def relu(a):
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),), 'relu')


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), backward, 'log_softmax')


def softmax(a, axis=-1):
    shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward, 'softmax')


# Graph traversal

def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """
    Back-propagate from a scalar loss.

    Args:
        loss: Scalar tensor produced by a recorded forward computation

    Raises:
        UsageError: If ``loss`` is not a scalar
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("backward called on a tensor with no recorded graph")

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._backward_fn is None:
            if isinstance(node, Parameter):
                node.accumulate(grad)
            else:
                node.grad = grad if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node._parents, node._backward_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad
