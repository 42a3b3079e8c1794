# normunit/numcore/__init__.py
"""Dense tensors, reverse-mode differentiation, layers and optimizer."""
from normunit.numcore.tensor import Parameter, Tensor, backward, no_grad
from normunit.numcore.functional import forward_layer, LAYER_KINDS
from normunit.numcore.optim import Adam, OptimizerState, halving_decay

__all__ = [
    'Parameter', 'Tensor', 'backward', 'no_grad',
    'forward_layer', 'LAYER_KINDS',
    'Adam', 'OptimizerState', 'halving_decay'
]
