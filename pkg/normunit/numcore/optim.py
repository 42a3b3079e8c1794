# normunit/numcore/optim.py
"""Adam with linear warmup followed by exponential decay."""
import logging
from dataclasses import dataclass, field

import numpy as np

from normunit.utils.errors import UsageError

logger = logging.getLogger(__name__)


def halving_decay(steps):
    """Per-step decay factor that halves the learning rate every ``steps`` steps."""
    return 0.5 ** (1.0 / steps)


@dataclass
class OptimizerState:
    """Moments, step counter and hyperparameters of an Adam optimizer."""

    peak_lr: float = 5e-4
    warmup_steps: int = 200
    decay_rate: float = field(default_factory=lambda: halving_decay(2000))
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    step: int = 0
    first_moments: dict = field(default_factory=dict)
    second_moments: dict = field(default_factory=dict)

    def learning_rate(self, step=None):
        """
        Schedule value at ``step`` (defaults to the next step to run).

        Linear warmup reaches the peak at step ``warmup_steps - 1``;
        afterwards the rate decays by ``decay_rate`` per step.
        """
        step = self.step if step is None else step
        if step < self.warmup_steps:
            return self.peak_lr * (step + 1) / self.warmup_steps
        return self.peak_lr * self.decay_rate ** (step - self.warmup_steps)

    def to_dict(self):
        return {
            'peak_lr': self.peak_lr,
            'warmup_steps': self.warmup_steps,
            'decay_rate': self.decay_rate,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'eps': self.eps,
            'step': self.step
        }


class Adam:
    """Adam over named parameters; frozen parameters are skipped."""

    def __init__(self, named_parameters, state=None):
        self.params = list(named_parameters)
        self.state = state or OptimizerState()

    def step(self):
        """
        Apply one update and clear gradients.

        Returns:
            The learning rate used

        Raises:
            UsageError: If no gradient has been populated since the last step
        """
        if not any(param.touched for _, param in self.params):
            raise UsageError("optimizer step called before any backward pass")

        state = self.state
        lr = state.learning_rate()
        t = state.step + 1
        bias1 = 1.0 - state.beta1 ** t
        bias2 = 1.0 - state.beta2 ** t
        for name, param in self.params:
            if param.frozen:
                param.zero_grad()
                continue
            grad = param.grad
            m = state.first_moments.get(name)
            v = state.second_moments.get(name)
            if m is None:
                m = np.zeros_like(param.data)
                v = np.zeros_like(param.data)
            m = state.beta1 * m + (1.0 - state.beta1) * grad
            v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
            state.first_moments[name] = m
            state.second_moments[name] = v
            param.data = param.data - lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
            param.zero_grad()
        state.step = t
        return lr

    def zero_grad(self):
        for _, param in self.params:
            param.zero_grad()
