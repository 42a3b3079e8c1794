# normunit/numcore/gradcheck.py
"""Central finite-difference gradient checking."""
import numpy as np

from normunit.numcore import tensor as T


def numeric_gradient(fn, array, h=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``array`` (mutated in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn()
        flat[i] = original - h
        minus = fn()
        flat[i] = original
        grad_flat[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(build_loss, inputs, h=1e-5):
    """
    Compare analytic and numeric gradients.

    Args:
        build_loss: Callable taking the list of input tensors, returning a scalar tensor
        inputs: List of numpy arrays; each becomes a differentiable leaf
        h: Finite-difference step

    Returns:
        Largest relative error over all inputs
    """
    leaves = [T.Tensor(array, requires_grad=True) for array in inputs]
    loss = build_loss(leaves)
    T.backward(loss)
    worst = 0.0
    for leaf in leaves:
        def evaluate():
            with T.no_grad():
                return build_loss(leaves).item()

        numeric = numeric_gradient(evaluate, leaf.data, h=h)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
