"""Central finite differences: the independent oracle for every gradient."""

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing one entry at a time."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-4) -> float:
    """Worst relative disagreement, floored so near-zero entries compare absolutely."""
    num = np.abs(a - b)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((num / den).max())


def check_op_gradients(build, inputs, rng, h: float = 1e-5, floor: float = 1e-4):
    """Gradient check for one primitive invocation.

    ``build`` maps tensors (already wrapping ``inputs``) to the output
    tensor.  A random cotangent probes the backward closure directly; the
    numeric side differentiates sum(output * cotangent) per input entry.
    Returns the worst relative error across all inputs.
    """
    import lscqa.tensor as T

    tensors = [T.Tensor(x, requires_grad=True) for x in inputs]
    out = build(*tensors)
    cotangent = rng.standard_normal(out.values.shape)
    out._backward_fn(cotangent)

    worst = 0.0
    for t, x in zip(tensors, inputs):
        def scalar():
            fresh = build(*[T.Tensor(v.values, requires_grad=False) for v in tensors])
            return float((fresh.values * cotangent).sum())

        numeric = numeric_grad(scalar, t.values, h=h)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.values)
        worst = max(worst, max_rel_err(analytic, numeric, floor=floor))
    return worst
