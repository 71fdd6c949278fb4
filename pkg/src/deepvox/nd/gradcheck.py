"""Finite-difference gradient verification."""

import numpy as np


def grad_check(fn, inputs, eps=1e-5):
    """Max relative error between reverse-mode and central-difference gradients.

    fn: pure callable taking `inputs` (Tensors) and returning a scalar Tensor.
    Checks every coordinate of every input with requires_grad.  Relative
    error per coordinate is |a - n| / max(|a|, |n|, 1e-8), so exact zeros
    on both sides score 0.  Use float64 inputs; float32 drowns the
    comparison in rounding noise.  The small default eps also keeps the
    probe from straddling the selu kink at zero pre-activation.
    """
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued fn, got shape {out.data.shape}")
    out.backward()

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn(*inputs).item()
            flat[i] = orig - eps
            f_minus = fn(*inputs).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
