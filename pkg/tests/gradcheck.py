"""Finite-difference gradient oracle shared by the unit and acceptance tests.

Kept independent of the library's backward pass: gradients are estimated by
central differences of a scalar-valued function of plain numpy arrays.
"""

import numpy as np

from brainkan import autodiff as ad


def numeric_grad(f, arrays, h=1e-5):
    """Central-difference gradients of scalar ``f(arrays)`` w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-6):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)))


def check_gradients(build, arrays, rel_tol=1e-4, h=1e-5):
    """Compare reverse-mode gradients of ``build`` against finite differences.

    ``build`` maps a list of Tensors to a scalar Tensor. Returns the worst
    relative error over all inputs.
    """
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(tensors)
    ad.backward(loss)

    def f(arrs):
        return build([ad.Tensor(a) for a in arrs]).item()

    numeric = numeric_grad(f, [a.copy() for a in arrays], h=h)
    worst = 0.0
    for t, n in zip(tensors, numeric):
        worst = max(worst, max_rel_err(t.grad, n))
    assert worst < rel_tol, f"gradient mismatch: max rel err {worst:.3e} >= {rel_tol}"
    return worst
