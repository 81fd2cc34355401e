"""Finite-difference gradient oracle shared by the test modules.

Central differences at eps=1e-5 in float64; agreement is judged by
|ad - fd| / max(|ad|, |fd|, floor) with a small floor so that near-zero
gradients are compared absolutely.
"""

import numpy as np

from moldta import autodiff as ad

EPS = 1e-5
TOL = 1e-4
FLOOR = 1e-6


def _rel_err(a, b, floor=FLOOR):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def check_gradients(build, arrays, eps=EPS, tol=TOL):
    """Compare reverse-mode gradients of build(tensors) -> scalar Tensor
    against central finite differences, for every input array.

    build must be deterministic (re-runs with perturbed copies).
    Returns the worst relative error seen.
    """
    tensors = [ad.Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)
               for a in arrays]
    loss = build(tensors)
    ad.backward(loss)

    def value(arrs):
        return float(build([ad.Tensor(x) for x in arrs]).data)

    worst = 0.0
    base = [t.data.copy() for t in tensors]
    for idx, tensor in enumerate(tensors):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        fd = np.zeros_like(base[idx])
        flat_param = base[idx].reshape(-1)
        flat_fd = fd.reshape(-1)
        for i in range(flat_param.size):
            orig = flat_param[i]
            flat_param[i] = orig + eps
            hi = value(base)
            flat_param[i] = orig - eps
            lo = value(base)
            flat_param[i] = orig
            flat_fd[i] = (hi - lo) / (2 * eps)
        rel = _rel_err(analytic, fd)
        assert rel.max() < tol, (
            f"input {idx}: worst rel err {rel.max():.3e} (ad={analytic.reshape(-1)[rel.argmax()]}, "
            f"fd={fd.reshape(-1)[rel.argmax()]})")
        worst = max(worst, float(rel.max()))
    return worst


def check_param_gradients(loss_fn, named_params, eps=EPS, tol=TOL):
    """Gradient-check named weight tensors against a deterministic loss_fn().

    loss_fn recomputes the scalar loss Tensor from the current .data of every
    parameter. Returns {name: worst relative error}.
    """
    for t in named_params.values():
        t.grad = None
    ad.backward(loss_fn())
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in named_params.items()}
    worst = {}
    for name, tensor in named_params.items():
        flat = tensor.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(loss_fn().data)
            flat[i] = orig - eps
            lo = float(loss_fn().data)
            flat[i] = orig
            fd[i] = (hi - lo) / (2 * eps)
        rel = _rel_err(analytic[name].reshape(-1), fd)
        assert rel.max() < tol, f"{name}: worst rel err {rel.max():.3e}"
        worst[name] = float(rel.max())
    return worst
