"""Shared test oracles.

The gradient checker compares reverse-mode gradients against central
finite differences computed from forward evaluations only, so the two
routes share no code.
"""

import numpy as np

from bevmap import autodiff as ad

TINY = 1e-12


def rel_err(a, f):
    """max-norm relative error between analytic and reference arrays."""
    a = np.asarray(a, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    num = np.max(np.abs(a - f)) if a.size else 0.0
    den = max(np.max(np.abs(a)) if a.size else 0.0,
              np.max(np.abs(f)) if f.size else 0.0,
              TINY)
    return num / den


def fd_gradcheck(fn, arrays, eps=1e-6, check=None):
    """Full finite-difference gradient check.

    fn takes len(arrays) Tensors and returns a scalar Tensor.  Every
    element of every checked input is perturbed centrally.  Returns the
    worst relative error over the checked inputs.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    if check is None:
        check = range(len(arrays))

    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.tape() as t:
        out = fn(*tensors)
    assert out.data.shape == (), "gradcheck target must be scalar"
    t.backward(out)

    worst = 0.0
    for idx in check:
        base = arrays[idx]
        grad = tensors[idx].grad
        analytic = np.zeros_like(base) if grad is None else grad
        fd = np.zeros_like(base)
        flat = fd.reshape(-1)
        for k in range(base.size):
            for sign, slot in ((1.0, 0), (-1.0, 1)):
                pert = [a.copy() for a in arrays]
                pert[idx].reshape(-1)[k] += sign * eps
                with ad.no_grad():
                    val = fn(*[ad.Tensor(p) for p in pert]).data
                if slot == 0:
                    hi = float(val)
                else:
                    flat[k] = (hi - float(val)) / (2.0 * eps)
        worst = max(worst, rel_err(analytic, fd))
    return worst


def fd_gradcheck_subset(fn, arrays, coords, eps=1e-6):
    """Finite-difference check restricted to sampled coordinates.

    coords is a list of (input_index, flat_index) pairs.  Used for ops
    whose inputs are too large to probe exhaustively.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.tape() as t:
        out = fn(*tensors)
    t.backward(out)

    analytic = np.empty(len(coords))
    fd = np.empty(len(coords))
    for n, (idx, k) in enumerate(coords):
        grad = tensors[idx].grad
        analytic[n] = 0.0 if grad is None else grad.reshape(-1)[k]
        vals = []
        for sign in (1.0, -1.0):
            pert = [a.copy() for a in arrays]
            pert[idx].reshape(-1)[k] += sign * eps
            with ad.no_grad():
                vals.append(float(fn(*[ad.Tensor(p) for p in pert]).data))
        fd[n] = (vals[0] - vals[1]) / (2.0 * eps)
    return rel_err(analytic, fd)


def random_params_f64(params):
    """Cast a float32 parameter dict to float64 in place and return it."""
    for k in list(params):
        params[k] = ad.Tensor(params[k].data.astype(np.float64),
                              requires_grad=True)
    return params
