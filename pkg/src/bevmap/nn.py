"""Parameter management and transformer building blocks.

Parameters live in a flat dict mapping a dotted name to a Tensor.
Initialization draws each parameter from an independent generator
seeded by (init_seed, parameter name), so the values do not depend on
creation order and are reproducible parameter by parameter. Weights
use the uniform fan-in rule U(-a, a) with a = 1 / sqrt(fan_in); biases
start at zero, layer-norm gains at one.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .seeding import rng_for

__all__ = [
    "init_linear", "init_layer_norm", "init_mha", "init_block", "init_table",
    "linear", "layer_norm_affine", "mha", "block",
    "params_to_arrays", "arrays_to_params",
]

DTYPE = np.float32


def init_table(params: dict, name: str, shape, seed: int, scale: float | None = None):
    """A free learned table (positional embeddings, queries, tokens)."""
    rng = rng_for(seed, name)
    a = scale if scale is not None else 1.0 / math.sqrt(shape[-1])
    params[name] = Tensor(rng.uniform(-a, a, size=shape).astype(DTYPE),
                          requires_grad=True)


def init_linear(params: dict, name: str, fan_in: int, fan_out: int, seed: int,
                bias: bool = True):
    rng = rng_for(seed, name + ".w")
    a = 1.0 / math.sqrt(fan_in)
    params[name + ".w"] = Tensor(
        rng.uniform(-a, a, size=(fan_in, fan_out)).astype(DTYPE),
        requires_grad=True)
    if bias:
        params[name + ".b"] = Tensor(np.zeros(fan_out, dtype=DTYPE),
                                     requires_grad=True)


def init_layer_norm(params: dict, name: str, dim: int):
    params[name + ".g"] = Tensor(np.ones(dim, dtype=DTYPE), requires_grad=True)
    params[name + ".b"] = Tensor(np.zeros(dim, dtype=DTYPE), requires_grad=True)


def init_mha(params: dict, name: str, dim: int, seed: int,
             kv_dim: int | None = None):
    kv = kv_dim if kv_dim is not None else dim
    init_linear(params, f"{name}.q", dim, dim, seed)
    init_linear(params, f"{name}.k", kv, dim, seed)
    init_linear(params, f"{name}.v", kv, dim, seed)
    init_linear(params, f"{name}.o", dim, dim, seed)


def init_block(params: dict, name: str, dim: int, seed: int, mlp_ratio: int = 2):
    """Pre-norm transformer block: self-attention then a GELU MLP."""
    init_layer_norm(params, f"{name}.ln1", dim)
    init_mha(params, f"{name}.attn", dim, seed)
    init_layer_norm(params, f"{name}.ln2", dim)
    init_linear(params, f"{name}.mlp1", dim, mlp_ratio * dim, seed)
    init_linear(params, f"{name}.mlp2", mlp_ratio * dim, dim, seed)


def linear(params: dict, name: str, x: Tensor) -> Tensor:
    w = params[name + ".w"]
    y = ad.matmul(x, w)
    b = params.get(name + ".b")
    if b is not None:
        y = ad.add(y, b)
    return y


def layer_norm_affine(params: dict, name: str, x: Tensor) -> Tensor:
    n = ad.layer_norm(x)
    return ad.add(ad.mul(n, params[name + ".g"]), params[name + ".b"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., T, C) -> (..., H, T, D) with C = H * D."""
    *lead, t, c = x.shape
    if c % n_heads:
        raise ContractViolation(f"dim {c} not divisible by {n_heads} heads")
    d = c // n_heads
    x = ad.reshape(x, (*lead, t, n_heads, d))
    nd = len(x.shape)
    perm = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return ad.transpose(x, perm)


def _merge_heads(x: Tensor) -> Tensor:
    """(..., H, T, D) -> (..., T, H * D)."""
    *lead, h, t, d = x.shape
    nd = len(x.shape)
    perm = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    x = ad.transpose(x, perm)
    return ad.reshape(x, (*lead, t, h * d))


def mha(params: dict, name: str, x_q: Tensor, x_kv: Tensor,
        n_heads: int, pos_k: Tensor | None = None) -> Tensor:
    """Multi-head scaled dot-product attention.

    ``x_q`` is (..., Tq, C), ``x_kv`` is (..., Tk, C) with matching
    leading dims. ``pos_k``, when given, is added to the projected keys
    (positional information for cross-attention targets).
    """
    c = x_q.shape[-1]
    d = c // n_heads
    q = _split_heads(linear(params, f"{name}.q", x_q), n_heads)
    k_in = linear(params, f"{name}.k", x_kv)
    if pos_k is not None:
        k_in = ad.add(k_in, pos_k)
    k = _split_heads(k_in, n_heads)
    v = _split_heads(linear(params, f"{name}.v", x_kv), n_heads)
    nd = len(k.shape)
    kt = ad.transpose(k, list(range(nd - 2)) + [nd - 1, nd - 2])
    scores = ad.mul(ad.matmul(q, kt), np.asarray(1.0 / math.sqrt(d), dtype=x_q.dtype))
    w = ad.softmax(scores, axis=-1)
    out = _merge_heads(ad.matmul(w, v))
    return linear(params, f"{name}.o", out)


def block(params: dict, name: str, x: Tensor, n_heads: int) -> Tensor:
    h = layer_norm_affine(params, f"{name}.ln1", x)
    x = ad.add(x, mha(params, f"{name}.attn", h, h, n_heads))
    h = layer_norm_affine(params, f"{name}.ln2", x)
    h = linear(params, f"{name}.mlp1", h)
    h = ad.gelu(h)
    h = linear(params, f"{name}.mlp2", h)
    return ad.add(x, h)


def params_to_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def arrays_to_params(arrays: dict[str, np.ndarray],
                     params: dict[str, Tensor]):
    """Load array values into an existing parameter dict, in place."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ContractViolation(
            f"parameter set mismatch: missing {sorted(missing)[:4]}, "
            f"unexpected {sorted(extra)[:4]}")
    for k, p in params.items():
        arr = np.asarray(arrays[k], dtype=p.data.dtype)
        if arr.shape != p.data.shape:
            raise ContractViolation(
                f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
        p.data = arr.copy()
