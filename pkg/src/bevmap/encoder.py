"""Per-view image encoder and view masking.

Each camera image is cut into non-overlapping 8x8 patches, linearly
embedded, summed with a learned positional table, and passed through a
small transformer; the output tokens fold back into an 8x8 feature grid
per view.

Missing views are simulated at the feature level: `apply_view_mask`
replaces a masked view's grid with the elementwise mean of the nearest
available ring neighbor on each side, scanning outward past other
masked views. That placeholder carries only neighbor context, never the
original view's content, so downstream stages cannot leak information
from a view that is supposed to be gone.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ContractViolation
from .geometry import FEAT_SIZE, IMAGE_SIZE, PATCH_SIZE

__all__ = [
    "AVAILABLE", "MASKED", "RECONSTRUCTED",
    "init_encoder", "patchify", "encode_views",
    "draw_view_mask", "apply_view_mask",
]

AVAILABLE = "available"
MASKED = "masked"
RECONSTRUCTED = "reconstructed"

N_ENCODER_BLOCKS = 2


def init_encoder(params: dict, dim: int, seed: int):
    nn.init_linear(params, "enc.embed", PATCH_SIZE * PATCH_SIZE, dim, seed)
    nn.init_table(params, "enc.pos", (FEAT_SIZE * FEAT_SIZE, dim), seed)
    for b in range(N_ENCODER_BLOCKS):
        nn.init_block(params, f"enc.block{b}", dim, seed)
    nn.init_layer_norm(params, "enc.ln_out", dim)


def patchify(images: np.ndarray) -> np.ndarray:
    """(V, H, W) images -> (V, tokens, patch_pixels), row-major patches."""
    images = np.asarray(images)
    v, h, w = images.shape
    if h != IMAGE_SIZE or w != IMAGE_SIZE:
        raise ContractViolation(
            f"expected {IMAGE_SIZE}x{IMAGE_SIZE} images, got {h}x{w}")
    g = FEAT_SIZE
    p = PATCH_SIZE
    x = images.reshape(v, g, p, g, p).transpose(0, 1, 3, 2, 4)
    return x.reshape(v, g * g, p * p)


def encode_views(params: dict, images: np.ndarray, n_heads: int = 4) -> Tensor:
    """Encode a stack of images into per-view feature grids.

    ``images`` is (V, H, W) float; the result is a (V, 8, 8, C) Tensor
    on the active tape. V may cover several samples flattened together.
    """
    tokens = Tensor(patchify(images).astype(nn.DTYPE))
    x = nn.linear(params, "enc.embed", tokens)
    x = ad.add(x, params["enc.pos"])
    for b in range(N_ENCODER_BLOCKS):
        x = nn.block(params, f"enc.block{b}", x, n_heads)
    x = nn.layer_norm_affine(params, "enc.ln_out", x)
    v = images.shape[0]
    c = x.shape[-1]
    return ad.reshape(x, (v, FEAT_SIZE, FEAT_SIZE, c))


def draw_view_mask(n_views: int, count: int, rng: np.random.Generator) -> list[int]:
    """Choose ``count`` distinct views to mask, sorted ascending."""
    if not 0 <= count < n_views:
        raise ContractViolation(
            f"mask count {count} must lie in [0, {n_views - 1}]")
    if count == 0:
        return []
    picked = rng.choice(n_views, size=count, replace=False)
    return sorted(int(i) for i in picked)


def _nearest_available(i: int, masked: set[int], n: int, step: int) -> int:
    j = (i + step) % n
    while j in masked:
        j = (j + step) % n
    return j


def apply_view_mask(grids: Tensor, masked: list[int]) -> tuple[Tensor, list[str]]:
    """Replace masked view grids with neighbor-derived placeholders.

    Returns the new (V, Hf, Wf, C) tensor plus a per-view status list.
    At least one view must stay available.
    """
    v = grids.shape[0]
    masked_set = set(masked)
    if len(masked_set) != len(masked):
        raise ContractViolation("masked view indices must be unique")
    if any(not 0 <= i < v for i in masked_set):
        raise ContractViolation(f"masked view index out of range 0..{v - 1}")
    if len(masked_set) >= v:
        raise ContractViolation("cannot mask every view")
    if not masked_set:
        return grids, [AVAILABLE] * v

    statuses = [MASKED if i in masked_set else AVAILABLE for i in range(v)]
    rows = []
    for i in range(v):
        if i not in masked_set:
            rows.append(ad.slice_(grids, i))
            continue
        left = _nearest_available(i, masked_set, v, -1)
        right = _nearest_available(i, masked_set, v, +1)
        if left == right:
            rows.append(ad.slice_(grids, left))
        else:
            half = np.asarray(0.5, dtype=grids.dtype)
            rows.append(ad.mul(ad.add(ad.slice_(grids, left),
                                      ad.slice_(grids, right)), half))
    hf, wf, c = grids.shape[1:]
    stacked = ad.concat([ad.reshape(r, (1, hf, wf, c)) for r in rows], axis=0)
    return stacked, statuses
