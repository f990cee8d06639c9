"""Vectorized map decoding from BEV features.

A fixed set of learned element queries cross-attends to the BEV tokens
over a couple of decoder layers; each query then emits class logits and
a fixed-length polyline in box-normalized coordinates. Training uses
one-to-one Hungarian assignment between ground-truth elements and
query slots under a class-probability plus point-distance cost, where
a polyline and its reverse are the same element (the cheaper traversal
direction is used). The loss combines focal classification over all
slots, point-to-point L1 on matched pairs, and an edge-direction
cosine penalty.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ContractViolation
from .scene import BACKGROUND_ID, N_CLASSES

__all__ = [
    "N_MAP_QUERIES", "N_POLY_POINTS",
    "COST_CLASS", "COST_POINTS", "COST_DIRECTION",
    "init_map_head", "bev_position_encoding", "decode_map",
    "match_elements", "map_loss",
]

N_MAP_QUERIES = 12
N_POLY_POINTS = 20
N_DECODER_LAYERS = 2

# shared weights for the matching cost and the loss terms
COST_CLASS = 2.0
COST_POINTS = 5.0
COST_DIRECTION = 0.005


def init_map_head(params: dict, dim: int, bev_dim: int, seed: int):
    nn.init_table(params, "map.query", (N_MAP_QUERIES, dim), seed)
    for layer in range(N_DECODER_LAYERS):
        base = f"map.l{layer}"
        nn.init_layer_norm(params, f"{base}.ln1", dim)
        nn.init_mha(params, f"{base}.self", dim, seed)
        nn.init_layer_norm(params, f"{base}.ln2", dim)
        nn.init_mha(params, f"{base}.cross", dim, seed, kv_dim=bev_dim)
        nn.init_layer_norm(params, f"{base}.ln3", dim)
        nn.init_linear(params, f"{base}.mlp1", dim, 2 * dim, seed)
        nn.init_linear(params, f"{base}.mlp2", 2 * dim, dim, seed)
    nn.init_layer_norm(params, "map.ln_out", dim)
    nn.init_linear(params, "map.cls", dim, N_CLASSES, seed)
    nn.init_linear(params, "map.pts", dim, 2 * N_POLY_POINTS, seed)


def bev_position_encoding(bev_h: int, bev_w: int, dim: int) -> np.ndarray:
    """Fixed 2D sinusoidal encoding, (bev_h * bev_w, dim) float32.

    Half the channels encode the row coordinate, half the column, each
    as interleaved sine/cosine at geometrically spaced frequencies.
    """
    if dim % 4:
        raise ContractViolation(f"position encoding dim {dim} must be divisible by 4")
    half = dim // 2
    n_freq = half // 2
    freqs = 1.0 / (100.0 ** (np.arange(n_freq) / max(n_freq - 1, 1)))
    ys = np.arange(bev_h, dtype=np.float64)[:, None] * freqs[None, :]
    xs = np.arange(bev_w, dtype=np.float64)[:, None] * freqs[None, :]

    def interleave(v):
        out = np.empty((v.shape[0], 2 * v.shape[1]))
        out[:, 0::2] = np.sin(v)
        out[:, 1::2] = np.cos(v)
        return out

    row_enc = interleave(ys)  # (H, half)
    col_enc = interleave(xs)  # (W, half)
    full = np.concatenate([
        np.repeat(row_enc, bev_w, axis=0),
        np.tile(col_enc, (bev_h, 1)),
    ], axis=1)
    return full.astype(np.float32)


def decode_map(params: dict, bev_tokens: Tensor, pos_enc: np.ndarray,
               n_heads: int) -> tuple[Tensor, Tensor]:
    """Decode BEV tokens into (class logits (K, n_classes),
    polylines (K, P, 2) in [0, 1]^2)."""
    x = params["map.query"]
    pos_k = Tensor(pos_enc.astype(bev_tokens.dtype))
    for layer in range(N_DECODER_LAYERS):
        base = f"map.l{layer}"
        h = nn.layer_norm_affine(params, f"{base}.ln1", x)
        x = ad.add(x, nn.mha(params, f"{base}.self", h, h, n_heads))
        h = nn.layer_norm_affine(params, f"{base}.ln2", x)
        x = ad.add(x, nn.mha(params, f"{base}.cross", h, bev_tokens,
                             n_heads, pos_k=pos_k))
        h = nn.layer_norm_affine(params, f"{base}.ln3", x)
        h = nn.linear(params, f"{base}.mlp1", h)
        h = ad.gelu(h)
        h = nn.linear(params, f"{base}.mlp2", h)
        x = ad.add(x, h)
    x = nn.layer_norm_affine(params, "map.ln_out", x)
    logits = nn.linear(params, "map.cls", x)
    raw = nn.linear(params, "map.pts", x)
    points = ad.sigmoid(ad.reshape(raw, (N_MAP_QUERIES, N_POLY_POINTS, 2)))
    return logits, points


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def match_elements(logits: np.ndarray, points: np.ndarray,
                   gt_classes: np.ndarray, gt_points: np.ndarray
                   ) -> list[tuple[int, int, bool]]:
    """Hungarian assignment of ground-truth elements to query slots.

    ``gt_points`` is (G, P, 2) normalized; returns (gt_index,
    query_index, reversed) triples where ``reversed`` says the reversed
    ground-truth traversal was the cheaper match. Cost per pair is
    COST_CLASS * (-prob of the true class) + COST_POINTS * mean point
    L1 under the better direction.
    """
    g = len(gt_classes)
    if g == 0:
        return []
    if g > len(points):
        raise ContractViolation(
            f"{g} ground-truth elements exceed {len(points)} query slots")
    prob = _softmax_np(np.asarray(logits, dtype=np.float64))
    pred = np.asarray(points, dtype=np.float64)
    fwd = np.abs(pred[None, :] - gt_points[:, None]).mean(axis=(2, 3))
    rev = np.abs(pred[None, :] - gt_points[:, ::-1][:, None]).mean(axis=(2, 3))
    pt_cost = np.minimum(fwd, rev)
    cls_cost = -prob[:, gt_classes].T  # (G, K)
    cost = COST_CLASS * cls_cost + COST_POINTS * pt_cost
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j), bool(rev[i, j] < fwd[i, j]))
            for i, j in zip(rows, cols)]


def _direction_penalty(pred_pts: Tensor, gt_pts: np.ndarray) -> Tensor:
    """Mean (1 - cos angle) between matched predicted and target edges.

    ``pred_pts`` is (M, P, 2), ``gt_pts`` the already-oriented targets.
    """
    m, p, _ = pred_pts.shape
    head = ad.slice_(pred_pts, (slice(None), slice(1, p)))
    tail = ad.slice_(pred_pts, (slice(None), slice(0, p - 1)))
    e_pred = ad.sub(head, tail)  # (M, P-1, 2)
    e_gt = gt_pts[:, 1:] - gt_pts[:, :-1]
    gt_norm = np.linalg.norm(e_gt, axis=2, keepdims=True)
    eps = 1e-8
    dot = ad.sum_(ad.mul(e_pred, e_gt), axis=2)
    sq = ad.sum_(ad.mul(e_pred, e_pred), axis=2)
    pred_norm = ad.sqrt_(ad.add(sq, eps))
    denom = ad.mul(pred_norm, np.maximum(gt_norm[..., 0], eps))
    cos = ad.mul(dot, ad.reciprocal(denom))
    return ad.mean_(ad.sub(Tensor(np.ones_like(cos.data)), cos))


def map_loss(logits: Tensor, points: Tensor, gt_classes: np.ndarray,
             gt_points: np.ndarray,
             matches: list[tuple[int, int, bool]] | None = None,
             gamma: float = 2.0, alpha: float = 0.25
             ) -> tuple[Tensor, dict[str, float]]:
    """Detection loss for one sample.

    Unmatched query slots are labeled background for the focal term;
    point and direction terms cover matched pairs only (zero when the
    scene is empty). Returns the weighted total and the unweighted term
    values for logging.
    """
    gt_classes = np.asarray(gt_classes, dtype=np.int64)
    if matches is None:
        matches = match_elements(logits.data, points.data, gt_classes, gt_points)

    labels = np.full(N_MAP_QUERIES, BACKGROUND_ID, dtype=np.int64)
    for gi, qj, _ in matches:
        labels[qj] = gt_classes[gi]
    cls_term = ad.focal_class_loss(logits, labels, gamma=gamma, alpha=alpha)

    if matches:
        q_idx = np.asarray([qj for _, qj, _ in matches], dtype=np.int64)
        targets = np.stack([
            gt_points[gi, ::-1] if flipped else gt_points[gi]
            for gi, _, flipped in matches
        ]).astype(np.float64)
        flat = ad.reshape(points, (N_MAP_QUERIES, N_POLY_POINTS * 2))
        picked = ad.gather_rows(flat, q_idx)
        pred_pts = ad.reshape(picked, (len(matches), N_POLY_POINTS, 2))
        p2p_term = ad.l1_loss(pred_pts, Tensor(targets.astype(points.data.dtype)))
        dir_term = _direction_penalty(pred_pts, targets)
    else:
        p2p_term = Tensor(np.zeros((), dtype=points.dtype))
        dir_term = Tensor(np.zeros((), dtype=points.dtype))

    total = ad.add(ad.add(ad.mul(cls_term, np.asarray(COST_CLASS, dtype=cls_term.dtype)),
                          ad.mul(p2p_term, np.asarray(COST_POINTS, dtype=cls_term.dtype))),
                   ad.mul(dir_term, np.asarray(COST_DIRECTION, dtype=cls_term.dtype)))
    parts = {
        "cls": float(cls_term.data),
        "p2p": float(p2p_term.data),
        "dir": float(dir_term.data),
    }
    return total, parts
