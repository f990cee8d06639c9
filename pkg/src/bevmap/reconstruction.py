"""Reconstruction of masked view features from surrounding views.

The main path stitches the available views, ordered by ring distance to
the masked view, into a feature panorama; pools the masked view's
placeholder grid into a small set of query tokens; and lets each query
attend to a sparse set of sampled panorama locations. The sampling
locations are stochastic reference points, drawn once per
reconstruction, shared by every query and head: horizontally Gaussian
around the panorama center (where ring geometry puts the content most
correlated with the missing view), vertically uniform. Each query and
head then shifts every reference point by a learned content-dependent
offset, samples the panorama there bilinearly, and runs scaled
dot-product attention over its sampled set, with the query's own
channels acting as the attention query. A small transformer decoder
over the updated queries plus height-pooled panorama tokens produces
the reconstructed grid through a patch head.

Alternative strategies are kept behind the same interface for
comparison: ``none`` (leave the view missing), ``mean`` (average of
available grids), ``mae`` (joint transformer over all view tokens with
a learned token in masked slots), ``standard`` (uniform-grid reference
points instead of Gaussian), and ``local`` (panorama restricted to the
two immediate ring neighbors).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .encoder import AVAILABLE, MASKED, RECONSTRUCTED
from .errors import ContractViolation
from .geometry import FEAT_SIZE

__all__ = [
    "VARIANTS",
    "N_QUERIES", "N_REF",
    "init_reconstruction",
    "panorama_tile_order", "build_panorama",
    "draw_reference_points", "uniform_reference_points",
    "pool_query_tokens", "panorama_attention", "decode_grid",
    "reconstruct_missing", "reconstruction_loss",
]

VARIANTS = ("none", "mean", "mae", "standard", "local", "gaussian")

N_QUERIES = (FEAT_SIZE // 2) * (FEAT_SIZE // 2)  # one query per 2x2 patch
N_REF = 64
N_DECODER_BLOCKS = 2


def init_reconstruction(params: dict, variant: str, dim: int, n_heads: int,
                        rig_size: int, seed: int):
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown reconstruction variant {variant!r}")
    if variant in ("none", "mean"):
        return
    if variant == "mae":
        nn.init_table(params, "mae.token", (1, dim), seed)
        nn.init_table(params, "mae.pos",
                      (rig_size * FEAT_SIZE * FEAT_SIZE, dim), seed)
        for b in range(N_DECODER_BLOCKS):
            nn.init_block(params, f"mae.block{b}", dim, seed)
        nn.init_layer_norm(params, "mae.ln_out", dim)
        return
    # deformable family: gaussian, standard, local
    nn.init_linear(params, "rec.offset", dim, n_heads * N_REF * 2, seed)
    nn.init_linear(params, "rec.k", dim, dim, seed, bias=False)
    nn.init_linear(params, "rec.v", dim, dim, seed, bias=False)
    nn.init_layer_norm(params, "rec.ln_attn", dim)
    nn.init_table(params, "rec.q_pos", (N_QUERIES, dim), seed)
    nn.init_table(params, "rec.pan_pos", (rig_size * FEAT_SIZE, dim), seed)
    for b in range(N_DECODER_BLOCKS):
        nn.init_block(params, f"rec.dec{b}", dim, seed)
    nn.init_linear(params, "rec.patch", dim, 4 * dim, seed)


def panorama_tile_order(target: int, statuses: list[str],
                        local: bool = False) -> list[int]:
    """Views forming the panorama for ``target``, left to right.

    Only originally available views qualify; views reconstructed earlier
    in the same pass never feed another reconstruction. Tiles are laid
    out by ring distance: farthest-left, ..., nearest-left,
    nearest-right, ..., farthest-right, where "left" neighbors precede
    the target in ring order. An antipodal view (even rig, exactly
    opposite) joins the right half. With ``local`` only the nearest
    available view on each side is used (one tile if both sides resolve
    to the same view).
    """
    n = len(statuses)
    if statuses[target] == AVAILABLE:
        raise ContractViolation(f"view {target} is not missing")
    avail = [i for i in range(n) if statuses[i] == AVAILABLE]
    if not avail:
        raise ContractViolation("no available views to build a panorama from")

    if local:
        def scan(step):
            j = (target + step) % n
            while statuses[j] != AVAILABLE:
                j = (j + step) % n
            return j
        left, right = scan(-1), scan(+1)
        return [left] if left == right else [left, right]

    left_side, right_side = [], []
    for j in avail:
        o = (j - target) % n
        if 2 * o < n:
            right_side.append((o, j))
        elif 2 * o > n:
            left_side.append((n - o, j))
        else:
            right_side.append((o, j))  # antipodal tie goes right
    left_side.sort(key=lambda t: -t[0])
    right_side.sort(key=lambda t: t[0])
    return [j for _, j in left_side] + [j for _, j in right_side]


def build_panorama(grids: Tensor, tiles: list[int]) -> Tensor:
    """Concatenate view grids (V, Hf, Wf, C) into (Hf, len*Wf, C)."""
    if not tiles:
        raise ContractViolation("panorama needs at least one tile")
    return ad.concat([ad.slice_(grids, j) for j in tiles], axis=1)


def draw_reference_points(n_ref: int, pan_w: int, pan_h: int, sigma: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Stochastic reference points (n_ref, 2) in panorama grid units.

    x ~ Normal(pan_w / 2, sigma^2), y ~ Uniform(0, pan_h). Out-of-range
    draws are kept; sampling clamps them to the border.
    """
    px = 0.5 * pan_w + sigma * rng.standard_normal(n_ref)
    py = rng.uniform(0.0, float(pan_h), size=n_ref)
    return np.stack([px, py], axis=1).astype(np.float32)


def uniform_reference_points(n_ref: int, pan_w: int, pan_h: int) -> np.ndarray:
    """Deterministic grid of reference points matching the panorama aspect.

    Picks the factor pair rows * cols = n_ref whose rows/cols ratio is
    closest to pan_h / pan_w, then places points at cell centers.
    """
    aspect = pan_h / pan_w
    best = None
    for rows in range(1, n_ref + 1):
        if n_ref % rows:
            continue
        cols = n_ref // rows
        score = abs(rows / cols - aspect)
        if best is None or score < best[0]:
            best = (score, rows, cols)
    _, rows, cols = best
    xs = (np.arange(cols) + 0.5) * (pan_w / cols)
    ys = (np.arange(rows) + 0.5) * (pan_h / rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1).astype(np.float32)


def pool_query_tokens(grid: Tensor) -> Tensor:
    """2x2 average-pool a (Hf, Wf, C) grid into (N_QUERIES, C) tokens."""
    hf, wf, c = grid.shape
    x = ad.reshape(grid, (hf // 2, 2, wf // 2, 2, c))
    x = ad.mean_(x, axis=(1, 3))
    return ad.reshape(x, ((hf // 2) * (wf // 2), c))


def panorama_attention(params: dict, v_tokens: Tensor, panorama: Tensor,
                       refpoints: np.ndarray, n_heads: int) -> Tensor:
    """Sparse sampled attention of query tokens over the panorama.

    Each (query, head) pair offsets every shared reference point by a
    learned function of the query content, samples the panorama there,
    and attends over its own sampled set; the query vector is the
    query token's channel slice for that head. Returns the normalized
    residual update of the query tokens.
    """
    n_q, c = v_tokens.shape
    d = c // n_heads
    n_ref = len(refpoints)

    off = nn.linear(params, "rec.offset", v_tokens)
    off = ad.reshape(off, (n_q * n_heads * n_ref, 2))
    base = np.tile(refpoints.astype(off.dtype), (n_q * n_heads, 1))
    locs = ad.add(off, Tensor(base))
    sampled = ad.grid_sample_bilinear(panorama, locs)
    k = nn.linear(params, "rec.k", sampled)
    v = nn.linear(params, "rec.v", sampled)
    k4 = ad.reshape(k, (n_q, n_heads, n_ref, c))
    v4 = ad.reshape(v, (n_q, n_heads, n_ref, c))

    scale = np.asarray(1.0 / math.sqrt(d), dtype=v_tokens.dtype)
    heads_out = []
    for h in range(n_heads):
        ch = slice(h * d, (h + 1) * d)
        qh = ad.slice_(v_tokens, (slice(None), ch))
        kh = ad.slice_(k4, (slice(None), h, slice(None), ch))
        vh = ad.slice_(v4, (slice(None), h, slice(None), ch))
        q3 = ad.reshape(qh, (n_q, 1, d))
        kt = ad.transpose(kh, (0, 2, 1))
        scores = ad.mul(ad.matmul(q3, kt), scale)
        w = ad.softmax(scores, axis=-1)
        oh = ad.matmul(w, vh)
        heads_out.append(ad.reshape(oh, (n_q, d)))
    attn = ad.concat(heads_out, axis=1)
    return nn.layer_norm_affine(params, "rec.ln_attn", ad.add(v_tokens, attn))


def decode_grid(params: dict, queries: Tensor, panorama: Tensor,
                n_heads: int) -> Tensor:
    """Decode updated queries into a reconstructed (Hf, Wf, C) grid.

    The decoder self-attends over the queries together with
    height-pooled panorama column tokens; panorama positions come from a
    centered slice of a table sized for the full rig width, so a given
    column keeps a stable embedding as the panorama widens.
    """
    wpan, c = panorama.shape[1], panorama.shape[2]
    table = params["rec.pan_pos"]
    max_w = table.shape[0]
    if wpan > max_w:
        raise ContractViolation(
            f"panorama width {wpan} exceeds position table {max_w}")
    pooled = ad.mean_(panorama, axis=0)
    start = (max_w - wpan) // 2
    pos = ad.slice_(table, (slice(start, start + wpan),))
    pan_tokens = ad.add(pooled, pos)
    q_tokens = ad.add(queries, params["rec.q_pos"])
    toks = ad.concat([q_tokens, pan_tokens], axis=0)
    for b in range(N_DECODER_BLOCKS):
        toks = nn.block(params, f"rec.dec{b}", toks, n_heads)
    out_q = ad.slice_(toks, (slice(0, N_QUERIES),))
    patches = nn.linear(params, "rec.patch", out_q)
    return assemble_patches(patches, c)


def assemble_patches(patches: Tensor, c: int) -> Tensor:
    """Arrange (N_QUERIES, 4c) patch vectors into an (Hf, Wf, c) grid.

    Query (i, j) in row-major order owns the 2x2 pixel block with top
    left corner (2i, 2j); its vector is that block flattened row-major.
    """
    half = FEAT_SIZE // 2
    x = ad.reshape(patches, (half, half, 2, 2, c))
    x = ad.transpose(x, (0, 2, 1, 3, 4))
    return ad.reshape(x, (FEAT_SIZE, FEAT_SIZE, c))


def _mae_reconstruct(params: dict, grids: Tensor, statuses: list[str],
                     n_heads: int) -> dict[int, Tensor]:
    v, hf, wf, c = grids.shape
    t = hf * wf
    ones = Tensor(np.ones((t, 1), dtype=grids.dtype))
    rows = []
    for i in range(v):
        if statuses[i] == MASKED:
            rows.append(ad.matmul(ones, params["mae.token"]))
        else:
            rows.append(ad.reshape(ad.slice_(grids, i), (t, c)))
    seq = ad.concat(rows, axis=0)
    pos = params["mae.pos"]
    if seq.shape[0] != pos.shape[0]:
        raise ContractViolation(
            f"mae position table covers {pos.shape[0]} tokens, got {seq.shape[0]}")
    seq = ad.add(seq, pos)
    for b in range(N_DECODER_BLOCKS):
        seq = nn.block(params, f"mae.block{b}", seq, n_heads)
    seq = nn.layer_norm_affine(params, "mae.ln_out", seq)
    out = {}
    for i in range(v):
        if statuses[i] == MASKED:
            tok = ad.slice_(seq, (slice(i * t, (i + 1) * t),))
            out[i] = ad.reshape(tok, (hf, wf, c))
    return out


def reconstruct_missing(params: dict, grids: Tensor, statuses: list[str],
                        variant: str, sigma: float, n_heads: int,
                        rng_for_view) -> tuple[Tensor, list[str]]:
    """Fill every masked view's grid according to the chosen variant.

    ``grids`` is the post-mask (V, Hf, Wf, C) tensor whose masked slots
    hold neighbor-mean placeholders. ``rng_for_view`` maps a view index
    to a fresh Generator for that reconstruction's stochastic draws.
    Returns the updated grids and statuses; with variant ``none`` the
    inputs pass through unchanged.
    """
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown reconstruction variant {variant!r}")
    masked_ids = [i for i, s in enumerate(statuses) if s == MASKED]
    if variant == "none" or not masked_ids:
        return grids, list(statuses)

    v, hf, wf, c = grids.shape
    recon: dict[int, Tensor] = {}

    if variant == "mean":
        avail = [i for i, s in enumerate(statuses) if s == AVAILABLE]
        acc = None
        for j in avail:
            g = ad.slice_(grids, j)
            acc = g if acc is None else ad.add(acc, g)
        mean_grid = ad.mul(acc, np.asarray(1.0 / len(avail), dtype=grids.dtype))
        for i in masked_ids:
            recon[i] = mean_grid
    elif variant == "mae":
        recon = _mae_reconstruct(params, grids, statuses, n_heads)
    else:
        for i in masked_ids:
            tiles = panorama_tile_order(i, statuses, local=(variant == "local"))
            panorama = build_panorama(grids, tiles)
            pan_w = panorama.shape[1]
            if variant == "standard":
                ref = uniform_reference_points(N_REF, pan_w, hf)
            else:
                ref = draw_reference_points(N_REF, pan_w, hf, sigma,
                                            rng_for_view(i))
            v_tokens = pool_query_tokens(ad.slice_(grids, i))
            updated = panorama_attention(params, v_tokens, panorama, ref,
                                         n_heads)
            recon[i] = decode_grid(params, updated, panorama, n_heads)

    rows = []
    new_statuses = []
    for i in range(v):
        if i in recon:
            rows.append(ad.reshape(recon[i], (1, hf, wf, c)))
            new_statuses.append(RECONSTRUCTED)
        else:
            rows.append(ad.reshape(ad.slice_(grids, i), (1, hf, wf, c)))
            new_statuses.append(statuses[i])
    return ad.concat(rows, axis=0), new_statuses


def reconstruction_loss(rec_grids: Tensor, complete_grids: Tensor,
                        masked_ids: list[int]) -> Tensor:
    """Mean squared error of reconstructed grids against the complete
    encoding of the same views. Zero when nothing was masked."""
    if not masked_ids:
        return Tensor(np.zeros((), dtype=rec_grids.dtype))
    hf, wf, c = rec_grids.shape[1:]
    preds = ad.concat([ad.reshape(ad.slice_(rec_grids, i), (1, hf, wf, c))
                       for i in masked_ids], axis=0)
    targets = ad.concat([ad.reshape(ad.slice_(complete_grids, i), (1, hf, wf, c))
                         for i in masked_ids], axis=0)
    return ad.mse_loss(preds, targets)
