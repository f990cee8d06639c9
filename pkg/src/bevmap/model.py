"""The full map-construction model.

Bundles the per-view encoder, the missing-view reconstruction module,
the BEV lift, and the vectorized map head behind one parameter dict,
and provides the inference path used by evaluation: encode the
available views, synthesize any missing ones, lift to the BEV grid,
and decode map elements.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .config import ModelConfig
from .encoder import (AVAILABLE, apply_view_mask, encode_views, init_encoder)
from .errors import ContractViolation
from .geometry import FEAT_SIZE, BevGrid, CameraRig, build_lift_geometry
from .lift import lift_to_bev
from .maphead import bev_position_encoding, decode_map, init_map_head
from .reconstruction import init_reconstruction, reconstruct_missing
from .seeding import derive_seed, rng_for

__all__ = ["MapModel"]


class MapModel:
    def __init__(self, cfg: ModelConfig, rig: CameraRig, grid: BevGrid,
                 init_seed: int):
        if cfg.dim % cfg.n_heads:
            raise ContractViolation(
                f"dim {cfg.dim} not divisible by {cfg.n_heads} heads")
        self.cfg = cfg
        self.rig = rig
        self.grid = grid
        self.geom = build_lift_geometry(rig, grid)
        self.pos_enc = bev_position_encoding(grid.height, grid.width, cfg.dim)
        params: dict[str, Tensor] = {}
        init_encoder(params, cfg.dim, init_seed)
        init_reconstruction(params, cfg.variant, cfg.dim, cfg.n_heads,
                            len(rig), init_seed)
        init_map_head(params, cfg.dim, cfg.dim + 1, init_seed)
        self.params = params

    @classmethod
    def from_seed(cls, cfg: ModelConfig, rig: CameraRig, grid: BevGrid,
                  seed: int) -> "MapModel":
        return cls(cfg, rig, grid, derive_seed(seed, "init"))

    # ------------------------------------------------------------------
    # forward pieces shared by training and evaluation

    def encode_batch(self, images: np.ndarray) -> Tensor:
        """(S, V, H, W) images -> (S, V, Hf, Wf, C) feature grids."""
        s, v, h, w = images.shape
        flat = encode_views(self.params, images.reshape(s * v, h, w),
                            self.cfg.n_heads)
        return ad.reshape(flat, (s, v, FEAT_SIZE, FEAT_SIZE, self.cfg.dim))

    def complete_bev(self, grids_s: Tensor) -> Tensor:
        """Lift one sample's complete view grids (V, Hf, Wf, C)."""
        statuses = [AVAILABLE] * grids_s.shape[0]
        return lift_to_bev(grids_s, statuses, self.geom)

    def student_forward(self, grids_s: Tensor, masked: list[int],
                        rng_for_view) -> tuple[Tensor, Tensor, list[str]]:
        """Mask, reconstruct, and lift one sample.

        Returns (bev_tokens, reconstructed grids, statuses)."""
        m_grids, statuses = apply_view_mask(grids_s, masked)
        rec_grids, statuses = reconstruct_missing(
            self.params, m_grids, statuses, self.cfg.variant, self.cfg.sigma,
            self.cfg.n_heads, rng_for_view)
        bev = lift_to_bev(rec_grids, statuses, self.geom)
        return bev, rec_grids, statuses

    def decode(self, bev: Tensor) -> tuple[Tensor, Tensor]:
        return decode_map(self.params, bev, self.pos_enc, self.cfg.n_heads)

    # ------------------------------------------------------------------
    # inference

    def predict_batch(self, images: np.ndarray, missing: tuple[int, ...] = (),
                      eval_seed: int = 0, start_index: int = 0
                      ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Predict map elements for a batch with the given views missing.

        ``images`` is (S, V, H, W); every listed view is replaced before
        any feature reaches the BEV, so the content of a missing view
        cannot influence the output. Returns per-sample (logits,
        points) arrays; stochastic reconstruction draws are seeded by
        (eval_seed, absolute sample index, view).
        """
        missing = sorted(int(i) for i in missing)
        s = images.shape[0]
        out = []
        with no_grad():
            grids = self.encode_batch(images)
            for i in range(s):
                g_s = ad.slice_(grids, i)
                sample_idx = start_index + i
                if missing:
                    def rng_for_view(view, _si=sample_idx):
                        return rng_for(eval_seed, "eval-refpoints", _si, view)
                    bev, _, _ = self.student_forward(g_s, missing, rng_for_view)
                else:
                    bev = self.complete_bev(g_s)
                logits, points = self.decode(bev)
                out.append((logits.data.copy(), points.data.copy()))
        return out
