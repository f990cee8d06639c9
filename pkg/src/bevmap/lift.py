"""Lifting per-view feature grids onto the bird's-eye-view grid.

Every BEV cell center is projected into each camera ahead of time
(`build_lift_geometry`); at lift time the cell's feature is the average
of bilinear samples taken from the feature grids of all views included
by status, plus one extra channel holding the fraction of rig cameras
that see the cell. Cells outside every included view stay zero. The
sampling locations are functions of rig geometry only, so gradients
flow into the view features but not into the geometry.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import AVAILABLE, RECONSTRUCTED
from .errors import ContractViolation
from .geometry import LiftGeometry

__all__ = ["lift_to_bev", "included_views"]


def included_views(statuses: list[str]) -> list[bool]:
    """Views whose features may enter the BEV: available or reconstructed."""
    return [s in (AVAILABLE, RECONSTRUCTED) for s in statuses]


def lift_to_bev(grids: Tensor, statuses: list[str],
                geom: LiftGeometry) -> Tensor:
    """Fuse view grids (V, Hf, Wf, C) into BEV tokens (n_cells, C + 1).

    The final channel is visibility: the number of included views that
    see each cell, divided by the rig size.
    """
    v = grids.shape[0]
    if len(statuses) != v or len(geom.cell_idx) != v:
        raise ContractViolation(
            f"got {v} grids, {len(statuses)} statuses, "
            f"{len(geom.cell_idx)} geometry entries")
    include = included_views(statuses)
    if not any(include):
        raise ContractViolation("no views available to lift")

    c = grids.shape[-1]
    total: Tensor | None = None
    count = np.zeros(geom.n_cells, dtype=np.float64)
    for k in range(v):
        if not include[k]:
            continue
        if len(geom.cell_idx[k]) == 0:
            continue
        feat = ad.slice_(grids, k)
        vals = ad.grid_sample_bilinear(feat, geom.feat_pts[k])
        # cell indices come from np.nonzero, so they are duplicate-free
        part = ad.scatter_add(vals, geom.cell_idx[k], geom.n_cells, unique=True)
        total = part if total is None else ad.add(total, part)
        count += geom.vis_mask[k]

    inv = (1.0 / np.maximum(count, 1.0)).astype(grids.dtype)
    if total is None:
        avg = Tensor(np.zeros((geom.n_cells, c), dtype=grids.dtype))
    else:
        avg = ad.mul(total, Tensor(inv[:, None]))
    vis = (count / float(v)).astype(grids.dtype)
    return ad.concat([avg, Tensor(vis[:, None])], axis=1)
