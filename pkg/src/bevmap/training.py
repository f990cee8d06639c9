"""Training loop.

Each step runs a two-branch forward per sample: the complete view set
is encoded once and lifted into a teacher BEV, a random subset of views
is masked and reconstructed into a student BEV, and the map head
decodes the student side. The optimized objective is

    total = map_loss + lambda_rec * reconstruction_loss
                     + lambda_cor * correction_loss

with the term weights from the training config. Every random draw
(batch order, view masks, reference points) comes from a generator
seeded by the run seed plus step counters, never from carried state, so
a run interrupted at an epoch checkpoint resumes bit-for-bit identically
to one that never stopped.

Zero-weight terms are skipped unless ``force_all_terms`` is set, which
computes them anyway (weighted by zero) so the two modes can be checked
against each other.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad, tape
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, config_to_dict
from .dataset import Dataset
from .encoder import draw_view_mask
from .errors import CheckpointError, ContractViolation, TrainingAborted
from .lift import lift_to_bev
from .maphead import map_loss, match_elements
from .model import MapModel
from .nn import arrays_to_params, params_to_arrays
from .optim import AdamW
from .reconstruction import reconstruction_loss
from .correction import correction_loss
from .seeding import rng_for

__all__ = ["TrainResult", "train_model", "load_model_from_checkpoint",
           "latest_checkpoint"]

MAX_MASK_DRAW = 5  # upper bound for uniform multi-view masking


@dataclass
class TrainResult:
    out_dir: Path
    final_checkpoint: Path
    steps: int
    epochs: int


def _gt_arrays(scene, grid):
    classes = np.asarray([e.cls_id for e in scene.elements], dtype=np.int64)
    if len(scene.elements):
        pts = np.stack([grid.normalize_points(e.points)
                        for e in scene.elements])
    else:
        pts = np.zeros((0, 1, 2))
    return classes, pts


def _save_state(out: Path, tag: str, model: MapModel, opt: AdamW,
                epoch: int, step: int, model_cfg, train_cfg) -> Path:
    arrays = {}
    for k, v in params_to_arrays(model.params).items():
        arrays[f"param.{k}"] = v
    for k, m in opt.state["m"].items():
        arrays[f"adamw.m.{k}"] = m.copy()
    for k, v in opt.state["v"].items():
        arrays[f"adamw.v.{k}"] = v.copy()
    meta = {
        "epoch": epoch,
        "step": step,
        "config": config_to_dict(model_cfg, train_cfg),
    }
    ckpt_dir = out / tag
    save_checkpoint(ckpt_dir, arrays, meta)
    return ckpt_dir


def _load_state(ckpt_dir, model: MapModel, opt: AdamW) -> dict:
    arrays, meta = load_checkpoint(ckpt_dir)
    params = {k[len("param."):]: v for k, v in arrays.items()
              if k.startswith("param.")}
    arrays_to_params(params, model.params)
    for k in opt.state["m"]:
        mk, vk = f"adamw.m.{k}", f"adamw.v.{k}"
        if mk not in arrays or vk not in arrays:
            raise CheckpointError(f"checkpoint lacks optimizer moments for {k}")
        opt.state["m"][k] = arrays[mk].copy()
        opt.state["v"][k] = arrays[vk].copy()
    opt.state["step"] = int(meta["step"])
    return meta


def latest_checkpoint(out_dir) -> Path | None:
    out = Path(out_dir)
    best = None
    for d in out.glob("ckpt_epoch_*"):
        try:
            e = int(d.name.rsplit("_", 1)[1])
        except ValueError:
            continue
        if best is None or e > best[0]:
            best = (e, d)
    return best[1] if best else None


def load_model_from_checkpoint(ckpt_dir, rig, grid) -> tuple[MapModel, dict]:
    """Rebuild a model from a checkpoint's config echo and weights."""
    arrays, meta = load_checkpoint(ckpt_dir)
    model_cfg = ModelConfig.from_dict(meta["config"]["model"])
    train_cfg = TrainConfig.from_dict(meta["config"]["train"])
    model = MapModel.from_seed(model_cfg, rig, grid, train_cfg.seed)
    params = {k[len("param."):]: v for k, v in arrays.items()
              if k.startswith("param.")}
    arrays_to_params(params, model.params)
    return model, meta


def _lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate for a step; pure function of config and position."""
    if cfg.lr_schedule == "constant":
        return cfg.lr
    if cfg.lr_schedule == "cosine":
        frac = step / max(total_steps, 1)
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    raise ContractViolation(f"unknown lr schedule {cfg.lr_schedule!r}")


def _mask_for_sample(cfg: TrainConfig, n_views: int, step: int,
                     slot: int) -> list[int]:
    rng = rng_for(cfg.seed, "mask", step, slot)
    if cfg.mask_mode == "uniform":
        upper = min(MAX_MASK_DRAW, n_views - 1)
        count = int(rng.integers(1, upper + 1))
    elif cfg.mask_mode == "fixed":
        count = cfg.mask_count
    else:
        raise ContractViolation(f"unknown mask mode {cfg.mask_mode!r}")
    return draw_view_mask(n_views, count, rng)


def train_step(model: MapModel, opt: AdamW, images: np.ndarray,
               gts: list[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
               step: int, sample_ids: list[int]) -> dict[str, float]:
    """One optimization step over a batch; returns logged loss parts."""
    b, v = images.shape[:2]
    want_rec = model.cfg.variant != "none" and (
        cfg.lambda_rec != 0.0 or cfg.force_all_terms)
    want_cor = cfg.correction != "none" and (
        cfg.lambda_cor != 0.0 or cfg.force_all_terms)

    with tape() as t:
        grids = model.encode_batch(images)
        map_terms, rec_terms, cor_terms = [], [], []
        for s in range(b):
            g_s = ad.slice_(grids, s)
            masked = _mask_for_sample(cfg, v, step, s)

            def rng_for_view(view, _slot=s):
                return rng_for(cfg.seed, "refpoints", step, _slot, view)

            bev, rec_grids, _ = model.student_forward(g_s, masked, rng_for_view)
            logits, points = model.decode(bev)
            classes, gt_pts = gts[sample_ids[s]]
            matches = match_elements(logits.data, points.data, classes, gt_pts)
            l_map, _ = map_loss(logits, points, classes, gt_pts, matches)
            if not np.isfinite(float(l_map.data)):
                raise TrainingAborted(
                    f"non-finite map loss at step {step}, sample "
                    f"{sample_ids[s]}, seed {cfg.seed}",
                    step=step, sample_index=sample_ids[s], seed=cfg.seed)
            map_terms.append(l_map)

            if want_rec:
                rec_terms.append(reconstruction_loss(rec_grids, g_s, masked))
            if want_cor:
                if cfg.detach_teacher:
                    with no_grad():
                        t_bev = model.complete_bev(g_s)
                else:
                    t_bev = model.complete_bev(g_s)
                cor_terms.append(correction_loss(
                    bev, t_bev, cfg.correction, cfg.detach_teacher))

        inv_b = np.asarray(1.0 / b, dtype=np.float32)

        def batch_mean(terms):
            acc = terms[0]
            for x in terms[1:]:
                acc = ad.add(acc, x)
            return ad.mul(acc, inv_b)

        l_map = batch_mean(map_terms)
        total = l_map
        l_rec = batch_mean(rec_terms) if rec_terms else None
        l_cor = batch_mean(cor_terms) if cor_terms else None
        if l_rec is not None:
            total = ad.add(total, ad.mul(
                l_rec, np.asarray(cfg.lambda_rec, dtype=np.float32)))
        if l_cor is not None:
            total = ad.add(total, ad.mul(
                l_cor, np.asarray(cfg.lambda_cor, dtype=np.float32)))
        if not np.isfinite(float(total.data)):
            raise TrainingAborted(
                f"non-finite total loss at step {step}, seed {cfg.seed}",
                step=step, sample_index=None, seed=cfg.seed)
        total.backward()

    opt.step()
    opt.zero_grad()

    part_map = float(l_map.data)
    part_rec = float(l_rec.data) if l_rec is not None else 0.0
    part_cor = float(l_cor.data) if l_cor is not None else 0.0
    logged_total = part_map + cfg.lambda_rec * part_rec + cfg.lambda_cor * part_cor
    return {"loss_map": part_map, "loss_rec": part_rec,
            "loss_cor": part_cor, "loss_total": logged_total}


def train_model(dataset: Dataset, model_cfg: ModelConfig,
                train_cfg: TrainConfig, out_dir,
                resume: bool = False,
                stop_after_epoch: int | None = None) -> TrainResult:
    """Train a model on a dataset, writing curves and checkpoints.

    ``resume`` continues from the newest epoch checkpoint in
    ``out_dir``; ``stop_after_epoch`` ends the run early after the given
    epoch completes (used to exercise interruption).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = MapModel.from_seed(model_cfg, dataset.rig, dataset.grid,
                               train_cfg.seed)
    opt = AdamW(model.params, lr=train_cfg.lr,
                weight_decay=train_cfg.weight_decay)

    n = len(dataset)
    if n == 0:
        raise ContractViolation("cannot train on an empty dataset")
    images_all = np.stack([dataset.load_images(i) for i in range(n)])
    gts = [_gt_arrays(dataset.load_scene(i), dataset.grid) for i in range(n)]
    steps_per_epoch = math.ceil(n / train_cfg.batch_size)

    start_epoch = 0
    curves_path = out / "curves.jsonl"
    if resume:
        ckpt = latest_checkpoint(out)
        if ckpt is None:
            raise CheckpointError(f"resume requested but no checkpoint in {out}")
        meta = _load_state(ckpt, model, opt)
        start_epoch = int(meta["epoch"]) + 1
        curves = curves_path.open("a")
    else:
        curves = curves_path.open("w")

    step = start_epoch * steps_per_epoch
    total_steps = steps_per_epoch * train_cfg.epochs
    final_ckpt = latest_checkpoint(out) if resume else None
    last_epoch = start_epoch - 1
    try:
        for epoch in range(start_epoch, train_cfg.epochs):
            order = rng_for(train_cfg.seed, "order", epoch).permutation(n)
            for b0 in range(0, n, train_cfg.batch_size):
                batch_ids = [int(i) for i in order[b0:b0 + train_cfg.batch_size]]
                opt.lr = _lr_at(train_cfg, step, total_steps)
                parts = train_step(model, opt, images_all[batch_ids], gts,
                                   train_cfg, step, batch_ids)
                record = {"step": step, "epoch": epoch, **parts}
                curves.write(json.dumps(record) + "\n")
                curves.flush()
                step += 1
            last_epoch = epoch
            is_last = (epoch == train_cfg.epochs - 1
                       or epoch == stop_after_epoch)
            cadence = (train_cfg.checkpoint_every
                       and (epoch + 1) % train_cfg.checkpoint_every == 0)
            if is_last or cadence:
                final_ckpt = _save_state(out, f"ckpt_epoch_{epoch}", model,
                                         opt, epoch, step, model_cfg,
                                         train_cfg)
            if epoch == stop_after_epoch:
                break
    finally:
        curves.close()

    if final_ckpt is None:
        raise ContractViolation("training produced no checkpoint")
    return TrainResult(out, final_ckpt, step, last_epoch + 1)
