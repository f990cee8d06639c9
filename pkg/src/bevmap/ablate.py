"""Ablation suites.

A suite is a list of members, each a (model config, train config,
scenario selectors) triple sharing one seed so that data order, view
masks, and evaluation draws are identical across members. Members train
and evaluate independently, so they can run in parallel worker
processes (``BEVMAP_WORKERS``); results are collected in member order
regardless of completion order.

Suites:
    pvr-variants   reconstruction strategies, none through gaussian
    dist-loss      correction objective: none, kl, l1, l2
    sigma          reference point spread 1..5
    lambda         term weight sweeps around the defaults
    missing-count  baseline vs full model under multi-view masking,
                   evaluated at every missing-view count
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ModelConfig, TrainConfig, config_to_dict
from .dataset import Dataset
from .errors import ContractViolation
from .evaluation import evaluate_model, mean_map_by_k, mean_resilience
from .training import load_model_from_checkpoint, train_model

__all__ = ["SUITES", "suite_members", "run_suite"]

SUITES = ("pvr-variants", "dist-loss", "sigma", "lambda", "missing-count")


def _member(name: str, model_cfg: ModelConfig, train_cfg: TrainConfig,
            selectors: list[str]) -> dict:
    return {"name": name, "model": model_cfg, "train": train_cfg,
            "selectors": selectors}


def suite_members(suite: str, base_model: ModelConfig,
                  base_train: TrainConfig) -> list[dict]:
    single = ["complete", "singles"]
    if suite == "pvr-variants":
        members = []
        for variant in ("none", "mean", "mae", "standard", "local", "gaussian"):
            model_cfg = dataclasses.replace(base_model, variant=variant)
            if variant == "none":
                train_cfg = dataclasses.replace(
                    base_train, correction="none", lambda_rec=0.0,
                    lambda_cor=0.0)
            else:
                train_cfg = base_train
            members.append(_member(f"pvr_{variant}", model_cfg, train_cfg,
                                   single))
        return members
    if suite == "dist-loss":
        members = []
        for kind in ("none", "kl", "l1", "l2"):
            if kind == "none":
                train_cfg = dataclasses.replace(
                    base_train, correction="none", lambda_cor=0.0)
            else:
                train_cfg = dataclasses.replace(base_train, correction=kind)
            members.append(_member(f"dist_{kind}", base_model, train_cfg,
                                   single))
        return members
    if suite == "sigma":
        return [_member(f"sigma_{s}",
                        dataclasses.replace(base_model, sigma=float(s)),
                        base_train, single)
                for s in (1, 2, 3, 4, 5)]
    if suite == "lambda":
        members = []
        for lam1 in (0.01, 0.03, 0.05, 0.07, 0.09):
            members.append(_member(
                f"lam_rec_{lam1}",
                base_model,
                dataclasses.replace(base_train, lambda_rec=lam1), single))
        for lam2 in (1.0, 3.0, 5.0, 7.0, 9.0):
            members.append(_member(
                f"lam_cor_{lam2}",
                base_model,
                dataclasses.replace(base_train, lambda_cor=lam2), single))
        return members
    if suite == "missing-count":
        degrade_all = ["complete"] + [f"k={k}" for k in (1, 2, 3, 4, 5)]
        baseline_model = dataclasses.replace(base_model, variant="none")
        baseline_train = dataclasses.replace(
            base_train, correction="none", lambda_rec=0.0, lambda_cor=0.0,
            mask_mode="uniform")
        full_train = dataclasses.replace(base_train, mask_mode="uniform")
        return [
            _member("count_baseline", baseline_model, baseline_train,
                    degrade_all),
            _member("count_full", base_model, full_train, degrade_all),
        ]
    raise ContractViolation(f"unknown ablation suite {suite!r}")


def _run_member(args) -> dict:
    train_path, eval_path, member, eval_seed = args
    train_ds = Dataset(train_path)
    eval_ds = Dataset(eval_path)
    out = Path(member["out_dir"])
    result = train_model(train_ds, member["model"], member["train"],
                         out / "train")
    model, _ = load_model_from_checkpoint(result.final_checkpoint,
                                          eval_ds.rig, eval_ds.grid)
    reports = evaluate_model(model, eval_ds, member["selectors"],
                             out / "reports", eval_seed=eval_seed)
    by_k = mean_map_by_k(reports)
    return {
        "name": member["name"],
        "config": config_to_dict(member["model"], member["train"]),
        "map_complete": reports.get("complete", {}).get("map"),
        "map_by_missing_count": {str(k): v for k, v in by_k.items()},
        "mean_resilience": mean_resilience(reports),
    }


def run_suite(suite: str, train_path, eval_path, out_dir,
              base_model: ModelConfig, base_train: TrainConfig,
              eval_seed: int = 0, workers: int | None = None) -> dict:
    """Run every member of a suite; returns the experiment summary.

    ``workers`` defaults to the BEVMAP_WORKERS environment variable
    (1 = sequential). The experiment manifest records a wall-clock
    timestamp, which is informational only and excluded from any
    reproducibility comparison.
    """
    members = suite_members(suite, base_model, base_train)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for m in members:
        m["out_dir"] = str(out / m["name"])
    if workers is None:
        workers = int(os.environ.get("BEVMAP_WORKERS", "1"))
    args = [(str(train_path), str(eval_path), m, eval_seed) for m in members]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_member, a) for a in args]
            results = [f.result() for f in futures]
    else:
        results = [_run_member(a) for a in args]

    experiment = {
        "suite": suite,
        "base_config": config_to_dict(base_model, base_train),
        "eval_seed": eval_seed,
        "results": results,
        "created_unix": time.time(),
    }
    (out / "experiment.json").write_text(
        json.dumps(experiment, sort_keys=True, indent=2) + "\n")

    lines = ["member,map_complete,mean_resilience," +
             ",".join(f"map_k{k}" for k in range(1, 6))]
    for r in results:
        by_k = r["map_by_missing_count"]
        row = [r["name"],
               "" if r["map_complete"] is None else repr(r["map_complete"]),
               "" if r["mean_resilience"] is None else repr(r["mean_resilience"])]
        for k in range(1, 6):
            v = by_k.get(str(k))
            row.append("" if v is None else repr(v))
        lines.append(",".join(row))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    return experiment
