"""Command line interface.

Subcommands:
    gen     generate a synthetic dataset
    train   train a model on a dataset
    eval    evaluate a checkpoint over missing-view scenarios
    ablate  run an ablation suite (train + eval per member)

Exit codes: 0 success, 2 usage error, 3 invalid or corrupt inputs,
4 runtime failure (such as training divergence).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ablate import SUITES, run_suite
from .config import ModelConfig, TrainConfig, load_config_file
from .dataset import Dataset, generate_dataset
from .errors import (BevMapError, CheckpointError, ContractViolation,
                     DatasetError, TrainingAborted)
from .evaluation import evaluate_model, mean_map_by_k, mean_resilience
from .geometry import CameraRig
from .training import load_model_from_checkpoint, train_model

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevmap",
        description="Vectorized BEV map construction robust to missing views")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--scenes", type=int, required=True)
    p_gen.add_argument("--rig", choices=["ring6", "ring7"], default="ring6")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--force", action="store_true",
                       help="overwrite a non-empty output directory")

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--config", help="JSON config file")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the newest checkpoint in --out")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint directory")
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--scenarios", default="complete",
                        help="comma list of complete|singles|k=N|all")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--eval-seed", type=int, default=0)
    p_eval.add_argument("--plots", action="store_true",
                        help="also write summary SVG plots")

    p_abl = sub.add_parser("ablate", help="run an ablation suite")
    p_abl.add_argument("--data", required=True,
                       help="directory holding train/ and eval/ datasets")
    p_abl.add_argument("--suite", choices=list(SUITES), required=True)
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--eval-seed", type=int, default=0)
    return parser


def _cmd_gen(args) -> int:
    rig = CameraRig.named(args.rig)
    ds = generate_dataset(args.out, args.seed, args.scenes, rig,
                          force=args.force)
    print(f"wrote {len(ds)} scenes to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    dataset = Dataset(args.data)
    if args.config:
        model_cfg, train_cfg = load_config_file(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    result = train_model(dataset, model_cfg, train_cfg, args.out,
                         resume=args.resume)
    print(f"trained {result.epochs} epochs ({result.steps} steps), "
          f"final checkpoint {result.final_checkpoint}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    dataset = Dataset(args.data)
    model, _ = load_model_from_checkpoint(args.ckpt, dataset.rig, dataset.grid)
    selectors = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    if not selectors:
        raise ContractViolation("no scenario selectors given")
    reports = evaluate_model(model, dataset, selectors, args.out,
                             eval_seed=args.eval_seed)
    by_k = mean_map_by_k(reports)
    mrr = mean_resilience(reports)
    summary = {"n_scenarios": len(reports),
               "map_by_missing_count": {str(k): v for k, v in by_k.items()},
               "mean_resilience": mrr}
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.plots:
        from .plots import plot_scenario_summary
        svg = Path(args.out) / "summary.svg"
        plot_scenario_summary(reports, svg)
        print(f"wrote {svg}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    data = Path(args.data)
    train_path = data / "train"
    eval_path = data / "eval"
    if not (train_path / "manifest.json").is_file():
        raise DatasetError(f"no train dataset at {train_path}")
    if not (eval_path / "manifest.json").is_file():
        raise DatasetError(f"no eval dataset at {eval_path}")
    experiment = run_suite(args.suite, train_path, eval_path, args.out,
                           ModelConfig(), TrainConfig(),
                           eval_seed=args.eval_seed)
    for row in experiment["results"]:
        print(f"{row['name']}: complete mAP="
              f"{_fmt(row['map_complete'])}, mRR={_fmt(row['mean_resilience'])}")
    return EXIT_OK


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen": _cmd_gen, "train": _cmd_train,
                "eval": _cmd_eval, "ablate": _cmd_ablate}
    try:
        return handlers[args.command](args)
    except TrainingAborted as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ContractViolation, DatasetError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except BevMapError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
