"""Metrics and scenario evaluation.

Polyline agreement uses symmetric Chamfer distance: both curves are
resampled to a fixed number of equal-arclength points and the two
directed mean nearest-neighbor distances are averaged. Detection
quality is average precision per class at several Chamfer thresholds:
predictions pool across all samples of a scenario, get greedily matched
in confidence order to the nearest unmatched ground-truth element of
the same class in their sample, and the precision-recall curve is
integrated with all-points interpolation. The mean over classes and
thresholds is the scenario's mAP; classes absent from a split are
excluded and recorded.

A scenario is the evaluation of one fixed set of missing views. The
runner writes one JSON report per scenario plus a summary CSV, and
computes the resilience ratio (scenario mAP over complete-view mAP)
when the complete scenario is present.
"""

from __future__ import annotations

import csv
import itertools
import json
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ContractViolation
from .scene import CLASS_NAMES, Scene, resample_polyline

__all__ = [
    "CHAMFER_THRESHOLDS", "N_METRIC_POINTS",
    "chamfer_distance", "average_precision", "evaluate_samples",
    "scenario_list", "run_scenarios", "mean_resilience",
    "evaluate_model", "mean_map_by_k",
]

CHAMFER_THRESHOLDS = (0.5, 1.0, 1.5)
N_METRIC_POINTS = 100


def chamfer_distance(a: np.ndarray, b: np.ndarray,
                     n_points: int = N_METRIC_POINTS) -> float:
    """Symmetric Chamfer distance between two polylines, in input units."""
    pa = resample_polyline(np.asarray(a, dtype=np.float64), n_points)
    pb = resample_polyline(np.asarray(b, dtype=np.float64), n_points)
    d = cdist(pa, pb)
    return 0.5 * (float(d.min(axis=1).mean()) + float(d.min(axis=0).mean()))


def average_precision(predictions, ground_truths, threshold: float) -> float | None:
    """All-points interpolated AP for one class at one Chamfer threshold.

    ``predictions``: list of (sample_idx, score, points); ``ground_truths``:
    dict sample_idx -> list of point arrays. Returns None when the class
    has no ground truth anywhere (class excluded from aggregation).
    """
    n_gt = sum(len(v) for v in ground_truths.values())
    if n_gt == 0:
        return None
    order = sorted(range(len(predictions)),
                   key=lambda i: (-predictions[i][1], predictions[i][0], i))
    matched: dict[int, set[int]] = {}
    tp = np.zeros(len(order))
    fp = np.zeros(len(order))
    for rank, i in enumerate(order):
        sample_idx, _, pts = predictions[i]
        gts = ground_truths.get(sample_idx, [])
        used = matched.setdefault(sample_idx, set())
        best_j, best_d = -1, np.inf
        for j, gt_pts in enumerate(gts):
            if j in used:
                continue
            d = chamfer_distance(pts, gt_pts)
            if d < best_d:
                best_j, best_d = j, d
        if best_j >= 0 and best_d < threshold:
            tp[rank] = 1.0
            used.add(best_j)
        else:
            fp[rank] = 1.0
    if len(order) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(fp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
    # envelope, then sum area under the stepwise curve
    prec_env = np.maximum.accumulate(precision[::-1])[::-1]
    r_prev = 0.0
    ap = 0.0
    for r, p in zip(recall, prec_env):
        ap += (r - r_prev) * p
        r_prev = r
    return float(ap)


def extract_predictions(logits: np.ndarray, points_norm: np.ndarray,
                        denormalize) -> list[tuple[int, float, np.ndarray]]:
    """Turn one sample's raw head outputs into scored elements.

    Each query slot whose most likely class is not background emits
    (class_id, score, points in meters).
    """
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    prob = e / e.sum(axis=1, keepdims=True)
    out = []
    background = prob.shape[1] - 1
    for q in range(len(prob)):
        c = int(prob[q].argmax())
        if c == background:
            continue
        out.append((c, float(prob[q, c]), denormalize(points_norm[q])))
    return out


def evaluate_samples(per_sample_predictions, per_sample_scenes: list[Scene],
                     thresholds=CHAMFER_THRESHOLDS) -> dict:
    """Aggregate AP over a list of samples.

    ``per_sample_predictions[i]`` is a list of (class_id, score,
    points_m); scenes provide the ground truth. Returns a report dict
    with per-class, per-threshold AP, the mAP over included classes,
    and the list of excluded classes.
    """
    by_class_preds = {c: [] for c in range(len(CLASS_NAMES))}
    by_class_gts = {c: {} for c in range(len(CLASS_NAMES))}
    for s_idx, (preds, scene) in enumerate(
            zip(per_sample_predictions, per_sample_scenes)):
        for c, score, pts in preds:
            by_class_preds[c].append((s_idx, score, pts))
        for elem in scene.elements:
            by_class_gts[elem.cls_id].setdefault(s_idx, []).append(elem.points)

    ap_table: dict[str, dict[str, float | None]] = {}
    included = []
    excluded = []
    values = []
    for c, name in enumerate(CLASS_NAMES):
        ap_table[name] = {}
        class_seen = False
        for tau in thresholds:
            ap = average_precision(by_class_preds[c], by_class_gts[c], tau)
            ap_table[name][str(tau)] = ap
            if ap is not None:
                class_seen = True
                values.append(ap)
        (included if class_seen else excluded).append(name)
    mean_ap = float(np.mean(values)) if values else 0.0
    return {
        "ap": ap_table,
        "map": mean_ap,
        "included_classes": included,
        "excluded_classes": excluded,
        "n_samples": len(per_sample_scenes),
    }


def scenario_list(spec: str, view_names: list[str]) -> list[tuple[str, tuple[int, ...]]]:
    """Expand a scenario selector into (scenario_id, missing views) pairs.

    Selectors: ``complete``, ``singles``, ``k=N`` (all N-view drop
    combinations), ``all`` (complete plus every k from 1 to n_views-1).
    """
    n = len(view_names)

    def combos(k):
        out = []
        for views in itertools.combinations(range(n), k):
            name = "drop_" + "+".join(view_names[i] for i in views)
            out.append((name, tuple(views)))
        return out

    if spec == "complete":
        return [("complete", ())]
    if spec == "singles":
        return combos(1)
    if spec == "all":
        result = [("complete", ())]
        for k in range(1, n):
            result.extend(combos(k))
        return result
    if spec.startswith("k="):
        try:
            k = int(spec[2:])
        except ValueError:
            raise ContractViolation(f"bad scenario selector {spec!r}") from None
        if not 1 <= k <= n - 1:
            raise ContractViolation(
                f"k={k} out of range 1..{n - 1} for this rig")
        return combos(k)
    raise ContractViolation(f"unknown scenario selector {spec!r}")


def run_scenarios(predict_fn, scenes: list[Scene],
                  scenarios: list[tuple[str, tuple[int, ...]]],
                  out_dir, thresholds=CHAMFER_THRESHOLDS) -> dict:
    """Evaluate every scenario and write reports.

    ``predict_fn(missing)`` returns per-sample prediction lists for the
    whole evaluation split with the given views missing. Writes
    ``scenario_<id>.json`` per scenario plus ``summary.csv``; returns
    {scenario_id: report}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for scen_id, missing in scenarios:
        preds = predict_fn(missing)
        report = evaluate_samples(preds, scenes, thresholds)
        report["scenario"] = scen_id
        report["missing_views"] = list(missing)
        reports[scen_id] = report
        (out / f"scenario_{scen_id}.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n")

    with (out / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["scenario", "n_missing", "map"]
        for name in CLASS_NAMES:
            for tau in thresholds:
                header.append(f"ap_{name}_{tau}")
        writer.writerow(header)
        for scen_id, _ in scenarios:
            rep = reports[scen_id]
            row = [scen_id, len(rep["missing_views"]), repr(rep["map"])]
            for name in CLASS_NAMES:
                for tau in thresholds:
                    v = rep["ap"][name][str(tau)]
                    row.append("" if v is None else repr(v))
            writer.writerow(row)
    return reports


def evaluate_model(model, dataset, selectors: list[str], out_dir,
                   eval_seed: int = 0, batch_size: int = 8) -> dict:
    """Run a trained model over the scenarios named by ``selectors``.

    Duplicated scenario ids across selectors are evaluated once. Writes
    per-scenario reports and a summary CSV under ``out_dir`` and returns
    the report dict keyed by scenario id.
    """
    n = len(dataset)
    scenes = [dataset.load_scene(i) for i in range(n)]
    images = np.stack([dataset.load_images(i) for i in range(n)])
    names = dataset.rig.names
    pairs = []
    seen = set()
    for sel in selectors:
        for scen_id, missing in scenario_list(sel, names):
            if scen_id not in seen:
                seen.add(scen_id)
                pairs.append((scen_id, missing))

    def denorm(pts_norm):
        return dataset.grid.denormalize_points(pts_norm)

    def predict_fn(missing):
        per_sample = []
        for b0 in range(0, n, batch_size):
            batch = model.predict_batch(images[b0:b0 + batch_size], missing,
                                        eval_seed, start_index=b0)
            for logits, points in batch:
                per_sample.append(extract_predictions(logits, points, denorm))
        return per_sample

    return run_scenarios(predict_fn, scenes, pairs, out_dir)


def mean_map_by_k(reports: dict) -> dict[int, float]:
    """Mean scenario mAP grouped by number of missing views."""
    groups: dict[int, list[float]] = {}
    for rep in reports.values():
        groups.setdefault(len(rep["missing_views"]), []).append(rep["map"])
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def mean_resilience(reports: dict) -> float | None:
    """Mean over degraded scenarios of scenario mAP relative to the
    complete scenario, as a percentage; None without a complete run."""
    if "complete" not in reports:
        return None
    base = reports["complete"]["map"]
    if base <= 0.0:
        return None
    ratios = [100.0 * rep["map"] / base
              for scen_id, rep in reports.items() if scen_id != "complete"]
    if not ratios:
        return None
    return float(np.mean(ratios))
