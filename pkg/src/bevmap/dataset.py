"""Dataset generation and loading.

A dataset is a directory:

    manifest.json          seed, rig, grid, generator config, per-sample
                           sha256 checksums, class histogram
    samples/<idx>.img      rendered camera stack (n_views, H, W), in the
                           shared binary array format (shape header +
                           little-endian float32)
    samples/<idx>.gt.json  vectorized ground-truth elements

Every byte is a function of the seed and the configs; manifests carry
no timestamps, so regenerating with the same arguments reproduces the
directory bit for bit. Loading verifies checksums and shapes and raises
DatasetError on any corruption or truncation.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .checkpoint import read_array_file, write_array_file
from .errors import DatasetError
from .geometry import BevGrid, CameraRig
from .render import render_scene
from .scene import CLASS_NAMES, GeneratorConfig, Scene, generate_scene

__all__ = ["generate_dataset", "Dataset"]

FORMAT_VERSION = 1


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_dataset(out_dir, seed: int, n_scenes: int,
                     rig: CameraRig | None = None,
                     grid: BevGrid | None = None,
                     gen_cfg: GeneratorConfig | None = None,
                     force: bool = False) -> "Dataset":
    """Generate and write a dataset; refuses a non-empty target directory
    unless ``force`` is set."""
    rig = rig or CameraRig.ring6()
    grid = grid or BevGrid()
    gen_cfg = gen_cfg or GeneratorConfig()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise DatasetError(
            f"{out} exists and is not empty; pass force to overwrite")
    samples_dir = out / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    histogram = {name: 0 for name in CLASS_NAMES}
    for idx in range(n_scenes):
        scene = generate_scene(seed, idx, grid, gen_cfg)
        images = render_scene(scene, rig)
        img_path = samples_dir / f"{idx}.img"
        gt_path = samples_dir / f"{idx}.gt.json"
        write_array_file(img_path, images)
        gt_path.write_text(json.dumps(scene.to_dict(), sort_keys=True) + "\n")
        for elem in scene.elements:
            histogram[elem.cls_name] += 1
        entries.append({
            "index": idx,
            "img": f"samples/{idx}.img",
            "gt": f"samples/{idx}.gt.json",
            "img_sha256": _sha256_file(img_path),
            "gt_sha256": _sha256_file(gt_path),
        })

    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "n_scenes": n_scenes,
        "rig": rig.to_dict(),
        "grid": grid.to_dict(),
        "generator": gen_cfg.to_dict(),
        "class_histogram": histogram,
        "samples": entries,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return Dataset(out)


class Dataset:
    """Read access to a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        mpath = self.root / "manifest.json"
        if not mpath.is_file():
            raise DatasetError(f"no manifest.json under {self.root}")
        try:
            self.manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as e:
            raise DatasetError(f"unreadable manifest {mpath}: {e}") from e
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise DatasetError(
                f"unsupported dataset format "
                f"{self.manifest.get('format_version')!r}")
        self.rig = CameraRig.from_dict(self.manifest["rig"])
        self.grid = BevGrid.from_dict(self.manifest["grid"])
        self.generator = GeneratorConfig.from_dict(self.manifest["generator"])
        self.seed = int(self.manifest["seed"])

    def __len__(self) -> int:
        return int(self.manifest["n_scenes"])

    def _entry(self, idx: int) -> dict:
        samples = self.manifest["samples"]
        if not 0 <= idx < len(samples):
            raise DatasetError(f"sample index {idx} out of range 0..{len(samples) - 1}")
        return samples[idx]

    def load_images(self, idx: int) -> np.ndarray:
        entry = self._entry(idx)
        path = self.root / entry["img"]
        if not path.is_file():
            raise DatasetError(f"missing sample file {path}")
        if _sha256_file(path) != entry["img_sha256"]:
            raise DatasetError(f"checksum mismatch for {path}")
        try:
            images = read_array_file(path)
        except Exception as e:
            raise DatasetError(f"corrupt sample file {path}: {e}") from e
        n_views = len(self.rig)
        if images.shape[0] != n_views or images.ndim != 3:
            raise DatasetError(
                f"sample {idx} has shape {images.shape}, expected "
                f"({n_views}, H, W)")
        return images

    def load_scene(self, idx: int) -> Scene:
        entry = self._entry(idx)
        path = self.root / entry["gt"]
        if not path.is_file():
            raise DatasetError(f"missing ground-truth file {path}")
        if _sha256_file(path) != entry["gt_sha256"]:
            raise DatasetError(f"checksum mismatch for {path}")
        return Scene.from_dict(json.loads(path.read_text()))

    def load_sample(self, idx: int) -> tuple[np.ndarray, Scene]:
        return self.load_images(idx), self.load_scene(idx)
