"""Rasterization of vectorized scenes into per-camera images.

Each map element is densified along its arclength, projected into every
camera, and drawn as anti-aliased strokes: sample points are taken at
half-pixel steps along each visible image-space segment and splatted
bilinearly onto the four surrounding pixels with max blending, so
overlapping elements keep the stronger class intensity. Classes render
at fixed intensity tiers, which is the only appearance cue the model
gets.
"""

from __future__ import annotations

import numpy as np

from .geometry import Camera, CameraRig, project_ground
from .scene import Scene, resample_polyline, polyline_length

__all__ = ["CLASS_INTENSITY", "render_view", "render_scene"]

# crossing, divider, boundary
CLASS_INTENSITY = (1.0, 0.7, 0.4)

WORLD_STEP = 0.25  # meters between densified polyline samples
PIXEL_STEP = 0.5   # pixels between stroke samples


def _densify(points: np.ndarray) -> np.ndarray:
    length = polyline_length(points)
    if length <= 0.0:
        return np.asarray(points, dtype=np.float64)
    n = max(2, int(np.ceil(length / WORLD_STEP)) + 1)
    return resample_polyline(points, n)


def _splat_max(img: np.ndarray, pts: np.ndarray, value: float):
    """Bilinear max-splat of stroke samples onto the image."""
    h, w = img.shape
    x, y = pts[:, 0], pts[:, 1]
    keep = (x > -1.0) & (x < w) & (y > -1.0) & (y < h)
    if not keep.any():
        return
    x, y = x[keep], y[keep]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    flat = img.reshape(-1)
    for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi = x0 + dx
        yi = y0 + dy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        if not ok.any():
            continue
        np.maximum.at(flat, yi[ok] * w + xi[ok],
                      (value * wgt[ok]).astype(img.dtype))


def render_view(scene: Scene, cam: Camera) -> np.ndarray:
    """Render one camera image, float32 in [0, 1]."""
    intr = cam.intrinsics
    img = np.zeros((intr.height, intr.width), dtype=np.float32)
    for elem in scene.elements:
        dense = _densify(elem.points)
        uv, valid, _ = project_ground(cam, dense)
        value = CLASS_INTENSITY[elem.cls_id]
        for i in range(len(dense) - 1):
            if not (valid[i] and valid[i + 1]):
                continue
            a, b = uv[i], uv[i + 1]
            span = float(np.linalg.norm(b - a))
            n = max(2, int(np.ceil(span / PIXEL_STEP)) + 1)
            ts = np.linspace(0.0, 1.0, n)[:, None]
            _splat_max(img, a[None, :] + ts * (b - a)[None, :], value)
    return img


def render_scene(scene: Scene, rig: CameraRig) -> np.ndarray:
    """Render all rig cameras, stacked (n_views, H, W) float32."""
    return np.stack([render_view(scene, cam) for cam in rig.cameras])
