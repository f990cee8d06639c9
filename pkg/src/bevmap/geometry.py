"""Camera rig and bird's-eye-view grid geometry.

World frame: right-handed ground plane, X to the right of the ego
vehicle, Y forward, all cameras mounted at the ego origin at a common
height above the ground, pitched level. A camera's yaw is measured
counterclockwise from +Y, so yaw 0 looks straight ahead.

Camera frame: x right, y down, z forward (optical axis). Since cameras
sit level at height h, a ground point (x, y) maps to

    x_cam =  cos(yaw) * x + sin(yaw) * y
    z_cam = -sin(yaw) * x + cos(yaw) * y
    y_cam =  h

and to pixels via u = fx * x_cam / z_cam + cx, v = fy * y_cam / z_cam
+ cy. A projection is valid when z_cam > 0 and the pixel lies inside
the image. The level mount means rows at or above the principal row cy
never see ground: ground appears only for v > cy, out to a blind disc
of radius fy * h / (H - 1 - cy) around the ego.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

__all__ = [
    "CameraIntrinsics",
    "Camera",
    "CameraRig",
    "project_ground",
    "backcast_pixels",
    "BevGrid",
    "LiftGeometry",
    "build_lift_geometry",
    "pixel_to_feature_coords",
]

IMAGE_SIZE = 64
PATCH_SIZE = 8
FEAT_SIZE = IMAGE_SIZE // PATCH_SIZE  # 8x8 feature grid per view


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 45.0
    fy: float = 45.0
    cx: float = 31.5
    cy: float = 4.0
    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Camera:
    name: str
    yaw_deg: float
    height: float = 5.0
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)

    def to_dict(self):
        return {"name": self.name, "yaw_deg": self.yaw_deg,
                "height": self.height, "intrinsics": self.intrinsics.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(name=d["name"], yaw_deg=d["yaw_deg"], height=d["height"],
                   intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]))


class CameraRig:
    """An ordered ring of surround cameras.

    List order is ring order: camera i+1 (mod N) is the next camera
    counterclockwise, so ring adjacency equals list adjacency.
    """

    def __init__(self, cameras: list[Camera]):
        if len(cameras) < 2:
            raise ContractViolation("a rig needs at least two cameras")
        names = [c.name for c in cameras]
        if len(set(names)) != len(names):
            raise ContractViolation("camera names must be unique")
        self.cameras = list(cameras)

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.cameras]

    def neighbors(self, i: int) -> tuple[int, int]:
        """(counterclockwise, clockwise) ring neighbors of camera i."""
        n = len(self.cameras)
        return ((i + 1) % n, (i - 1) % n)

    def ring_distance(self, i: int, j: int) -> int:
        n = len(self.cameras)
        d = abs(i - j) % n
        return min(d, n - d)

    @classmethod
    def ring6(cls, height: float = 5.0,
              intrinsics: CameraIntrinsics | None = None) -> "CameraRig":
        intr = intrinsics or CameraIntrinsics()
        names = ["front", "front_left", "back_left",
                 "back", "back_right", "front_right"]
        return cls([Camera(name, 60.0 * k, height, intr)
                    for k, name in enumerate(names)])

    @classmethod
    def ring7(cls, height: float = 5.0,
              intrinsics: CameraIntrinsics | None = None) -> "CameraRig":
        intr = intrinsics or CameraIntrinsics()
        step = 360.0 / 7.0
        return cls([Camera(f"cam{k}", step * k, height, intr)
                    for k in range(7)])

    @classmethod
    def named(cls, name: str) -> "CameraRig":
        if name == "ring6":
            return cls.ring6()
        if name == "ring7":
            return cls.ring7()
        raise ContractViolation(f"unknown rig name {name!r}")

    def to_dict(self):
        return {"cameras": [c.to_dict() for c in self.cameras]}

    @classmethod
    def from_dict(cls, d):
        return cls([Camera.from_dict(c) for c in d["cameras"]])


def project_ground(cam: Camera, xy: np.ndarray):
    """Project ground points (M, 2) into a camera.

    Returns (uv, valid, depth): float pixel coordinates (M, 2), a bool
    validity mask (in front of the camera and inside the image), and
    z_cam depths. Pixel values are only meaningful where valid.
    """
    xy = np.asarray(xy, dtype=np.float64)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise ContractViolation(f"xy must be M x 2, got {xy.shape}")
    psi = math.radians(cam.yaw_deg)
    c, s = math.cos(psi), math.sin(psi)
    x, y = xy[:, 0], xy[:, 1]
    x_cam = c * x + s * y
    z_cam = -s * x + c * y
    intr = cam.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * x_cam / z_cam + intr.cx
        v = intr.fy * cam.height / z_cam + intr.cy
    valid = ((z_cam > 1e-9)
             & (u >= 0.0) & (u <= intr.width - 1.0)
             & (v >= 0.0) & (v <= intr.height - 1.0))
    uv = np.stack([u, v], axis=1)
    uv[~valid] = 0.0
    return uv, valid, z_cam


def backcast_pixels(cam: Camera, uv: np.ndarray):
    """Cast pixels (M, 2) onto the ground plane.

    Returns (xy, valid): world ground coordinates and a mask marking
    pixels that actually hit the ground (strictly below the horizon
    row cy).
    """
    uv = np.asarray(uv, dtype=np.float64)
    if uv.ndim != 2 or uv.shape[1] != 2:
        raise ContractViolation(f"uv must be M x 2, got {uv.shape}")
    intr = cam.intrinsics
    u, v = uv[:, 0], uv[:, 1]
    valid = v > intr.cy + 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        z_cam = intr.fy * cam.height / (v - intr.cy)
        x_cam = (u - intr.cx) / intr.fx * z_cam
    psi = math.radians(cam.yaw_deg)
    c, s = math.cos(psi), math.sin(psi)
    x = c * x_cam - s * z_cam
    y = s * x_cam + c * z_cam
    xy = np.stack([x, y], axis=1)
    xy[~valid] = 0.0
    return xy, valid


def pixel_to_feature_coords(uv: np.ndarray) -> np.ndarray:
    """Map pixel coordinates to patch-grid coordinates.

    Patch k of size 8 covers pixels [8k, 8k+7] with center 8k + 3.5;
    the continuous patch coordinate of pixel p is (p - 3.5) / 8.
    """
    return (np.asarray(uv, dtype=np.float64) - 3.5) / float(PATCH_SIZE)


@dataclass(frozen=True)
class BevGrid:
    """Regular bird's-eye-view grid over the perception box.

    Row 0 is the far forward edge (largest Y), rows increase toward the
    rear; column 0 is the left edge (smallest X). Cell (i, j) flattens
    to token index i * width + j.
    """

    height: int = 80
    width: int = 40
    x_min: float = -15.0
    x_max: float = 15.0
    y_min: float = -30.0
    y_max: float = 30.0

    @property
    def cell_size(self) -> float:
        return (self.x_max - self.x_min) / self.width

    @property
    def n_cells(self) -> int:
        return self.height * self.width

    def cell_centers(self) -> np.ndarray:
        """World (x, y) centers of all cells, flattened row-major, (H*W, 2)."""
        dx = (self.x_max - self.x_min) / self.width
        dy = (self.y_max - self.y_min) / self.height
        xs = self.x_min + dx * (np.arange(self.width) + 0.5)
        ys = self.y_max - dy * (np.arange(self.height) + 0.5)
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)

    def normalize_points(self, xy: np.ndarray) -> np.ndarray:
        """Map world (x, y) into [0, 1]^2 over the perception box."""
        xy = np.asarray(xy, dtype=np.float64)
        out = np.empty_like(xy)
        out[..., 0] = (xy[..., 0] - self.x_min) / (self.x_max - self.x_min)
        out[..., 1] = (xy[..., 1] - self.y_min) / (self.y_max - self.y_min)
        return out

    def denormalize_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        out = np.empty_like(pts)
        out[..., 0] = pts[..., 0] * (self.x_max - self.x_min) + self.x_min
        out[..., 1] = pts[..., 1] * (self.y_max - self.y_min) + self.y_min
        return out

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return ((xy[..., 0] >= self.x_min) & (xy[..., 0] <= self.x_max)
                & (xy[..., 1] >= self.y_min) & (xy[..., 1] <= self.y_max))

    def to_dict(self):
        return {"height": self.height, "width": self.width,
                "x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class LiftGeometry:
    """Precomputed cell-to-view sampling pattern for one rig and grid.

    For camera k, ``cell_idx[k]`` lists the flattened BEV cells whose
    centers project validly into that view and ``feat_pts[k]`` holds the
    matching continuous patch-grid sampling coordinates. ``vis_mask[k]``
    is the same information as a dense (n_cells,) bool plane. These are
    functions of rig and grid geometry only, so they are computed once
    and shared by every lift.
    """

    cell_idx: tuple[np.ndarray, ...]
    feat_pts: tuple[np.ndarray, ...]
    vis_mask: tuple[np.ndarray, ...]
    n_cells: int


def build_lift_geometry(rig: CameraRig, grid: BevGrid) -> LiftGeometry:
    centers = grid.cell_centers()
    cell_idx, feat_pts, vis_mask = [], [], []
    for cam in rig.cameras:
        uv, valid, _ = project_ground(cam, centers)
        idx = np.nonzero(valid)[0].astype(np.int64)
        # float64 sampling coordinates; grid_sample adopts the feature
        # dtype, so this costs training nothing and keeps tests exact
        pts = pixel_to_feature_coords(uv[idx])
        cell_idx.append(idx)
        feat_pts.append(pts)
        vis_mask.append(valid.copy())
    return LiftGeometry(tuple(cell_idx), tuple(feat_pts), tuple(vis_mask),
                        grid.n_cells)
