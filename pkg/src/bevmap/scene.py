"""Synthetic vectorized road scenes.

A scene is a small set of map elements, each a polyline with a class
label: lane dividers, road boundaries, and pedestrian crossings. Scenes
are generated procedurally from a seed: a road of 2 to 4 lanes passes
near the ego position with a random heading and a gentle sinusoidal
sway, boundaries run along its edges, dividers between lanes, and
optional crossings cut across it. Every element is clipped to the
perception box, the longest in-box piece is kept, short leftovers are
dropped, and survivors are resampled to a fixed number of points at
equal arclength spacing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .geometry import BevGrid
from .seeding import rng_for

__all__ = [
    "CLASS_NAMES", "BACKGROUND_ID", "N_CLASSES",
    "MapElement", "Scene", "GeneratorConfig",
    "polyline_length", "resample_polyline", "clip_polyline_to_box",
    "generate_scene",
]

CLASS_NAMES = ("crossing", "divider", "boundary")
BACKGROUND_ID = len(CLASS_NAMES)  # class id for unmatched predictions
N_CLASSES = len(CLASS_NAMES) + 1
MAX_ELEMENTS = 100


@dataclass(frozen=True)
class MapElement:
    cls_id: int
    points: np.ndarray  # (P, 2) world coordinates

    def __post_init__(self):
        if not 0 <= self.cls_id < len(CLASS_NAMES):
            raise ContractViolation(
                f"element class id {self.cls_id} out of range")
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ContractViolation(
                f"element points must be (P>=2, 2), got {pts.shape}")

    @property
    def cls_name(self) -> str:
        return CLASS_NAMES[self.cls_id]

    def to_dict(self):
        return {"class": self.cls_name,
                "points": [[float(x), float(y)] for x, y in self.points]}

    @classmethod
    def from_dict(cls, d):
        cid = CLASS_NAMES.index(d["class"])
        return cls(cid, np.asarray(d["points"], dtype=np.float64))


@dataclass
class Scene:
    elements: list[MapElement]

    def to_dict(self):
        return {"elements": [e.to_dict() for e in self.elements]}

    @classmethod
    def from_dict(cls, d):
        return cls([MapElement.from_dict(e) for e in d["elements"]])


@dataclass(frozen=True)
class GeneratorConfig:
    n_points: int = 20
    min_length: float = 2.0
    lane_count_choices: tuple[int, ...] = (2, 3, 4)
    lane_width_range: tuple[float, float] = (3.0, 4.0)
    sway_amplitude_range: tuple[float, float] = (0.0, 5.0)
    sway_wavelength_range: tuple[float, float] = (45.0, 90.0)
    center_offset_range: tuple[float, float] = (-5.0, 5.0)
    crossing_probability: float = 0.75
    max_crossings: int = 2
    road_extent: float = 48.0

    def to_dict(self):
        return {
            "n_points": self.n_points,
            "min_length": self.min_length,
            "lane_count_choices": list(self.lane_count_choices),
            "lane_width_range": list(self.lane_width_range),
            "sway_amplitude_range": list(self.sway_amplitude_range),
            "sway_wavelength_range": list(self.sway_wavelength_range),
            "center_offset_range": list(self.center_offset_range),
            "crossing_probability": self.crossing_probability,
            "max_crossings": self.max_crossings,
            "road_extent": self.road_extent,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_points=d["n_points"],
            min_length=d["min_length"],
            lane_count_choices=tuple(d["lane_count_choices"]),
            lane_width_range=tuple(d["lane_width_range"]),
            sway_amplitude_range=tuple(d["sway_amplitude_range"]),
            sway_wavelength_range=tuple(d["sway_wavelength_range"]),
            center_offset_range=tuple(d["center_offset_range"]),
            crossing_probability=d["crossing_probability"],
            max_crossings=d["max_crossings"],
            road_extent=d["road_extent"],
        )


def polyline_length(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Resample to n points at equal arclength spacing, endpoints kept."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        raise ContractViolation("resample needs at least two points")
    if n < 2:
        raise ContractViolation("resample target must be at least two points")
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] <= 0.0:
        raise ContractViolation("cannot resample a zero-length polyline")
    t = np.linspace(0.0, cum[-1], n)
    x = np.interp(t, cum, points[:, 0])
    y = np.interp(t, cum, points[:, 1])
    return np.stack([x, y], axis=1)


def _liang_barsky(a, b, grid: BevGrid):
    """Clip parameter interval of segment a->b against the box, or None."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for coord, lo, hi in ((0, grid.x_min, grid.x_max),
                          (1, grid.y_min, grid.y_max)):
        p, q0, q1 = d[coord], a[coord] - lo, hi - a[coord]
        if p == 0.0:
            if q0 < 0.0 or q1 < 0.0:
                return None
            continue
        r0, r1 = -q0 / p, q1 / p
        if p < 0.0:
            r0, r1 = r1, r0
        t0, t1 = max(t0, r0), min(t1, r1)
        if t0 > t1:
            return None
    return t0, t1


def clip_polyline_to_box(points: np.ndarray, grid: BevGrid) -> list[np.ndarray]:
    """Exact pieces of a polyline inside the perception box, in order."""
    points = np.asarray(points, dtype=np.float64)
    pieces: list[list[np.ndarray]] = []
    current: list[np.ndarray] = []
    for a, b in zip(points[:-1], points[1:]):
        hit = _liang_barsky(a, b, grid)
        if hit is None:
            if len(current) >= 2:
                pieces.append(current)
            current = []
            continue
        t0, t1 = hit
        pa = a + t0 * (b - a)
        pb = a + t1 * (b - a)
        if not current:
            current = [pa]
        current.append(pb)
        if t1 < 1.0 - 1e-12:
            if len(current) >= 2:
                pieces.append(current)
            current = []
    if len(current) >= 2:
        pieces.append(current)
    out = []
    for piece in pieces:
        arr = np.asarray(piece)
        if polyline_length(arr) > 1e-9:
            out.append(arr)
    return out


def _finalize(points: np.ndarray, grid: BevGrid,
              cfg: GeneratorConfig) -> np.ndarray | None:
    """Clip, keep the longest in-box piece, resample; None if too short."""
    pieces = clip_polyline_to_box(points, grid)
    if not pieces:
        return None
    best = max(pieces, key=polyline_length)
    if polyline_length(best) < cfg.min_length:
        return None
    return resample_polyline(best, cfg.n_points)


def _offset_curve(dense: np.ndarray, offset: float) -> np.ndarray:
    """Shift a dense polyline along its local left normal."""
    tangent = np.gradient(dense, axis=0)
    norm = np.linalg.norm(tangent, axis=1, keepdims=True)
    tangent = tangent / np.maximum(norm, 1e-12)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    return dense + offset * normal


def generate_scene(seed: int, index: int, grid: BevGrid | None = None,
                   cfg: GeneratorConfig | None = None) -> Scene:
    """Build the scene for sample ``index`` of a dataset seeded by ``seed``."""
    grid = grid or BevGrid()
    cfg = cfg or GeneratorConfig()
    rng = rng_for(seed, "scene", index)

    theta = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta)])
    normal = np.array([-direction[1], direction[0]])
    center_offset = rng.uniform(*cfg.center_offset_range)
    n_lanes = int(rng.choice(cfg.lane_count_choices))
    lane_w = rng.uniform(*cfg.lane_width_range)
    half_w = 0.5 * n_lanes * lane_w
    amp = rng.uniform(*cfg.sway_amplitude_range)
    wavelength = rng.uniform(*cfg.sway_wavelength_range)
    phase = rng.uniform(0.0, 2.0 * np.pi)

    t = np.arange(-cfg.road_extent, cfg.road_extent + 0.5, 1.0)
    sway = amp * np.sin(2.0 * np.pi * t / wavelength + phase)
    centerline = (direction[None, :] * t[:, None]
                  + normal[None, :] * (center_offset + sway)[:, None])

    elements: list[MapElement] = []

    def add(cls_id: int, raw: np.ndarray):
        pts = _finalize(raw, grid, cfg)
        if pts is not None:
            elements.append(MapElement(cls_id, pts))

    boundary_id = CLASS_NAMES.index("boundary")
    divider_id = CLASS_NAMES.index("divider")
    crossing_id = CLASS_NAMES.index("crossing")

    for side in (-half_w, half_w):
        add(boundary_id, _offset_curve(centerline, side))
    for k in range(1, n_lanes):
        add(divider_id, _offset_curve(centerline, -half_w + k * lane_w))

    if rng.uniform() < cfg.crossing_probability:
        n_cross = int(rng.integers(1, cfg.max_crossings + 1))
        positions = rng.uniform(-0.6 * cfg.road_extent, 0.6 * cfg.road_extent,
                                size=n_cross)
        tangent = np.gradient(centerline, axis=0)
        tangent = tangent / np.maximum(
            np.linalg.norm(tangent, axis=1, keepdims=True), 1e-12)
        local_normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
        for pos in positions:
            i = int(np.clip(np.searchsorted(t, pos), 0, len(t) - 1))
            span = np.linspace(-(half_w + 1.0), half_w + 1.0,
                               max(3, int(2 * half_w + 2)))
            raw = centerline[i][None, :] + span[:, None] * local_normal[i][None, :]
            add(crossing_id, raw)

    if len(elements) > MAX_ELEMENTS:
        raise ContractViolation(
            f"scene has {len(elements)} elements, limit is {MAX_ELEMENTS}")
    return Scene(elements)
