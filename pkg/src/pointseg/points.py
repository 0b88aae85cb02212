"""Extreme-point handling: simulation from masks, click jitter, bounding
boxes with physical padding, crop/resize transforms, the Gaussian point
channel, and mapping crop-space results back to the full volume.

Point coordinates live in voxel space and may be fractional (clicks and
jitter land between voxel centers).  Six labels are fixed: the min and
max surface point along each axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import Mask3, ProbMap3, Volume3, resample_array_trilinear

POINT_LABELS = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")

Point = tuple[float, float, float]


@dataclass(frozen=True)
class ExtremePoints:
    """The six clicked surface points, two per axis."""

    x_min: Point
    x_max: Point
    y_min: Point
    y_max: Point
    z_min: Point
    z_max: Point

    def __post_init__(self):
        for label in POINT_LABELS:
            p = tuple(float(c) for c in getattr(self, label))
            if len(p) != 3:
                raise ValueError(f"{label} must be a 3-tuple")
            object.__setattr__(self, label, p)
        for axis, (lo, hi) in enumerate(
            (("x_min", "x_max"), ("y_min", "y_max"), ("z_min", "z_max"))
        ):
            if getattr(self, lo)[axis] > getattr(self, hi)[axis]:
                raise ValueError(
                    f"{lo} must not exceed {hi} along axis {axis}"
                )

    def as_array(self) -> np.ndarray:
        """(6, 3) array in POINT_LABELS order."""
        return np.array([getattr(self, l) for l in POINT_LABELS], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "ExtremePoints":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (6, 3):
            raise ValueError("expected a (6, 3) point array")
        return cls(*(tuple(row) for row in arr))

    def validate_in_bounds(self, dims: tuple[int, int, int]) -> None:
        arr = self.as_array()
        if np.any(arr < 0) or np.any(arr > np.asarray(dims) - 1):
            raise ValueError(f"points must lie inside the volume bounds {dims}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "points": {l: list(getattr(self, l)) for l in POINT_LABELS},
                "space": "voxel",
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ExtremePoints":
        doc = json.loads(text)
        pts = doc["points"]
        return cls(**{l: tuple(pts[l]) for l in POINT_LABELS})


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned voxel box, lo inclusive, hi exclusive."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if any(l >= h for l, h in zip(lo, hi)):
            raise ValueError(f"bounding box is empty: lo={lo} hi={hi}")
        if any(l < 0 for l in lo) or any(h > d for h, d in zip(hi, self.dims)):
            raise ValueError(f"bounding box {lo}-{hi} exceeds volume {self.dims}")

    @property
    def extent(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))


@dataclass(frozen=True)
class CropTransform:
    """Invertible record of a crop + corner-aligned resize."""

    bbox: BoundingBox
    crop_dims: tuple[int, int, int]

    def _scale(self, axis: int) -> float:
        # crop index per source voxel
        return (self.crop_dims[axis] - 1) / (self.bbox.extent[axis] - 1)

    def forward(self, points: np.ndarray) -> np.ndarray:
        """Full-volume voxel coords (N, 3) -> crop voxel coords."""
        points = np.asarray(points, dtype=np.float64)
        out = np.empty_like(points)
        for a in range(3):
            out[..., a] = (points[..., a] - self.bbox.lo[a]) * self._scale(a)
        return out

    def inverse(self, points: np.ndarray) -> np.ndarray:
        """Crop voxel coords (N, 3) -> full-volume voxel coords."""
        points = np.asarray(points, dtype=np.float64)
        out = np.empty_like(points)
        for a in range(3):
            out[..., a] = self.bbox.lo[a] + points[..., a] / self._scale(a)
        return out

    def forward_points(self, e: ExtremePoints) -> ExtremePoints:
        return ExtremePoints.from_array(self.forward(e.as_array()))


@dataclass(frozen=True)
class PointChannel:
    """Gaussian bumps centered on the six points, in crop space."""

    map: ProbMap3
    sigma_voxels: float


def extract_extreme_points(gt: Mask3) -> ExtremePoints:
    """Simulate the six clicks from a ground-truth mask.

    For each axis the foreground voxel attaining the min (resp. max)
    coordinate; ties broken by the smallest remaining coordinates in
    (x, y, z) lexicographic order.
    """
    idx = np.argwhere(gt.as_bool())  # sorted lexicographically by (x, y, z)
    if idx.size == 0:
        raise ValueError("cannot extract extreme points from an empty mask")
    pts = {}
    for axis, name in enumerate(("x", "y", "z")):
        col = idx[:, axis]
        cand_min = idx[col == col.min()]
        cand_max = idx[col == col.max()]
        # rows are already sorted by (x, y, z), which for a fixed value on
        # `axis` orders by the remaining coordinates in (x, y, z) order
        pts[f"{name}_min"] = tuple(float(c) for c in cand_min[0])
        pts[f"{name}_max"] = tuple(float(c) for c in cand_max[0])
    return ExtremePoints(**pts)


def jitter_points(
    e: ExtremePoints,
    sigma: float,
    seed: int,
    dims: tuple[int, int, int],
) -> ExtremePoints:
    """Simulate click noise: i.i.d. Gaussian offsets per coordinate.

    Offsets are clamped to the volume bounds; if jitter flips a min/max
    pair, the two points are swapped to restore the ordering invariant.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    arr = e.as_array() + rng.normal(0.0, sigma, size=(6, 3))
    hi = np.asarray(dims, dtype=np.float64) - 1
    arr = np.clip(arr, 0.0, hi)
    for axis in range(3):
        lo_i, hi_i = 2 * axis, 2 * axis + 1
        if arr[lo_i, axis] > arr[hi_i, axis]:
            arr[[lo_i, hi_i]] = arr[[hi_i, lo_i]]
    return ExtremePoints.from_array(arr)


def compute_bbox(
    e: ExtremePoints,
    spacing: tuple[float, float, float],
    dims: tuple[int, int, int],
    p_mm: float,
) -> BoundingBox:
    """Componentwise point extent expanded by ceil(p/spacing) voxels per side."""
    if p_mm < 0:
        raise ValueError("padding must be >= 0")
    arr = e.as_array()
    lo, hi = [], []
    for a in range(3):
        pad = math.ceil(p_mm / spacing[a])
        lo.append(max(0, int(math.floor(arr[:, a].min())) - pad))
        hi.append(min(dims[a], int(math.ceil(arr[:, a].max())) + pad + 1))
    return BoundingBox(tuple(lo), tuple(hi), tuple(dims), tuple(spacing))


def crop_resize(v: Volume3, bbox: BoundingBox, side: int) -> tuple[Volume3, CropTransform]:
    """Crop to the box and resample to side^3 (corner-aligned trilinear)."""
    if bbox.dims != v.dims:
        raise ValueError("bounding box was computed for a different volume")
    if any(ext < 2 for ext in bbox.extent):
        raise ValueError("bounding box extent must be >= 2 voxels per axis")
    if side < 2:
        raise ValueError("crop side must be >= 2")
    sub = v.data[
        bbox.lo[0] : bbox.hi[0], bbox.lo[1] : bbox.hi[1], bbox.lo[2] : bbox.hi[2]
    ]
    out = resample_array_trilinear(sub, (side, side, side))
    spacing = tuple(
        v.spacing[a] * (bbox.extent[a] - 1) / (side - 1) for a in range(3)
    )
    crop = Volume3((side, side, side), spacing, out)
    return crop, CropTransform(bbox, (side, side, side))


def point_channel(
    e_crop: ExtremePoints, dims: tuple[int, int, int], sigma: float
) -> PointChannel:
    """Voxelwise max of six unnormalized Gaussians exp(-|x-e|^2 / 2 sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    grids = np.indices(dims, dtype=np.float64)
    min_d2 = np.full(dims, np.inf)
    for p in e_crop.as_array():
        d2 = sum((grids[a] - p[a]) ** 2 for a in range(3))
        np.minimum(min_d2, d2, out=min_d2)
    g = np.exp(-min_d2 / (2.0 * sigma * sigma))
    prob = ProbMap3(dims, (1.0, 1.0, 1.0), g.astype(np.float32))
    return PointChannel(prob, float(sigma))


def map_back(
    p: ProbMap3, t: CropTransform, full_dims: tuple[int, int, int]
) -> ProbMap3:
    """Resample a crop-space map into a zero-initialized full-size map."""
    if tuple(p.dims) != tuple(t.crop_dims):
        raise ValueError(
            f"map dims {p.dims} do not match crop dims {t.crop_dims}"
        )
    full_dims = tuple(int(d) for d in full_dims)
    out = np.zeros(full_dims, dtype=np.float64)
    # crop coordinates of every voxel inside the bbox
    axes = [
        np.arange(t.bbox.extent[a], dtype=np.float64) * t._scale(a)
        for a in range(3)
    ]
    cx, cy, cz = np.meshgrid(*axes, indexing="ij")
    sampled = ndimage.map_coordinates(
        p.data.astype(np.float64), np.stack([cx, cy, cz]), order=1, mode="nearest"
    )
    out[
        t.bbox.lo[0] : t.bbox.hi[0],
        t.bbox.lo[1] : t.bbox.hi[1],
        t.bbox.lo[2] : t.bbox.hi[2],
    ] = np.clip(sampled, 0.0, 1.0)
    return ProbMap3(full_dims, t.bbox.spacing, out.astype(np.float32))
