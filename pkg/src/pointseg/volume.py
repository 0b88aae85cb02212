"""Dense 3D scalar/mask containers, `.vvol` file IO, and grid operations.

A volume is a triple (dims, spacing, data): voxel counts per axis,
physical voxel size in mm, and the scalar field itself.  Arrays are
indexed ``[x, y, z]`` and serialized x-fastest (x varies quickest in the
raw payload).  All containers are immutable after construction and safe
to share across threads; every operation here is a pure function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage


class VolumeFormatError(ValueError):
    """Raised when a `.vvol` pair is missing, inconsistent, or out of contract."""


def _as_int3(t) -> tuple[int, int, int]:
    a, b, c = t
    return (int(a), int(b), int(c))


def _as_float3(t) -> tuple[float, float, float]:
    a, b, c = t
    return (float(a), float(b), float(c))


@dataclass(frozen=True, eq=False)
class Volume3:
    """Dense 3D scalar field with physical spacing.

    ``data`` has shape ``dims`` and dtype float32; values must be finite.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray

    _DTYPE = np.float32

    def __post_init__(self):
        dims = _as_int3(self.dims)
        spacing = _as_float3(self.spacing)
        if any(n < 1 for n in dims):
            raise ValueError(f"dims must be >= 1 per axis, got {dims}")
        if any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be > 0 per axis, got {spacing}")
        data = np.ascontiguousarray(self.data, dtype=self._DTYPE)
        if data.shape != dims:
            raise ValueError(f"data shape {data.shape} does not match dims {dims}")
        self._check_values(data)
        data.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", data)

    def _check_values(self, data: np.ndarray) -> None:
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data contains non-finite values")

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


@dataclass(frozen=True, eq=False)
class Mask3(Volume3):
    """Binary volume; values are strictly 0 or 1 (uint8)."""

    _DTYPE = np.uint8

    def _check_values(self, data: np.ndarray) -> None:
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("mask data must contain only values in {0, 1}")

    def as_bool(self) -> np.ndarray:
        return self.data.astype(bool)


@dataclass(frozen=True, eq=False)
class ProbMap3(Volume3):
    """Per-voxel probability field; values in [0, 1]."""

    def _check_values(self, data: np.ndarray) -> None:
        super()._check_values(data)
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("probability data must lie in [0, 1]")

    def hardened(self) -> Mask3:
        """Threshold at 0.5 into a binary mask."""
        return Mask3(self.dims, self.spacing, (self.data >= 0.5).astype(np.uint8))


# ---------------------------------------------------------------------------
# `.vvol` file format: <base>.json header + <base>.raw little-endian payload
# ---------------------------------------------------------------------------

_DTYPE_TAGS = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _vvol_base(path: str | Path) -> Path:
    p = Path(path)
    if p.suffix == ".vvol":
        return p.with_suffix("")
    return p


def save_volume(v: Volume3, path: str | Path) -> None:
    """Write ``v`` as a `.vvol` pair (JSON header + raw payload, x-fastest)."""
    base = _vvol_base(path)
    if isinstance(v, Mask3):
        tag, dtype = "u8", _DTYPE_TAGS["u8"]
    else:
        tag, dtype = "f32", _DTYPE_TAGS["f32"]
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing),
        "dtype": tag,
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".json").write_text(json.dumps(header) + "\n")
    payload = np.asarray(v.data, dtype=dtype).tobytes(order="F")
    base.with_suffix(".raw").write_bytes(payload)


def _load_raw(path: str | Path) -> tuple[dict, np.ndarray]:
    base = _vvol_base(path)
    header_path = base.with_suffix(".json")
    raw_path = base.with_suffix(".raw")
    if not header_path.exists() or not raw_path.exists():
        raise VolumeFormatError(f"missing .vvol pair for {base}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise VolumeFormatError(f"invalid header {header_path}: {e}") from e
    for key in ("dims", "spacing_mm", "dtype"):
        if key not in header:
            raise VolumeFormatError(f"header {header_path} missing '{key}'")
    if header["dtype"] not in _DTYPE_TAGS:
        raise VolumeFormatError(f"unknown dtype tag {header['dtype']!r}")
    dims = _as_int3(header["dims"])
    dtype = _DTYPE_TAGS[header["dtype"]]
    payload = raw_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            f"payload size {len(payload)} bytes does not match header "
            f"dims {dims} ({expected} bytes expected)"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    return header, data


def load_volume(path: str | Path) -> Volume3 | Mask3:
    """Load a `.vvol` pair; returns Mask3 for u8 payloads, Volume3 for f32."""
    header, data = _load_raw(path)
    spacing = _as_float3(header["spacing_mm"])
    dims = _as_int3(header["dims"])
    try:
        if header["dtype"] == "u8":
            return Mask3(dims, spacing, data)
        return Volume3(dims, spacing, data)
    except ValueError as e:
        raise VolumeFormatError(str(e)) from e


def load_prob_map(path: str | Path) -> ProbMap3:
    """Load an f32 `.vvol` pair and validate it as a probability map."""
    header, data = _load_raw(path)
    if header["dtype"] != "f32":
        raise VolumeFormatError("probability maps must use dtype f32")
    try:
        return ProbMap3(_as_int3(header["dims"]), _as_float3(header["spacing_mm"]), data)
    except ValueError as e:
        raise VolumeFormatError(str(e)) from e


# ---------------------------------------------------------------------------
# Grid operations
# ---------------------------------------------------------------------------


def gradient_magnitude(v: Volume3) -> Volume3:
    """Per-voxel gradient magnitude in intensity-per-voxel units.

    Central differences in the interior, one-sided at the faces.  Spacing
    is deliberately not applied: downstream geodesics operate on the
    resampled isotropic crop.
    """
    if any(n < 2 for n in v.dims):
        raise ValueError("gradient_magnitude needs dims >= 2 along every axis")
    f = v.data.astype(np.float64)
    gx = np.gradient(f, axis=0, edge_order=1)
    gy = np.gradient(f, axis=1, edge_order=1)
    gz = np.gradient(f, axis=2, edge_order=1)
    mag = np.sqrt(gx * gx + gy * gy + gz * gz)
    return Volume3(v.dims, v.spacing, mag)


def _corner_aligned_coords(n_src: int, n_tgt: int) -> np.ndarray:
    # target index t maps to source coordinate t * (n_src-1)/(n_tgt-1)
    return np.arange(n_tgt, dtype=np.float64) * ((n_src - 1) / (n_tgt - 1))


def resample_array_trilinear(data: np.ndarray, target_dims: tuple[int, int, int]) -> np.ndarray:
    """Corner-aligned trilinear resample of a 3D array (float64 output)."""
    src_dims = data.shape
    if any(n < 2 for n in src_dims) or any(n < 2 for n in target_dims):
        raise ValueError("resample needs dims >= 2 per axis on both sides")
    axes = [_corner_aligned_coords(src_dims[a], target_dims[a]) for a in range(3)]
    cx, cy, cz = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([cx, cy, cz])
    return ndimage.map_coordinates(
        data.astype(np.float64), coords, order=1, mode="nearest"
    )


def resample_trilinear(v: Volume3, target_dims: tuple[int, int, int]) -> Volume3:
    """Resample to ``target_dims`` preserving the physical extent.

    Mapping is corner-aligned: voxel (0,0,0) and the far corner map onto
    their counterparts exactly, so an identity resample is exact.
    """
    target_dims = _as_int3(target_dims)
    out = resample_array_trilinear(v.data, target_dims)
    spacing = tuple(
        v.spacing[a] * (v.dims[a] - 1) / (target_dims[a] - 1) for a in range(3)
    )
    return Volume3(target_dims, spacing, out)


def _check_radius(r) -> int:
    if r < 0 or r != int(r):
        raise ValueError(f"radius must be a nonnegative integer, got {r}")
    return int(r)


def _nearest_feature_sq_dist(feature_is_zero: np.ndarray) -> np.ndarray:
    """Integer squared Euclidean distance to the nearest zero voxel."""
    ind = ndimage.distance_transform_edt(
        feature_is_zero, return_distances=False, return_indices=True
    )
    grids = np.indices(feature_is_zero.shape)
    d2 = np.zeros(feature_is_zero.shape, dtype=np.int64)
    for a in range(3):
        diff = grids[a].astype(np.int64) - ind[a].astype(np.int64)
        d2 += diff * diff
    return d2


def dilate_ball(m: Mask3, r: int) -> Mask3:
    """Exact Euclidean ball dilation.

    Output voxel is 1 iff some input voxel is within squared distance
    r*r; computed by thresholding the squared distance transform, so the
    structuring element is a true discrete ball.
    """
    r = _check_radius(r)
    fg = m.as_bool()
    if r == 0 or not fg.any():
        return Mask3(m.dims, m.spacing, m.data)
    d2 = _nearest_feature_sq_dist(~fg)
    return Mask3(m.dims, m.spacing, (d2 <= r * r).astype(np.uint8))


def erode_ball(m: Mask3, r: int) -> Mask3:
    """Exact Euclidean ball erosion; outside the volume counts as background."""
    r = _check_radius(r)
    fg = m.as_bool()
    if r == 0 or not fg.any():
        return Mask3(m.dims, m.spacing, m.data)
    padded = np.pad(fg, 1)
    d2 = _nearest_feature_sq_dist(padded)
    keep = (d2 > r * r)[1:-1, 1:-1, 1:-1] & fg
    return Mask3(m.dims, m.spacing, keep.astype(np.uint8))


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_array_gaussian(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian on a raw array, kernel truncated at 3 sigma."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    k = _gaussian_kernel(sigma)
    out = data.astype(np.float64)
    for axis in range(3):
        out = ndimage.correlate1d(out, k, axis=axis, mode="nearest")
    return out


def gaussian_smooth(v: Volume3, sigma: float) -> Volume3:
    """Separable Gaussian smoothing; constant fields are fixed points."""
    return Volume3(v.dims, v.spacing, smooth_array_gaussian(v.data, sigma))
