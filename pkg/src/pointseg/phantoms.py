"""Synthetic 3D test volumes with exact analytic ground truth.

Two shapes: an ellipsoid and a "bean" (ellipsoid minus a translated
ellipsoid), the latter concave to stress boundary-following code the way
curved organs do.  Everything is a pure function of the spec, including
the noise, so outputs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volume import Mask3, Volume3


@dataclass(frozen=True)
class PhantomSpec:
    shape: str = "ellipsoid"  # "ellipsoid" | "bean"
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    semi_axes_mm: tuple[float, float, float] = (20.0, 16.0, 12.0)
    center_mm: tuple[float, float, float] | None = None  # None -> volume center
    fg_intensity: float = 1.0
    bg_intensity: float = 0.0
    noise_sigma: float = 0.1
    texture_amplitude: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.shape not in ("ellipsoid", "bean"):
            raise ValueError(f"unknown phantom shape {self.shape!r}")
        if any(a <= 0 for a in self.semi_axes_mm):
            raise ValueError("semi axes must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def resolved_center(self) -> tuple[float, float, float]:
        if self.center_mm is not None:
            return tuple(float(c) for c in self.center_mm)
        return tuple(0.5 * (n - 1) * s for n, s in zip(self.dims, self.spacing))


# Fixed frequency triples (cycles over the volume extent) for the texture term.
_TEXTURE_FREQS = ((2.0, 3.0, 1.0), (3.0, 1.0, 2.0), (1.0, 2.0, 3.0))

# Cut ellipsoid placement for the bean, relative to center and semi axes.
_BEAN_CUT_OFFSET = (0.0, 0.9, 0.0)
_BEAN_CUT_SCALE = (0.55, 0.75, 0.55)


def _ellipsoid_mask(coords, center, semi_axes) -> np.ndarray:
    q = sum(((coords[a] - center[a]) / semi_axes[a]) ** 2 for a in range(3))
    return q <= 1.0


def generate_phantom(spec: PhantomSpec) -> tuple[Volume3, Mask3]:
    """Build (image, ground-truth mask) from an analytic implicit shape.

    The mask is 1 exactly where the implicit function is inside at the
    voxel center.  The image is bg + (fg-bg)*mask, plus seeded Gaussian
    noise and an optional low-frequency cosine texture.
    """
    dims, spacing = spec.dims, spec.spacing
    center = spec.resolved_center()
    axes = spec.semi_axes_mm

    for a in range(3):
        lo = center[a] - axes[a]
        hi = center[a] + axes[a]
        if lo < 2.0 * spacing[a] or hi > (dims[a] - 3) * spacing[a]:
            raise ValueError(
                f"shape does not fit inside the volume with a 2-voxel margin "
                f"(axis {a}: extent [{lo:.1f}, {hi:.1f}] mm)"
            )

    grids = np.indices(dims, dtype=np.float64)
    coords = [grids[a] * spacing[a] for a in range(3)]

    mask = _ellipsoid_mask(coords, center, axes)
    if spec.shape == "bean":
        cut_center = tuple(
            center[a] + _BEAN_CUT_OFFSET[a] * axes[a] for a in range(3)
        )
        cut_axes = tuple(_BEAN_CUT_SCALE[a] * axes[a] for a in range(3))
        mask &= ~_ellipsoid_mask(coords, cut_center, cut_axes)

    img = spec.bg_intensity + (spec.fg_intensity - spec.bg_intensity) * mask

    if spec.texture_amplitude != 0.0:
        extent = [max((dims[a] - 1) * spacing[a], 1e-9) for a in range(3)]
        tex = np.zeros(dims, dtype=np.float64)
        for fx, fy, fz in _TEXTURE_FREQS:
            tex += (
                np.cos(2 * np.pi * fx * coords[0] / extent[0])
                * np.cos(2 * np.pi * fy * coords[1] / extent[1])
                * np.cos(2 * np.pi * fz * coords[2] / extent[2])
            )
        img = img + spec.texture_amplitude * tex

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        img = img + rng.normal(0.0, spec.noise_sigma, size=dims)

    return (
        Volume3(dims, spacing, img.astype(np.float32)),
        Mask3(dims, spacing, mask.astype(np.uint8)),
    )
