"""Geodesic foreground scribbles and random-walker seed construction.

Foreground scribbles are minimal-cost paths between the opposing extreme
points of each axis, computed over the 26-connected voxel grid where a
step accumulates its Euclidean length times the local gradient magnitude.
A small epsilon keeps zero-gradient regions from producing arbitrary
ties: there the shortest path is the Euclidean-shortest (straight) one.
Background seeds are the complement of a generous dilation of the
foreground scribbles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .points import POINT_LABELS, ExtremePoints
from .volume import Mask3, Volume3, dilate_ball, gradient_magnitude

UNMARKED, FG, BG = 0, 1, 2

# fixed neighbor ordering: lexicographic over the 13 "positive" offsets
_HALF_OFFSETS = [
    o for o in itertools.product((-1, 0, 1), repeat=3) if o > (0, 0, 0)
]


@dataclass(frozen=True, eq=False)
class Seeds:
    """Per-voxel ternary labeling feeding the random walker."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    labels: np.ndarray  # uint8, values in {UNMARKED, FG, BG}

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if labels.shape != tuple(self.dims):
            raise ValueError("seed labels shape does not match dims")
        if not np.all(labels <= BG):
            raise ValueError("seed labels must be in {0, 1, 2}")
        if not (labels == FG).any() or not (labels == BG).any():
            raise ValueError("seeds need at least one foreground and one background voxel")
        labels.flags.writeable = False
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "labels", labels)


def scaled_background_radius(crop_side: int) -> int:
    """Background dilation radius 30 at crop side 128, scaled proportionally."""
    return max(1, int(round(30.0 * crop_side / 128.0)))


def _path_epsilon(cost: np.ndarray) -> float:
    return 1e-3 * float(cost.mean()) + 1e-9


def _grid_graph(cost: np.ndarray) -> sparse.csr_matrix:
    """26-connected graph; edge weight = step length * (eps + mean node cost)."""
    dims = cost.shape
    n = cost.size
    eps = _path_epsilon(cost)
    idx = np.arange(n, dtype=np.int32).reshape(dims)
    rows, cols, data = [], [], []
    for off in _HALF_OFFSETS:
        src_sl = tuple(slice(0, d - o if o > 0 else d) if o >= 0 else slice(-o, d)
                       for o, d in zip(off, dims))
        dst_sl = tuple(slice(o, d) if o >= 0 else slice(0, d + o)
                       for o, d in zip(off, dims))
        a = idx[src_sl].ravel()
        b = idx[dst_sl].ravel()
        step = float(np.sqrt(sum(o * o for o in off)))
        w = step * (eps + 0.5 * (cost[src_sl].ravel() + cost[dst_sl].ravel()))
        rows.append(a)
        cols.append(b)
        data.append(w)
        rows.append(b)
        cols.append(a)
        data.append(w)
    g = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return g.tocsr()


def _check_voxel(p, dims) -> tuple[int, int, int]:
    p = tuple(int(c) for c in p)
    if any(c < 0 or c >= d for c, d in zip(p, dims)):
        raise ValueError(f"voxel {p} is outside the volume {dims}")
    return p


def geodesic_path(
    cost: Volume3, start: tuple[int, int, int], end: tuple[int, int, int]
) -> list[tuple[int, int, int]]:
    """Minimal-cost 26-connected path from start to end, inclusive."""
    dims = cost.dims
    start = _check_voxel(start, dims)
    end = _check_voxel(end, dims)
    if start == end:
        return [start]
    field = cost.data.astype(np.float64)
    graph = _grid_graph(field)
    s = int(np.ravel_multi_index(start, dims))
    t = int(np.ravel_multi_index(end, dims))
    _, pred = csgraph.dijkstra(
        graph, directed=True, indices=s, return_predecessors=True
    )
    if pred[t] < 0:
        raise ValueError("no path between the requested voxels")
    path = [t]
    while path[-1] != s:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return [tuple(int(c) for c in np.unravel_index(i, dims)) for i in path]


def path_cost(cost: Volume3, path: list[tuple[int, int, int]]) -> float:
    """Accumulated edge cost of a voxel path under the geodesic weighting."""
    field = cost.data.astype(np.float64)
    eps = _path_epsilon(field)
    total = 0.0
    for u, v in zip(path, path[1:]):
        step = np.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))
        total += step * (eps + 0.5 * (field[u] + field[v]))
    return float(total)


def foreground_scribbles(
    crop: Volume3, e: ExtremePoints, r_fg: int = 2
) -> Mask3:
    """Union of the three axis geodesics, dilated with a radius-r_fg ball."""
    dims = crop.dims
    cost = gradient_magnitude(crop)
    mask = np.zeros(dims, dtype=np.uint8)
    pts = {
        label: _round_point(getattr(e, label), dims) for label in POINT_LABELS
    }
    for axis_name in ("x", "y", "z"):
        path = geodesic_path(cost, pts[f"{axis_name}_min"], pts[f"{axis_name}_max"])
        for vox in path:
            mask[vox] = 1
    scrib = Mask3(dims, crop.spacing, mask)
    return dilate_ball(scrib, r_fg)


def _round_point(p, dims) -> tuple[int, int, int]:
    return tuple(
        int(min(max(round(c), 0), d - 1)) for c, d in zip(p, dims)
    )


def background_seeds(fg: Mask3, r_bg: int) -> Mask3:
    """Complement of the r_bg-dilated foreground scribbles."""
    if not fg.as_bool().any():
        raise ValueError("foreground scribbles are empty")
    grown = dilate_ball(fg, r_bg)
    bg = (~grown.as_bool()).astype(np.uint8)
    if bg.sum() == 0:
        raise ValueError(
            f"background is empty: dilation radius {r_bg} swallowed the crop"
        )
    return Mask3(fg.dims, fg.spacing, bg)


def build_seeds(fg: Mask3, bg: Mask3) -> Seeds:
    """Combine disjoint nonempty foreground and background masks into Seeds."""
    if fg.dims != bg.dims:
        raise ValueError("foreground and background dims differ")
    f = fg.as_bool()
    b = bg.as_bool()
    if (f & b).any():
        raise ValueError("foreground and background seeds overlap")
    if not f.any() or not b.any():
        raise ValueError("both seed classes must be nonempty")
    labels = np.zeros(fg.dims, dtype=np.uint8)
    labels[f] = FG
    labels[b] = BG
    return Seeds(fg.dims, fg.spacing, labels)
