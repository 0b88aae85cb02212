"""Seeded random-walker segmentation on the 6-connected voxel graph.

Adjacent voxels are linked with weights w = exp(-beta (z_j - z_i)^2) over
intensities normalized to [0, 1], so diffusion is easy between similar
voxels.  Splitting the graph Laplacian into marked/unmarked blocks turns
the seeded labeling into one sparse SPD solve per class: the unmarked
block times the unknown probabilities equals the weight mass flowing in
from foreground-marked neighbors.  The system is solved with Jacobi
preconditioned conjugate gradients.

Unmarked regions that touch no marked voxel anywhere leave their rows
singular; they are detected up front and assigned probability 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse

from .scribbles import BG, FG, Seeds
from .volume import ProbMap3, Volume3

_WEIGHT_FLOOR = 1e-300
_SIX_CONN = ndimage.generate_binary_structure(3, 1)


class SolverConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"conjugate gradient failed to converge after {iterations} "
            f"iterations (relative residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class RwConfig:
    beta: float = 130.0
    cg_tolerance: float = 1e-6
    cg_max_iters: int | None = None  # None: 10*sqrt(n_unmarked) + 1000
    normalize_intensities: bool = True

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if not (0.0 < self.cg_tolerance < 1.0):
            raise ValueError("cg_tolerance must lie in (0, 1)")
        if self.cg_max_iters is not None and self.cg_max_iters < 1:
            raise ValueError("cg_max_iters must be >= 1")

    def max_iters_for(self, n_unmarked: int) -> int:
        if self.cg_max_iters is not None:
            return self.cg_max_iters
        return int(10 * math.sqrt(max(n_unmarked, 1))) + 1000


@dataclass(frozen=True, eq=False)
class EdgeWeights:
    """Per-axis weights for the 6-connected grid; wx[i] links (i,.,.) to (i+1,.,.)."""

    dims: tuple[int, int, int]
    wx: np.ndarray
    wy: np.ndarray
    wz: np.ndarray

    def along(self, axis: int) -> np.ndarray:
        return (self.wx, self.wy, self.wz)[axis]


@dataclass(frozen=True, eq=False)
class RwSystem:
    """The unmarked-block linear system L_U x = -B^T m.

    ``matrix`` covers every unmarked voxel in C-order; rows belonging to
    components with no marked contact (``isolated``) are singular and are
    skipped by the solver.
    """

    dims: tuple[int, int, int]
    unmarked_flat: np.ndarray  # flat indices (C-order) of unmarked voxels
    matrix: sparse.csr_matrix
    rhs_fg: np.ndarray
    rhs_bg: np.ndarray
    isolated: np.ndarray  # bool, per unmarked voxel
    fully_marked: bool

    @property
    def n_unmarked(self) -> int:
        return int(self.unmarked_flat.size)


def edge_weights(crop: Volume3, cfg: RwConfig) -> EdgeWeights:
    """Intensity edge weights w = exp(-beta (z_j - z_i)^2) on 6-connected edges."""
    z = crop.data.astype(np.float64)
    if cfg.normalize_intensities:
        lo, hi = float(z.min()), float(z.max())
        if hi > lo:
            z = (z - lo) / (hi - lo)
        else:
            z = np.full_like(z, 0.5)
    ws = []
    for axis in range(3):
        d = np.diff(z, axis=axis)
        ws.append(np.maximum(np.exp(-cfg.beta * d * d), _WEIGHT_FLOOR))
    return EdgeWeights(crop.dims, *ws)


def _axis_edges(dims, axis):
    """Flat C-order endpoint indices of all grid edges along one axis."""
    idx = np.arange(int(np.prod(dims)), dtype=np.int64).reshape(dims)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    src[axis] = slice(0, dims[axis] - 1)
    dst[axis] = slice(1, dims[axis])
    return idx[tuple(src)].ravel(), idx[tuple(dst)].ravel()


def assemble_system(weights: EdgeWeights, seeds: Seeds) -> RwSystem:
    """Build L_U and the per-class right-hand sides from seeds and weights."""
    dims = weights.dims
    if tuple(seeds.dims) != tuple(dims):
        raise ValueError("seed dims do not match weight dims")
    labels = seeds.labels
    n = labels.size
    unmarked = labels == 0
    unmarked_flat = np.flatnonzero(unmarked.ravel())
    n_u = unmarked_flat.size

    if n_u == 0:
        empty = np.zeros(0)
        return RwSystem(
            dims,
            unmarked_flat,
            sparse.csr_matrix((0, 0)),
            empty,
            empty.copy(),
            np.zeros(0, dtype=bool),
            fully_marked=True,
        )

    pos = np.full(n, -1, dtype=np.int64)
    pos[unmarked_flat] = np.arange(n_u)
    flat_labels = labels.ravel()

    deg = np.zeros(n)
    rhs_fg = np.zeros(n_u)
    rhs_bg = np.zeros(n_u)
    rows, cols, vals = [], [], []
    for axis in range(3):
        a, b = _axis_edges(dims, axis)
        w = weights.along(axis).ravel()
        np.add.at(deg, a, w)
        np.add.at(deg, b, w)
        for u, v in ((a, b), (b, a)):
            u_un = flat_labels[u] == 0
            both = u_un & (flat_labels[v] == 0)
            rows.append(pos[u[both]])
            cols.append(pos[v[both]])
            vals.append(-w[both])
            for cls, rhs in ((FG, rhs_fg), (BG, rhs_bg)):
                sel = u_un & (flat_labels[v] == cls)
                np.add.at(rhs, pos[u[sel]], w[sel])

    diag_idx = np.arange(n_u)
    rows.append(diag_idx)
    cols.append(diag_idx)
    vals.append(deg[unmarked_flat])
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_u, n_u),
    ).tocsr()

    # components of the unmarked region with no marked neighbor anywhere
    comp, n_comp = ndimage.label(unmarked, structure=_SIX_CONN)
    marked_adjacent = ndimage.binary_dilation(~unmarked, structure=_SIX_CONN)
    touching = np.unique(comp[unmarked & marked_adjacent])
    reachable = np.zeros(n_comp + 1, dtype=bool)
    reachable[touching] = True
    isolated = ~reachable[comp.ravel()[unmarked_flat]]

    return RwSystem(dims, unmarked_flat, matrix, rhs_fg, rhs_bg, isolated, False)


def _pcg_jacobi(A, b, tol, max_iters):
    """Jacobi-preconditioned CG to relative residual ||r|| <= tol ||b||."""
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b)
    d = A.diagonal()
    x = np.zeros_like(b)
    r = b.copy()
    z = r / d
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iters + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r))
        if res <= tol * b_norm:
            return x
        z = r / d
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverConvergenceError(max_iters, res / b_norm)


def solve_rw(sys: RwSystem, cfg: RwConfig, rhs: np.ndarray | None = None) -> np.ndarray:
    """Solve for per-unmarked-voxel probabilities (foreground by default).

    Components without marked contact receive 0.5; everything is clamped
    to [0, 1] on the way out.
    """
    if sys.fully_marked:
        return np.zeros(0)
    b = sys.rhs_fg if rhs is None else np.asarray(rhs, dtype=np.float64)
    if b.shape != (sys.n_unmarked,):
        raise ValueError("rhs length does not match the unmarked voxel count")
    out = np.full(sys.n_unmarked, 0.5)
    active = ~sys.isolated
    if active.any():
        A = sys.matrix[active][:, active]
        x = _pcg_jacobi(
            A,
            b[active],
            cfg.cg_tolerance,
            cfg.max_iters_for(int(active.sum())),
        )
        out[active] = np.clip(x, 0.0, 1.0)
    return out


def random_walker_segment(crop: Volume3, seeds: Seeds, cfg: RwConfig | None = None) -> ProbMap3:
    """End-to-end seeded random walker: crop + seeds -> probability map.

    Marked voxels come out exactly 1 (foreground) or 0 (background).
    """
    cfg = cfg or RwConfig()
    if tuple(crop.dims) != tuple(seeds.dims):
        raise ValueError("crop and seed dims differ")
    weights = edge_weights(crop, cfg)
    system = assemble_system(weights, seeds)
    flat = np.zeros(crop.voxel_count)
    flat[(seeds.labels == FG).ravel()] = 1.0
    if not system.fully_marked:
        flat[system.unmarked_flat] = solve_rw(system, cfg)
    return ProbMap3(crop.dims, crop.spacing, flat.reshape(crop.dims).astype(np.float32))
