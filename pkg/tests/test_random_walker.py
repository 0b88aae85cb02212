from __future__ import annotations

import numpy as np
import pytest
from scipy import sparse

from pointseg.random_walker import (
    RwConfig,
    RwSystem,
    SolverConvergenceError,
    assemble_system,
    edge_weights,
    random_walker_segment,
    solve_rw,
)
from pointseg.scribbles import BG, FG, Seeds
from pointseg.volume import Volume3


def make_volume(arr, spacing=(1.0, 1.0, 1.0)) -> Volume3:
    arr = np.asarray(arr, dtype=np.float32)
    return Volume3(arr.shape, spacing, arr)


def make_seeds(labels) -> Seeds:
    labels = np.asarray(labels, dtype=np.uint8)
    return Seeds(labels.shape, (1.0, 1.0, 1.0), labels)


# ---------------------------------------------------------------------------
# Dense oracle: independently constructed Laplacian blocks + direct solve
# ---------------------------------------------------------------------------


def normalize_oracle(image: np.ndarray) -> np.ndarray:
    z = image.astype(np.float64)
    lo, hi = z.min(), z.max()
    if hi > lo:
        return (z - lo) / (hi - lo)
    return np.full_like(z, 0.5)


def dense_laplacian(image: np.ndarray, beta: float) -> np.ndarray:
    z = normalize_oracle(image)
    nx, ny, nz = image.shape
    n = image.size

    def fid(i, j, k):
        return (i * ny + j) * nz + k

    L = np.zeros((n, n))
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for di, dj, dk in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
                    a, b, c = i + di, j + dj, k + dk
                    if a >= nx or b >= ny or c >= nz:
                        continue
                    w = max(np.exp(-beta * (z[a, b, c] - z[i, j, k]) ** 2), 1e-300)
                    u, v = fid(i, j, k), fid(a, b, c)
                    L[u, u] += w
                    L[v, v] += w
                    L[u, v] -= w
                    L[v, u] -= w
    return L


def dense_rw_solve(image: np.ndarray, labels: np.ndarray, beta: float):
    """Direct Gaussian-elimination solve of the block system, both classes."""
    L = dense_laplacian(image, beta)
    flat = labels.ravel()
    un = np.flatnonzero(flat == 0)
    mk = np.flatnonzero(flat != 0)
    L_U = L[np.ix_(un, un)]
    B = L[np.ix_(mk, un)]
    m_fg = (flat[mk] == FG).astype(np.float64)
    m_bg = (flat[mk] == BG).astype(np.float64)
    x_fg = np.linalg.solve(L_U, -B.T @ m_fg)
    x_bg = np.linalg.solve(L_U, -B.T @ m_bg)
    return un, L_U, B, x_fg, x_bg


def random_instance(seed: int, dims=(8, 8, 8), n_fg=4, n_bg=4):
    # Smoothed noise, not white noise: at beta=130 raw U(0,1) noise drives
    # edge weights to exp(-130) and the system below machine precision,
    # where neither CG nor dense elimination means anything.
    from scipy import ndimage as ndi

    rng = np.random.default_rng(seed)
    image = ndi.gaussian_filter(rng.random(dims), 1.2)
    image = (image - image.min()) / (image.max() - image.min())
    labels = np.zeros(dims, np.uint8)
    flat = rng.choice(int(np.prod(dims)), size=n_fg + n_bg, replace=False)
    labels.ravel()[flat[:n_fg]] = FG
    labels.ravel()[flat[n_fg:]] = BG
    return image.astype(np.float32), labels


# ---------------------------------------------------------------------------
# edge_weights
# ---------------------------------------------------------------------------


def test_constant_image_all_weights_one():
    w = edge_weights(make_volume(np.full((4, 4, 4), 7.0)), RwConfig())
    assert np.all(w.wx == 1.0) and np.all(w.wy == 1.0) and np.all(w.wz == 1.0)


def test_extreme_contrast_weight():
    img = np.zeros((2, 1, 1), np.float32)
    img[1] = 1.0
    w = edge_weights(make_volume(img), RwConfig(beta=130.0))
    assert w.wx[0, 0, 0] == pytest.approx(np.exp(-130.0))
    assert w.wx[0, 0, 0] > 0


def test_weights_match_formula_oracle():
    rng = np.random.default_rng(1)
    img = rng.random((5, 5, 5)).astype(np.float32)
    cfg = RwConfig(beta=130.0)
    w = edge_weights(make_volume(img), cfg)
    z = normalize_oracle(img)
    for axis, arr in enumerate((w.wx, w.wy, w.wz)):
        for idx in np.ndindex(arr.shape):
            nxt = list(idx)
            nxt[axis] += 1
            expected = np.exp(-130.0 * (z[tuple(nxt)] - z[idx]) ** 2)
            assert arr[idx] == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# assemble_system
# ---------------------------------------------------------------------------


def test_line_fixture_hand_assembly():
    img = np.array([[[0.0, 0.0, 0.0]]], np.float32)  # 1x1x3 uniform
    labels = np.zeros((1, 1, 3), np.uint8)
    labels[0, 0, 0] = FG
    labels[0, 0, 2] = BG
    sys = assemble_system(edge_weights(make_volume(img), RwConfig()), make_seeds(labels))
    assert sys.matrix.shape == (1, 1)
    assert sys.matrix.toarray()[0, 0] == pytest.approx(2.0)  # w_left + w_right = 1 + 1
    assert sys.rhs_fg[0] == pytest.approx(1.0)
    assert sys.rhs_bg[0] == pytest.approx(1.0)


def test_fully_marked_outcome():
    labels = np.full((2, 2, 2), FG, np.uint8)
    labels[0, 0, 0] = BG
    sys = assemble_system(
        edge_weights(make_volume(np.zeros((2, 2, 2))), RwConfig()), make_seeds(labels)
    )
    assert sys.fully_marked
    assert sys.n_unmarked == 0
    assert solve_rw(sys, RwConfig()).size == 0


@pytest.mark.parametrize("seed", range(4))
def test_assembly_matches_dense_blocks(seed):
    image, labels = random_instance(seed, dims=(4, 4, 4), n_fg=3, n_bg=3)
    cfg = RwConfig()
    sys = assemble_system(edge_weights(make_volume(image), cfg), make_seeds(labels))
    un, L_U, B, _, _ = dense_rw_solve(image, labels, cfg.beta)
    assert np.array_equal(sys.unmarked_flat, un)
    assert np.allclose(sys.matrix.toarray(), L_U, atol=1e-12)
    m_fg = (labels.ravel()[labels.ravel() != 0] == FG).astype(np.float64)
    assert np.allclose(sys.rhs_fg, -B.T @ m_fg, atol=1e-12)
    # SPD sanity: symmetric with positive diagonal
    assert (abs(sys.matrix - sys.matrix.T) > 1e-14).nnz == 0
    assert np.all(sys.matrix.diagonal() > 0)


def test_no_isolated_components_with_valid_seeds():
    # any maximal unmarked component on a connected grid borders a marked
    # voxel, so with valid seeds the singular-row guard should never fire
    for seed in range(6):
        image, labels = random_instance(seed)
        sys = assemble_system(
            edge_weights(make_volume(image), RwConfig()), make_seeds(labels)
        )
        assert not sys.isolated.any()


def test_isolated_rows_get_half():
    # exercised via a hand-built system since valid seeds cannot produce one
    matrix = sparse.csr_matrix(np.array([[2.0, 0.0], [0.0, 1.0]]))
    sys = RwSystem(
        dims=(1, 1, 4),
        unmarked_flat=np.array([1, 2]),
        matrix=matrix,
        rhs_fg=np.array([1.0, 0.0]),
        rhs_bg=np.array([0.0, 0.0]),
        isolated=np.array([False, True]),
        fully_marked=False,
    )
    x = solve_rw(sys, RwConfig())
    assert x[0] == pytest.approx(0.5)  # 2x = 1
    assert x[1] == 0.5  # isolated fallback


# ---------------------------------------------------------------------------
# solve_rw
# ---------------------------------------------------------------------------


def test_symmetry_fixture_line_middle_half():
    img = np.zeros((1, 1, 3), np.float32)
    labels = np.zeros((1, 1, 3), np.uint8)
    labels[0, 0, 0] = FG
    labels[0, 0, 2] = BG
    prob = random_walker_segment(make_volume(img), make_seeds(labels), RwConfig())
    assert prob.data[0, 0, 1] == pytest.approx(0.5, abs=1e-6)
    assert prob.data[0, 0, 0] == 1.0
    assert prob.data[0, 0, 2] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_cg_matches_dense_solve(seed):
    image, labels = random_instance(seed)
    cfg = RwConfig(cg_tolerance=1e-8)
    sys = assemble_system(edge_weights(make_volume(image), cfg), make_seeds(labels))
    x = solve_rw(sys, cfg)
    _, _, _, x_fg, x_bg = dense_rw_solve(image, labels, cfg.beta)
    assert np.max(np.abs(x - x_fg)) < 1e-5
    # two-class complementarity
    y = solve_rw(sys, cfg, rhs=sys.rhs_bg)
    assert np.max(np.abs(x + y - 1.0)) < 1e-5
    # maximum principle
    assert np.all(x >= 0.0) and np.all(x <= 1.0)
    assert np.max(np.abs(y - x_bg)) < 1e-5


def test_nonconvergence_raises():
    image, labels = random_instance(3)
    cfg = RwConfig(cg_tolerance=1e-12, cg_max_iters=1)
    sys = assemble_system(edge_weights(make_volume(image), cfg), make_seeds(labels))
    with pytest.raises(SolverConvergenceError):
        solve_rw(sys, cfg)


def test_permutation_equivariance():
    image, labels = random_instance(11, dims=(6, 5, 4))
    cfg = RwConfig(cg_tolerance=1e-12)
    base = random_walker_segment(make_volume(image), make_seeds(labels), cfg)
    perm = (2, 0, 1)
    image_p = np.transpose(image, perm).copy()
    labels_p = np.transpose(labels, perm).copy()
    out_p = random_walker_segment(make_volume(image_p), make_seeds(labels_p), cfg)
    assert np.allclose(
        np.transpose(base.data, perm), out_p.data, atol=1e-6
    )


def test_affine_intensity_invariance_bitwise():
    # integer image, power-of-two affine map: normalization cancels exactly
    rng = np.random.default_rng(4)
    image = rng.integers(0, 16, size=(6, 6, 6)).astype(np.float32)
    labels = np.zeros((6, 6, 6), np.uint8)
    labels[0, 0, 0] = FG
    labels[5, 5, 5] = BG
    cfg = RwConfig()
    a = random_walker_segment(make_volume(image), make_seeds(labels), cfg)
    b = random_walker_segment(make_volume(2.0 * image + 8.0), make_seeds(labels), cfg)
    assert np.array_equal(a.data, b.data)


def test_marked_voxels_pinned():
    image, labels = random_instance(9)
    prob = random_walker_segment(make_volume(image), make_seeds(labels), RwConfig())
    assert np.all(prob.data[labels == FG] == 1.0)
    assert np.all(prob.data[labels == BG] == 0.0)


def test_all_marked_probabilities_equal_seed_labels():
    labels = np.full((3, 3, 3), BG, np.uint8)
    labels[1, 1, 1] = FG
    prob = random_walker_segment(
        make_volume(np.zeros((3, 3, 3))), make_seeds(labels), RwConfig()
    )
    expected = (labels == FG).astype(np.float32)
    assert np.array_equal(prob.data, expected)


def test_sharp_step_boundary_within_one_voxel():
    img = np.zeros((16, 3, 3), np.float32)
    img[8:] = 1.0
    labels = np.zeros((16, 3, 3), np.uint8)
    labels[0] = FG
    labels[15] = BG
    prob = random_walker_segment(make_volume(img), make_seeds(labels), RwConfig())
    hard = prob.data[:, 1, 1] >= 0.5
    # 1D analytic diffusion: nearly the whole probability drop happens
    # across the single low-weight edge at the step (7 -> 8)
    boundary = int(np.flatnonzero(~hard)[0])
    assert abs(boundary - 8) <= 1
    assert prob.data[4, 1, 1] > 0.99 and prob.data[12, 1, 1] < 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        RwConfig(beta=0.0)
    with pytest.raises(ValueError):
        RwConfig(cg_tolerance=2.0)
    with pytest.raises(ValueError):
        RwConfig(cg_max_iters=0)
