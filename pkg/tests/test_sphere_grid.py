import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import eval_legendre

from widthflow.sphere_grid import (
    GridSizingError,
    GridTooCoarseError,
    basis_index,
    build_grid,
    default_table,
    evaluate_expansion,
    evaluate_harmonics,
    harmonic_table,
    integrate,
    tangent_frames,
)

from conftest import unit_vectors


@pytest.fixture(scope="module")
def grid():
    return build_grid(24, 48)


# -- build_grid / integrate ----------------------------------------------


def test_weights_sum_to_sphere_area(grid):
    assert abs(grid.weights.sum() - 4 * math.pi) <= 1e-10
    assert np.all(grid.weights > 0)


def test_first_moment_vanishes(grid):
    assert np.max(np.abs(grid.weights @ grid.nodes)) <= 1e-10


def test_second_moment_is_four_pi_over_three(grid):
    assert abs(grid.weights @ grid.nodes[:, 2] ** 2 - 4 * math.pi / 3) <= 1e-10


def test_integrate_examples(grid):
    assert abs(integrate(grid, np.ones(grid.size)) - 4 * math.pi) <= 1e-10
    assert abs(integrate(grid, grid.nodes[:, 2])) <= 1e-10
    assert abs(integrate(grid, grid.nodes[:, 2] ** 2) - 4 * math.pi / 3) <= 1e-10


def test_integrate_rejects_length_mismatch(grid):
    with pytest.raises(ValueError):
        integrate(grid, np.ones(grid.size - 1))


def test_nodes_are_unit_and_frames_orthonormal(grid):
    assert np.allclose(np.linalg.norm(grid.nodes, axis=1), 1.0, atol=1e-14)
    F = grid.frames
    gram = np.einsum("naj,nbj->nab", F, F)
    assert np.allclose(gram, np.eye(2), atol=1e-14)
    assert np.allclose(np.einsum("naj,nj->na", F, grid.nodes), 0.0, atol=1e-14)


def test_antipode_map(grid):
    j = grid.antipode()
    assert np.allclose(grid.nodes[j], -grid.nodes, atol=1e-14)


@pytest.mark.parametrize("n_theta,n_phi", [(1, 8), (8, 2), (0, 0), (8, 7)])
def test_sizing_errors(n_theta, n_phi):
    with pytest.raises(GridSizingError):
        build_grid(n_theta, n_phi)


def test_exactness_degree():
    g = build_grid(6, 12)
    assert g.exactness == 11
    # x^4 y^2 z^4 has degree 10; its sphere integral is 4 pi * 3*1*3 / (3*5*7*9*11)
    v = g.nodes[:, 0] ** 4 * g.nodes[:, 1] ** 2 * g.nodes[:, 2] ** 4
    exact = 4 * math.pi * 9 / (3 * 5 * 7 * 9 * 11)
    assert abs(integrate(g, v) - exact) <= 1e-14


# -- harmonic_table ---------------------------------------------------------


def test_gram_is_identity():
    t = default_table(9)
    assert np.max(np.abs(t.gram() - np.eye(t.size))) <= 1e-9


def test_constant_harmonic():
    t = default_table(9)
    assert np.allclose(t.values[:, 0], 1 / math.sqrt(4 * math.pi), atol=1e-15)


def test_rayleigh_quotient_y30():
    t = default_table(9)
    k = basis_index(3, 0)
    w = t.grid.weights
    num = w @ np.sum(t.grad[:, k, :] ** 2, axis=1)
    den = w @ t.values[:, k] ** 2
    assert abs(num / den - 12.0) <= 1e-8


def test_laplacian_eigenvalues():
    t = default_table(9)
    lap = t.laplacian()
    expected = -(t.degrees * (t.degrees + 1))[None, :] * t.values
    assert np.max(np.abs(lap - expected)) <= 1e-10


def test_zonal_harmonics_match_legendre():
    t = default_table(9)
    z = t.grid.nodes[:, 2]
    for l in range(10):
        ref = math.sqrt((2 * l + 1) / (4 * math.pi)) * eval_legendre(l, z)
        assert np.max(np.abs(t.values[:, basis_index(l, 0)] - ref)) <= 1e-12


def test_addition_theorem():
    rng = np.random.default_rng(0)
    u, v = unit_vectors(rng, 50), unit_vectors(rng, 50)
    Yu, _, _ = evaluate_harmonics(u, 12)
    Yv, _, _ = evaluate_harmonics(v, 12)
    dots = np.sum(u * v, axis=1)
    for l in range(13):
        sl = slice(l * l, (l + 1) ** 2)
        lhs = np.sum(Yu[:, sl] * Yv[:, sl], axis=1)
        rhs = (2 * l + 1) / (4 * math.pi) * eval_legendre(l, dots)
        assert np.max(np.abs(lhs - rhs)) <= 1e-11


def test_random_pairs_orthonormal():
    t = default_table(9)
    rng = np.random.default_rng(1)
    w = t.grid.weights
    for _ in range(200):
        a, b = rng.integers(0, t.size, 2)
        val = w @ (t.values[:, a] * t.values[:, b])
        assert abs(val - float(a == b)) <= 1e-9


def test_frame_gradient_matches_finite_differences():
    t = default_table(9)
    rng = np.random.default_rng(2)
    idx = rng.choice(t.grid.size, 40, replace=False)
    u = t.grid.nodes[idx]
    F = t.grid.frames[idx]
    eucl = np.einsum("nka,naj->nkj", t.grad[idx], F)
    theta = rng.uniform(0, 2 * math.pi, idx.size)
    w = np.cos(theta)[:, None] * F[:, 0] + np.sin(theta)[:, None] * F[:, 1]
    h = 1e-5
    plus, _, _ = evaluate_harmonics(np.cos(h) * u + np.sin(h) * w, 9)
    minus, _, _ = evaluate_harmonics(np.cos(h) * u - np.sin(h) * w, 9)
    fd = (plus - minus) / (2 * h)
    assert np.max(np.abs(fd - np.einsum("nkj,nj->nk", eucl, w))) <= 1e-6


def test_frame_hessian_matches_finite_differences():
    t = default_table(7)
    rng = np.random.default_rng(3)
    idx = rng.choice(t.grid.size, 20, replace=False)
    u, F = t.grid.nodes[idx], t.grid.frames[idx]
    w = F[:, 0]
    h = 1e-4
    pts = [np.cos(s * h) * u + np.sin(s * h) * w for s in (-1, 0, 1)]
    Y = [evaluate_harmonics(p, 7)[0] for p in pts]
    fd = (Y[0] - 2 * Y[1] + Y[2]) / h**2
    assert np.max(np.abs(fd - t.hess[idx, :, 0, 0])) <= 1e-5


def test_table_is_deterministic():
    g = build_grid(24, 48)
    a, b = harmonic_table(g, 9), harmonic_table(g, 9)
    for name in ("values", "grad", "hess"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_grid_too_coarse():
    with pytest.raises(GridTooCoarseError):
        harmonic_table(build_grid(8, 16), 9)


def test_degree_zero_rejected():
    with pytest.raises(ValueError):
        harmonic_table(build_grid(24, 48), 0)


def test_index_subsets():
    t = default_table(9)
    assert set(t.linear) == {1, 2, 3}
    assert all(d % 2 == 1 and d >= 3 for d in t.degrees[t.shape_odd])
    assert t.shape_odd.size == sum(2 * l + 1 for l in (3, 5, 7, 9))


# -- pointwise evaluation ---------------------------------------------------


def test_tangent_frames_at_arbitrary_points():
    rng = np.random.default_rng(4)
    u = np.vstack([unit_vectors(rng, 30), [[0, 0, 1.0], [0, 0, -1.0]]])
    F = tangent_frames(u)
    assert np.allclose(np.einsum("naj,nbj->nab", F, F), np.eye(2), atol=1e-14)
    assert np.allclose(np.einsum("naj,nj->na", F, u), 0.0, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_expansion_matches_basis_sum(seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(100)
    u = unit_vectors(rng, 16)
    Y, _, _ = evaluate_harmonics(u, 9)
    assert np.max(np.abs(evaluate_expansion(u, c) - Y @ c)) <= 1e-12
