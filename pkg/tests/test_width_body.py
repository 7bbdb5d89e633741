import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import pdist

from widthflow.sphere_grid import basis_index, default_table
from widthflow.width_body import (
    JUNG_GAP,
    DegreeMismatchError,
    NonconvexBodyError,
    NonUnitDirectionError,
    WidthBody,
    body_from_dict,
    body_to_dict,
    boundary_point,
    circumradius,
    convexity_margin,
    evaluate_support,
    export_mesh,
    hausdorff_distance,
    inradius,
    load_body,
    make_zonal_reuleaux,
    mesh_lattice,
    random_body,
    reuleaux_support_2d,
    save_body,
    shrink_to_feasible,
    surface_area,
    surface_area_det,
    volume,
    volume_report,
)

from conftest import unit_vectors
from oracles import monte_carlo_volume, rotated_reuleaux_volume, sampled_reuleaux_support

JUNG_RADIUS = math.sqrt(3.0 / 8.0)
SEEDS = list(range(12))


def linear_coefficients(table, a):
    """Degree-one coefficients representing ``u -> a.u``."""
    Y = table.values[:, 1:4]
    c, *_ = np.linalg.lstsq(Y, table.grid.nodes @ np.asarray(a), rcond=None)
    return c


def translated(body, a):
    c = body.coefficients.copy()
    c[1:4] += linear_coefficients(body.table, a)
    return body.with_coefficients(c)


@pytest.fixture(scope="module")
def bodies():
    return [random_body(9, 0.05, s) for s in SEEDS]


# -- evaluate_support ------------------------------------------------------


def test_ball_support_is_half(ball):
    u = unit_vectors(np.random.default_rng(0), 20)
    assert np.allclose(evaluate_support(ball, u), 0.5, atol=1e-15)


def test_width_identity(bodies, zonal):
    u = unit_vectors(np.random.default_rng(1), 500)
    for b in bodies + [zonal]:
        w = evaluate_support(b, u) + evaluate_support(b, -u)
        assert np.max(np.abs(w - 1.0)) <= 1e-12


def test_pure_translation_support(table):
    a = np.array([0.03, -0.02, 0.05])
    b = translated(WidthBody.ball(table=table), a)
    u = unit_vectors(np.random.default_rng(2), 50)
    assert np.max(np.abs(evaluate_support(b, u) - 0.5 - u @ a)) <= 1e-14


def test_non_unit_direction_rejected(ball):
    with pytest.raises(NonUnitDirectionError):
        evaluate_support(ball, [1.0, 1.0, 0.0])


def test_scalar_direction_returns_float(ball):
    assert isinstance(evaluate_support(ball, [0.0, 0.0, 1.0]), float)


def test_even_coefficients_rejected(table):
    c = np.zeros(table.size)
    c[basis_index(2, 0)] = 0.1
    with pytest.raises(ValueError):
        WidthBody(c, table)


def test_length_mismatch_rejected(table):
    with pytest.raises(DegreeMismatchError):
        WidthBody(np.zeros(10), table)


# -- boundary_point ----------------------------------------------------------


def test_ball_boundary_point(ball):
    u = unit_vectors(np.random.default_rng(3), 20)
    assert np.allclose(boundary_point(ball, u), u / 2, atol=1e-15)


def test_width_map_at_nodes(bodies, zonal):
    for b in bodies + [zonal]:
        u = b.grid.nodes
        d = boundary_point(b, u) - boundary_point(b, -u) - u
        assert np.max(np.abs(d)) <= 1e-10


def test_boundary_points_lie_in_body(bodies):
    for b in bodies[:4]:
        x = boundary_point(b, unit_vectors(np.random.default_rng(4), 200))
        lhs = x @ b.grid.nodes.T
        assert np.max(lhs - b.node_support[None, :]) <= 1e-8


def test_boundary_map_lipschitz(bodies):
    rng = np.random.default_rng(5)
    for b in bodies:
        u, v = unit_vectors(rng, 300), unit_vectors(rng, 300)
        # include close pairs, where the bound is tightest
        v[:100] = u[:100] + 1e-3 * rng.standard_normal((100, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        lhs = np.linalg.norm(boundary_point(b, u) - boundary_point(b, v), axis=1)
        rhs = (1 + math.pi / 2) * np.linalg.norm(u - v, axis=1) + 1e-8
        assert np.all(lhs <= rhs)


def test_boundary_point_rejects_nonconvex(table):
    b = WidthBody.from_triples(9, [(3, 0, 0.5)], table=table)
    with pytest.raises(NonconvexBodyError):
        boundary_point(b, [0.0, 0.0, 1.0])


# -- convexity margin --------------------------------------------------------


def test_ball_margin(ball):
    assert abs(convexity_margin(ball) - 0.5) <= 1e-15


def test_margin_affine_bound(bodies):
    for b in bodies[:4]:
        m1 = convexity_margin(b)
        for lam in (0.0, 0.25, 0.5, 0.9):
            m = convexity_margin(b.with_coefficients(lam * b.coefficients))
            assert m >= lam * m1 + (1 - lam) * 0.5 - 1e-12


def test_large_coefficient_is_nonconvex(table):
    b = WidthBody.from_triples(9, [(3, 0, 0.5)], table=table)
    margin = convexity_margin(b)
    # brute-force scan of the frame matrix eigenvalues
    lo = min(np.linalg.eigvalsh(M).min() for M in b.frame_matrix)
    assert margin < 0
    assert abs(margin - lo) <= 1e-12


def test_mixed_second_derivative_bound(bodies, zonal):
    for b in bodies + [zonal]:
        ev = np.linalg.eigvalsh(b.frame_matrix)
        assert ev.min() >= 0.0
        assert ev.max() <= 1.0 + 1e-6


# -- circumradius / inradius -------------------------------------------------


def test_ball_radii(ball):
    R, c = circumradius(ball)
    r, ic = inradius(ball)
    assert abs(R - 0.5) <= 1e-12 and abs(r - 0.5) <= 1e-12
    assert np.max(np.abs(c)) <= 1e-12 and np.max(np.abs(ic)) <= 1e-12


def test_translation_moves_circumcenter(body7):
    a = np.array([0.02, -0.01, 0.03])
    R0, c0 = circumradius(body7)
    R1, c1 = circumradius(translated(body7, a))
    assert abs(R1 - R0) <= 1e-10
    assert np.max(np.abs(c1 - c0 - a)) <= 1e-8


def test_radii_relations(bodies, zonal):
    for b in bodies + [zonal]:
        R, c = circumradius(b)
        r, ic = inradius(b)
        assert abs(r + R - 1.0) <= 1e-8
        assert np.linalg.norm(ic - c) <= 1e-7
        assert 0.5 <= R <= JUNG_RADIUS + 1e-6


def test_circumradius_brute_force(body7):
    # the minimax value at centers sampled near the LP center is never smaller
    R, c = circumradius(body7)
    U = body7.grid.nodes
    g = body7.node_g
    rng = np.random.default_rng(6)
    for _ in range(200):
        a = -c + 1e-3 * rng.standard_normal(3)
        assert 0.5 + np.max(np.abs(g + U @ a)) >= R - 1e-12


def test_centered_support_estimates(bodies):
    rng = np.random.default_rng(7)
    for b in bodies:
        _, a = circumradius(b)
        U = b.grid.nodes
        h = b.node_support
        assert np.max(np.abs(h - 0.5 - U @ a)) <= JUNG_GAP + 1e-6
        i, j = rng.integers(0, U.shape[0], (2, 500))
        d = U[i] - U[j]
        lhs = np.abs(h[i] - h[j] - d @ a)
        assert np.all(lhs <= np.linalg.norm(d, axis=1) + 1e-8)


# -- surface area and volume -----------------------------------------------


def test_ball_area_and_volume(ball):
    assert abs(surface_area(ball) - math.pi) <= 1e-10
    assert abs(surface_area_det(ball) - math.pi) <= 1e-10
    assert abs(volume(ball) - math.pi / 6) <= 1e-10


def test_surface_area_formulas_agree(bodies):
    for b in bodies:
        assert abs(surface_area(b) - surface_area_det(b)) <= 1e-7


def test_zonal_surface_area_formulas_agree(zonal):
    a, d = surface_area(zonal), surface_area_det(zonal)
    assert abs(a - d) <= 1e-6 * a


def test_volume_triple(bodies, zonal):
    for b in bodies + [zonal]:
        rep = volume_report(b)
        assert abs(rep.energy - rep.blaschke) <= 1e-8
        assert abs(rep.energy - rep.det) <= 1e-5
        assert rep.energy <= math.pi / 6 + 1e-10


def test_area_requires_convexity(table):
    b = WidthBody.from_triples(9, [(3, 0, 0.5)], table=table)
    with pytest.raises(NonconvexBodyError):
        surface_area(b)
    with pytest.raises(NonconvexBodyError):
        volume(b)


# -- Hausdorff distance ------------------------------------------------------


def test_hausdorff_self_is_zero(body7):
    assert hausdorff_distance(body7, body7) == 0.0


def test_centered_body_to_ball(bodies, ball):
    for b in bodies[:4]:
        R, c = circumradius(b)
        centered = translated(b, -c)
        assert abs(hausdorff_distance(centered, ball) - (R - 0.5)) <= 1e-8


def test_quotient_mode_kills_translation(body7):
    moved = translated(body7, [0.01, 0.02, -0.03])
    assert hausdorff_distance(moved, body7, quotient=True) <= 1e-8
    assert hausdorff_distance(moved, body7) > 1e-3


def test_hausdorff_degree_mismatch(body7):
    with pytest.raises(DegreeMismatchError):
        hausdorff_distance(body7, WidthBody.ball(7))


# -- shrink_to_feasible ------------------------------------------------------


def test_shrink_keeps_feasible_input(body7):
    b = shrink_to_feasible(body7.coefficients, 1e-6, table=body7.table)
    assert b.metadata["shrink_factor"] == 1.0
    assert np.array_equal(b.coefficients, body7.coefficients)


def test_shrink_zero_is_ball(table):
    b = shrink_to_feasible(np.zeros(table.size), table=table)
    assert not np.any(b.coefficients)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), amp=st.floats(0.1, 1.0))
def test_shrink_infeasible_input(seed, amp):
    table = default_table(9)
    rng = np.random.default_rng(seed)
    c = np.zeros(table.size)
    c[table.shape_odd] = rng.uniform(-amp, amp, table.shape_odd.size)
    m0 = convexity_margin(WidthBody(c, table))
    b = shrink_to_feasible(c, 1e-6, table=table)
    lam = b.metadata["shrink_factor"]
    m = convexity_margin(b)
    assert m >= 1e-6 - 1e-8
    assert m >= lam * m0 + (1 - lam) * 0.5 - 1e-12


def test_shrink_factor_is_maximal(table):
    c = np.zeros(table.size)
    c[basis_index(3, 0)] = 0.5
    b = shrink_to_feasible(c, 1e-6, table=table)
    lam = b.metadata["shrink_factor"]
    assert abs(convexity_margin(b) - 1e-6) <= 1e-10
    assert convexity_margin(WidthBody((lam + 1e-8) * c, table)) < 1e-6


def test_shrink_rejects_bad_margin(table):
    with pytest.raises(ValueError):
        shrink_to_feasible(np.zeros(table.size), -1.0, table=table)


# -- random bodies -----------------------------------------------------------


def test_random_body_contract(bodies):
    for b in bodies:
        assert convexity_margin(b) >= 1e-6 - 1e-10
        assert b.coefficients @ (b.coefficients * (b.table.degrees * (b.table.degrees + 1) / 2 - 1)) <= math.pi / 3 + 1e-8


def test_random_body_deterministic():
    a, b = random_body(9, 0.05, 11), random_body(9, 0.05, 11)
    assert np.array_equal(a.coefficients, b.coefficients)
    assert not np.array_equal(a.coefficients, random_body(9, 0.05, 12).coefficients)


def test_random_body_rejects_bad_amplitude():
    with pytest.raises(ValueError):
        random_body(9, 0.0, 1)


# -- zonal Reuleaux ----------------------------------------------------------


def test_reuleaux_support_matches_sampled_boundary():
    th = np.linspace(0, 2 * math.pi, 2001)
    d = np.column_stack([np.cos(th), np.sin(th)])
    # sampling error is second order in the arc spacing (pi / 3 / 2047)
    assert np.max(np.abs(reuleaux_support_2d(d) - sampled_reuleaux_support(d))) <= 2e-7


def test_reuleaux_2d_width_is_one():
    th = np.linspace(0, 2 * math.pi, 1001)
    d = np.column_stack([np.cos(th), np.sin(th)])
    assert np.max(np.abs(reuleaux_support_2d(d) + reuleaux_support_2d(-d) - 1)) <= 1e-14


def test_zonal_is_zonal_and_odd(zonal, table):
    nz = np.flatnonzero(zonal.coefficients)
    assert np.all(table.orders[nz] == 0)
    assert np.all(table.degrees[nz] % 2 == 1)


def test_zonal_width_and_circumradius(zonal):
    u = unit_vectors(np.random.default_rng(8), 500)
    assert np.max(np.abs(evaluate_support(zonal, u) + evaluate_support(zonal, -u) - 1)) <= 1e-12
    R, _ = circumradius(zonal)
    assert 0.5 < R <= JUNG_RADIUS
    assert volume(zonal) < math.pi / 6


def test_zonal_rejects_even_degree():
    with pytest.raises(ValueError):
        make_zonal_reuleaux(8)


def test_monte_carlo_oracle_is_consistent():
    # the oracle itself is validated against a 1D quadrature of the exact body
    v, se = monte_carlo_volume()
    assert abs(v - rotated_reuleaux_volume()) <= 3 * se


@pytest.mark.xfail(strict=True, reason="degree-9 node-convex approximation of a nonsmooth body; "
                   "shrinking toward the ball inflates the volume (see decisions ledger)")
def test_zonal_volume_matches_monte_carlo(zonal):
    v, se = monte_carlo_volume()
    assert abs(volume(zonal) - v) <= 3 * se


# -- mesh export -------------------------------------------------------------


@pytest.mark.parametrize("res", [2, 5, 16])
def test_mesh_vertex_count(ball, res):
    verts, faces = export_mesh(ball, res)
    assert verts.shape == (res * 2 * res + 2, 3)
    assert np.allclose(np.linalg.norm(verts, axis=1), 0.5, atol=1e-10)
    assert faces.shape[0] == 2 * (2 * res) * res


def test_mesh_outward_orientation(body7):
    verts, faces = export_mesh(body7, 24)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    signed = np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6
    assert signed > 0
    assert abs(signed - volume(body7)) <= 5e-3
    # every face normal points away from the centroid
    n = np.cross(b - a, c - a)
    assert np.all(np.einsum("ij,ij->i", n, (a + b + c) / 3 - verts.mean(axis=0)) > 0)


def test_mesh_diameter_random_bodies(bodies):
    for b in bodies:
        verts, _ = export_mesh(b, 16)
        assert pdist(verts).max() <= 1 + 1e-6


@pytest.mark.xfail(strict=True, reason="convexity enforced at grid nodes only; the degree-9 zonal "
                   "approximation is slightly nonconvex between nodes (see decisions ledger)")
def test_mesh_diameter_zonal(zonal):
    verts, _ = export_mesh(zonal, 32)
    assert pdist(verts).max() <= 1 + 1e-6


def test_mesh_obj_file(body7, tmp_path):
    path = tmp_path / "b.obj"
    verts, faces = export_mesh(body7, 4, path)
    lines = path.read_text().splitlines()
    v = [l for l in lines if l.startswith("v ")]
    f = [l for l in lines if l.startswith("f ")]
    assert len(v) == verts.shape[0] and len(f) == faces.shape[0]
    assert len(v) + len(f) == len(lines)
    assert min(int(x) for l in f for x in l.split()[1:]) == 1
    parsed = np.array([[float(x) for x in l.split()[1:]] for l in v])
    assert np.array_equal(parsed, verts)


def test_mesh_lattice_rejects_small_resolution():
    with pytest.raises(ValueError):
        mesh_lattice(1)


# -- serialization -----------------------------------------------------------


def test_body_json_round_trip(body7, tmp_path):
    path = tmp_path / "b.json"
    save_body(body7, path)
    back = load_body(path)
    assert np.array_equal(back.coefficients, body7.coefficients)
    assert back.metadata["seed"] == 7


def test_body_dict_has_odd_triples_only(body7):
    d = body_to_dict(body7)
    assert d["degree_max"] == 9
    assert all(l % 2 == 1 for l, _, _ in d["coefficients"])


def test_body_from_malformed_dict():
    with pytest.raises(ValueError):
        body_from_dict({"coefficients": []})
    with pytest.raises(ValueError):
        body_from_dict({"degree_max": 9, "coefficients": [[3, 5, 0.1]]})
