from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshft.errors import BadDimension, NonCommensurate
from meshft.mesher import (MeshGeometry, WaveNumber, _triangle_edge_ids, dual_areas, flip_edges,
                           floor_weights, parse_mesh_spec, periodic_delaunay, periodic_grid,
                           permute_nodes, raw_cotangent_weights, triangulated_grid)


def fem_stiffness(geom):
    """Dense P1 stiffness assembled triangle by triangle from corner gradients."""
    n = geom.n_nodes
    K = np.zeros((n, n))
    for tri, p in zip(geom.triangles, geom.tri_offsets):
        B = np.array([p[1] - p[0], p[2] - p[0]]).T
        Binv = np.linalg.inv(B)
        # barycentric gradients: rows of [[-1,-1],[1,0],[0,1]] @ B^{-1}
        G = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]) @ Binv
        area = 0.5 * abs(np.linalg.det(B))
        Kt = area * G @ G.T
        for a in range(3):
            for b in range(3):
                K[tri[a], tri[b]] += Kt[a, b]
    return K


def raw_weights(geom):
    return raw_cotangent_weights(geom.tri_offsets, _triangle_edge_ids(geom), geom.n_edges)


def test_grid_32_basic():
    g = periodic_grid(32, 32)
    assert (g.n_nodes, g.n_edges) == (1024, 2048)
    np.testing.assert_array_equal(g.V0, np.full(1024, 1 / 1024))
    np.testing.assert_array_equal(g.V1inv, np.ones(2048))
    assert g.complex.chain_defect() == 0


def test_grid_2x2_area_and_4x3_chain():
    assert periodic_grid(2, 2).V0.sum() == 1.0
    g = periodic_grid(4, 3, 2.0)
    assert not (g.D1.dense() @ g.D0.dense()).any()
    assert np.isclose(g.V0.sum(), 4.0, rtol=1e-12)


def test_edge_lengths_match_deltas(delaunay64):
    for g in (periodic_grid(5, 7, 1.5), delaunay64):
        np.testing.assert_allclose(g.edge_length ** 2, (g.edge_delta ** 2).sum(axis=1), rtol=1e-12)
        assert np.all(np.abs(g.edge_delta) <= g.box_length / 2)


def test_delaunay_topology_and_area():
    g = periodic_delaunay(256, seed=11)
    assert g.complex.euler_characteristic() == 0
    assert g.complex.chain_defect() == 0
    assert abs(g.V0.sum() - 1.0) <= 1e-8
    assert g.V0.min() > 0 and g.V1inv.min() > 0


def test_delaunay_deterministic():
    a, b = periodic_delaunay(64, seed=5), periodic_delaunay(64, seed=5)
    assert a.complex == b.complex
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.V1inv, b.V1inv)
    assert a.meta["rng"]


def test_delaunay_raw_weights_nonnegative(delaunay64):
    # Delaunay <=> opposite angles sum to at most pi <=> cot a + cot b >= 0
    assert raw_weights(delaunay64).min() >= -1e-12


def test_cotangent_matches_fem_on_delaunay(delaunay64):
    g = delaunay64
    D = g.D0.dense().astype(float)
    K = D.T @ (raw_weights(g)[:, None] * D)
    np.testing.assert_allclose(K, fem_stiffness(g), atol=1e-10)


def test_trigrid_weights_axis_one_diagonal_zero():
    g = triangulated_grid(4, 4)
    w = raw_weights(g)
    np.testing.assert_allclose(w[0::3], 1.0, atol=1e-12)
    np.testing.assert_allclose(w[1::3], 1.0, atol=1e-12)
    np.testing.assert_allclose(w[2::3], 0.0, atol=1e-12)
    floored, floor = floor_weights(w)
    assert np.all(floored[2::3] == floor) and floor > 0
    D = g.D0.dense().astype(float)
    np.testing.assert_allclose(D.T @ (w[:, None] * D), fem_stiffness(g), atol=1e-12)


def test_equilateral_weight():
    corners = np.array([[[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]],
                        [[1, 0], [0, 0], [0.5, -np.sqrt(3) / 2]]], dtype=float)
    # edge 0 is (0,0)-(1,0): opposite corner 2 in triangle 0 and corner 2 in triangle 1
    tri_edges = np.array([[1, 2, 0], [3, 4, 0]])
    w = raw_cotangent_weights(corners, tri_edges, 5)
    assert np.isclose(w[0], 1 / np.sqrt(3), rtol=1e-12)


def test_trigrid_uniform_areas():
    g = triangulated_grid(6, 6)
    np.testing.assert_allclose(g.V0, 1 / 36, rtol=1e-12)
    np.testing.assert_allclose(dual_areas(g, floor=False).sum(), 1.0, rtol=1e-12)


def test_delaunay_area_accumulation_oracle(delaunay64):
    g = delaunay64
    V = np.zeros(g.n_nodes)
    for tri, p in zip(g.triangles, g.tri_offsets):
        a = 0.5 * abs((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0]))
        for i in tri:
            V[i] += a / 3
    np.testing.assert_allclose(dual_areas(g, floor=False), V, rtol=1e-12)


def test_bad_inputs():
    with pytest.raises(BadDimension):
        periodic_grid(1, 4)
    with pytest.raises(BadDimension):
        periodic_delaunay(4)
    with pytest.raises(BadDimension):
        parse_mesh_spec("hex:3")
    with pytest.raises(NonCommensurate):
        WaveNumber(0, 0)
    with pytest.raises(NonCommensurate):
        WaveNumber.from_vector([1.0, 0.0], 1.0)


def test_mesh_spec_and_json_roundtrip():
    g = parse_mesh_spec("grid:6,4", 2.0)
    assert g.mesh_id == "grid:6,4"
    h = MeshGeometry.from_dict(g.to_dict())
    assert h.complex == g.complex
    np.testing.assert_array_equal(h.V0, g.V0)


@given(st.integers(0, 2**32 - 1))
def test_gauge_moves_keep_features_consistent(seed):
    rng = np.random.default_rng(seed)
    g = periodic_grid(4, 5)
    rho = rng.choice([-1, 1], g.n_edges)
    f = flip_edges(g, rho)
    # D0 q still equals the edge displacement for linear-in-x fields along each edge
    np.testing.assert_array_equal(f.edge_delta, g.edge_delta * rho[:, None])
    perm = rng.permutation(g.n_nodes)
    p = permute_nodes(g, perm)
    np.testing.assert_array_equal(p.positions[perm], g.positions)
    assert p.complex.chain_defect() == 0
