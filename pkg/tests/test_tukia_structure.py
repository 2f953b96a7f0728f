import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from srqr.manifolds import ContractViolation, polar
from srqr.map_zoo import MapHandle, compose, horizontal_matrix, rotation, unitary
from srqr.trap_dynamics import TRAP, classify_points
from srqr.tukia_structure import (
    SPDPoint, act, brute_force_center, build_structure, chebyshev_center, distortion_radius_bound,
    from_coords, invariance_residual, karcher_blend, lens_grid, normalized_gram, orbit_set,
    spd_distance, spd_exp_at, spd_geodesic, spd_log_at, structure_from_map, support_set_center,
    to_coords,
)

coords = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


def spd(x):
    return from_coords(np.asarray(x), 2)


def power_twist(a):
    """Real-exponent twist r e^{i a theta}; smooth away from theta = +-pi."""

    def fn(z):
        r, th = polar(z)
        return r * np.exp(1j * a * th)

    def jac(z, v):
        r, th = polar(z)
        w = np.asarray(v) * np.exp(-1j * th)
        return np.exp(1j * a * th) * (w.real + 1j * a * w.imag)

    return MapHandle("power-twist", {"a": a}, fn, jac)


@given(coords, coords)
def test_distance_symmetric(x, y):
    A, B = spd(x), spd(y)
    assert spd_distance(A, B) == pytest.approx(spd_distance(B, A), abs=1e-9)


@given(coords, coords, coords)
def test_triangle_inequality(x, y, w):
    A, B, C = spd(x), spd(y), spd(w)
    assert spd_distance(A, C) <= spd_distance(A, B) + spd_distance(B, C) + 1e-9


@given(coords, coords, st.tuples(*(st.floats(-2, 2),) * 4))
def test_act_is_isometry(x, y, m):
    M = np.array(m).reshape(2, 2)
    if abs(np.linalg.det(M)) < 0.1:
        return
    A, B = spd(x), spd(y)
    assert spd_distance(act(M, A), act(M, B)) == pytest.approx(spd_distance(A, B), abs=1e-8)


@given(coords, coords)
def test_geodesic_midpoint(x, y):
    A, B = spd(x), spd(y)
    M = spd_geodesic(A, B, 0.5)
    d = spd_distance(A, B)
    assert spd_distance(A, M) == pytest.approx(d / 2, abs=1e-8)
    assert spd_distance(M, B) == pytest.approx(d / 2, abs=1e-8)


@given(coords, coords)
def test_exp_log_roundtrip(x, y):
    C, S = spd(x), spd(y)
    np.testing.assert_allclose(spd_exp_at(C, spd_log_at(C, S)), S, atol=1e-9)


@given(coords)
def test_coordinates_are_isometric_at_identity(x):
    S = spd(x)
    np.testing.assert_allclose(to_coords(S), x, atol=1e-10)
    assert spd_distance(np.eye(2), S) == pytest.approx(np.hypot(*x), abs=1e-10)


@pytest.mark.parametrize("K", [1.0, 1.5, 2.0, 10.0])
def test_normalized_gram_distance(K):
    G = normalized_gram(np.diag([K, 1.0]))
    assert np.linalg.det(G) == pytest.approx(1.0)
    assert spd_distance(np.eye(2), G) == pytest.approx(distortion_radius_bound(K), abs=1e-12)


def test_normalized_gram_contracts():
    with pytest.raises(ContractViolation):
        normalized_gram(np.array([[1.0, 2.0], [0.5, 1.0]]))
    R = np.array([[0.0, -3.0], [3.0, 0.0]])
    np.testing.assert_allclose(normalized_gram(R), np.eye(2), atol=1e-14)


@pytest.mark.parametrize("M", [np.diag([2.0, 1.0]), np.array([[1.0, 0.2], [0.3, 1.0]]),
                               np.array([[1.0, 0.0], [0.0, -1.0]])])
def test_spd_point_rejects(M):
    with pytest.raises(ContractViolation):
        SPDPoint(M)


def test_spd_point_is_frozen():
    P = SPDPoint(np.eye(2))
    with pytest.raises(ValueError):
        P.matrix[0, 0] = 2.0
    assert P.d == 2 and P.to_json() == [1.0, 0.0, 0.0, 1.0]


def test_center_of_singleton_and_pair():
    A, B = spd([0.3, -0.2]), spd([-0.5, 0.9])
    c, r = chebyshev_center([A])
    np.testing.assert_allclose(c.matrix, A, atol=1e-12)
    assert r == 0.0
    c, r = chebyshev_center([A, B])
    np.testing.assert_allclose(c.matrix, spd_geodesic(A, B, 0.5), atol=1e-6)
    assert r == pytest.approx(spd_distance(A, B) / 2, rel=1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_center_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    E = from_coords(rng.normal(size=(int(rng.integers(3, 8)), 2)), 2)
    c, r = chebyshev_center(E)
    c2, r2 = support_set_center(E)
    assert r == pytest.approx(r2, rel=1e-6, abs=1e-9)
    assert spd_distance(c.matrix, c2.matrix) < 1e-4
    _, r3 = brute_force_center(E, n=21)
    assert r <= r3 + 1e-7
    assert np.max(spd_distance(c.matrix[None], E)) == pytest.approx(r, abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_center_is_equivariant(seed):
    rng = np.random.default_rng(seed + 10)
    E = from_coords(rng.normal(size=(5, 2)), 2)
    M = rng.normal(size=(2, 2)) + 2 * np.eye(2)
    c, r = chebyshev_center(E)
    cm, rm = chebyshev_center(act(M, E))
    assert rm == pytest.approx(r, rel=1e-6)
    assert spd_distance(cm.matrix, act(M, c.matrix)) < 1e-4


def test_orbit_set_of_isometry_is_identity():
    S = orbit_set(rotation([0.4, 1.3]), np.array([0.6, 0.8j]), 5)
    assert len(S) == 6 and not S.truncated
    np.testing.assert_allclose(S.elements, np.broadcast_to(np.eye(2), (6, 2, 2)), atol=1e-12)


@pytest.mark.parametrize("chi", [0.4, 0.7, 1.1])
def test_center_of_conjugated_rotation(chi):
    # f = phi^{-1} U phi fixes p with D f = A^{-1} R A, so the invariant center is gram(A)
    k, a = 5, 1.7
    p = np.array([np.cos(chi), np.sin(chi)], dtype=complex)
    q = np.array([-np.sin(chi), np.cos(chi)], dtype=complex)
    U = np.outer(p, p.conj()) + np.exp(2j * np.pi / k) * np.outer(q, q.conj())
    phi = power_twist(a)
    f = compose(phi, unitary(U), power_twist(1.0 / a))
    np.testing.assert_allclose(f.evaluate(p), p, atol=1e-12)
    S = orbit_set(f, p, k - 1)
    c, _ = chebyshev_center(S)
    expected = normalized_gram(horizontal_matrix(phi, p)[0])
    assert spd_distance(c.matrix, expected) < 1e-6
    assert spd_distance(np.eye(2), expected) > 0.1


def test_structure_of_rotation_is_identity():
    grid, _ = lens_grid(2, 2, 6)
    cs = structure_from_map(rotation([0.3, 1.1]), grid, N=4)
    assert cs.valid.all()
    np.testing.assert_allclose(cs.s, np.broadcast_to(np.eye(2), cs.s.shape), atol=1e-10)
    assert cs.K == pytest.approx(1.0)
    rep = invariance_residual(cs, rotation([0.3, 1.1]))
    assert rep.max < 1e-8


def test_window_contract():
    grid, _ = lens_grid(2, 2, 4)
    for w in (0, 5):
        with pytest.raises(ContractViolation):
            structure_from_map(rotation([0.3, 1.1]), grid, N=4, window=w)


def test_karcher_blend():
    A, B = spd([0.4, 0.1]), spd([-0.3, 0.8])
    S = np.stack([A, B])[None]
    mid = karcher_blend(S, np.array([[1.0, 1.0]]))[0]
    np.testing.assert_allclose(mid, spd_geodesic(A, B, 0.5), atol=1e-10)
    np.testing.assert_allclose(karcher_blend(S, np.array([[1.0, 0.0]]))[0], A, atol=1e-10)


def test_lens_grid_contains_trap_centre():
    grid, params = lens_grid(2, 2, 8)
    assert grid.shape == (8 ** 3, 2)
    np.testing.assert_allclose(np.linalg.norm(grid, axis=1), 1.0)
    assert np.min(np.linalg.norm(grid - np.array([1j, 1j]) / np.sqrt(2), axis=1)) < 1e-12
    assert params["refine"] == 1


@pytest.fixture(scope="module")
def trap_structure(trap):
    grid, params = lens_grid(2, 2, 8)
    return build_structure(trap, grid, N=8, params=params)


def test_trap_structure_is_identity_on_trap(trap, trap_structure):
    cs = trap_structure
    on = cs.valid & (classify_points(trap, cs.grid) == TRAP)
    assert on.any()
    assert np.max(spd_distance(cs.s[on], np.eye(2))) < 1e-5
    assert np.all(cs.radius[cs.valid] <= cs.radius_bound + 1e-9)
    assert cs.params["window"] == 4


def test_trap_structure_json_and_residual_csv(trap, trap_structure):
    cs = trap_structure
    d = json.loads(cs.dumps())
    assert len(d["s"]) == len(cs.grid) and d["params"]["N"] == 8
    rep = invariance_residual(cs, trap.g)
    lines = rep.csv(cs.grid).strip().split("\n")
    assert lines[0].startswith("point_id") and len(lines) == len(cs.grid) + 1
    assert np.all(rep.values >= 0)
