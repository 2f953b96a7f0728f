import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from srqr import heisenberg
from srqr.distortion import DISTANCE_FLOOR
from srqr.ccdist import (
    DistanceOptions, cc_distance, distance_csv_rows, lens_distance, lens_distance_array,
    penalty_distance, sphere_distance, sphere_rollout, su2, su2_exp,
)
from srqr.manifolds import (
    ContractViolation, LensSpec, SpherePoint, alpha, horizontal_frame, lens_project,
    random_sphere,
)

angle = st.floats(-np.pi, np.pi, allow_nan=False)


@st.composite
def sphere_points(draw):
    c = draw(st.floats(0.0, np.pi / 2))
    return np.array([np.cos(c) * np.exp(1j * draw(angle)), np.sin(c) * np.exp(1j * draw(angle))])


@st.composite
def unitaries(draw):
    a, b, c, d = (draw(angle) for _ in range(4))
    V = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]], dtype=complex)
    return np.diag([np.exp(1j * b), np.exp(1j * c)]) @ V * np.exp(1j * d)


def test_sphere_distance_zero_and_antipode():
    z = np.array([0.6, 0.8j])
    assert sphere_distance(z, z) == pytest.approx(0.0, abs=1e-7)
    assert sphere_distance(z, -z) == pytest.approx(np.pi)


@pytest.mark.parametrize("s", [0.01, 0.5, 1.5, 3.0])
def test_horizontal_great_circle(s):
    z = np.array([0.6, 0.8j])
    v = horizontal_frame(z)[0]
    w = np.cos(s) * z + np.sin(s) * v
    assert sphere_distance(z, w) == pytest.approx(s, rel=1e-10)


@pytest.mark.parametrize("theta", [0.01, 0.3, 1.0, 2.5, np.pi])
def test_reeb_fibre_distance(theta):
    # points on one Reeb orbit: d = sqrt(theta (2 pi - theta))
    z = np.array([0.6, 0.8j])
    d = sphere_distance(z, np.exp(1j * theta) * z)
    assert d == pytest.approx(np.sqrt(theta * (2 * np.pi - theta)), rel=1e-9)


@given(sphere_points(), sphere_points(), unitaries())
@example(np.array([0.6, 0.8j]), np.array([0.6, 0.8j]), np.exp(1j) * np.eye(2))
@example(np.array([1.0, 0j]), np.array([1.0 + 2.2e-16j, 0j]), np.exp(1j) * np.eye(2))
def test_unitary_invariance_and_symmetry(z, w, U):
    # d grows like sqrt(theta) along a Reeb fibre, so input rounding moves it by ~sqrt(eps)
    d = sphere_distance(z, w)
    assert sphere_distance(w, z) == pytest.approx(d, abs=DISTANCE_FLOOR)
    assert sphere_distance(U @ z, U @ w) == pytest.approx(d, abs=DISTANCE_FLOOR)


def test_triangle_inequality(rng):
    a, b, c = (random_sphere(rng, 300) for _ in range(3))
    dab, dbc, dac = sphere_distance(a, b), sphere_distance(b, c), sphere_distance(a, c)
    assert np.all(dac <= dab + dbc + 1e-9)
    assert np.all(dab <= np.pi + 1e-12)


def test_dominates_riemannian_distance(rng):
    a, b = random_sphere(rng, 300), random_sphere(rng, 300)
    geo = np.arccos(np.clip(np.real(np.sum(a * np.conj(b), axis=-1)), -1, 1))
    assert np.all(sphere_distance(a, b) >= geo - 1e-9)


def test_su2_exp_is_unitary(rng):
    E = su2_exp(rng.normal(size=(20, 3)))
    eye = np.eye(2)
    np.testing.assert_allclose(E @ np.conj(np.swapaxes(E, -1, -2)), np.broadcast_to(eye, E.shape),
                               atol=1e-14)
    np.testing.assert_allclose(np.linalg.det(E), 1.0, atol=1e-14)


def test_rollout_is_horizontal_and_has_control_length():
    z = np.array([0.6, 0.8j])
    M, L = 200, 1.3
    u = np.tile([np.cos(0.4), np.sin(0.4)], (M, 1)) * L
    pts = sphere_rollout(su2(z), u, 1.0 / M)
    dz = np.diff(pts, axis=0)
    mid = 0.5 * (pts[1:] + pts[:-1])
    assert np.max(np.abs(alpha(mid, dz))) < 1e-12
    assert np.sum(np.linalg.norm(dz, axis=-1)) == pytest.approx(L, rel=1e-4)
    assert sphere_distance(z, pts[-1]) == pytest.approx(L, rel=1e-10)


@pytest.mark.parametrize("b", [np.array([0.8, 0.6]), np.array([0.2j, np.sqrt(0.96)])])
def test_transcription_upper_bound_close_to_closed_form(b):
    a = np.array([0.6, 0.8j])
    exact = sphere_distance(a, b)
    val, diag = cc_distance(a, b)
    assert not diag.flagged
    assert diag.endpoint_residual < 1e-8
    assert exact - 1e-9 <= val <= exact * (1 + 2e-3)


def test_transcription_refines_with_segments():
    a, b = np.zeros(3), np.array([0.3, 0.2, 0.4])
    exact = heisenberg.norm_exact(b)
    coarse, _ = cc_distance(a, b, DistanceOptions(segments=16, restarts=3))
    fine, _ = cc_distance(a, b, DistanceOptions(segments=64, restarts=3))
    assert exact - 1e-9 <= fine <= coarse
    assert fine - exact < 0.5 * (coarse - exact)


def test_heisenberg_closed_form_option():
    a, b = np.array([0.1, 0.2, 0.3]), np.array([-0.4, 0.0, 0.1])
    val, diag = cc_distance(a, b, DistanceOptions(method="closed_form"))
    assert diag.method == "closed_form"
    assert val == pytest.approx(heisenberg.cc_distance_exact(a, b))


def test_return_path_and_zero_distance():
    a = np.array([0.6, 0.8j])
    val, diag, path = cc_distance(a, np.array([0.8, 0.6]), return_path=True)
    assert path is not None
    np.testing.assert_allclose(path[0], a, atol=1e-12)
    assert cc_distance(a, a)[0] == 0.0


def test_penalty_oracle_agrees():
    a, b = np.zeros(3), np.array([0.5, -0.2, 0.15])
    pv, vals = penalty_distance(a, b, DistanceOptions(restarts=3))
    # the penalty metric is shorter than the sub-Riemannian one and increases as eps -> 0
    assert vals[0] <= vals[1] <= vals[2] <= pv * (1 + 1e-6)
    assert pv == pytest.approx(heisenberg.norm_exact(b), rel=2e-2)


def test_mixed_manifolds_rejected():
    with pytest.raises(ContractViolation):
        cc_distance(np.zeros(3), np.array([1.0 + 0j, 0.0]))
    with pytest.raises(ContractViolation):
        cc_distance(np.zeros(3), np.ones(3), DistanceOptions(method="bogus"))


def test_lens_distance():
    spec = LensSpec(3, (1, 2))
    z, w = np.array([0.6, 0.8j]), np.array([0.8, 0.6 * np.exp(0.3j)])
    x, y = lens_project(z, spec), lens_project(w, spec)
    d = lens_distance(x, y)
    assert d <= sphere_distance(z, w) + 1e-12
    for k in range(3):
        y2 = lens_project(spec.rotate(w, k), spec)
        assert lens_distance(x, y2) == pytest.approx(d, abs=1e-12)
        assert lens_distance(lens_project(spec.rotate(z, k), spec), y) == pytest.approx(d, abs=1e-12)
    assert float(lens_distance_array(z[None], w[None], spec)[0]) == pytest.approx(d, abs=1e-12)
    assert lens_distance(x, lens_project(spec.rotate(z, 1), spec)) == pytest.approx(0.0, abs=1e-7)


def test_lens_distance_contracts():
    z = SpherePoint([1.0, 0.0])
    with pytest.raises(ContractViolation):
        lens_distance(lens_project(z, LensSpec(2, (1, 1))), lens_project(z, LensSpec(3, (1, 1))))
    with pytest.raises(ContractViolation):
        lens_distance(z, z)


def test_csv_rows():
    a = np.array([0.6, 0.8j])
    val, diag = cc_distance(a, a, DistanceOptions(method="closed_form"))
    text = distance_csv_rows([("a", "b", val, diag)])
    assert text.splitlines()[0] == "a,b,value,method,restarts,residual"
    assert "closed_form" in text
