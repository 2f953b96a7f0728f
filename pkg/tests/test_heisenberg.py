import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from srqr import heisenberg as H

coord = st.floats(-3, 3, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)


@given(point, point, point)
def test_group_law_associative(p, q, r):
    np.testing.assert_allclose(H.mul(H.mul(p, q), r), H.mul(p, H.mul(q, r)), atol=1e-12)


@given(point)
def test_inverse(p):
    np.testing.assert_allclose(H.mul(p, H.inv(p)), 0.0, atol=1e-14)


@given(point, point, st.floats(0.1, 5))
def test_dilation_is_automorphism(p, q, h):
    np.testing.assert_allclose(H.dilate(H.mul(p, q), h), H.mul(H.dilate(p, h), H.dilate(q, h)),
                               rtol=1e-12, atol=1e-12)


def test_commutator_is_vertical():
    a, b = 0.7, -1.3
    g = H.mul(H.mul(H.mul([a, 0, 0], [0, b, 0]), [-a, 0, 0]), [0, -b, 0])
    np.testing.assert_allclose(g, [0, 0, a * b], atol=1e-15)


@given(point)
def test_frame_is_horizontal(p):
    X, Y = H.frame(p)
    assert abs(H.contact_form(p, X)) < 1e-14
    assert abs(H.contact_form(p, Y)) < 1e-14


@pytest.mark.parametrize("x,y", [(1.0, 0.0), (0.3, -0.4), (0.0, 2.0)])
def test_horizontal_norm(x, y):
    assert H.norm_exact([x, y, 0.0]) == pytest.approx(np.hypot(x, y), rel=1e-14)


@pytest.mark.parametrize("t", [0.01, 1.0, -2.5])
def test_vertical_norm(t):
    assert H.norm_exact([0, 0, t]) == pytest.approx(np.sqrt(4 * np.pi * abs(t)), rel=1e-14)


@given(point.filter(lambda q: np.linalg.norm(q) > 1e-3), st.floats(0.1, 10))
def test_norm_homogeneous(q, h):
    assert H.norm_exact(H.dilate(q, h)) == pytest.approx(h * H.norm_exact(q), rel=1e-9)


@given(point.filter(lambda q: np.linalg.norm(q) > 1e-3))
@example(np.array([0.0, 2.0, 5e-324]))
def test_norm_comparable_to_koranyi(q):
    # both are homogeneous norms; the ratio is bounded on the unit sphere
    r = H.norm_exact(q) / H.koranyi_norm(q)
    assert 0.5 < r < 2.0


@given(point, point, point)
def test_triangle_inequality(p, q, r):
    d = H.cc_distance_exact
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-9


@given(point, point, point)
def test_left_invariance(g, p, q):
    d = H.cc_distance_exact
    assert d(H.mul(g, p), H.mul(g, q)) == pytest.approx(d(p, q), rel=1e-8, abs=1e-10)
