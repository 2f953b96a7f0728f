import numpy as np
import pytest

from srqr.contact_flow import (
    ContactField, FlowDomainError, Potential, _zbar_fd, bump, constant_potential, flow,
    flow_map, libermann_field, max_admissible_radius, model_interpolant, trap_interpolant,
    twist_potential,
)
from srqr.manifolds import (
    ContractViolation, alpha, gauge, gauge_ball, gauge_sphere, horizontal_frame, polar,
)
from srqr.map_zoo import horizontal_matrix, multi_twist, pullback_contact_factor


def angular_points(rng, n, a, tol=0.2):
    """Points with |theta_j| < pi / a and moduli above ``tol``."""
    chi = rng.uniform(np.arcsin(tol), np.arccos(tol), n)
    th = rng.uniform(-0.95 * np.pi / a, 0.95 * np.pi / a, (n, 2))
    return np.stack([np.cos(chi), np.sin(chi)], -1) * np.exp(1j * th)


def test_twist_potential_needs_order_two():
    with pytest.raises(ContractViolation):
        twist_potential(1)


def test_closed_form_zbar_matches_differences(rng):
    rho = twist_potential(3)
    z = angular_points(rng, 20, 1)
    np.testing.assert_allclose(rho.zbar_derivative(z), _zbar_fd(rho.fn, z), atol=1e-9)


def test_field_is_tangent_with_potential_as_reeb_part(rng):
    F = libermann_field(twist_potential(2))
    z = angular_points(rng, 30, 1)
    w = F(z)
    np.testing.assert_allclose(np.real(np.sum(w * np.conj(z), -1)), 0.0, atol=1e-14)
    np.testing.assert_allclose(alpha(z, w), F.rho(z), atol=1e-13)


@pytest.mark.parametrize("a", [2, 3])
def test_unit_time_flow_is_multi_twist(rng, a):
    F = libermann_field(twist_potential(a))
    z = angular_points(rng, 40, a)
    res = flow(F, z, 1.0, rtol=1e-11)
    assert not np.any(res.exited)
    np.testing.assert_allclose(res.endpoint, multi_twist(a).evaluate(z), atol=1e-8)


def test_flow_is_reversible(rng):
    F = libermann_field(twist_potential(2))
    z = angular_points(rng, 20, 2)
    fwd = flow(F, z, 0.6, rtol=1e-11).endpoint
    back = flow(F, fwd, -0.6, rtol=1e-11).endpoint
    np.testing.assert_allclose(back, z, atol=1e-8)


def test_constant_potential_flows_along_reeb(rng):
    F = libermann_field(constant_potential(0.7))
    z = angular_points(rng, 10, 1)
    res = flow(F, z, 2.0, rtol=1e-10)
    np.testing.assert_allclose(res.endpoint, np.exp(1.4j) * z, atol=1e-7)


def test_generic_potential_uses_difference_quotients(rng):
    # same potential, without the closed-form derivative and kernel path
    rho = twist_potential(2)
    generic = Potential(rho.fn, None, rho.domain, tag="generic")
    z = angular_points(rng, 10, 2)
    a = flow(libermann_field(generic), z, 1.0, rtol=1e-10).endpoint
    np.testing.assert_allclose(a, multi_twist(2).evaluate(z), atol=1e-6)


def test_flow_map_contact_factor(rng):
    s = 0.5
    m = flow_map(libermann_field(twist_potential(2)), s, rtol=1e-11)
    z = angular_points(rng, 5, 2)
    np.testing.assert_allclose(pullback_contact_factor(m, z), 2.0 ** s, rtol=1e-5)


def test_flow_rejects_points_outside_domain():
    F = libermann_field(twist_potential(2))
    with pytest.raises(FlowDomainError):
        flow(F, np.array([1.0, 0.0j]), 1.0)


def test_flow_flags_exits():
    F = libermann_field(twist_potential(2))
    z = np.array([0.6 * np.exp(2.5j), 0.8])
    res = flow(F, z, 1.0)
    assert bool(res.exited)
    assert abs(res.reached) < 1.0
    d = res.to_json()
    assert d["exited"] is True


def test_bump_profile():
    c = np.array([0.6, 0.8j])
    K = gauge_sphere(c, 0.4, 6, 6)
    b = bump(K, (c, 0.1))
    assert b.d_in > 0.1 and b.d_out < 0.4
    assert np.all(b(gauge_ball(c, b.d_in * 0.99)) == 0.0)
    assert np.allclose(b(gauge_sphere(c, b.d_out * 1.01)), 1.0)
    mid = b(gauge_sphere(c, 0.5 * (b.d_in + b.d_out)))
    assert np.all((mid > 0) & (mid < 1))
    with pytest.raises(ContractViolation):
        bump(K, (c, 0.41))
    with pytest.raises(ContractViolation):
        bump(K, (c, 0.39), delta=0.005)


def test_model_interpolant_radius_guard():
    zp = np.array([1, 1]) / np.sqrt(2) + 0j
    R0 = max_admissible_radius(2, zp)
    assert 0.3 < R0 < 0.6
    with pytest.raises(ContractViolation):
        model_interpolant(2, zp, 1.05 * R0)


@pytest.fixture(scope="module")
def interpolant():
    zs = np.exp(1j * np.pi / 4) * np.array([1, 1]) / np.sqrt(2)
    return (zs,) + trap_interpolant(2, zs, 0.2)


def test_interpolant_equals_twist_outside(interpolant):
    zs, G1, (c, rp), _ = interpolant
    pts = gauge_ball(c, 0.45, n_r=4)
    pts = pts[gauge(pts, c) > 0.201]
    np.testing.assert_allclose(G1.evaluate(pts), multi_twist(2).evaluate(pts), atol=1e-12)


def test_interpolant_is_rotation_inside(interpolant):
    zs, G1, (c, rp), _ = interpolant
    pts = gauge_ball(c, 0.99 * rp, n_r=3)
    _, th = polar(zs)
    np.testing.assert_allclose(G1.evaluate(pts), pts * np.exp(1j * th), atol=1e-12)
    H, _ = horizontal_matrix(G1, pts)
    np.testing.assert_allclose(np.linalg.svd(H, compute_uv=False), 1.0, atol=1e-6)


def test_interpolant_is_continuous_and_contact(interpolant):
    zs, G1, (c, rp), diag = interpolant
    for r0 in (rp, 0.2):
        inner = gauge_sphere(c, r0 * (1 - 1e-7), 8, 8)
        outer = gauge_sphere(c, r0 * (1 + 1e-7), 8, 8)
        assert np.max(np.abs(G1.evaluate(inner) - G1.evaluate(outer))) < 1e-5
    ann = gauge_sphere(c, 0.5 * (rp + 0.2), 6, 6)
    fr = horizontal_frame(ann)
    from srqr.map_zoo import push_c
    for k in range(2):
        w = push_c(G1, ann, fr[:, k])
        assert np.max(np.abs(alpha(G1.evaluate(ann), w))) < 1e-5
    assert np.isfinite(diag["distortion"]) and diag["distortion"] >= 2.0 - 1e-6
    assert diag["r_prime"] == pytest.approx(rp)


def test_interpolant_rejects_branch_centre():
    with pytest.raises(ContractViolation):
        trap_interpolant(2, np.array([1.0, 0.0j]), 0.1)


def test_contact_field_without_bump_domain():
    F = ContactField(twist_potential(2))
    assert F.in_domain(np.array([0.6, 0.8 + 0j]))
    assert not F.in_domain(np.array([1.0, 0.0j]))
