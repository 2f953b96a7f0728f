import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from srqr import heisenberg
from srqr.distortion import eigen_distortion
from srqr.manifolds import ContractViolation
from srqr.map_zoo import compose, inversion, loxodromic, multi_twist, rotation
from srqr.mm_derivative import (
    PROBES, GradedHom, NonConvergent, dilation_fixture, extrapolate, fit_graded,
    hom_distortion, homomorphism_residual, pansu_derivative, probe_set, translation_fixture,
)

P = np.array([0.3, -0.2, 0.5])


def test_probe_set():
    pr = probe_set()
    assert pr.shape == (12, 3)
    np.testing.assert_allclose(np.linalg.norm(pr[:8, :2], axis=1), 1.0)
    assert np.all(pr[8:, :2] == 0)


@pytest.mark.parametrize("r", [0.5, 1.7, 3.0])
def test_dilation_fixture(r):
    H = pansu_derivative(dilation_fixture(r), P)
    np.testing.assert_allclose(H.A, r * np.eye(2), atol=1e-9)
    assert H.tau == pytest.approx(r * r, abs=1e-9)
    assert H.converged and H.graded_defect < 1e-9


@given(st.tuples(*(st.floats(-2, 2),) * 3))
def test_translation_fixture(g):
    H = pansu_derivative(translation_fixture(g), P)
    np.testing.assert_allclose(H.A, np.eye(2), atol=1e-8)
    assert H.tau == pytest.approx(1.0, abs=1e-8)


def test_group_automorphism_is_its_own_derivative():
    # a graded automorphism of H^1: rotation-scaling on the first layer
    L = GradedHom(np.array([[1.2, -0.5], [0.5, 1.2]]), 1.2 ** 2 + 0.25)
    H = pansu_derivative(L, P)
    np.testing.assert_allclose(H.A, L.A, atol=1e-8)
    assert H.tau == pytest.approx(L.tau, abs=1e-8)


def test_graded_hom_is_homomorphism():
    L = GradedHom(np.array([[2.0, 1.0], [0.0, 0.5]]), 1.0)
    a, b = PROBES[:, None, :], PROBES[None, :, :]
    np.testing.assert_allclose(L(heisenberg.mul(a, b)), heisenberg.mul(L(a), L(b)), atol=1e-14)


def test_graded_hom_json_and_compose():
    L = GradedHom(np.array([[2.0, 1.0], [0.0, 0.5]]), 1.0, schedule=(10.0, 100.0))
    M = GradedHom.from_json(json.loads(L.dumps()))
    np.testing.assert_allclose(M.A, L.A)
    assert M.tau == L.tau and M.schedule == L.schedule
    C = L.compose(M)
    q = np.array([0.3, 0.1, -0.7])
    np.testing.assert_allclose(C(q), L(M(q)))


def test_fit_graded_recovers_linear_data():
    L = GradedHom(np.array([[0.3, -1.0], [2.0, 0.1]]), 2.03)
    H = fit_graded(L(PROBES))
    np.testing.assert_allclose(H.A, L.A, atol=1e-14)
    assert H.tau == pytest.approx(L.tau) and H.residual < 1e-14


def test_extrapolate_removes_polynomial_terms():
    hs = np.array([10.0, 20.0, 40.0])
    Ys = [3.0 + 2.0 / h - 5.0 / h ** 2 for h in hs]
    assert extrapolate(hs, Ys) == pytest.approx(3.0, abs=1e-13)


@pytest.mark.parametrize("sched", [(10.0, 100.0), (10.0, 5.0, 100.0)])
def test_schedule_contract(sched):
    with pytest.raises(ContractViolation):
        pansu_derivative(dilation_fixture(2.0), P, sched)


def test_non_convergence_reported():
    # a map whose rescalings oscillate has no Pansu derivative
    def wobble(q):
        q = np.asarray(q, dtype=float)
        out = q.copy()
        out[..., 0] += np.abs(q[..., 0]) ** 0.5 * np.sin(1.0 / (np.abs(q[..., 0]) + 1e-300))
        return out

    with pytest.raises(NonConvergent) as err:
        pansu_derivative(wobble, np.zeros(3))
    assert not err.value.hom.converged
    H = pansu_derivative(wobble, np.zeros(3), raise_on_fail=False)
    assert not H.converged


def test_twist_derivative_matches_horizontal_differential(interior):
    F = multi_twist(2)
    for z in interior(10, 0.1):
        H = pansu_derivative(F, z)
        lm, lp = eigen_distortion(F, z)
        sv = np.linalg.svd(H.A, compute_uv=False)
        np.testing.assert_allclose(sv, [lp, lm], atol=1e-5)
        assert H.tau == pytest.approx(2.0, abs=1e-5)
        assert H.graded_defect < 1e-4
        assert hom_distortion(H) <= 2.0 + 1e-4


def test_twist_derivative_is_homomorphism_away_from_branch_locus(interior):
    F = multi_twist(2)
    for z in interior(5, 0.15):
        H = pansu_derivative(F, z)
        assert homomorphism_residual(F, z, H) < 1e-3


@pytest.mark.parametrize("m", [rotation([0.4, -1.0]), loxodromic(0.3),
                               inversion(np.array([0.6, 0.8j]), 0.3)])
def test_conformal_maps_have_similarity_derivatives(m, interior):
    z = interior(3, 0.2)
    for x in z:
        if m.kind == "inversion" and np.abs(1 + np.vdot(m.extras["ball"].center, x)) < 0.2:
            continue
        H = pansu_derivative(m, x)
        assert hom_distortion(H) == pytest.approx(1.0, abs=1e-5)


def test_chain_rule(interior):
    F, R = multi_twist(2), rotation([0.7, -0.3])
    for z in interior(3, 0.2):
        HR = pansu_derivative(R, z)
        HF = pansu_derivative(F, R.evaluate(z))
        HFR = pansu_derivative(compose(R, F), z)
        C = HF.compose(HR)
        np.testing.assert_allclose(HFR.A, C.A, atol=1e-5)
        assert HFR.tau == pytest.approx(C.tau, abs=1e-5)


def test_hom_distortion_rejects_singular():
    with pytest.raises(ContractViolation):
        hom_distortion(GradedHom(np.array([[1.0, 0.0], [0.0, 0.0]]), 0.0))
