import json

import numpy as np
import pytest

from srqr.manifolds import (
    ContractViolation, HeisenbergChart, LensSpec, SpherePoint, gauge, gauge_ball, gauge_sphere,
    lens_canonical, random_sphere,
)
from srqr.map_zoo import horizontal_matrix
from srqr.trap_dynamics import (
    BRANCH, CONFORMAL_BALL, TRANSIT, TRAP, TrapConstructionError, build_trap,
    classify_orbit, classify_orbits, classify_points, conformal_ball_index, expected_count,
    fit_decay, in_trap, inverse_branches, julia_approx, julia_seeds, lens_gauge, piece_labels,
)

# frozen from the radius bisection (30 halvings of [0, R_0]); the bracket test
# below re-derives the binding boundary independently
R_FROZEN = 0.2306591454
D_IN_FROZEN = 0.1297457693
D_OUT_FROZEN = 0.2162429488


def test_construction_values(trap):
    c = trap.config
    np.testing.assert_allclose(c.z0, np.array([1j, 1j]) / np.sqrt(2), atol=1e-15)
    np.testing.assert_allclose(c.fx0, -np.array([1, 1]) / np.sqrt(2), atol=1e-15)
    assert c.N == 2
    assert c.R == pytest.approx(R_FROZEN, abs=1e-9)
    assert c.r_prime == pytest.approx(0.5 * c.R, rel=1e-9)
    assert c.rho_B == pytest.approx(0.9 * c.r_prime, rel=1e-12)
    assert trap.ball.gauge_radius == pytest.approx(c.rho_B, rel=1e-10)
    bump = trap.model.field.bump
    assert bump.d_in == pytest.approx(D_IN_FROZEN, abs=1e-9)
    assert bump.d_out == pytest.approx(D_OUT_FROZEN, abs=1e-9)
    assert all(v["ok"] for v in c.conditions.values())


def test_radius_is_maximal_admissible(trap):
    spec = trap.config.spec
    R = trap.config.R
    build_trap(2, spec, {"R": 0.99 * R})
    with pytest.raises(TrapConstructionError):
        build_trap(2, spec, {"R": 1.01 * R})


def test_construction_contracts():
    with pytest.raises(ContractViolation):
        build_trap(3, LensSpec(2, (1, 1)))
    with pytest.raises(ContractViolation):
        build_trap(2, LensSpec(2, (1, 1, 1)))
    with pytest.raises(TrapConstructionError):
        build_trap(2, LensSpec(2, (1, 1)), {"z0": [1.0, 0.0]})


def test_preimages_are_centres(trap):
    c = trap.config
    from srqr.map_zoo import multi_twist
    for x in c.xs[1:]:
        img = multi_twist(2).evaluate(x)
        # the gauge is a square root, so rounding shows up at 1e-8
        assert float(lens_gauge(img, c.z0, c.spec)) < 1e-7


def test_well_defined_on_lens(trap, rng):
    spec = trap.config.spec
    z = random_sphere(rng, 200)
    z = z[np.min(np.abs(z), axis=-1) > 1e-3]
    np.testing.assert_allclose(trap.g.evaluate(spec.rotate(z, 1)), trap.g.evaluate(z), atol=1e-9)


def test_trap_ball_is_absorbing(trap):
    ball = trap.ball
    assert 0.99 * ball.gauge_radius < ball.inner_gauge_radius < ball.gauge_radius
    pts = gauge_ball(trap.config.z0, 0.999 * ball.inner_gauge_radius, n_r=4)
    assert np.all(in_trap(trap, pts))
    assert not np.any(in_trap(trap, gauge_sphere(trap.config.z0, 1.001 * ball.gauge_radius)))
    assert np.all(in_trap(trap, trap.g.evaluate(pts)))


def test_conformal_on_balls(trap):
    for i in range(1, trap.config.N + 1):
        pts = gauge_ball(trap.config.xs[i], 0.95 * trap.config.r_prime, n_r=3, n_beta=6, n_gamma=6)
        assert np.all(conformal_ball_index(trap, pts) == i)
        H, _ = horizontal_matrix(trap.g, pts)
        sv = np.linalg.svd(H, compute_uv=False)
        np.testing.assert_allclose(sv[:, 0] / sv[:, 1], 1.0, atol=1e-6)


def test_balls_map_out_of_trap_complement(trap):
    # g sends each B'_i onto the complement of the trap ball, up to the lens action
    for i in range(1, trap.config.N + 1):
        ring = gauge_sphere(trap.config.xs[i], 0.5 * trap.config.r_prime, 6, 6)
        assert not np.any(in_trap(trap, trap.g.evaluate(ring)))


def test_piece_labels(trap):
    c = trap.config
    inner = max(c.r_prime, trap.model.field.bump.d_in)
    for i, x in enumerate(c.xs):
        assert piece_labels(trap, x[None])[0] == 2 * i + 1
        shell = gauge_sphere(x, 0.5 * (inner + c.R), 4, 4)
        assert np.all(piece_labels(trap, shell) == 2 * i + 2)
        assert np.all(piece_labels(trap, c.spec.rotate(shell, 1)) == 2 * i + 2)
    far = gauge_sphere(c.xs[1], 0.5 * (c.R + 0.45), 4, 4)
    far = far[np.all([lens_gauge(far, np.broadcast_to(x, far.shape), c.spec) > c.R
                      for x in c.xs], axis=0)]
    assert len(far) and np.all(piece_labels(trap, far) == 0)


def test_classify_points(trap):
    c = trap.config
    lab = classify_points(trap, np.array([c.z0, c.xs[1], [1.0, 0.0], c.fx0]))
    assert lab.tolist() == [TRAP, CONFORMAL_BALL, BRANCH, TRANSIT]


def test_orbits_obey_region_contract(trap, rng):
    z = lens_canonical(random_sphere(rng, 300), trap.config.spec)
    L = classify_orbits(trap, z, 4)
    for k in range(L.shape[0] - 1):
        assert np.all(L[k + 1][L[k] == TRAP] == TRAP)
        assert np.all(L[k + 1][L[k] == TRANSIT] == TRAP)
    rec = classify_orbit(trap, SpherePoint(z[0]), 4)
    assert rec.contract_ok() and rec.labels == L[:, 0].tolist()


def test_branch_orbit_truncates(trap):
    rec = classify_orbit(trap, np.array([1.0, 0.0]), 3)
    assert rec.truncated and rec.labels == [BRANCH]


def test_inverse_branches_invert_g(trap):
    y = julia_seeds(trap, 4)
    pts, parent, addr, pruned = inverse_branches(trap, y)
    assert len(pts) == len(y) * trap.config.spec.p * trap.config.N and pruned == 0
    np.testing.assert_allclose(trap.g.evaluate(pts), lens_canonical(y[parent], trap.config.spec),
                               atol=1e-9)


@pytest.mark.parametrize("depth", [0, 1, 3])
def test_julia_cloud(trap, depth):
    cloud = julia_approx(trap, depth)
    assert cloud.violations == 0
    assert cloud.counts == [expected_count(trap, len(cloud.seeds), d) for d in range(depth + 1)]
    assert len(cloud.points) == sum(cloud.counts) == len(cloud.addresses)
    d = json.loads(json.dumps(cloud.to_json()))
    assert d["depth"] == depth
    csv_text = cloud.chart_csv(HeisenbergChart(SpherePoint(trap.config.z0)))
    assert csv_text.splitlines()[0] == "x,y,t,depth"
    if depth >= 1:
        assert cloud.diameters[1] < cloud.diameters[0]


def test_julia_depth_guard(trap):
    with pytest.raises(ContractViolation):
        julia_approx(trap, 9)


def test_fit_decay():
    assert fit_decay({0: 1.0, 1: 0.1, 2: 0.01}) == pytest.approx(0.1)
    assert fit_decay({0: 1.0, 1: 0.1, 2: 0.01, 3: 1e-9}) == pytest.approx(0.1)
    assert np.isnan(fit_decay({0: 1.0, 1: 1e-9}))


def test_config_json(trap):
    d = json.loads(json.dumps(trap.config.to_json()))
    assert d["spec"] == {"p": 2, "q": [1, 1]}
    assert d["R"] == pytest.approx(R_FROZEN, abs=1e-9)


def test_lens_gauge_symmetric(trap, rng):
    spec = trap.config.spec
    z, w = random_sphere(rng, 50), random_sphere(rng, 50)
    np.testing.assert_allclose(lens_gauge(z, w, spec), lens_gauge(w, z, spec), atol=1e-12)
    np.testing.assert_allclose(lens_gauge(z, spec.rotate(z, 1), spec), 0.0, atol=1e-7)
    assert np.all(lens_gauge(z, w, spec) <= gauge(z, w) + 1e-15)
