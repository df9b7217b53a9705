import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autmetric import flowlab as F

BUMP = F.build_radial_bump((0.1, -0.05), 0.5, 1.2)


def _fd_gradient(H, pts, h=1e-6):
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    gx = (H.value(pts + ex) - H.value(pts - ex)) / (2 * h)
    gy = (H.value(pts + ey) - H.value(pts - ey)) / (2 * h)
    return np.stack([gx, gy], axis=1)


def _polar_points(rng, n, r_max=0.95):
    r = r_max * np.sqrt(rng.random(n))
    t = 2 * math.pi * rng.random(n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


# ---------------------------------------------------------------- fields


def test_vector_field_examples():
    H = F.build_radial_bump((0, 0), 0.6, 1.0)
    assert np.allclose(F.hamiltonian_vf(H, (0.0, 0.0)), 0.0)
    # H = f(r^2): X_H = 2 f'(r^2) (-y, x) with f(s) = (1 - s/rho^2)^3
    s, rho2 = 0.25, 0.36
    fp = -3.0 / rho2 * (1 - s / rho2) ** 2
    assert np.allclose(F.hamiltonian_vf(H, (0.5, 0.0)), [0.0, 2 * fp * 0.5], atol=1e-12)
    assert np.allclose(F.hamiltonian_vf(F.ZERO_FIELD, (0.3, 0.2)), 0.0)
    with pytest.raises(ValueError):
        F.hamiltonian_vf(H, (1.0, 0.0))


@pytest.mark.parametrize(
    "field",
    [
        BUMP,
        F.RadialTwist(2 * math.pi, 0.3, 0.4, F.Placement((0.2, 0.1))),
        F.regime_layout().w12.field(1.0),
        F.regime_layout().w23.field(-1.0),
    ],
)
def test_gradient_matches_finite_differences(field):
    pts = _polar_points(np.random.default_rng(0), 300)
    assert np.allclose(field.gradient(pts), _fd_gradient(field, pts), atol=2e-6)


def test_bump_gradient_continuous_at_boundary():
    H = F.build_radial_bump((0, 0), 0.5, 1.0)
    for r in (0.5 - 1e-4, 0.5, 0.5 + 1e-4):
        assert np.linalg.norm(H.gradient(np.array([[r, 0.0]]))) < 1e-5


def test_support_vanishing():
    pts = np.array([[0.7, 0.0], [-0.5, 0.6]])
    assert np.allclose(BUMP.value(pts), 0.0)
    assert np.allclose(BUMP.velocity(pts), 0.0)
    assert BUMP.support_radius < 1.0


def test_bump_geometry_errors():
    with pytest.raises(ValueError):
        F.build_radial_bump((0.6, 0), 0.5, 1.0)
    with pytest.raises(ValueError):
        F.build_radial_bump((0, 0), 0.5, 1.0, profile="exp")


def test_morse_check_bump():
    rep = F.morse_check(F.build_radial_bump((0.1, 0.1), 0.5, 1.0))
    assert rep.ok
    assert len(rep.critical_points) == 1
    assert np.allclose(rep.critical_points[0], (0.1, 0.1), atol=1e-4)


# ---------------------------------------------------------------- integration


def test_identity_trajectory_constant():
    tr = F.integrate(F.FlowSpec.identity(), (0.3, 0.4))
    assert np.allclose(tr.positions, [[0.3, 0.4]])


def test_rigid_rotation_period():
    # inside r_inner the twist rotates at omega; the period is 2 pi / omega
    omega = 3.0
    tw = F.RadialTwist(omega, 0.6, 0.8)
    spec = F.FlowSpec.single(tw, 2 * math.pi / omega)
    p = np.array([[0.4, 0.1]])
    out = F.time_one_map(spec, p)
    ang = math.atan2(out[0, 1], out[0, 0]) - math.atan2(0.1, 0.4)
    assert abs((ang + math.pi) % (2 * math.pi) - math.pi) <= 1e-6
    assert abs(np.hypot(*out[0]) - np.hypot(0.4, 0.1)) <= 1e-9


def test_area_preservation_bump():
    spec = F.FlowSpec.single(BUMP)
    g = np.linspace(-0.4, 0.4, 20)
    pts = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2) + np.array(BUMP.placement.center)
    assert np.abs(F.jacobian_det(spec, pts) - 1.0).max() <= 1e-4


def test_area_preservation_twist_word():
    # the collar shear is steep, so difference the exact map with a tiny step
    spec = F.twist_word_flow(F.regime_layout(), "xY")
    pts = _polar_points(np.random.default_rng(1), 300, 0.97)
    assert np.abs(F.jacobian_det(spec, pts, h=1e-7, exact=True) - 1.0).max() <= 1e-2
    for single in F.build_twist_system(F.regime_layout()):
        assert np.abs(F.jacobian_det(single, pts, h=1e-7, exact=True) - 1.0).max() <= 1e-3


def test_energy_conservation():
    spec = F.FlowSpec.single(BUMP, 3.0)
    pts = _polar_points(np.random.default_rng(2), 30, 0.55) + np.array(BUMP.placement.center) * 0.5
    tr = F.integrate(spec, pts)
    H = np.stack([BUMP.value(tr.positions[k]) for k in range(0, len(tr.times), 50)])
    assert np.abs(H - H[0]).max() <= 1e-6


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.1, 0.9))
def test_flow_property(a, b):
    pts = _polar_points(np.random.default_rng(3), 20, 0.6)
    two = F.FlowSpec.single(BUMP, a).then(F.FlowSpec.single(BUMP, b))
    one = F.FlowSpec.single(BUMP, a + b)
    assert np.abs(F.time_one_map(two, pts) - F.time_one_map(one, pts)).max() <= 1e-6


def test_support_confinement():
    pts = np.array([[0.0, 0.7], [-0.7, 0.0], [0.5, -0.6]])
    tr = F.integrate(F.FlowSpec.single(BUMP, 2.0), pts)
    assert np.all(tr.positions == pts)


def test_inverse_undoes_flow():
    spec = F.twist_word_flow(F.regime_layout(), "xYy")
    pts = _polar_points(np.random.default_rng(4), 50, 0.9)
    back = F.time_one_map(spec.inverse(), F.time_one_map(spec, pts))
    assert np.abs(back - pts).max() <= 1e-6


def test_exact_motion_matches_rk4():
    pts = _polar_points(np.random.default_rng(5), 200, 0.97)
    for spec in (F.FlowSpec.single(BUMP, 1.0), *F.build_twist_system(F.regime_layout())):
        ex = F.exact_time_one_map(spec, pts)
        rk = F.time_one_map(spec.with_step(2e-4), pts)
        assert np.abs(ex - rk).max() <= 1e-4


def test_trajectory_csv(tmp_path):
    tr = F.integrate(F.FlowSpec.single(BUMP, 0.01), (0.1, 0.0))
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "t,point,x,y"
    assert len(rows) == len(tr.times) + 1


def test_spec_validation():
    with pytest.raises(ValueError):
        F.FlowSpec.single(BUMP, 1.0, step=0.0)
    with pytest.raises(ValueError):
        F.FlowSpec.single(BUMP, -1.0)


def test_spec_json_round_trip():
    spec = F.twist_word_flow(F.regime_layout(), "xY").then(F.FlowSpec.single(BUMP).conjugated(F.Rigid(0.3, (0.05, 0))))
    again = F.FlowSpec.from_json(spec.to_json())
    assert again.digest() == spec.digest()
    pts = _polar_points(np.random.default_rng(6), 10, 0.9)
    assert np.array_equal(F.time_one_map(again, pts), F.time_one_map(spec, pts))


# ---------------------------------------------------------------- Calabi


def test_calabi_examples():
    assert F.calabi(F.FlowSpec.identity()) == 0.0
    lam = 2.5
    assert math.isclose(F.calabi(F.FlowSpec.single(BUMP.scaled(lam))), lam * F.calabi(F.FlowSpec.single(BUMP)))
    for rho, h0 in ((0.5, 1.2), (0.3, -0.7)):
        H = F.build_radial_bump((0, 0), rho, h0)
        assert math.isclose(F.calabi(F.FlowSpec.single(H)), h0 * math.pi * rho**2 / 4, rel_tol=1e-10)


def test_calabi_grid_oracle_and_conjugation():
    H = F.regime_layout().w12.field(1.0)
    pts, w = F.disc_grid(800)
    grid = float(H.value(pts).sum() * w)
    assert math.isclose(F.calabi(F.FlowSpec.single(H)), grid, rel_tol=2e-3)
    spec = F.FlowSpec.single(BUMP)
    assert math.isclose(F.calabi(spec.conjugated(F.Rigid(1.1, (-0.1, 0.2)))), F.calabi(spec), rel_tol=1e-12)


def test_calabi_homomorphism():
    a = F.FlowSpec.single(BUMP)
    b = F.twist_word_flow(F.regime_layout(), "xxY")
    assert math.isclose(F.calabi(a.then(b)), F.calabi(a) + F.calabi(b), rel_tol=1e-12)
    assert math.isclose(F.calabi(a.inverse()), -F.calabi(a), rel_tol=1e-12)


# ---------------------------------------------------------------- isotopy functionals


def test_l2_length_identity_and_reparametrisation():
    assert F.l2_length(F.FlowSpec.identity()) == 0.0
    one = F.FlowSpec.single(BUMP, 1.0)
    fast = F.FlowSpec.single(BUMP.scaled(2.0), 0.5)
    a, b = F.l2_length(one, 64), F.l2_length(fast, 64)
    assert abs(a - b) <= 0.01 * a


def test_l2_length_right_invariance():
    spec = F.FlowSpec.single(BUMP, 1.0)
    f = F.FlowSpec.single(F.build_radial_bump((-0.2, 0.2), 0.4, 0.8))
    a = F.l2_length(spec, 96)
    b = F.l2_length(spec, 96, precompose=f)
    assert abs(a - b) <= 0.01 * a


def test_gauss_functional_identity():
    e = F.gauss_functional(F.FlowSpec.identity(), 200, seed=1)
    assert e.mean == 0.0 and e.half_width == 0.0


def test_gauss_functional_rigid_rotation():
    theta = 1.3
    R = 0.5
    tw = F.RadialTwist(theta, R, R + 0.05)
    e = F.gauss_functional(F.FlowSpec.single(tw), 400, seed=2, domain=((0.0, 0.0), R))
    # both points inside the rigid part: every chord turns by theta
    expected = theta * (math.pi * R * R) ** 2 / (2 * math.pi)
    assert math.isclose(e.mean, expected, rel_tol=1e-6)


def test_gauss_functional_subadditive():
    g = F.FlowSpec.single(BUMP)
    h = F.twist_word_flow(F.disc_layout(), "x")
    eg = F.gauss_functional(g, 1500, seed=3)
    eh = F.gauss_functional(h, 1500, seed=4)
    egh = F.gauss_functional(g.then(h), 1500, seed=5)
    assert egh.mean <= eg.mean + eh.mean + 3 * max(eg.half_width, eh.half_width, egh.half_width)


# ---------------------------------------------------------------- twist systems


def test_regime_layout_areas():
    lay = F.regime_layout()
    areas = lay.u_areas()
    assert min(areas) >= math.pi / 4
    lay.validate(math.pi / 4)


def test_twist_identity_outside_collar():
    lay = F.regime_layout()
    h, _ = F.build_twist_system(lay)
    pts = _polar_points(np.random.default_rng(7), 4000, 0.999)
    out = ~lay.w12.in_v(pts)
    assert np.array_equal(F.time_one_map(h, pts[out]), pts[out])


def test_twist_rotates_w_once():
    lay = F.regime_layout()
    h, hp = F.build_twist_system(lay)
    pts = _polar_points(np.random.default_rng(8), 2000, 0.99)
    for spec, region in ((h, lay.w12), (hp, lay.w23)):
        inside = pts[region.in_w(pts)]
        assert np.abs(F.exact_time_one_map(spec, inside) - inside).max() <= 1e-9


def test_layout_serialisation():
    lay = F.regime_layout()
    assert F.TwistSystem.from_dict(lay.to_dict()).to_dict() == lay.to_dict()


# ---------------------------------------------------------------- Z^k builder


def test_zk_system_disjoint_and_commuting():
    Z = F.build_zk_system(2, ["xxY", "xxyy"])
    f1, f2 = Z.flows
    pts = _polar_points(np.random.default_rng(9), 400, 0.99)
    a = F.time_one_map(f1.then(f2), pts)
    b = F.time_one_map(f2.then(f1), pts)
    assert np.abs(a - b).max() <= 1e-8
    for f in Z.flows:
        assert abs(F.calabi(f)) <= 1e-6
    c = [d.center for d in Z.cells]
    assert math.dist(c[0], c[1]) >= Z.cells[0].radius + Z.cells[1].radius - 1e-12


def test_zk_single():
    Z = F.build_zk_system(1, ["xYx"])
    assert len(Z.flows) == 1 and abs(F.calabi(Z.flows[0])) <= 1e-6
    with pytest.raises(ValueError):
        F.build_zk_system(0)
