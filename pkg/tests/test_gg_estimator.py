import math

import numba
import numpy as np
import pytest

from autmetric import flowlab as F
from autmetric import gg_estimator as G
from autmetric.braid_core import InvariantQM
from autmetric.estimate import Estimate, combine_strata

BUMP = F.build_radial_bump((0.1, 0.0), 0.5, 3.0)
SPEC = F.FlowSpec.single(BUMP)
SHORT = G.Schedule((1, 2, 4), 1500)


def _close(a: Estimate, b: Estimate, k: float = 1.0) -> bool:
    return abs(a.mean - b.mean) <= k * math.hypot(a.half_width, b.half_width)


# ---------------------------------------------------------------- plumbing


def test_schedule_validation():
    with pytest.raises(ValueError):
        G.Schedule((2, 1))
    with pytest.raises(ValueError):
        G.Schedule((0, 1))
    with pytest.raises(ValueError):
        G.Schedule((1,), 0)


def test_combine_strata_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(1, 1, 400), rng.normal(-2, 3, 100)
    m, hw, n = combine_strata([(2.0, a), (0.5, b)])
    assert n == 500
    assert math.isclose(m, 2 * a.mean() + 0.5 * b.mean(), rel_tol=1e-12)
    se = math.sqrt(4 * a.var(ddof=1) / 400 + 0.25 * b.var(ddof=1) / 100)
    assert math.isclose(hw, 1.959963984540054 * se, rel_tol=1e-9)


def test_support_cover():
    dom = G.support_cover(SPEC)
    assert len(dom.discs) == 1
    x, y, r = dom.discs[0]
    assert (x, y, r) == pytest.approx((0.1, 0.0, 0.5))
    assert G.support_cover(F.FlowSpec.identity()) == G.Domain.unit_disc()
    big = F.FlowSpec.single(F.build_radial_bump((0, 0), 0.95, 1.0))
    assert G.support_cover(big) == G.Domain.unit_disc()
    two = F.FlowSpec.single(F.build_radial_bump((-0.4, 0), 0.3, 1.0)).then(
        F.FlowSpec.single(F.build_radial_bump((0.4, 0), 0.3, 1.0))
    )
    assert len(G.support_cover(two).discs) == 2


def test_plan_strata():
    dom = G.Domain(((-0.5, 0.0, 0.3), (0.5, 0.0, 0.2)))
    plan = G.plan_strata(dom, 3, 1000)
    assert sum(s.count for s in plan) == 1000
    assert math.isclose(sum(s.weight for s in plan), dom.area**3)
    assert all(s.count >= 2 for s in plan)
    pure = sum(s.count for s in plan if len(set(s.assign)) == 1)
    assert pure == 900
    assert G.plan_strata(G.Domain.unit_disc(), 3, 10)[0].assign is None


def test_sample_configurations_deterministic_and_separated():
    dom = G.Domain(((0.0, 0.0, 0.5),))
    a = G.sample_configurations(dom, 3, [5, 6, 7], seed=11)
    b = G.sample_configurations(dom, 3, [7], seed=11)
    assert np.array_equal(a[2], b[0])
    assert np.all(np.hypot(a[..., 0], a[..., 1]) < 0.5)
    c = G.sample_configurations(dom, 3, [5], seed=11, attempt=1)
    assert not np.array_equal(a[0], c[0])


# ---------------------------------------------------------------- estimates


def test_identity_is_zero():
    e = G.phi_n(F.FlowSpec.identity(), G.LINKING, 3, 300)
    assert e.mean == 0.0 and e.half_width == 0.0
    e = G.phi_n_bar(F.FlowSpec.identity(), InvariantQM.from_pattern("xxy"), 3, SHORT, domain=None)
    assert e.mean == 0.0


def test_clt_half_width_scaling():
    a = G.phi_n(SPEC, G.LINKING, 2, 2000, seed=1)
    b = G.phi_n(SPEC, G.LINKING, 2, 8000, seed=1)
    assert 1.7 <= a.half_width / b.half_width <= 2.3


def test_homogeneity():
    a = G.phi_n_bar(SPEC, G.LINKING, 2, SHORT, seed=2)
    b = G.phi_n_bar(SPEC.power(2), G.LINKING, 2, SHORT, seed=3)
    assert abs(b.mean - 2 * a.mean) <= 1.5 * math.hypot(b.half_width, 2 * a.half_width)


def test_conjugation_invariance():
    conj = SPEC.conjugated(F.Rigid(2.0, (0.0, 0.0)))
    a = G.phi_n_bar(SPEC, G.LINKING, 2, SHORT, seed=4)
    b = G.phi_n_bar(conj, G.LINKING, 2, SHORT, seed=5)
    assert _close(a, b, 1.5)


def test_trace_and_flags():
    e = G.phi_n_bar(SPEC, G.LINKING, 2, SHORT, seed=6)
    assert [t[0] for t in e.trace] == [1, 2, 4]
    assert e.p_schedule == (1, 2, 4)
    assert e.mean == e.trace[-1][1]


def test_determinism_across_thread_counts():
    g = F.twist_word_flow(F.regime_layout(), "xY")
    q = InvariantQM.from_pattern("xxy")
    before = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        a = G.phi_n_bar(g, q, 3, G.Schedule((1, 2), 200), seed=7)
        numba.set_num_threads(before)
        b = G.phi_n_bar(g, q, 3, G.Schedule((1, 2), 200), seed=7)
    finally:
        numba.set_num_threads(before)
    assert a == b and a.trace == b.trace


def test_linking_calabi_sign():
    # a bump with positive height turns points clockwise, so linking is negative
    e = G.phi_n_bar(SPEC, G.LINKING, 2, SHORT, seed=8)
    assert e.mean < -3 * e.half_width


# ---------------------------------------------------------------- reports


def test_calabi_ratio_conjugate_and_square():
    sched = G.Schedule((1, 2, 4), 3000)
    specs = [SPEC, SPEC.conjugated(F.Rigid(1.0, (-0.2, 0.1))), SPEC.power(2)]
    rep = G.calabi_ratio(specs, sched, seed=9, tolerance=0.1)
    assert rep.passed, rep.ratios
    assert math.isclose(rep.calabi_values[2], 2 * rep.calabi_values[0])
    with pytest.raises(ValueError):
        G.calabi_ratio([F.FlowSpec.identity()], sched)


def test_vanishing_report_bump_and_control():
    q = InvariantQM.from_pattern("xxy")
    ctrl = F.twist_word_flow(F.regime_layout(), "xYxy")
    rows = G.vanishing_report([BUMP], [q], G.Schedule((1, 2, 4), 1500), seed=10, controls=[("xYxy", ctrl)])
    plain, control = rows
    assert plain.vanishes and not plain.control
    assert control.control and abs(control.estimate.mean) > 3 * control.estimate.half_width


def test_vanishing_report_rejects_non_morse():
    # two equal overlapping bumps: the two maxima share a critical value
    twin = F.CompositeField((F.build_radial_bump((-0.2, 0), 0.35, 1.0), F.build_radial_bump((0.2, 0), 0.35, 1.0)))
    assert not F.morse_check(twin).ok
    with pytest.raises(ValueError):
        G.vanishing_report([twin], [G.LINKING], G.Schedule((1,), 10))


def test_estimate_record_digest():
    e = G.phi_n(SPEC, G.LINKING, 2, 200, seed=1)
    r1 = G.estimate_record(e, {"a": 1, "b": 2}, 2)
    r2 = G.estimate_record(e, {"b": 2, "a": 1}, 2)
    assert r1 == r2


def test_phi_n_bar_split_parts_sum_to_total():
    g = F.twist_word_flow(F.regime_layout(), "xY")
    qs = [InvariantQM.from_pattern("xxy"), G.LINKING]
    sched = G.Schedule((1, 2), 300)

    def left(X):
        return X[:, 0, 0] < 0.0

    tot, ins, out = G.phi_n_bar_split(g, qs, left, 3, sched, seed=12)
    ref = G.phi_n_bar_multi(g, qs, 3, sched, seed=12)
    for t, i, o, r in zip(tot, ins, out, ref):
        assert t.mean == pytest.approx(r.mean, abs=1e-12)
        assert i.mean + o.mean == pytest.approx(t.mean, abs=1e-9)
    everything, full, none = G.phi_n_bar_split(g, qs, lambda X: np.ones(len(X), bool), 3, sched, seed=12)
    assert [e.mean for e in full] == pytest.approx([e.mean for e in everything], abs=1e-12)
    assert all(e.mean == 0.0 for e in none)
