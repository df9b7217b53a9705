"""Acceptance suite: one verdict line per criterion, printed in the terminal summary.

Tolerances, seeds and sample counts are pinned here.  Time budgets are part
of each verdict.  Criteria that cannot hold as literally stated are still run
as stated; they report FAIL and are marked as strict expected failures.
"""

import math
import time

import numpy as np
import pytest

from autmetric import braid_core as B
from autmetric import braid_trace as T
from autmetric import flowlab as F
from autmetric import gg_estimator as G
from autmetric import qm_toolkit as Q

pytestmark = pytest.mark.slow

Z95 = 1.959963984540054


def _fmt(e):
    return f"{e.mean:+.4f} +- {e.half_width:.4f}"


def _verdict(acceptance, label, ok, detail, elapsed, budget):
    in_time = elapsed <= budget
    acceptance(label, ok and in_time, f"{detail}  [{elapsed:.1f}s / budget {budget:.0f}s]")
    return ok and in_time


# ---------------------------------------------------------------- 1-5: exact and deterministic


def test_criterion_01_delta_identity(acceptance):
    t0 = time.perf_counter()
    delta = B.eta(2, 3) * B.eta(3, 3)
    twist = B.BraidWord(3, (1, 2) * 3)
    minus_i = B.IntMatrix2(-1, 0, 0, -1)
    ok = B.sl2_matrix(delta) == minus_i == B.sl2_matrix(twist) and B.writhe(delta) == B.writhe(twist)
    detail = f"sl2 = {B.sl2_matrix(delta).as_rows()}, writhes {B.writhe(delta)} / {B.writhe(twist)}"
    assert _verdict(acceptance, "1", ok, detail, time.perf_counter() - t0, 1)


def test_criterion_02_projection_round_trip(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20261017)
    done = bad = 0
    while done < 1000:
        w = B.BraidWord(3, tuple(int(v) for v in rng.choice([1, -1, 2, -2], size=int(rng.integers(0, 41)))))
        if not B.is_pure(w):
            continue
        m, s = B.evaluate_free_word(B.p3_to_f2(w)), B.sl2_matrix(w)
        bad += not (m == s or m == -s)
        done += 1
    assert _verdict(acceptance, "2", bad == 0, f"{done} pure words, {bad} mismatches", time.perf_counter() - t0, 10)


def test_criterion_03_brooks_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for pat in ("xy", "xY", "xxy"):
        q = B.BrooksQM(B.FreeWord(pat))
        for _ in range(500):
            g = B.FreeWord("".join(rng.choice(list("xXyY"), size=int(rng.integers(1, 31)))))
            if not g.letters:
                continue
            worst = max(worst, abs(B.brooks_count(q, g**64) / 64 - B.brooks_hom(q, g)))
    ok = worst <= 1 / 8
    assert _verdict(acceptance, "3", ok, f"max |count(g^64)/64 - hom(g)| = {worst:.4f} (tol 0.125)",
                    time.perf_counter() - t0, 30)


def test_criterion_04_flow_fidelity(acceptance):
    t0 = time.perf_counter()
    c, rho = (0.1, -0.05), 0.5
    H = F.build_radial_bump(c, rho, 1.2)
    spec = F.FlowSpec.single(H)
    g = np.linspace(-rho, rho, 20)
    pts = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2) + np.array(c)
    det_err = float(np.abs(F.jacobian_det(spec, pts) - 1.0).max())
    # energy along trajectories of points spread over the support
    starts = pts[np.hypot(*(pts - np.array(c)).T) < rho][::7]
    tr = F.integrate(F.FlowSpec.single(H, 3.0), starts)
    Hs = np.stack([H.value(p) for p in tr.positions])
    e_err = float(np.abs(Hs - Hs[0]).max())
    ok = det_err <= 1e-4 and e_err <= 1e-6
    assert _verdict(acceptance, "4", ok, f"max|detJ-1| = {det_err:.2e}, max|dH| = {e_err:.2e} over {len(starts)} orbits",
                    time.perf_counter() - t0, 60)


def test_criterion_05_twist_tracing(acceptance):
    t0 = time.perf_counter()
    lay = F.regime_layout()
    h, hp = F.build_twist_system(lay, math.pi / 4)
    z = np.array(lay.basepoints)
    wh = T.extract_braid(T.make_loop(h, z, basepoints=z))
    whp = T.extract_braid(T.make_loop(hp, z, basepoints=z))
    ok = wh.letters == (1, 1) and whp.letters == (2, 2)
    assert _verdict(acceptance, "5", ok, f"h -> {list(wh.letters)}, h' -> {list(whp.letters)}",
                    time.perf_counter() - t0, 60)


# ---------------------------------------------------------------- 6: Calabi proportionality


def test_criterion_06_calabi_ratio(acceptance):
    t0 = time.perf_counter()
    bumps = [
        F.build_radial_bump((0.0, 0.0), 0.5, 1.0),
        F.build_radial_bump((0.2, 0.1), 0.35, 0.6),
        F.build_radial_bump((-0.1, 0.2), 0.6, -1.5),
    ]
    rep = G.calabi_ratio([F.FlowSpec.single(b) for b in bumps], G.Schedule((1, 2, 4, 8, 16), 10_000), seed=1,
                         tolerance=0.05)
    detail = "ratios " + ", ".join(f"{r:+.3f}+-{h:.3f}" for r, h in zip(rep.ratios, rep.half_widths))
    detail += f"; spread {rep.spread:.3%} (tol 5%)"
    assert _verdict(acceptance, "6", rep.passed, detail, time.perf_counter() - t0, 600)


# ---------------------------------------------------------------- 7: Morse-type vanishing

BUMPS7 = (F.build_radial_bump((0.1, 0.0), 0.5, 1.0), F.build_radial_bump((-0.15, 0.2), 0.6, -0.8))
LITERAL = B.BrooksQM(B.FreeWord("xy"))
INVARIANT = B.InvariantQM.from_pattern("xxy")


@pytest.fixture(scope="module")
def criterion7():
    t0 = time.perf_counter()
    rows = G.vanishing_report(BUMPS7, [LITERAL, INVARIANT], G.Schedule((1, 2, 4, 8, 16), 20_000), seed=7)
    lay = F.regime_layout()
    ctrl = G.Schedule((1, 2, 4, 8, 16), 10_000)
    controls = {}
    for word in ("xy", "xYxy"):
        controls[word] = G.phi_n_bar_multi(F.twist_word_flow(lay, word), [LITERAL, INVARIANT], 3, ctrl, seed=70)
    return rows, controls, time.perf_counter() - t0


def _bump_rows(rows, qm_name):
    return [r for r in rows if r.qm == qm_name and not r.control]


@pytest.mark.xfail(strict=True, reason="the literal Brooks(xy) pullback is not invariant under B3 conjugation")
def test_criterion_07_vanishing_literal_brooks_xy(acceptance, criterion7):
    rows, controls, elapsed = criterion7
    bump = _bump_rows(rows, LITERAL.name)
    c = controls["xy"][0]
    vanish = all(r.vanishes for r in bump)
    ctrl_ok = abs(c.mean) > 5 * c.half_width
    detail = ("Brooks(xy) on bumps: " + ", ".join(_fmt(r.estimate) for r in bump)
              + f"; control s_U(s1^2 s2^2): {_fmt(c)} ({abs(c.mean) / c.half_width:.1f} CI)")
    assert _verdict(acceptance, "7", vanish and ctrl_ok, detail, elapsed, 1200)


def test_criterion_07_vanishing_invariant_substitute(acceptance, criterion7):
    rows, controls, elapsed = criterion7
    bump = _bump_rows(rows, INVARIANT.name)
    c = controls["xYxy"][1]
    c0 = controls["xy"][1]
    vanish = all(r.vanishes for r in bump)
    ctrl_ok = abs(c.mean) > 5 * c.half_width
    detail = ("B3-invariant xxy on bumps: " + ", ".join(_fmt(r.estimate) for r in bump)
              + f"; control s_U(xYxy): {_fmt(c)} ({abs(c.mean) / c.half_width:.1f} CI)"
              + f"; s_U(s1^2 s2^2): {_fmt(c0)}")
    assert _verdict(acceptance, "7*", vanish and ctrl_ok, detail, elapsed, 1200)


# ---------------------------------------------------------------- 8: Z^k construction


def test_criterion_08_zk_certificates(acceptance):
    t0 = time.perf_counter()
    sched = G.Schedule((4, 8, 16), 10_000)
    dual = Q.zk_dual(2, sched, seed=11)
    defects = [Q.g_defect_bound(q) for q in dual.duals]
    counts = [Q.factor_count(w) for w in dual.words]

    def cert(d, s):
        return Q.zk_certificate(d, Q.zk_evaluate(dual, d, sched, seed=s), defects, counts, tol=0.1)

    main = {d: cert(d, 100 + i) for i, d in enumerate([(1, 0), (0, 1), (3, -2)])}
    bounds = [main[(1, 0)].content["lower_bound"]]
    for m in (2, 3, 4):
        bounds.append(cert((m, 0), 200 + m).content["lower_bound"])
    growth = Q.affine_growth([1, 2, 3, 4], bounds)
    affine = growth["positive_slope"] and growth["increasing"] and growth["max_relative_residual"] <= 0.2
    ok = all(c.passed for c in main.values()) and affine
    parts = []
    for d, c in main.items():
        vals = ", ".join(f"{m:+.3f}+-{h:.3f}" for m, h in c.content["values"])
        parts.append(f"d={d}: {'ok' if c.passed else 'no'} [{vals}]")
    detail = "; ".join(parts) + (f"; lower bounds m=1..4 {[f'{b:.2e}' for b in bounds]}"
                                 f", slope {growth['slope']:.2e}, resid {growth['max_relative_residual']:.2f} (tol 0.2)")
    assert _verdict(acceptance, "8", ok, detail, time.perf_counter() - t0, 3600)


# ---------------------------------------------------------------- 9: independence matrix


def test_criterion_09_independence_matrix(acceptance):
    t0 = time.perf_counter()
    lay = F.regime_layout()
    areas = lay.u_areas()
    psis, words, _ = Q.exact_dual([B.InvariantQM.from_pattern(p) for p in ("xxy", "xYx")])

    def in_u(X):
        m = lay.membership(X.reshape(-1, 2)).reshape(X.shape[:2])
        return np.all(m >= 0, axis=1)

    sched = G.Schedule((4, 8, 16), 20_000)
    tot, ins = [[None, None], [None, None]], [[None, None], [None, None]]
    for j, w in enumerate(words):
        a, b, _ = G.phi_n_bar_split(F.twist_word_flow(lay, w), psis, in_u, 3, sched, seed=90 + j)
        for i in range(2):
            tot[i][j], ins[i][j] = a[i], b[i]
    cert = Q.independence_matrix(tot, areas, names=[p.name for p in psis], words=[w.letters for w in words])
    pred = 6 * areas[0] * areas[1] * areas[2]
    c = cert.content
    detail = (f"M = {np.round(c['matrix'], 3).tolist()}, sigma_min {c['min_singular_value']:.3f} vs "
              f"10 x |CI| = {10 * c['ci_norm']:.3f}; M11 {_fmt(tot[0][0])} vs 6a1a2a3 = {pred:.3f}; "
              f"in-U part {_fmt(ins[0][0])}, outside-U part {tot[0][0].mean - ins[0][0].mean:+.3f}")
    assert _verdict(acceptance, "9", cert.passed, detail, time.perf_counter() - t0, 1800)


# ---------------------------------------------------------------- 10: crossing inequality


def test_criterion_10_crossing_inequality(acceptance):
    t0 = time.perf_counter()
    lay = F.regime_layout()
    g = F.twist_word_flow(lay, "xYxy")
    z = np.array(lay.basepoints)
    rng = np.random.default_rng(10)
    traced = violations = skipped = 0
    worst = -math.inf
    while traced < 500:
        x = F._sample_disc(rng, 3)
        try:
            b = T.make_loop(g, x, basepoints=z)
            w = T.extract_braid(b)
            prof = T.crossing_profile(b, [0.0])[0]
        except T.DegenerateConfiguration:
            skipped += 1
            continue
        if b.degenerate:
            skipped += 1
            continue
        rhs = sum(int(prof[i, j]) + 4 for i in range(3) for j in range(3) if i != j)
        violations += len(w.letters) > rhs
        worst = max(worst, len(w.letters) - rhs)
        traced += 1
    detail = f"{traced} samples ({skipped} degenerate skipped), {violations} violations, max(len - bound) = {worst}"
    assert _verdict(acceptance, "10", violations == 0, detail, time.perf_counter() - t0, 600)


# ---------------------------------------------------------------- 11: continuity probe


def test_criterion_11_continuity(acceptance):
    t0 = time.perf_counter()
    H = F.build_radial_bump((0.1, 0.0), 0.5, 1.0)
    P = F.build_radial_bump((0.25, 0.1), 0.3, 1.0)
    deltas = (0.1, 0.05, 0.025)
    rows = G.vanishing_report([H], [INVARIANT, G.LINKING], G.Schedule((1, 2, 4, 8, 16), 20_000), seed=11,
                              perturbation=P, deltas=deltas)
    ok = True
    parts = []
    for r in rows:
        diffs = [(d, e.mean - r.estimate.mean, math.hypot(e.half_width, r.estimate.half_width)) for d, e in r.perturbed]
        # each smaller delta must sit no farther from the unperturbed value, up to the CI
        for (d1, x1, h1), (d2, x2, h2) in zip(diffs, diffs[1:]):
            ok &= abs(x2) <= abs(x1) + math.hypot(h1, h2)
        parts.append(f"{r.qm}: base {_fmt(r.estimate)}, diffs " + ", ".join(f"d={d}: {x:+.4f}+-{h:.4f}" for d, x, h in diffs))
    assert _verdict(acceptance, "11", ok, "; ".join(parts), time.perf_counter() - t0, 1800)
