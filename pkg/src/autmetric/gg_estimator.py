"""Monte Carlo evaluation of Gambaudo-Ghys quasi-morphisms.

For a flow g and a quasi-morphism q on pure n-braids,
``Phi_n(g) = int q(gamma(g; x)) dx`` over n-point configurations of the disc,
and ``Phibar_n(g) = lim Phi_n(g^p) / p``.  Samples are traced in batches by the
compiled tracer; every power of a schedule is read off one flow pass.

Configurations are drawn either from the whole disc or from a *support cover*:
disjoint discs containing the support of every field.  The homogenised value
only sees configurations with every point in the support (the others stay
bounded as p grows), so the cover gives the same limit with far less variance.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import braid_trace as T
from .braid_core import BraidWord, BrooksQM, InvariantQM, is_pure, qm_on_braid, writhe
from .estimate import Estimate, combine_strata
from .flowlab import CompositeField, FlowSpec, HamiltonianField, Segment, calabi, morse_check

__all__ = [
    "Estimate",
    "Schedule",
    "Linking",
    "LINKING",
    "DegenerateSampling",
    "Domain",
    "support_cover",
    "sample_configurations",
    "Stratum",
    "plan_strata",
    "braid_values",
    "phi_n",
    "phi_n_multi",
    "phi_n_bar",
    "phi_n_bar_multi",
    "calabi_ratio",
    "CalabiRatioReport",
    "vanishing_report",
    "VanishingRow",
    "estimate_record",
]

DEGENERATE_LIMIT = 0.01
MAX_RESAMPLE = 8


@dataclass(frozen=True)
class Schedule:
    """Increasing powers p at which ``Phi_n(g^p)/p`` is evaluated."""

    powers: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    samples: int = 10_000

    def __post_init__(self):
        p = tuple(int(v) for v in self.powers)
        object.__setattr__(self, "powers", p)
        if not p or p[0] < 1 or any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError("powers must be strictly increasing and >= 1")
        if self.samples < 1:
            raise ValueError("samples must be positive")

    def to_dict(self) -> dict:
        return {"powers": list(self.powers), "samples": self.samples}


@dataclass(frozen=True)
class Linking:
    """Total pairwise linking of a pure braid: ``writhe / 2`` (a homomorphism on P_n)."""

    name: str = "linking"

    def __call__(self, w: BraidWord) -> float:
        return writhe(w) / 2.0


LINKING = Linking()

QuasiMorphism = Union[BrooksQM, InvariantQM, Linking, Callable[[BraidWord], float]]


def _qm_name(q) -> str:
    return getattr(q, "name", None) or getattr(q, "__name__", "qm")


def _qm_value(q, w: BraidWord) -> float:
    if isinstance(q, BrooksQM):
        return float(qm_on_braid(q, w))
    return float(q(w))


class DegenerateSampling(RuntimeError):
    """Too many configurations could not be traced reliably."""


# ---------------------------------------------------------------------------
# sampling domains


@dataclass(frozen=True)
class Domain:
    """Disjoint discs from which configuration points are drawn (area weighted)."""

    discs: tuple[tuple[float, float, float], ...]

    @property
    def areas(self) -> np.ndarray:
        return np.array([math.pi * r * r for _, _, r in self.discs])

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @classmethod
    def unit_disc(cls) -> "Domain":
        return cls(((0.0, 0.0, 1.0),))

    def to_dict(self) -> dict:
        return {"discs": [list(d) for d in self.discs]}


def _enclosing(a, b):
    # smallest disc containing discs a and b
    (x1, y1, r1), (x2, y2, r2) = a, b
    d = math.hypot(x2 - x1, y2 - y1)
    if d + r2 <= r1:
        return a
    if d + r1 <= r2:
        return b
    r = 0.5 * (d + r1 + r2)
    t = (r - r1) / d
    return (x1 + t * (x2 - x1), y1 + t * (y2 - y1), r)


def support_cover(spec: FlowSpec, margin: float = 0.0, full_fraction: float = 0.8) -> Domain:
    """Disjoint discs covering the support of every segment of the flow.

    Overlapping support discs are merged into enclosing discs until the set
    is disjoint (tangent discs are allowed).  Falls back to the unit disc when the cover would poke out of
    it or cover most of it anyway.
    """
    discs = [(cx, cy, r + margin) for cx, cy, r in spec.support_discs() if r > 0]
    if not discs:
        return Domain.unit_disc()
    merged = True
    while merged:
        merged = False
        for i in range(len(discs)):
            for j in range(i + 1, len(discs)):
                a, b = discs[i], discs[j]
                if math.hypot(a[0] - b[0], a[1] - b[1]) < a[2] + b[2] - 1e-12:
                    discs[i] = _enclosing(a, b)
                    del discs[j]
                    merged = True
                    break
            if merged:
                break
    dom = Domain(tuple(sorted((float(x), float(y), float(r)) for x, y, r in discs)))
    if any(math.hypot(x, y) + r > 1.0 for x, y, r in dom.discs) or dom.area > full_fraction * math.pi:
        return Domain.unit_disc()
    return dom


def _draw(rng, domain: Domain, assign, n: int, floor: float) -> np.ndarray:
    p = domain.areas / domain.area
    while True:
        if assign is None:
            k = rng.choice(len(domain.discs), size=n, p=p) if len(domain.discs) > 1 else np.zeros(n, dtype=int)
        else:
            k = np.asarray(assign)
        c = np.array([domain.discs[i][:2] for i in k])
        r = np.array([domain.discs[i][2] for i in k]) * np.sqrt(rng.random(n))
        t = 2.0 * math.pi * rng.random(n)
        x = c + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
        d = np.hypot(*(x[:, None, :] - x[None, :, :]).transpose(2, 0, 1))
        if np.all(d[np.triu_indices(n, 1)] >= floor) and np.all(np.hypot(x[:, 0], x[:, 1]) < 1.0):
            return x


@dataclass(frozen=True)
class Stratum:
    """Points assigned to fixed discs of a domain (``assign=None``: area-weighted mixture)."""

    assign: tuple[int, ...] | None
    weight: float  # measure of the stratum in configuration space
    count: int


def plan_strata(domain: Domain, n: int, samples: int, mixed_fraction: float = 0.1) -> list[Stratum]:
    """Split the samples over disc assignments of the n points.

    Strata with every point in one disc carry the homogenised value and get
    ``1 - mixed_fraction`` of the samples (proportional to measure); the
    others only contribute terms that stay bounded in p.  With a single disc,
    or too few samples for two per stratum, one area-weighted stratum is used.
    """
    m = len(domain.discs)
    total = domain.area**n
    nstrata = m**n
    if m == 1 or samples < 4 * nstrata:
        return [Stratum(None, total, samples)]
    areas = domain.areas
    pure, mixed = [], []
    for assign in itertools.product(range(m), repeat=n):
        w = float(np.prod(areas[list(assign)]))
        (pure if len(set(assign)) == 1 else mixed).append((assign, w))
    n_mixed = max(int(round(mixed_fraction * samples)), 2 * len(mixed))
    out = []
    for group, budget in ((pure, samples - n_mixed), (mixed, n_mixed)):
        wsum = sum(w for _, w in group)
        raw = [max(2.0, budget * w / wsum) for _, w in group]
        cnt = [int(math.floor(r)) for r in raw]
        # largest remainder, deterministic
        rem = budget - sum(cnt)
        order = sorted(range(len(group)), key=lambda i: (cnt[i] - raw[i], i))
        for i in order[: max(rem, 0)]:
            cnt[i] += 1
        out.extend(Stratum(tuple(a), w, c) for (a, w), c in zip(group, cnt))
    return out


def sample_configurations(
    domain: Domain,
    n: int,
    indices: Sequence[int],
    seed: int,
    attempt: int = 0,
    floor: float = T.SEPARATION_FLOOR,
    assignments: Sequence | None = None,
) -> np.ndarray:
    """Configurations for the given sample indices; each has its own seeded stream."""
    out = np.empty((len(indices), n, 2))
    for k, i in enumerate(indices):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(i), int(attempt)])
        out[k] = _draw(rng, domain, None if assignments is None else assignments[k], n, floor)
    return out


# ---------------------------------------------------------------------------
# core sampler


@dataclass
class _Run:
    values: np.ndarray  # (N, n_powers, n_qms)
    strata: list[Stratum]
    resampled: int
    points: np.ndarray  # (N, n, 2) configurations actually traced

    def estimate(self, c: int, j: int, p: int, seed: int, powers, flags, mask=None) -> Estimate:
        v = self.values[:, c, j] if mask is None else np.where(mask, self.values[:, c, j], 0.0)
        parts, lo = [], 0
        for st in self.strata:
            parts.append((st.weight, v[lo : lo + st.count]))
            lo += st.count
        m, hw, cnt = combine_strata(parts)
        return Estimate(m / p, hw / p, cnt, int(seed), tuple(powers), tuple(flags))


def braid_values(bt: T.BatchTrace, k: int, n: int, qms) -> np.ndarray:
    """Quasi-morphism values on the traced braids of sample k for every power."""
    out = np.empty((len(bt.powers), len(qms)))
    for c in range(len(bt.powers)):
        w = bt.word(k, c, n)
        if not is_pure(w):
            raise ArithmeticError("traced braid is not pure")
        for j, q in enumerate(qms):
            out[c, j] = _qm_value(q, w)
    return out


def _run(spec, qms, n, samples, seed, powers, domain, basepoints, direction, batch, mixed_fraction=0.1) -> _Run:
    if samples < 1:
        raise ValueError("need at least one sample")
    z = T.default_basepoints(n) if basepoints is None else np.asarray(basepoints, dtype=float)
    strata = plan_strata(domain, n, samples, mixed_fraction)
    assign = [st.assign for st in strata for _ in range(st.count)]
    samples = len(assign)  # minimum stratum sizes may add a few samples
    values = np.empty((samples, len(powers), len(qms)))
    points = np.empty((samples, n, 2))
    resampled = 0
    for start in range(0, samples, batch):
        idx = np.arange(start, min(samples, start + batch))
        asg = [assign[i] for i in idx]
        X = sample_configurations(domain, n, idx, seed, assignments=asg)
        bt = T.trace_batch(spec, X, z, powers, direction)
        todo = np.nonzero(bt.degenerate)[0]
        points[idx] = X
        for k in np.setdiff1d(np.arange(len(idx)), todo):
            values[idx[k]] = braid_values(bt, k, n, qms)
        attempt = 0
        while todo.size:
            attempt += 1
            resampled += todo.size
            if attempt > MAX_RESAMPLE:
                raise DegenerateSampling(f"samples {idx[todo].tolist()} stayed degenerate after resampling")
            X2 = sample_configurations(domain, n, idx[todo], seed, attempt, assignments=[asg[k] for k in todo])
            b2 = T.trace_batch(spec, X2, z, powers, direction)
            for m, k in enumerate(todo):
                if not b2.degenerate[m]:
                    values[idx[k]] = braid_values(b2, m, n, qms)
                    points[idx[k]] = X2[m]
            todo = todo[b2.degenerate]
    if resampled > DEGENERATE_LIMIT * samples:
        raise DegenerateSampling(
            f"{resampled} of {samples} configurations were degenerate (limit {DEGENERATE_LIMIT:.0%})"
        )
    return _Run(values, strata, resampled, points)


def phi_n_multi(
    spec: FlowSpec,
    qms: Sequence[QuasiMorphism],
    n: int = 3,
    samples: int = 1000,
    seed: int = 0,
    power: int = 1,
    domain: Domain | None = None,
    basepoints=None,
    direction: float = 0.0,
    batch: int = 2048,
) -> list[Estimate]:
    """``Phi_n(g^power)`` for several quasi-morphisms on common samples.

    Without ``domain`` configurations are uniform in the unit disc, matching
    the definition exactly at every power.
    """
    dom = Domain.unit_disc() if domain is None else domain
    run = _run(spec, list(qms), n, samples, seed, (int(power),), dom, basepoints, direction, batch)
    flags = ["resampled"] if run.resampled else []
    return [run.estimate(0, j, 1, seed, (power,), flags) for j in range(len(qms))]


def phi_n(spec: FlowSpec, q: QuasiMorphism, n: int = 3, samples: int = 1000, seed: int = 0, **kw) -> Estimate:
    """Monte Carlo estimate of ``Phi_n(g)`` with a 95% confidence interval."""
    return phi_n_multi(spec, [q], n, samples, seed, **kw)[0]


def _cauchy(prev: Estimate, last: Estimate) -> bool:
    return abs(last.mean - prev.mean) <= math.hypot(last.half_width, prev.half_width)


def phi_n_bar_multi(
    spec: FlowSpec,
    qms: Sequence[QuasiMorphism],
    n: int = 3,
    schedule: Schedule = Schedule(),
    seed: int = 0,
    domain: Domain | str | None = "support",
    basepoints=None,
    direction: float = 0.0,
    batch: int = 2048,
    mixed_fraction: float = 0.1,
) -> list[Estimate]:
    """Homogenised estimates ``Phi_n(g^p)/p`` at the largest scheduled power.

    Every power of the schedule comes from the same samples and one flow pass.
    The result carries the whole per-power trace; it is flagged
    ``non-converged`` when the last two powers differ by more than their
    combined half widths.  ``domain="support"`` samples from the support
    cover of the flow, ``None`` from the unit disc; several cover discs are
    sampled by strata (see ``plan_strata``).
    """
    dom = _resolve_domain(spec, domain)
    powers = schedule.powers
    run = _run(spec, list(qms), n, schedule.samples, seed, powers, dom, basepoints, direction, batch, mixed_fraction)
    return [_homogenised(run, j, seed, powers) for j in range(len(qms))]


def _resolve_domain(spec: FlowSpec, domain) -> Domain:
    if domain == "support":
        return support_cover(spec)
    if domain is None:
        return Domain.unit_disc()
    return domain


def _homogenised(run: _Run, j: int, seed: int, powers, mask=None) -> Estimate:
    per = [run.estimate(c, j, p, seed, powers, (), mask) for c, p in enumerate(powers)]
    flags = ["resampled"] if run.resampled else []
    if len(per) >= 2 and not _cauchy(per[-2], per[-1]):
        flags.append("non-converged")
    last = per[-1]
    return Estimate(
        last.mean,
        last.half_width,
        last.samples,
        int(seed),
        tuple(powers),
        tuple(flags),
        tuple((p, e.mean, e.half_width) for p, e in zip(powers, per)),
    )


def phi_n_bar_split(
    spec: FlowSpec,
    qms: Sequence[QuasiMorphism],
    inside: Callable[[np.ndarray], np.ndarray],
    n: int = 3,
    schedule: Schedule = Schedule(),
    seed: int = 0,
    domain: Domain | str | None = "support",
    basepoints=None,
    direction: float = 0.0,
    batch: int = 2048,
) -> tuple[list[Estimate], list[Estimate], list[Estimate]]:
    """Homogenised estimates split by a configuration predicate.

    ``inside(X)`` maps configurations ``(N, n, 2)`` to booleans.  Returns the
    totals, the part of the integral over configurations where the predicate
    holds, and the remainder; all three come from the same samples and the
    parts add up to the totals.
    """
    dom = _resolve_domain(spec, domain)
    powers = schedule.powers
    run = _run(spec, list(qms), n, schedule.samples, seed, powers, dom, basepoints, direction, batch)
    m = np.asarray(inside(run.points), dtype=bool)
    if m.shape != (run.points.shape[0],):
        raise ValueError("predicate must return one boolean per configuration")
    tot = [_homogenised(run, j, seed, powers) for j in range(len(qms))]
    ins = [_homogenised(run, j, seed, powers, m) for j in range(len(qms))]
    out = [_homogenised(run, j, seed, powers, ~m) for j in range(len(qms))]
    return tot, ins, out


def phi_n_bar(spec: FlowSpec, q: QuasiMorphism, n: int = 3, schedule: Schedule = Schedule(), seed: int = 0, **kw) -> Estimate:
    """Homogenised Gambaudo-Ghys estimate for one quasi-morphism."""
    return phi_n_bar_multi(spec, [q], n, schedule, seed, **kw)[0]


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class CalabiRatioReport:
    ratios: tuple[float, ...]
    half_widths: tuple[float, ...]
    calabi_values: tuple[float, ...]
    estimates: tuple[Estimate, ...]
    spread: float
    passed: bool
    tolerance: float = 0.05

    def to_dict(self) -> dict:
        return {
            "ratios": list(self.ratios),
            "half_widths": list(self.half_widths),
            "calabi": list(self.calabi_values),
            "estimates": [e.to_dict() for e in self.estimates],
            "spread": self.spread,
            "passed": self.passed,
            "tolerance": self.tolerance,
        }


def calabi_ratio(
    specs: Sequence[FlowSpec],
    schedule: Schedule = Schedule((1, 2, 4, 8, 16), 10_000),
    seed: int = 0,
    tolerance: float = 0.05,
    threshold: float = 1e-6,
    domain: Domain | str | None = "support",
) -> CalabiRatioReport:
    """``Phibar_2(g) / Calabi(g)`` per flow, with a constancy verdict.

    ``Phibar_2`` uses total linking of the two strands.  The verdict passes
    when every ratio is within ``tolerance`` (relative) of their mean.
    """
    ratios, hws, cals, ests = [], [], [], []
    for s in specs:
        cal = calabi(s)
        if abs(cal) <= threshold:
            raise ValueError("Calabi value too close to zero for a ratio")
        e = phi_n_bar(s, LINKING, 2, schedule, seed, domain=domain)
        ratios.append(e.mean / cal)
        hws.append(e.half_width / abs(cal))
        cals.append(cal)
        ests.append(e)
    r = np.array(ratios)
    centre = float(np.mean(r))
    spread = float(np.max(np.abs(r - centre)) / abs(centre)) if centre else math.inf
    return CalabiRatioReport(tuple(ratios), tuple(hws), tuple(cals), tuple(ests), spread, spread <= tolerance, tolerance)


@dataclass(frozen=True)
class VanishingRow:
    field: str
    qm: str
    estimate: Estimate
    vanishes: bool
    perturbed: tuple[tuple[float, Estimate], ...] = ()
    control: bool = False

    def to_dict(self) -> dict:
        return {
            "field": self.field,
            "qm": self.qm,
            "estimate": self.estimate.to_dict(),
            "vanishes": self.vanishes,
            "control": self.control,
            "perturbed": [{"delta": d, "estimate": e.to_dict()} for d, e in self.perturbed],
        }


def _autonomous(H: HamiltonianField) -> FlowSpec:
    return FlowSpec((Segment(H, 1.0),))


def vanishing_report(
    fields: Sequence[HamiltonianField],
    qms: Sequence[QuasiMorphism],
    schedule: Schedule = Schedule((1, 2, 4, 8, 16), 20_000),
    seed: int = 0,
    perturbation: HamiltonianField | None = None,
    deltas: Sequence[float] = (),
    controls: Sequence[tuple[str, FlowSpec]] = (),
    check_morse: bool = True,
) -> list[VanishingRow]:
    """Table of ``Phibar_3`` on autonomous Morse-type flows, expected to vanish.

    With a perturbation field, each row also re-runs ``H + delta * P`` for the
    given deltas (common random numbers).  ``controls`` are non-autonomous
    flows reported alongside; they are expected not to vanish.
    """
    rows = []
    for H in fields:
        if check_morse:
            rep = morse_check(H)
            if not rep.ok:
                raise ValueError(f"field is not of Morse type: {'; '.join(rep.reasons)}")
        spec = _autonomous(H)
        dom = "support"
        if perturbation is not None and deltas:
            # one domain for the plain and perturbed runs, so differences share samples
            dom = support_cover(spec.then(_autonomous(perturbation)))
        ests = phi_n_bar_multi(spec, qms, 3, schedule, seed, domain=dom)
        pert = {j: [] for j in range(len(qms))}
        for d in deltas:
            ps = _autonomous(CompositeField((H, perturbation.scaled(d))))
            for j, e in enumerate(phi_n_bar_multi(ps, qms, 3, schedule, seed, domain=dom)):
                pert[j].append((float(d), e))
        for j, q in enumerate(qms):
            e = ests[j]
            rows.append(VanishingRow(_field_name(H), _qm_name(q), e, e.contains(0.0), tuple(pert[j])))
    for label, spec in controls:
        for q, e in zip(qms, phi_n_bar_multi(spec, qms, 3, schedule, seed)):
            rows.append(VanishingRow(label, _qm_name(q), e, e.contains(0.0), (), True))
    return rows


def _field_name(H) -> str:
    d = H.to_dict()
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12] + ":" + d.get("kind", "field")


def estimate_record(est: Estimate, config: dict, n: int) -> dict:
    """JSON record for an estimate tied to the digest of its configuration."""
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
    return {
        "config_hash": digest,
        "seed": est.seed,
        "n": n,
        "p_schedule": list(est.p_schedule),
        "mean": est.mean,
        "ci": est.half_width,
        "samples": est.samples,
        "flags": list(est.flags),
        "trace": [list(t) for t in est.trace],
    }
