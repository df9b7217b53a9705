"""Autonomous Hamiltonian fields on the unit disc and their flows.

Coordinates live on the open unit disc (area pi).  The vector field of H is
``X_H = (-dH/dy, dH/dx)``.  Every field here is built from a radial profile in
local coordinates ``q = A^{-1}(p - c)`` with ``A`` in SL(2,R), so placements
preserve area and the Calabi integral.

Three field kinds exist:

* ``RadialBump``: ``h0 (1 - r^2/rho^2)^3`` on ``r < rho``.
* ``RadialTwist``: rigid rotation at angular speed ``omega`` on ``r < r_inner``,
  smoothly ramped to zero at ``r_outer``.
* ``CapTwist``: the same idea for the smoothed region ``{r < R0} cap {x < d}``.
  Its Hamiltonian is a function of the squared gauge ``G``, which is
  homogeneous of degree 2, so every orbit in ``G < 1`` has the same period.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from scipy import integrate as sint

from . import _kernels as K
from .estimate import Estimate, from_samples

TWO_PI = 2.0 * math.pi


def _as_points(p) -> np.ndarray:
    a = np.asarray(p, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, 2)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValueError("points must have shape (m, 2)")
    return np.ascontiguousarray(a)


# ---------------------------------------------------------------------------
# placements and rigid motions


@dataclass(frozen=True)
class Rigid:
    """Rotation by ``angle`` about the origin followed by translation ``shift``."""

    angle: float = 0.0
    shift: tuple[float, float] = (0.0, 0.0)

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, pts) -> np.ndarray:
        return _as_points(pts) @ self.rotation.T + np.asarray(self.shift)

    def to_dict(self) -> dict:
        return {"angle": self.angle, "shift": list(self.shift)}

    @classmethod
    def from_dict(cls, d) -> "Rigid":
        return cls(float(d.get("angle", 0.0)), tuple(d.get("shift", (0.0, 0.0))))


@dataclass(frozen=True)
class Placement:
    """Affine area-preserving chart ``q -> center + A q``."""

    center: tuple[float, float] = (0.0, 0.0)
    matrix: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        a, b, c, d = self.matrix
        if abs(a * d - b * c - 1.0) > 1e-9:
            raise ValueError("placement matrix must have determinant 1")

    @property
    def A(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float).reshape(2, 2)

    @property
    def stretch(self) -> float:
        return float(np.linalg.svd(self.A, compute_uv=False)[0])

    def moved(self, rigid: Rigid) -> "Placement":
        R = rigid.rotation
        c = R @ np.asarray(self.center) + np.asarray(rigid.shift)
        return Placement(tuple(float(v) for v in c), tuple(float(v) for v in (R @ self.A).ravel()))

    def scaled(self, s: float, shift=(0.0, 0.0)) -> "Placement":
        c = s * np.asarray(self.center) + np.asarray(shift)
        return Placement(tuple(float(v) for v in c), self.matrix)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "matrix": list(self.matrix)}

    @classmethod
    def from_dict(cls, d) -> "Placement":
        return cls(tuple(d.get("center", (0.0, 0.0))), tuple(d.get("matrix", (1.0, 0.0, 0.0, 1.0))))


def _row(kind, placement: Placement, params, rb) -> np.ndarray:
    row = np.zeros(K.ROW_WIDTH)
    row[K.F_KIND] = kind
    row[K.F_CX], row[K.F_CY] = placement.center
    row[K.F_A : K.F_D + 1] = placement.matrix
    for i, v in enumerate(params):
        row[K.F_P0 + i] = v
    row[K.F_RB] = rb
    row[K.F_TAB] = -1
    return row


# ---------------------------------------------------------------------------
# fields


class _FieldOps:
    """Evaluation helpers shared by all field kinds (which provide ``rows``)."""

    def rows(self) -> np.ndarray:  # pragma: no cover - overridden
        raise NotImplementedError

    def value(self, pts) -> np.ndarray:
        r = self.rows()
        return K.value_field(r, 0, r.shape[0], _as_points(pts))

    def velocity(self, pts) -> np.ndarray:
        r = self.rows()
        return K.velocity_field(r, 0, r.shape[0], _as_points(pts))

    def gradient(self, pts) -> np.ndarray:
        v = self.velocity(pts)
        # X = (-H_y, H_x)
        return np.stack([v[:, 1], -v[:, 0]], axis=1)

    @property
    def support_radius(self) -> float:
        """Radius of an origin-centred disc containing the support."""
        r = self.rows()
        if r.shape[0] == 0:
            return 0.0
        return float(np.max(np.hypot(r[:, K.F_CX], r[:, K.F_CY]) + r[:, K.F_RB]))

    def support_discs(self) -> list[tuple[float, float, float]]:
        return [(float(r[K.F_CX]), float(r[K.F_CY]), float(r[K.F_RB])) for r in self.rows()]


@dataclass(frozen=True)
class RadialBump(_FieldOps):
    """``H = h0 (1 - r^2/rho^2)^3`` inside ``r < rho``: a single non-degenerate maximum."""

    rho: float
    h0: float
    placement: Placement = Placement()
    kind = "radial_bump"

    @property
    def max_speed(self) -> float:
        # |X| = 6 |h0| r (1 - r^2/rho^2)^2 / rho^2 peaks at r = rho / sqrt(5)
        return 6.0 * abs(self.h0) / self.rho * (16.0 / 25.0) / math.sqrt(5.0) * self.placement.stretch

    def rows(self):
        return _row(K.KIND_BUMP, self.placement, (self.rho**2, self.h0), self.rho * self.placement.stretch)[None, :]

    def profile(self, s):
        """H as a function of ``s = |q|^2``."""
        s = np.asarray(s, dtype=float)
        t = np.clip(1.0 - s / self.rho**2, 0.0, None)
        return self.h0 * t**3

    def integral(self) -> float:
        return _radial_integral(self.profile, self.rho**2)

    def scaled(self, lam: float) -> "RadialBump":
        return replace(self, h0=self.h0 * lam)

    def conjugated(self, rigid: Rigid) -> "RadialBump":
        return replace(self, placement=self.placement.moved(rigid))

    def to_dict(self):
        return {"kind": self.kind, "rho": self.rho, "h0": self.h0, "placement": self.placement.to_dict()}


@dataclass(frozen=True)
class RadialTwist(_FieldOps):
    """Rotation at angular speed ``omega`` on ``r < r_inner``, none beyond ``r_outer``.

    The angular speed ramps with a quintic smoothstep in ``r^2``, so the field is C^2.
    """

    omega: float
    r_inner: float
    r_outer: float
    placement: Placement = Placement()
    kind = "twist"

    def __post_init__(self):
        if not 0 < self.r_inner < self.r_outer:
            raise ValueError("need 0 < r_inner < r_outer")

    @property
    def max_speed(self) -> float:
        return abs(self.omega) * self.r_outer * self.placement.stretch

    def rows(self):
        return _row(
            K.KIND_TWIST,
            self.placement,
            (self.omega, self.r_inner**2, self.r_outer**2),
            self.r_outer * self.placement.stretch,
        )[None, :]

    def profile(self, s):
        s = np.asarray(s, dtype=float)
        rw2, rv2 = self.r_inner**2, self.r_outer**2
        half = 0.5 * self.omega
        u = np.clip((rv2 - s) / (rv2 - rw2), 0.0, 1.0)
        ramp = -half * (rv2 - rw2) * u**4 * (2.5 - 3.0 * u + u * u)
        inner = -half * (0.5 * (rv2 - rw2) + (rw2 - s))
        return np.where(s <= rw2, inner, np.where(s < rv2, ramp, 0.0))

    def integral(self) -> float:
        return _radial_integral(self.profile, self.r_outer**2, breaks=[self.r_inner**2])

    def scaled(self, lam: float) -> "RadialTwist":
        return replace(self, omega=self.omega * lam)

    def conjugated(self, rigid: Rigid) -> "RadialTwist":
        return replace(self, placement=self.placement.moved(rigid))

    def to_dict(self):
        return {
            "kind": self.kind,
            "omega": self.omega,
            "r_inner": self.r_inner,
            "r_outer": self.r_outer,
            "placement": self.placement.to_dict(),
        }


def cap_gauge(theta, radius: float, cut: float, sharpness: float):
    """Gauge of the smoothed region ``{r < radius} cap {x < cut}`` along unit directions."""
    c = np.maximum(np.cos(theta), 0.0)
    b = c / cut if cut > 0 else 0.0 * c
    return ((1.0 / radius) ** sharpness + b**sharpness) ** (1.0 / sharpness)


@dataclass(frozen=True)
class CapTwist(_FieldOps):
    """Uniform-period twist of the smoothed region ``W = {r < radius, x < cut}`` (local frame).

    ``H = F(G)`` with ``G`` the squared gauge of W; ``F' = turns * area(W)`` on W so
    every orbit there closes after ``1/turns`` time units.  ``V = kappa * W``.
    ``cut <= 0`` means no cut (a round disc).
    """

    turns: float
    radius: float
    cut: float
    kappa: float
    sharpness: float = 6.0
    placement: Placement = Placement()
    kind = "cap_twist"

    def __post_init__(self):
        if not self.kappa > 1:
            raise ValueError("kappa must exceed 1")
        if self.cut > 0 and self.cut >= self.radius:
            raise ValueError("cut must be smaller than radius")

    @cached_property
    def inner_area(self) -> float:
        f = lambda t: 0.5 / cap_gauge(t, self.radius, self.cut, self.sharpness) ** 2
        if self.cut <= 0:
            return math.pi * self.radius**2
        val, err = sint.quad(f, -math.pi, math.pi, points=[-math.pi / 2, math.pi / 2, 0.0], limit=200)
        return val

    @property
    def amplitude(self) -> float:
        return self.turns * self.inner_area

    @cached_property
    def sector_table(self) -> np.ndarray:
        """Sector area of W from angle -pi and its slope, on a uniform angle grid."""
        M = 4096
        th = np.linspace(-math.pi, math.pi, M + 1)
        slope = 0.5 / cap_gauge(th, self.radius, self.cut, self.sharpness) ** 2
        x, w = np.polynomial.legendre.leggauss(8)
        h = th[1] - th[0]
        mids = th[:-1, None] + 0.5 * h * (x[None, :] + 1.0)
        vals = 0.5 / cap_gauge(mids, self.radius, self.cut, self.sharpness) ** 2
        cell = 0.5 * h * (vals @ w)
        sig = np.concatenate([[0.0], np.cumsum(cell)])
        return np.stack([sig, slope], axis=1)

    @cached_property
    def max_speed(self) -> float:
        """Largest speed of the flow (sampled on a polar grid), for step selection."""
        th = np.linspace(-math.pi, math.pi, 721)
        rr = np.linspace(0.0, self.kappa, 241)[1:]
        R = 1.0 / cap_gauge(th, self.radius, self.cut, self.sharpness)
        pts = (rr[:, None, None] * R[None, :, None] * np.stack([np.cos(th), np.sin(th)], axis=1)[None]).reshape(-1, 2)
        v = _FieldOps.velocity(replace(self, placement=Placement()), pts)
        return 1.05 * float(np.hypot(v[:, 0], v[:, 1]).max()) * self.placement.stretch

    def rows(self):
        return _row(
            K.KIND_GAUGE,
            self.placement,
            (self.amplitude, self.radius, self.cut, self.sharpness, self.kappa),
            self.kappa * self.radius * self.placement.stretch,
        )[None, :]

    def gauge(self, pts) -> np.ndarray:
        """Gauge value of points given in world coordinates (``<1`` on W, ``<kappa`` on V)."""
        P = _as_points(pts) - np.asarray(self.placement.center)
        q = P @ np.linalg.inv(self.placement.A).T
        r = np.hypot(q[:, 0], q[:, 1])
        with np.errstate(invalid="ignore", divide="ignore"):
            th = np.arctan2(q[:, 1], q[:, 0])
        return r * cap_gauge(th, self.radius, self.cut, self.sharpness)

    def profile(self, G):
        G = np.asarray(G, dtype=float)
        k2 = self.kappa**2
        amp = self.amplitude
        u = np.clip((k2 - G) / (k2 - 1.0), 0.0, 1.0)
        ramp = -amp * (k2 - 1.0) * u**4 * (2.5 - 3.0 * u + u * u)
        inner = -amp * (0.5 * (k2 - 1.0) + (1.0 - G))
        return np.where(G <= 1.0, inner, np.where(G < k2, ramp, 0.0))

    def integral(self) -> float:
        # area enclosed by {G < t} is t * area(W)
        val, err = sint.quad(self.profile, 0.0, self.kappa**2, points=[1.0], limit=200)
        _check_quad(val, err)
        return self.inner_area * val

    def scaled(self, lam: float) -> "CapTwist":
        return replace(self, turns=self.turns * lam)

    def conjugated(self, rigid: Rigid) -> "CapTwist":
        return replace(self, placement=self.placement.moved(rigid))

    def to_dict(self):
        return {
            "kind": self.kind,
            "turns": self.turns,
            "radius": self.radius,
            "cut": self.cut,
            "kappa": self.kappa,
            "sharpness": self.sharpness,
            "placement": self.placement.to_dict(),
        }


@dataclass(frozen=True)
class CompositeField(_FieldOps):
    """Sum of fields; the empty composite is ``H = 0``."""

    parts: tuple = ()
    kind = "composite"

    def rows(self):
        if not self.parts:
            return np.zeros((0, K.ROW_WIDTH))
        return np.vstack([p.rows() for p in self.parts])

    def integral(self) -> float:
        return math.fsum(p.integral() for p in self.parts)

    def scaled(self, lam: float) -> "CompositeField":
        return CompositeField(tuple(p.scaled(lam) for p in self.parts))

    def conjugated(self, rigid: Rigid) -> "CompositeField":
        return CompositeField(tuple(p.conjugated(rigid) for p in self.parts))

    def to_dict(self):
        return {"kind": self.kind, "parts": [p.to_dict() for p in self.parts]}


HamiltonianField = Union[RadialBump, RadialTwist, CapTwist, CompositeField]
ZERO_FIELD = CompositeField(())


def field_from_dict(d: dict) -> HamiltonianField:
    kind = d["kind"]
    if kind == "composite":
        return CompositeField(tuple(field_from_dict(p) for p in d.get("parts", ())))
    pl = Placement.from_dict(d.get("placement", {}))
    if kind == "radial_bump":
        return RadialBump(float(d["rho"]), float(d["h0"]), pl)
    if kind == "twist":
        return RadialTwist(float(d["omega"]), float(d["r_inner"]), float(d["r_outer"]), pl)
    if kind == "cap_twist":
        return CapTwist(
            float(d["turns"]), float(d["radius"]), float(d["cut"]), float(d["kappa"]),
            float(d.get("sharpness", 6.0)), pl,
        )
    raise ValueError(f"unknown field kind {kind!r}")


def _check_quad(val, err, tol=1e-9):
    if not np.isfinite(val) or err > tol * max(1.0, abs(val)):
        raise ArithmeticError(f"quadrature did not converge (estimate {val}, error {err})")


def _radial_integral(profile, s_max, breaks=()) -> float:
    # integral over the plane of H(|q|^2) is pi * int_0^smax H(s) ds
    val, err = sint.quad(lambda s: float(profile(s)), 0.0, s_max, points=list(breaks) or None, limit=200)
    _check_quad(val, err)
    return math.pi * val


def hamiltonian_vf(H: HamiltonianField, p) -> np.ndarray:
    """``X_H(p) = (-dH/dy, dH/dx)``; rejects points outside the open unit disc."""
    pts = _as_points(p)
    if np.any(np.einsum("ij,ij->i", pts, pts) >= 1.0):
        raise ValueError("point outside the open unit disc")
    v = H.velocity(pts)
    return v[0] if np.ndim(p) == 1 else v


# ---------------------------------------------------------------------------
# piecewise-autonomous flows


@dataclass(frozen=True)
class Segment:
    field: HamiltonianField
    duration: float
    conjugator: Rigid | None = None

    @property
    def effective(self) -> HamiltonianField:
        return self.field if self.conjugator is None else self.field.conjugated(self.conjugator)

    def to_dict(self):
        d = {"field": self.field.to_dict(), "duration": self.duration}
        if self.conjugator is not None:
            d["conjugator"] = self.conjugator.to_dict()
        return d


@dataclass(frozen=True)
class CompiledSpec:
    fields: np.ndarray
    tables: np.ndarray
    seg_lo: np.ndarray
    seg_hi: np.ndarray
    seg_steps: np.ndarray
    seg_dur: np.ndarray
    seg_exact: np.ndarray
    seg_trace_steps: np.ndarray
    seg_disc: np.ndarray
    seg_disc_lo: np.ndarray
    seg_disc_hi: np.ndarray

    def args(self):
        """Arguments of the RK4 integrators."""
        return (self.fields, self.seg_lo, self.seg_hi, self.seg_steps, self.seg_dur)

    def trace_args(self):
        """Arguments of the braid tracer (exact motion where available)."""
        return (
            self.fields, self.tables, self.seg_lo, self.seg_hi, self.seg_trace_steps, self.seg_dur,
            self.seg_exact, self.seg_disc, self.seg_disc_lo, self.seg_disc_hi,
        )

    def refined(self, factor: int) -> "CompiledSpec":
        f = int(factor)
        return replace(self, seg_steps=self.seg_steps * f, seg_trace_steps=self.seg_trace_steps * f)


@dataclass(frozen=True)
class FlowSpec:
    """Ordered autonomous segments; the time-one map runs them first to last."""

    segments: tuple[Segment, ...]
    step: float = 1e-3
    trace_step: float = 0.1

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("integration step must be positive")
        for s in self.segments:
            if not s.duration > 0:
                raise ValueError("segment durations must be positive")
            if s.effective.support_radius >= 1.0:
                raise ValueError("field support leaves the unit disc")

    # construction helpers
    @classmethod
    def single(cls, field: HamiltonianField, duration: float = 1.0, step: float = 1e-3) -> "FlowSpec":
        return cls((Segment(field, float(duration)),), step)

    @classmethod
    def identity(cls, step: float = 1e-3) -> "FlowSpec":
        return cls.single(ZERO_FIELD, 1.0, step)

    def then(self, other: "FlowSpec") -> "FlowSpec":
        return FlowSpec(self.segments + other.segments, min(self.step, other.step), min(self.trace_step, other.trace_step))

    def power(self, p: int) -> "FlowSpec":
        if p == 0:
            return FlowSpec.identity(self.step)
        base = self if p > 0 else self.inverse()
        return replace(base, segments=base.segments * abs(p))

    def inverse(self) -> "FlowSpec":
        # the flow of H run backwards is the flow of -H
        return replace(
            self,
            segments=tuple(Segment(s.field.scaled(-1.0), s.duration, s.conjugator) for s in reversed(self.segments)),
        )

    def conjugated(self, rigid: Rigid) -> "FlowSpec":
        return replace(self, segments=tuple(Segment(s.effective.conjugated(rigid), s.duration) for s in self.segments))

    def with_step(self, step: float) -> "FlowSpec":
        return replace(self, step=step)

    @property
    def total_duration(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    def support_discs(self) -> list[tuple[float, float, float]]:
        out = []
        for s in self.segments:
            out.extend(s.effective.support_discs())
        return out

    @cached_property
    def compiled(self) -> CompiledSpec:
        rows, lo, hi, steps, dur, exact, tsteps, discs, dlo, dhi, tables = ([] for _ in range(11))
        n = 0
        for s in self.segments:
            eff = s.effective
            r = eff.rows().copy()
            if isinstance(eff, CapTwist):
                r[0, K.F_TAB] = len(tables)
                tables.append(eff.sector_table)
            lo.append(n)
            rows.append(r)
            n += r.shape[0]
            hi.append(n)
            nsteps = max(1, int(math.ceil(s.duration / self.step - 1e-9)))
            steps.append(nsteps)
            dur.append(s.duration)
            single = r.shape[0] == 1
            exact.append(1 if single else 0)
            if single:
                tsteps.append(max(4, int(math.ceil(s.duration * eff.max_speed / self.trace_step))))
            else:
                tsteps.append(nsteps)
            dlo.append(len(discs))
            discs.extend((row[K.F_CX], row[K.F_CY], row[K.F_RB]) for row in r)
            dhi.append(len(discs))
        fields = np.vstack(rows) if n else np.zeros((0, K.ROW_WIDTH))
        tab = np.stack(tables) if tables else np.zeros((1, 2, 2))
        return CompiledSpec(
            np.ascontiguousarray(fields),
            np.ascontiguousarray(tab),
            np.array(lo, dtype=np.int64),
            np.array(hi, dtype=np.int64),
            np.array(steps, dtype=np.int64),
            np.array(dur, dtype=float),
            np.array(exact, dtype=np.int64),
            np.array(tsteps, dtype=np.int64),
            np.array(discs, dtype=float).reshape(-1, 3),
            np.array(dlo, dtype=np.int64),
            np.array(dhi, dtype=np.int64),
        )

    @property
    def is_exact(self) -> bool:
        """True when every segment holds a single field (exact orbit motion available)."""
        return bool(np.all(self.compiled.seg_exact[self.compiled.seg_hi > self.compiled.seg_lo]))

    # serialization
    def to_dict(self) -> dict:
        return {"step": self.step, "trace_step": self.trace_step, "segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, d: dict) -> "FlowSpec":
        segs = []
        for s in d["segments"]:
            conj = Rigid.from_dict(s["conjugator"]) if s.get("conjugator") else None
            segs.append(Segment(field_from_dict(s["field"]), float(s["duration"]), conj))
        return cls(tuple(segs), float(d.get("step", 1e-3)), float(d.get("trace_step", 0.1)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FlowSpec":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (K+1, m, 2)
    spec: FlowSpec = field(repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "point", "x", "y"])
            for k, t in enumerate(self.times):
                for i, (x, y) in enumerate(self.positions[k]):
                    w.writerow([f"{t:.9g}", i, f"{x:.12g}", f"{y:.12g}"])


ESCAPE_TOL = 1e-9


def _check_inside(pts: np.ndarray, what: str) -> None:
    r2 = np.einsum("...i,...i->...", pts, pts)
    if np.any(r2 >= 1.0):
        raise ValueError(f"{what} outside the open unit disc")


def integrate(spec: FlowSpec, x0, reps: int = 1) -> Trajectory:
    """RK4 trajectory of one or more points through ``reps`` passes of the spec."""
    pts = _as_points(x0)
    _check_inside(pts, "initial point")
    c = spec.compiled
    times, pos = K.integrate_record(*c.args(), pts, int(reps))
    if np.any(np.einsum("kmi,kmi->km", pos, pos) > (1.0 + ESCAPE_TOL) ** 2):
        raise FloatingPointError("trajectory escaped the unit disc: broken field")
    return Trajectory(times, pos, spec)


def time_one_map(spec: FlowSpec, pts, reps: int = 1) -> np.ndarray:
    P = _as_points(pts)
    c = spec.compiled
    return K.integrate_final(*c.args(), P, int(reps))


def exact_time_one_map(spec: FlowSpec, pts, reps: int = 1) -> np.ndarray:
    """Time-one map moving points along exact orbits (single-field segments only)."""
    if not spec.is_exact:
        raise ValueError("exact motion needs one field per segment")
    c = spec.compiled
    return K.exact_final(c.fields, c.tables, c.seg_lo, c.seg_hi, c.seg_dur, _as_points(pts), int(reps))


def calabi(spec: FlowSpec) -> float:
    """Time-space integral of the generating Hamiltonian, summed over segments."""
    return math.fsum(s.duration * s.field.integral() for s in spec.segments)


def jacobian_det(spec: FlowSpec, pts, h: float = 1e-5, exact: bool = False) -> np.ndarray:
    """Central-difference Jacobian determinant of the time-one map.

    ``exact`` differentiates the exact-orbit map instead of the RK4 one; the
    twist maps shear hard near their collars, so small ``h`` needs it.
    """
    P = _as_points(pts)
    m = exact_time_one_map if exact else time_one_map
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    fx = (m(spec, P + ex) - m(spec, P - ex)) / (2 * h)
    fy = (m(spec, P + ey) - m(spec, P - ey)) / (2 * h)
    return fx[:, 0] * fy[:, 1] - fx[:, 1] * fy[:, 0]


def disc_grid(resolution: int, center=(0.0, 0.0), radius: float = 1.0):
    """Cell centres of a ``resolution x resolution`` grid lying inside a disc, with cell area."""
    g = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    X, Y = np.meshgrid(g, g)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    pts = pts[np.einsum("ij,ij->i", pts, pts) < 1.0]
    return pts * radius + np.asarray(center), (2.0 * radius / resolution) ** 2


def l2_length(spec: FlowSpec, resolution: int = 96, nodes: int = 33, precompose: FlowSpec | None = None) -> float:
    """``int_0^1 (int |d/dt g_t|^2 dx)^(1/2) dt`` for the isotopy traced by the spec.

    The isotopy runs the segments in order over total time T, reparametrised to
    [0, 1]; the length is parametrisation free, so it equals the physical-time
    integral of the spatial L^2 norm of the velocity.  ``precompose`` replaces
    the isotopy ``g_t`` by ``g_t o f`` with ``f`` its time-one map.
    """
    pts, w = disc_grid(resolution)
    if precompose is not None:
        pts = time_one_map(precompose, pts)
    total = 0.0
    c = spec.compiled
    for s in range(len(spec.segments)):
        lo, hi = c.seg_lo[s], c.seg_hi[s]
        if hi == lo:
            continue
        n_steps = int(c.seg_steps[s])
        sub = (c.fields, c.seg_lo[s : s + 1], c.seg_hi[s : s + 1], c.seg_steps[s : s + 1], c.seg_dur[s : s + 1])
        times, pos = K.integrate_record(*sub, pts, 1)
        idx = np.unique(np.linspace(0, n_steps, nodes).round().astype(int))
        vals = []
        for k in idx:
            v = K.velocity_field(c.fields, lo, hi, np.ascontiguousarray(pos[k]))
            vals.append(math.sqrt(w * float(np.einsum("ij,ij->", v, v))))
        total += float(sint.simpson(np.array(vals), x=times[idx]))
        pts = np.ascontiguousarray(pos[-1])
    return total


def _sample_disc(rng, n, center=(0.0, 0.0), radius=1.0) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    t = TWO_PI * rng.random(n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1) + np.asarray(center)


def gauss_functional(
    spec: FlowSpec,
    samples: int,
    seed: int = 0,
    power: int = 1,
    domain: tuple[tuple[float, float], float] | None = None,
    max_refine: int = 10,
    floor: float = 1e-4,
) -> Estimate:
    """Monte Carlo estimate of ``int int (1/2pi) int_0^1 |d/dt u_t(x, y)| dt dx dy``.

    ``u_t`` is the unit chord from ``g_t(x)`` to ``g_t(y)``.  Pairs are drawn
    uniformly from ``domain = (center, radius)`` (default the unit disc) and the
    estimate is scaled by the squared domain area.  Steps turning a chord by
    more than pi/2 are re-run at halved step size.
    """
    if samples < 1:
        raise ValueError("need at least one pair")
    center, radius = domain if domain is not None else ((0.0, 0.0), 1.0)
    rng = np.random.default_rng([int(seed), 0x6A55])
    pairs = np.empty((samples, 2, 2))
    filled = 0
    while filled < samples:
        a = _sample_disc(rng, samples - filled, center, radius)
        b = _sample_disc(rng, samples - filled, center, radius)
        ok = np.hypot(*(a - b).T) >= floor
        k = int(ok.sum())
        pairs[filled : filled + k, 0] = a[ok]
        pairs[filled : filled + k, 1] = b[ok]
        filled += k
    c = spec.compiled
    turning, mx = K.pair_turning_batch(*c.args(), pairs, int(power))
    flags = []
    bad = mx > math.pi / 2
    level = 0
    while bad.any() and level < max_refine:
        level += 1
        t2, m2 = K.pair_turning_batch(*c.refined(2**level).args(), pairs[bad], int(power))
        turning[bad] = t2
        mx[bad] = m2
        bad = mx > math.pi / 2
    if bad.any():
        flags.append("unresolved-turning")
    area = math.pi * radius**2
    est = from_samples(turning / TWO_PI, area * area, seed, (power,), flags)
    return est


def stable_gauss(spec: FlowSpec, samples: int, seed: int = 0, powers=(1, 2, 4, 8), domain=None) -> list[Estimate]:
    """``gauss_functional(g^p)/p`` along a schedule of powers."""
    return [gauss_functional(spec, samples, seed, p, domain).scaled(1.0 / p) for p in powers]


# ---------------------------------------------------------------------------
# Morse-type checks


@dataclass(frozen=True)
class MorseReport:
    ok: bool
    critical_points: tuple[tuple[float, float], ...]
    critical_values: tuple[float, ...]
    hessian_dets: tuple[float, ...]
    boundary_components: int
    reasons: tuple[str, ...] = ()


def morse_check(H: HamiltonianField, resolution: int = 241, h: float = 1e-5) -> MorseReport:
    """Numerical check of the Morse-type conditions on the open support of H.

    Conditions: the support is a disc-like region with one boundary curve,
    critical points inside the support are non-degenerate, and distinct
    critical points have distinct values.
    """
    from scipy import ndimage, optimize

    g = np.linspace(-1, 1, resolution)
    X, Y = np.meshgrid(g, g)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    inside = np.einsum("ij,ij->i", pts, pts) < 1.0
    val = np.zeros(len(pts))
    val[inside] = H.value(pts[inside])
    supp = (np.abs(val) > 1e-14).reshape(X.shape)
    reasons = []
    _, n_comp = ndimage.label(supp)
    # holes in the support are components of the complement not touching the border
    comp_lab, n_out = ndimage.label(~supp)
    border = set(np.unique(np.concatenate([comp_lab[0], comp_lab[-1], comp_lab[:, 0], comp_lab[:, -1]])))
    holes = len(set(range(1, n_out + 1)) - border)
    if n_comp != 1 or holes:
        reasons.append(f"support has {n_comp} components and {holes} holes")

    def grad2(p):
        gr = H.gradient(np.asarray(p)[None, :])[0]
        return float(gr @ gr)

    # seeds: grid-local minima of |grad H| inside the support
    gn = np.full(len(pts), np.inf)
    gi = H.gradient(pts[inside])
    gn[inside] = np.einsum("ij,ij->i", gi, gi)
    gn = gn.reshape(X.shape)
    mins = (gn == ndimage.minimum_filter(gn, size=5)) & supp & np.isfinite(gn)
    found: list[np.ndarray] = []
    for iy, ix in zip(*np.nonzero(mins)):
        res = optimize.minimize(grad2, [X[iy, ix], Y[iy, ix]], method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-20, "maxiter": 4000})
        p = res.x
        if res.fun > 1e-12 or abs(float(H.value(p[None, :])[0])) < 1e-12:
            continue
        if not any(np.hypot(*(p - q)) < 1e-4 for q in found):
            found.append(p)
    dets, vals = [], []
    for p in found:
        gx1 = H.gradient((p + [h, 0])[None, :])[0]
        gx0 = H.gradient((p - [h, 0])[None, :])[0]
        gy1 = H.gradient((p + [0, h])[None, :])[0]
        gy0 = H.gradient((p - [0, h])[None, :])[0]
        hess = np.column_stack([(gx1 - gx0) / (2 * h), (gy1 - gy0) / (2 * h)])
        dets.append(float(np.linalg.det(hess)))
        vals.append(float(H.value(p[None, :])[0]))
    scale = max((abs(v) for v in vals), default=1.0)
    if any(abs(d) < 1e-6 * max(scale, 1e-12) for d in dets):
        reasons.append("degenerate critical point")
    sv = sorted(vals)
    if any(abs(a - b) < 1e-9 * max(scale, 1e-12) for a, b in zip(sv, sv[1:])):
        reasons.append("repeated critical value")
    return MorseReport(
        not reasons,
        tuple(tuple(map(float, p)) for p in found),
        tuple(vals),
        tuple(dets),
        n_comp,
        tuple(reasons),
    )


# ---------------------------------------------------------------------------
# builders


def build_radial_bump(center=(0.0, 0.0), rho: float = 0.5, h0: float = 1.0, profile: str = "poly3") -> RadialBump:
    """Radial bump ``h0 (1 - (r/rho)^2)^3`` with a single non-degenerate maximum."""
    if profile != "poly3":
        raise ValueError("only the poly3 profile is available")
    if rho <= 0 or math.hypot(*center) + rho >= 1.0:
        raise ValueError("bump disc must lie inside the unit disc")
    if h0 == 0:
        raise ValueError("zero amplitude has no maximum")
    return RadialBump(float(rho), float(h0), Placement(tuple(map(float, center))))


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def contains(self, pts) -> np.ndarray:
        P = _as_points(pts)
        return np.hypot(P[:, 0] - self.center[0], P[:, 1] - self.center[1]) < self.radius

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class TwistRegion:
    """A rigidly rotated region W and its collar V = kappa * W (dilation about ``center``).

    With ``cut <= 0`` W is the disc of ``radius``; otherwise W is the smoothed
    intersection of that disc with the half plane ``<q, e(angle)> < cut``.
    """

    center: tuple[float, float]
    radius: float
    kappa: float = 1.15
    cut: float = 0.0
    angle: float = 0.0
    sharpness: float = 6.0

    def field(self, turns: float = 1.0) -> HamiltonianField:
        if self.cut <= 0:
            return RadialTwist(TWO_PI * turns, self.radius, self.kappa * self.radius, Placement(self.center))
        c, s = math.cos(self.angle), math.sin(self.angle)
        return CapTwist(turns, self.radius, self.cut, self.kappa, self.sharpness, Placement(self.center, (c, -s, s, c)))

    def gauge(self, pts) -> np.ndarray:
        P = _as_points(pts) - np.asarray(self.center)
        if self.cut <= 0:
            return np.hypot(P[:, 0], P[:, 1]) / self.radius
        c, s = math.cos(self.angle), math.sin(self.angle)
        q = P @ np.array([[c, s], [-s, c]]).T
        r = np.hypot(q[:, 0], q[:, 1])
        return r * cap_gauge(np.arctan2(q[:, 1], q[:, 0]), self.radius, self.cut, self.sharpness)

    def in_w(self, pts) -> np.ndarray:
        return self.gauge(pts) < 1.0

    def in_v(self, pts) -> np.ndarray:
        return self.gauge(pts) < self.kappa

    @property
    def outer_radius(self) -> float:
        return self.kappa * self.radius

    def transformed(self, scale: float, shift=(0.0, 0.0)) -> "TwistRegion":
        c = (scale * self.center[0] + shift[0], scale * self.center[1] + shift[1])
        return replace(self, center=c, radius=self.radius * scale, cut=self.cut * scale)

    def to_dict(self):
        return {
            "center": list(self.center), "radius": self.radius, "kappa": self.kappa,
            "cut": self.cut, "angle": self.angle, "sharpness": self.sharpness,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["center"]), float(d["radius"]), float(d.get("kappa", 1.15)),
                   float(d.get("cut", 0.0)), float(d.get("angle", 0.0)), float(d.get("sharpness", 6.0)))


@dataclass(frozen=True)
class TwistSystem:
    """Two twist regions and three basepoints.

    The default subsets are the largest ones allowed: ``U1 = W12 minus V23``,
    ``U2 = W12 cap W23``, ``U3 = W23 minus V12``.  Explicit discs may be given
    instead; they are checked against the inclusion conditions.
    """

    w12: TwistRegion
    w23: TwistRegion
    basepoints: tuple[tuple[float, float], ...] = ((-0.6, 0.0), (0.0, 0.0), (0.6, 0.0))
    u_discs: tuple[Disc, Disc, Disc] | None = None

    def membership(self, pts) -> np.ndarray:
        """Index 0, 1, 2 of the subset U_i containing each point, or -1."""
        P = _as_points(pts)
        if self.u_discs is not None:
            out = np.full(len(P), -1)
            for i, d in enumerate(self.u_discs):
                out[d.contains(P)] = i
            return out
        w12, v12 = self.w12.in_w(P), self.w12.in_v(P)
        w23, v23 = self.w23.in_w(P), self.w23.in_v(P)
        out = np.full(len(P), -1)
        out[w12 & ~v23] = 0
        out[w12 & w23] = 1
        out[w23 & ~v12] = 2
        return out

    def u_areas(self, resolution: int = 1600) -> tuple[float, float, float]:
        if self.u_discs is not None:
            return tuple(d.area for d in self.u_discs)
        pts, w = disc_grid(resolution)
        m = self.membership(pts)
        return tuple(float(np.count_nonzero(m == i)) * w for i in range(3))

    def validate(self, min_area: float | None = None) -> None:
        for reg in (self.w12, self.w23):
            if math.hypot(*reg.center) + reg.outer_radius >= 1.0:
                raise ValueError("collar V leaves the unit disc")
        z = np.asarray(self.basepoints, dtype=float)
        if z.shape != (3, 2):
            raise ValueError("need three basepoints")
        if not (self.membership(z) == np.arange(3)).all():
            raise ValueError("basepoint z_i must lie in U_i")
        if self.u_discs is not None:
            pts, _ = disc_grid(400)
            m = self.membership(pts)
            w12, v12 = self.w12.in_w(pts), self.w12.in_v(pts)
            w23, v23 = self.w23.in_w(pts), self.w23.in_v(pts)
            if not (w12[(m == 0) | (m == 1)].all() and w23[(m == 1) | (m == 2)].all()):
                raise ValueError("U1, U2 must lie in W12 and U2, U3 in W23")
            if v12[m == 2].any() or v23[m == 0].any():
                raise ValueError("V12 must miss U3 and V23 must miss U1")
        if min_area is not None:
            a = self.u_areas()
            if min(a) < min_area:
                raise ValueError(f"areas {a} below requested {min_area}")

    def transformed(self, scale: float, shift=(0.0, 0.0)) -> "TwistSystem":
        z = tuple((scale * x + shift[0], scale * y + shift[1]) for x, y in self.basepoints)
        ud = None
        if self.u_discs is not None:
            ud = tuple(Disc((scale * d.center[0] + shift[0], scale * d.center[1] + shift[1]), d.radius * scale)
                       for d in self.u_discs)
        return TwistSystem(self.w12.transformed(scale, shift), self.w23.transformed(scale, shift), z, ud)

    @property
    def center(self) -> tuple[float, float]:
        """Midpoint of the two region centres."""
        c = 0.5 * (np.asarray(self.w12.center) + np.asarray(self.w23.center))
        return float(c[0]), float(c[1])

    @property
    def outer_radius(self) -> float:
        """Radius about ``center`` of a disc containing both collars."""
        c = np.asarray(self.center)
        return max(
            float(np.hypot(*(np.asarray(w.center) - c))) + w.outer_radius for w in (self.w12, self.w23)
        )

    def to_dict(self):
        d = {"w12": self.w12.to_dict(), "w23": self.w23.to_dict(), "basepoints": [list(p) for p in self.basepoints]}
        if self.u_discs is not None:
            d["u_discs"] = [u.to_dict() for u in self.u_discs]
        return d

    @classmethod
    def from_dict(cls, d):
        ud = None
        if d.get("u_discs"):
            ud = tuple(Disc(tuple(u["center"]), float(u["radius"])) for u in d["u_discs"])
        return cls(TwistRegion.from_dict(d["w12"]), TwistRegion.from_dict(d["w23"]),
                   tuple(tuple(p) for p in d.get("basepoints", ((-0.6, 0.0), (0.0, 0.0), (0.6, 0.0)))), ud)


def regime_layout(outer: float = 0.98, kappa: float = 1.08, cut: float = 0.24, sharpness: float = 6.0) -> TwistSystem:
    """Large-area layout: both regions centred at the origin, W12 cut on the right
    and W23 cut on the left, so that all three U_i have area above pi/4."""
    R0 = outer / kappa
    return TwistSystem(
        TwistRegion((0.0, 0.0), R0, kappa, cut, 0.0, sharpness),
        TwistRegion((0.0, 0.0), R0, kappa, cut, math.pi, sharpness),
        ((-0.6, 0.0), (0.0, 0.0), (0.6, 0.0)),
    )


def disc_layout(radius: float = 0.634, offset: float = 0.27, kappa: float = 1.12) -> TwistSystem:
    """Round layout: W12, W23 discs of equal radius centred at ``(-offset, 0)``, ``(offset, 0)``.

    The U's are the maximal sets ``W12 minus V23``, ``W12 cap W23`` and
    ``W23 minus V12``.  The defaults maximise the smallest of their areas
    (about 0.55) within the unit disc.
    """
    w12 = TwistRegion((-offset, 0.0), radius, kappa)
    w23 = TwistRegion((offset, 0.0), radius, kappa)
    # basepoints at the middle of each U on the horizontal axis
    left = 0.5 * ((-offset - radius) + (offset - kappa * radius))
    return TwistSystem(w12, w23, ((left, 0.0), (0.0, 0.0), (-left, 0.0)))


def build_twist_system(layout: TwistSystem, check_area: float | None = None) -> tuple[FlowSpec, FlowSpec]:
    """Flows h (rotating W12 once) and h' (rotating W23 once), each over one time unit."""
    layout.validate(check_area)
    h = FlowSpec.single(layout.w12.field(1.0), 1.0)
    hp = FlowSpec.single(layout.w23.field(1.0), 1.0)
    return h, hp


def twist_word_flow(layout: TwistSystem, word, step: float = 1e-3) -> FlowSpec:
    """s_U(word): x -> h, X -> h^-1, y -> h', Y -> h'^-1, letters run left to right."""
    from .braid_core import FreeWord

    w = word if isinstance(word, FreeWord) else FreeWord(str(word))
    f12, f23 = layout.w12.field(1.0), layout.w23.field(1.0)
    table = {"x": f12, "X": f12.scaled(-1.0), "y": f23, "Y": f23.scaled(-1.0)}
    if not w.letters:
        return FlowSpec.identity(step)
    return FlowSpec(tuple(Segment(table[c], 1.0) for c in w.letters), step)


@dataclass(frozen=True)
class ZkSystem:
    flows: tuple[FlowSpec, ...]
    words: tuple[str, ...]
    cells: tuple[Disc, ...]
    correctors: tuple[Disc | None, ...]
    layouts: tuple[TwistSystem, ...]

    def element(self, d: Sequence[int]) -> FlowSpec:
        """``f_1^{d_1} o ... o f_k^{d_k}`` (factors commute: supports are disjoint)."""
        if len(d) != len(self.flows):
            raise ValueError("exponent vector has the wrong length")
        out = None
        for f, e in zip(self.flows, d):
            if e == 0:
                continue
            g = f.power(int(e))
            out = g if out is None else out.then(g)
        return out if out is not None else FlowSpec.identity(self.flows[0].step)


def build_zk_system(
    k: int,
    words: Sequence[str] | None = None,
    template: TwistSystem | None = None,
    span: float = 0.85,
    corrector_fraction: float = 0.4,
    step: float = 1e-3,
) -> ZkSystem:
    """k flows with disjoint supports, each a twist-word flow plus a Calabi corrector.

    Cell i is a disc of radius ``span/k`` on the horizontal diameter (capped so
    the corrector still fits inside the unit disc) holding a
    scaled copy of ``template`` driven by word ``words[i]``.  If the twist word
    has non-zero Calabi invariant, a radial bump of the opposite invariant runs
    in a companion disc above the cell.
    """
    if k < 1:
        raise ValueError("k must be positive")
    from .braid_core import FreeWord

    template = template or disc_layout()
    words = list(words) if words is not None else ["xYxy"] * k
    if len(words) != k:
        raise ValueError("need one word per flow")
    gap = 0.02
    R = min(span / k, (1.0 - gap) / (1.0 + 2.0 * corrector_fraction) - 1e-3)
    rho = corrector_fraction * R
    flows, cells, corrs, lays = [], [], [], []
    scale = R / template.outer_radius
    for i in range(k):
        cx = (2 * i + 1 - k) * R
        lay = template.transformed(scale, (cx - scale * template.center[0], -scale * template.center[1]))
        f = twist_word_flow(lay, FreeWord(words[i]), step)
        cal = calabi(f)
        corr = None
        if abs(cal) > 1e-12:
            cy = R + rho + gap
            if math.hypot(cx, cy) + rho >= 1.0:
                raise ValueError("k too large: corrector discs do not fit")
            h0 = -4.0 * cal / (math.pi * rho * rho)
            f = f.then(FlowSpec.single(build_radial_bump((cx, cy), rho, h0), 1.0, step))
            corr = Disc((cx, cy), rho)
        flows.append(f)
        cells.append(Disc((cx, 0.0), R))
        corrs.append(corr)
        lays.append(lay)
    return ZkSystem(tuple(flows), tuple(words), tuple(cells), tuple(corrs), tuple(lays))
