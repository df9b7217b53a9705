"""Pure braids traced by point configurations under an isotopy.

The loop for a configuration ``x`` has three pieces: the straight legs
``z -> x``, the flow ``g_t(x)`` (p passes for ``g^p``), and ``g(x) -> z``.
Braids are read from the projection onto a direction ``e(phi)``: strands are
ordered by ``<p, e(phi)>`` and each exchange of neighbours at positions
``i, i+1`` emits ``sigma_i``, positive when the strand moving rightwards has the
smaller coordinate along ``e(phi + pi/2)``.  With this convention a positive
(counter-clockwise) full turn of two neighbouring strands is ``sigma_i^2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .braid_core import BraidWord, free_reduce
from .flowlab import FlowSpec, _as_points

DEFAULT_BASEPOINTS = ((-0.5, 0.0), (0.0, 0.0), (0.5, 0.0))
SEPARATION_FLOOR = 1e-4
MAX_REFINE = 10


class DegenerateConfiguration(ValueError):
    """Raised when a configuration cannot be traced reliably (resample it)."""


def default_basepoints(n: int) -> np.ndarray:
    """n points on the horizontal diameter, symmetric about the origin."""
    if n == 3:
        return np.array(DEFAULT_BASEPOINTS)
    xs = np.linspace(-0.5, 0.5, n) if n > 1 else np.zeros(1)
    return np.stack([xs, np.zeros(n)], axis=1)


@dataclass(frozen=True)
class Configuration:
    points: np.ndarray
    basepoints: np.ndarray
    floor: float = SEPARATION_FLOOR

    def __post_init__(self):
        for name in ("points", "basepoints"):
            a = _as_points(getattr(self, name))
            object.__setattr__(self, name, a)
        if self.points.shape != self.basepoints.shape:
            raise ValueError("configuration and basepoint sizes differ")
        for a in (self.points, self.basepoints):
            if np.any(np.einsum("ij,ij->i", a, a) >= 1.0):
                raise ValueError("points must lie in the open unit disc")
            if _min_pair_distance(a) < self.floor:
                raise DegenerateConfiguration("points closer than the separation floor")

    @property
    def n(self) -> int:
        return self.points.shape[0]


def _min_pair_distance(a: np.ndarray) -> float:
    n = a.shape[0]
    if n < 2:
        return math.inf
    d = a[:, None, :] - a[None, :, :]
    r = np.hypot(d[..., 0], d[..., 1])
    return float(r[np.triu_indices(n, 1)].min())


@dataclass(frozen=True)
class StrandBundle:
    """Piecewise-linear strands over a common parameter grid on [0, 1]."""

    times: np.ndarray  # (T,)
    positions: np.ndarray  # (T, n, 2)
    middle: tuple[int, int]  # sample indices where the flow segment starts and ends
    min_distance: float
    flags: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "strand", "x", "y"])
            for k, t in enumerate(self.times):
                for i, (x, y) in enumerate(self.positions[k]):
                    w.writerow([f"{t:.9g}", i + 1, f"{x:.12g}", f"{y:.12g}"])


def _pl_min_distance(P: np.ndarray) -> float:
    """Minimum pairwise distance along piecewise-linear strands ``P[t, i, :]``."""
    n = P.shape[1]
    best = math.inf
    for i in range(n):
        for j in range(i + 1, n):
            d = P[:, i, :] - P[:, j, :]
            a, b = d[:-1], d[1:]
            e = b - a
            ee = np.einsum("ij,ij->i", e, e)
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.where(ee > 0, -np.einsum("ij,ij->i", a, e) / ee, 0.0)
            s = np.clip(s, 0.0, 1.0)
            m = a + s[:, None] * e
            best = min(best, float(np.hypot(m[:, 0], m[:, 1]).min()))
    return best


def make_loop(spec: FlowSpec, x, power: int = 1, basepoints=None, floor: float = SEPARATION_FLOOR) -> StrandBundle:
    """Bundle of the loop gamma(g^p; x): leg z -> x, p passes of the flow, leg back to z."""
    if power < 1:
        raise ValueError("power must be at least 1")
    pts = _as_points(x)
    z = default_basepoints(len(pts)) if basepoints is None else _as_points(basepoints)
    Configuration(pts, z, floor)
    c = spec.compiled
    _t, mid = K.integrate_record(*c.args(), pts, int(power))
    T = mid.shape[0]
    positions = np.concatenate([z[None], mid, z[None]], axis=0)
    times = np.concatenate([[0.0], 1 / 3 + np.linspace(0.0, 1 / 3, T), [1.0]])
    if np.any(np.einsum("kmi,kmi->km", positions, positions) > (1.0 + 1e-9) ** 2):
        raise FloatingPointError("trajectory escaped the unit disc")
    md = _pl_min_distance(positions)
    flags = ("degenerate",) if md < floor else ()
    return StrandBundle(times, positions, (1, T), md, flags)


def _crossings(P: np.ndarray, phi: float) -> tuple[list[int], bool]:
    """Signed generator indices read from PL strands; second value flags ambiguity."""
    cw, sw = math.cos(phi), math.sin(phi)
    U = P[..., 0] * cw + P[..., 1] * sw
    V = -P[..., 0] * sw + P[..., 1] * cw
    n = P.shape[1]
    order = list(np.argsort(U[0], kind="stable"))
    if len(set(np.round(U[0], 15))) < n:
        return [], True
    pos = {s: k for k, s in enumerate(order)}
    letters: list[int] = []
    for k in range(P.shape[0] - 1):
        events = []
        for i in range(n):
            for j in range(i + 1, n):
                da = U[k, i] - U[k, j]
                db = U[k + 1, i] - U[k + 1, j]
                if db == 0.0:
                    return letters, True
                if da * db < 0:
                    events.append((da / (da - db), i, j))
        events.sort()
        for s, i, j in events:
            a, b = sorted((pos[i], pos[j]))
            if b - a != 1:
                return letters, True
            left, right = order[a], order[b]
            vl = V[k, left] + s * (V[k + 1, left] - V[k, left])
            vr = V[k, right] + s * (V[k + 1, right] - V[k, right])
            letters.append(a + 1 if vl < vr else -(a + 1))
            order[a], order[b] = right, left
            pos[right], pos[left] = a, b
    return letters, False


def extract_braid(bundle: StrandBundle, direction: float = 0.0, seed: int = 0, retries: int = 3) -> BraidWord:
    """Read the braid of a bundle from its projection, freely reduced.

    On a projection tie the direction is rotated by a seeded random angle and
    the extraction retried; three failures raise ``DegenerateConfiguration``.
    """
    rng = np.random.default_rng([int(seed), 0xB7])
    phi = float(direction)
    for _ in range(retries + 1):
        letters, ambiguous = _crossings(bundle.positions, phi)
        if not ambiguous:
            w = free_reduce(BraidWord(bundle.n, tuple(letters)))
            return w
        phi += rng.uniform(-0.1, 0.1)
    raise DegenerateConfiguration("projection ties persist after direction changes")


def _angle_increments(d: np.ndarray) -> np.ndarray:
    """Signed angle increments of the PL chord ``d[t]``.

    On each interval the chord moves linearly, so its angle change is the angle
    between the endpoints (it cannot sweep more than pi without passing zero).
    """
    a, b = d[:-1], d[1:]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = np.einsum("ij,ij->i", a, b)
    if np.any((cross == 0.0) & (dot <= 0.0)):
        raise DegenerateConfiguration("chord passes through zero length")
    return np.arctan2(cross, dot)


def pairwise_winding(bundle: StrandBundle, tol: float = 1e-3) -> np.ndarray:
    """Integer matrix of total signed chord windings (full turns, counter-clockwise positive)."""
    n = bundle.n
    W = np.zeros((n, n), dtype=np.int64)
    P = bundle.positions
    for i in range(n):
        for j in range(i + 1, n):
            raw = _angle_increments(P[:, j, :] - P[:, i, :]).sum() / (2 * np.pi)
            r = round(raw)
            if abs(raw - r) > tol:
                raise ArithmeticError(f"non-integer winding {raw} for strands {i + 1}, {j + 1}")
            W[i, j] = W[j, i] = r
    return W


def crossing_profile(bundle: StrandBundle, directions) -> np.ndarray:
    """Counts of chord directions through the projection normals during the flow.

    Entry ``[k, i, j]`` is the number of times the unit chord from strand i to
    strand j passes ``directions[k] + pi/2`` during the middle segment (these
    are the moments strands i and j exchange places in the projection onto
    ``e(directions[k])``).
    """
    a, b = bundle.middle
    P = bundle.positions[a : b + 1]
    n = bundle.n
    dirs = np.atleast_1d(np.asarray(directions, dtype=float))
    out = np.zeros((len(dirs), n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = P[:, j, :] - P[:, i, :]
            inc = _angle_increments(d)
            theta = np.concatenate([[math.atan2(d[0, 1], d[0, 0])], math.atan2(d[0, 1], d[0, 0]) + np.cumsum(inc)])
            for k, phi in enumerate(dirs):
                target = phi + np.pi / 2
                # number of times the unwrapped angle crosses target + 2 pi m
                lo = np.floor((theta[:-1] - target) / (2 * np.pi))
                hi = np.floor((theta[1:] - target) / (2 * np.pi))
                out[k, i, j] = int(np.abs(hi - lo).sum())
    return out


# ---------------------------------------------------------------------------
# batch tracing


@dataclass
class BatchTrace:
    """Words of gamma(g^p; x_k) for a batch of configurations and powers."""

    powers: tuple[int, ...]
    open_out: np.ndarray
    open_counts: np.ndarray
    mid_out: np.ndarray
    mid_counts: np.ndarray
    close_out: np.ndarray
    close_counts: np.ndarray
    status: np.ndarray
    min_dist: np.ndarray
    refine_level: np.ndarray = field(default=None)

    @property
    def degenerate(self) -> np.ndarray:
        return (self.status & (K.ST_TOO_CLOSE | K.ST_AMBIGUOUS | K.ST_REFINE)) != 0

    def letters(self, k: int, c: int) -> np.ndarray:
        return np.concatenate(
            [
                self.open_out[k, : self.open_counts[k]],
                self.mid_out[k, : self.mid_counts[k, c]],
                self.close_out[k, c, : self.close_counts[k, c]],
            ]
        ).astype(np.int64)

    def word(self, k: int, c: int, n: int) -> BraidWord:
        return free_reduce(BraidWord(n, tuple(int(v) for v in self.letters(k, c))))


def trace_batch(
    spec: FlowSpec,
    X: np.ndarray,
    basepoints=None,
    powers=(1,),
    direction: float = 0.0,
    floor: float = SEPARATION_FLOOR,
    refine_factor: float = 0.5,
    cap: int = 1024,
    max_refine: int = MAX_REFINE,
) -> BatchTrace:
    """Trace many configurations at once with the compiled tracer.

    Samples whose step size is too coarse near a close approach are re-traced
    with halved steps up to ``2**max_refine`` subdivisions; samples that still
    fail, or come closer than ``floor``, are marked degenerate for resampling.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    if X.ndim != 3 or X.shape[2] != 2:
        raise ValueError("X must have shape (N, n, 2)")
    N, n, _ = X.shape
    z = default_basepoints(n) if basepoints is None else _as_points(basepoints)
    ck = np.array(sorted(set(int(p) for p in powers)), dtype=np.int64)
    if ck[0] < 1:
        raise ValueError("powers must be positive")
    cw, sw = math.cos(direction), math.sin(direction)
    u = z @ np.array([cw, sw])
    if len(np.unique(u)) < n:
        raise ValueError("basepoints must have distinct projections")
    c = spec.compiled
    res = list(K.trace_batch(*c.trace_args(), X, z, ck, cw, sw, floor, refine_factor, cap))
    out = BatchTrace(tuple(int(p) for p in ck), *res, refine_level=np.zeros(N, dtype=np.int64))
    if np.any(out.status & K.ST_ESCAPED):
        raise FloatingPointError("trajectory escaped the unit disc: broken field")
    # overflow: re-run with room for every letter
    over = np.nonzero(out.status & K.ST_OVERFLOW)[0]
    if over.size:
        need = int(out.mid_counts[over].max()) + 16
        _splice(out, over, K.trace_batch(*c.trace_args(), X[over], z, ck, cw, sw, floor, refine_factor, need))
    level = 0
    todo = np.nonzero(((out.status & K.ST_REFINE) != 0) & ((out.status & K.ST_TOO_CLOSE) == 0))[0]
    while todo.size and level < max_refine:
        level += 1
        cr = c.refined(2**level)
        capk = max(cap, out.mid_out.shape[1])
        r = K.trace_batch(*cr.trace_args(), X[todo], z, ck, cw, sw, floor, refine_factor, capk)
        if np.any(r[6] & K.ST_OVERFLOW):
            need = int(r[3].max()) + 16
            r = K.trace_batch(*cr.trace_args(), X[todo], z, ck, cw, sw, floor, refine_factor, need)
        _splice(out, todo, r)
        out.refine_level[todo] = level
        todo = todo[((r[6] & K.ST_REFINE) != 0) & ((r[6] & K.ST_TOO_CLOSE) == 0)]
    return out


def _splice(out: BatchTrace, idx: np.ndarray, r) -> None:
    oo, oc, mo, mc, co, cc, st, md = r
    if mo.shape[1] > out.mid_out.shape[1]:
        pad = np.zeros((out.mid_out.shape[0], mo.shape[1]), dtype=out.mid_out.dtype)
        pad[:, : out.mid_out.shape[1]] = out.mid_out
        out.mid_out = pad
    out.open_out[idx] = oo
    out.open_counts[idx] = oc
    out.mid_out[idx] = 0
    out.mid_out[idx, : mo.shape[1]] = mo
    out.mid_counts[idx] = mc
    out.close_out[idx] = co
    out.close_counts[idx] = cc
    out.status[idx] = st
    out.min_dist[idx] = md


def trace_braid(spec: FlowSpec, x, power: int = 1, basepoints=None, direction: float = 0.0) -> BraidWord:
    """Braid of a single configuration through the compiled tracer."""
    pts = _as_points(x)
    bt = trace_batch(spec, pts[None], basepoints, (power,), direction)
    if bt.degenerate[0]:
        raise DegenerateConfiguration("configuration degenerate for tracing")
    return bt.word(0, 0, pts.shape[0])
