"""Evaluation matrices, dual bases and norm certificates built on quasi-morphisms.

A certificate records a numeric claim together with digests of the inputs it
was computed from, a pass/fail verdict and caveats.  Lower bounds on the
autonomous norm rest on defect bounds that are only estimated empirically;
such certificates carry the caveat ``conditional on defect bound``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .braid_core import FreeWord, InvariantQM
from .estimate import Estimate

__all__ = [
    "EvalMatrix",
    "Certificate",
    "RankDeficiency",
    "dual_basis",
    "candidate_words",
    "exact_matrix",
    "exact_dual",
    "DefectProbe",
    "defect_probe",
    "random_free_word",
    "aut_lower_bound",
    "restricted_lower_bound",
    "zk_certificate",
    "independence_matrix",
    "factor_count",
    "DEFAULT_PATTERNS",
    "ZkDual",
    "zk_dual",
    "zk_evaluate",
    "g_defect_bound",
    "affine_growth",
]

# admissible patterns (their B3 symmetrisations vanish on sigma_1^2)
DEFAULT_PATTERNS = ("xxy", "xYx", "xxyy", "xxY", "xxxY")

CONDITIONAL = "conditional on defect bound"


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=_jsonable).encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Estimate):
        return o.to_dict()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    return str(o)


@dataclass(frozen=True)
class EvalMatrix:
    """Values ``q_i(g_j)`` with row and column labels."""

    rows: tuple[str, ...]
    cols: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.rows), len(self.cols)):
            raise ValueError("matrix shape does not match labels")
        if not np.all(np.isfinite(v)):
            raise ValueError("matrix entries must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, values) -> "EvalMatrix":
        v = np.asarray(values, dtype=float)
        return cls(tuple(f"q{i}" for i in range(v.shape[0])), tuple(f"g{j}" for j in range(v.shape[1])), v)

    def to_dict(self) -> dict:
        return {"rows": list(self.rows), "cols": list(self.cols), "values": self.values.tolist()}


@dataclass(frozen=True)
class Certificate:
    kind: str
    passed: bool
    content: dict
    inputs_digest: str
    caveats: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "content": json.loads(json.dumps(self.content, default=_jsonable)),
            "inputs_digest": self.inputs_digest,
            "caveats": list(self.caveats),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        lines = [f"[{'PASS' if self.passed else 'FAIL'}] {self.kind}  ({self.inputs_digest[:12]})"]
        for k, v in self.content.items():
            lines.append(f"  {k}: {json.dumps(v, default=_jsonable)}")
        for c in self.caveats:
            lines.append(f"  caveat: {c}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# dual bases


class RankDeficiency(ValueError):
    def __init__(self, achievable: int, wanted: int):
        super().__init__(f"rank {achievable} < {wanted}: only {achievable} dual elements are achievable")
        self.achievable = achievable
        self.wanted = wanted


def dual_basis(M, tol: float = 1e-9, k: int | None = None, columns: Sequence[int] | None = None):
    """Coefficients C and columns J with ``(C @ M)[:, J] = I``.

    Columns are scanned in order and kept when they raise the rank (a pivoted
    elimination that prefers earlier, e.g. shorter, elements), unless
    ``columns`` fixes them.  The rows of ``C @ M`` are the new functions.
    """
    A = M.values if isinstance(M, EvalMatrix) else np.asarray(M, dtype=float)
    r, c = A.shape
    k = r if k is None else int(k)
    scale = max(1.0, float(np.abs(A).max()) if A.size else 1.0)
    if columns is None:
        basis = np.zeros((0, r))
        chosen: list[int] = []
        for j in range(c):
            v = A[:, j].copy()
            if basis.shape[0]:
                v = v - basis.T @ (basis @ v)
                v = v - basis.T @ (basis @ v)
            nv = float(np.linalg.norm(v))
            if nv > tol * scale:
                basis = np.vstack([basis, v / nv])
                chosen.append(j)
                if len(chosen) == k:
                    break
        if len(chosen) < k:
            raise RankDeficiency(len(chosen), k)
    else:
        chosen = [int(j) for j in columns]
        if len(chosen) != k:
            raise ValueError("need exactly k columns")
    sub = A[:, chosen]
    if np.linalg.matrix_rank(sub, tol=tol * scale) < k:
        raise RankDeficiency(int(np.linalg.matrix_rank(sub, tol=tol * scale)), k)
    C = np.linalg.pinv(sub)
    err = float(np.abs(C @ sub - np.eye(k)).max())
    if err > max(tol, 1e-12) * max(1.0, float(np.abs(C).max())) * 10:
        raise ArithmeticError(f"dual basis self-check failed: {err}")
    return C, tuple(chosen)


def candidate_words(max_length: int = 6) -> list[FreeWord]:
    """Reduced non-trivial words over x, y and inverses, shortest first (each once)."""
    out = [FreeWord("")]
    seen = {""}
    frontier = [""]
    for _ in range(max_length):
        nxt = []
        for w in frontier:
            for a in "xXyY":
                s = FreeWord(w + a).letters
                if s not in seen:
                    seen.add(s)
                    nxt.append(s)
        out.extend(FreeWord(s) for s in nxt)
        frontier = nxt
    return out[1:]


def exact_matrix(qms: Sequence[InvariantQM], words: Sequence[FreeWord]) -> EvalMatrix:
    """Exact values of B3-invariant quasi-morphisms on pure braids given by free words."""
    vals = np.array([[q.free_value(w) for w in words] for q in qms], dtype=float)
    return EvalMatrix(tuple(q.name for q in qms), tuple(w.letters for w in words), vals)


def exact_dual(qms: Sequence[InvariantQM], max_length: int = 6, cyclic: bool = True):
    """Dual quasi-morphisms and words with ``psi_i(beta_j) = delta_ij`` exactly.

    Candidates are scanned shortest first; with ``cyclic`` only cyclically
    reduced words are used (the values are conjugation invariant).  Returns
    ``(psis, words, C)``.
    """
    pool = candidate_words(max_length)
    if cyclic:
        pool = [w for w in pool if w.cyclic_reduce() == w]
    M = exact_matrix(qms, pool)
    C, cols = dual_basis(M)
    words = [pool[j] for j in cols]
    psis = [
        InvariantQM.combination(list(qms), [float(v) for v in C[i]], label=f"psi{i + 1}") for i in range(len(qms))
    ]
    check = np.array([[p.free_value(w) for w in words] for p in psis])
    if np.abs(check - np.eye(len(qms))).max() > 1e-9:
        raise ArithmeticError("exact dual check failed")
    return psis, words, C


# ---------------------------------------------------------------------------
# defects


@dataclass(frozen=True)
class DefectProbe:
    value: float
    pairs: int
    max_length: int
    seed: int
    mean: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def random_free_word(rng, max_length: int) -> FreeWord:
    """Uniform length in [0, max_length], then a uniformly random reduced word."""
    n = int(rng.integers(0, max_length + 1))
    inv = {"x": "X", "X": "x", "y": "Y", "Y": "y"}
    s = []
    for _ in range(n):
        choices = [a for a in "xXyY" if not s or a != inv[s[-1]]]
        s.append(choices[int(rng.integers(len(choices)))])
    return FreeWord("".join(s))


def defect_probe(
    q: Callable,
    sampler: Callable | None = None,
    pairs: int = 1000,
    seed: int = 0,
    max_length: int = 200,
    mul: Callable | None = None,
) -> DefectProbe:
    """Largest sampled ``|q(gh) - q(g) - q(h)|``: a lower bound for the defect.

    ``sampler(rng)`` draws group elements (default: random free words of
    length at most ``max_length``); ``mul`` multiplies them (default ``*``).
    """
    rng = np.random.default_rng([int(seed), 0xDEF])
    draw = sampler or (lambda r: random_free_word(r, max_length))
    op = mul or (lambda a, b: a * b)
    worst = 0.0
    tot = 0.0
    for _ in range(pairs):
        g, h = draw(rng), draw(rng)
        d = abs(q(op(g, h)) - q(g) - q(h))
        worst = max(worst, d)
        tot += d
    return DefectProbe(float(worst), int(pairs), int(max_length), int(seed), tot / pairs)


# ---------------------------------------------------------------------------
# certificates


def aut_lower_bound(values: Sequence[Estimate], defect_bounds: Sequence[float], names=None) -> Certificate:
    """``max_i (|Phibar_i(f)| - CI_i) / D_i``, a lower bound for the autonomous norm.

    Valid when each quasi-morphism vanishes on autonomous elements and ``D_i``
    bounds its defect; fails gracefully when every value is within its CI of 0.
    """
    if len(values) != len(defect_bounds) or not values:
        raise ValueError("need one defect bound per value")
    if any(d <= 0 for d in defect_bounds):
        raise ValueError("defect bounds must be positive")
    terms = [max(0.0, abs(e.mean) - e.half_width) / d for e, d in zip(values, defect_bounds)]
    bound = max(terms)
    content = {
        "bound": bound,
        "terms": terms,
        "values": [[e.mean, e.half_width] for e in values],
        "defects": list(map(float, defect_bounds)),
    }
    if names is not None:
        content["names"] = list(names)
    digest = _digest({"values": [e.to_dict() for e in values], "defects": list(defect_bounds)})
    return Certificate("aut_lower_bound", bound > 0, content, digest, (CONDITIONAL,))


def restricted_lower_bound(calabi_value: float, r: float, error: float = 0.0) -> Certificate:
    """``|Calabi(f)| / r`` (minus propagated quadrature error) bounds the restricted norm."""
    if not r > 0:
        raise ValueError("r must be positive")
    bound = max(0.0, abs(calabi_value) - abs(error)) / r
    content = {"bound": bound, "calabi": calabi_value, "r": r, "error": error}
    return Certificate("restricted_bound", True, content, _digest(content), ())


def factor_count(word: str, corrected: bool = True) -> int:
    """Autonomous factors in one generator flow: one per twist letter, plus the corrector."""
    return len(word) + (1 if corrected else 0)


def zk_certificate(
    d: Sequence[int],
    estimates: Sequence[Estimate],
    defect_bounds: Sequence[float],
    factor_counts: Sequence[int],
    tol: float = 0.1,
) -> Certificate:
    """Check ``|psi_i(f_d) - d_i| <= CI_i + tol`` and derive norm bounds for ``f_d``.

    The lower bound is the autonomous bound of the estimates; the lower
    Lipschitz constant is ``1 / (k max D)`` against the l1 norm of d; the upper
    bound ``sum |d_i| * factor_counts[i]`` counts the autonomous factors of
    the construction (a surrogate for the true norms of the generators).
    """
    k = len(d)
    if len(estimates) != k or len(defect_bounds) != k or len(factor_counts) != k:
        raise ValueError("need one estimate, defect and factor count per generator")
    dev = [abs(e.mean - di) for e, di in zip(estimates, d)]
    ok = [dv <= e.half_width + tol for dv, e in zip(dev, estimates)]
    terms = [max(0.0, abs(e.mean) - e.half_width) / D for e, D in zip(estimates, defect_bounds)]
    lower = max(terms) if terms else 0.0
    upper = float(sum(abs(int(di)) * c for di, c in zip(d, factor_counts)))
    l1 = float(sum(abs(int(di)) for di in d))
    lip = 1.0 / (k * max(defect_bounds))
    flags = [e.flags for e in estimates if not e.converged]
    passed = all(ok) and lower <= upper + 1e-12 and not flags
    content = {
        "d": [int(v) for v in d],
        "values": [[e.mean, e.half_width] for e in estimates],
        "deviation": dev,
        "within": ok,
        "tolerance": tol,
        "lower_bound": lower,
        "lipschitz_lower": lip,
        "lipschitz_bound": lip * l1,
        "upper_bound": upper,
    }
    digest = _digest({"d": list(map(int, d)), "estimates": [e.to_dict() for e in estimates],
                      "defects": list(defect_bounds), "factors": list(factor_counts), "tol": tol})
    caveats = [CONDITIONAL, "upper bound counts construction factors"]
    if flags:
        caveats.append("non-converged estimate")
    return Certificate("zk_embedding", passed, content, digest, tuple(caveats))


def independence_matrix(
    estimates: Sequence[Sequence[Estimate]],
    areas: Sequence[float],
    exact: np.ndarray | None = None,
    names: Sequence[str] = (),
    words: Sequence[str] = (),
    snr: float = 10.0,
) -> Certificate:
    """Non-singularity of ``M_ij = Phibar(q_i, s_U(beta_j))`` with the diagonal prediction.

    ``exact[i, j] = q_i(beta_j)`` (identity for a dual basis); the prediction
    is ``6 a1 a2 a3 * exact``.  Passes when the smallest singular value exceeds
    ``snr`` times the norm of the CI matrix and the first diagonal entry is
    within its CI of the prediction.
    """
    N = len(estimates)
    M = np.array([[e.mean for e in row] for row in estimates])
    H = np.array([[e.half_width for e in row] for row in estimates])
    if M.shape != (N, N):
        raise ValueError("need a square table of estimates")
    E = np.eye(N) if exact is None else np.asarray(exact, dtype=float)
    a1, a2, a3 = (float(a) for a in areas)
    pred = 6.0 * a1 * a2 * a3 * E
    smin = float(np.linalg.svd(M, compute_uv=False).min())
    ci_norm = float(np.linalg.norm(H))
    diag_ok = [abs(M[i, i] - pred[i, i]) <= H[i, i] for i in range(N)]
    off = M[~np.eye(N, dtype=bool)]
    dmin = float(np.abs(np.diag(M)).min())
    content = {
        "matrix": M.tolist(),
        "half_widths": H.tolist(),
        "prediction": pred.tolist(),
        "areas": [a1, a2, a3],
        "min_singular_value": smin,
        "ci_norm": ci_norm,
        "ratio": smin / ci_norm if ci_norm > 0 else math.inf,
        "diagonal_within_ci": diag_ok,
        "max_offdiag_over_diag": (float(np.abs(off).max()) / dmin if dmin > 0 else math.inf) if N > 1 else 0.0,
        "condition": float(np.linalg.cond(M)),
        "names": list(names),
        "words": list(words),
    }
    passed = smin > snr * ci_norm and diag_ok[0]
    digest = _digest({"estimates": [[e.to_dict() for e in row] for row in estimates], "areas": list(areas),
                      "exact": E.tolist()})
    return Certificate("independence", passed, content, digest, ())


# ---------------------------------------------------------------------------
# Z^k pipeline


def g_defect_bound(q: InvariantQM, n: int = 3, pairs: int = 1000, seed: int = 0, safety: float = 2.0) -> float:
    """Defect bound for ``Phibar_n`` of a braid quasi-morphism, from an empirical probe.

    ``gamma(fg; x) = gamma(g; x) gamma(f; g(x))`` and area preservation give
    ``D(Phi_n) <= pi^n D(q)``; homogenisation at most doubles the defect.
    ``D(q)`` is the probed value times ``safety``.
    """
    probe = defect_probe(q.free_value, pairs=pairs, seed=seed, max_length=60)
    return 2.0 * math.pi**n * safety * max(probe.value, 1e-12)


@dataclass(frozen=True)
class ZkDual:
    """Generators f_j of the Z^k construction and flow-level duals ``psi'_i(f_j) ~ delta_ij``."""

    system: object  # flowlab.ZkSystem
    base: tuple[InvariantQM, ...]
    words: tuple[str, ...]
    exact_C: np.ndarray
    G: tuple[tuple[Estimate, ...], ...]  # G[i][j] = Phibar(exact dual i, f_j)
    Ginv: np.ndarray
    duals: tuple[InvariantQM, ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.words)

    def matrix(self) -> EvalMatrix:
        return EvalMatrix(tuple(f"psi{i + 1}" for i in range(self.k)), self.words,
                          np.array([[e.mean for e in row] for row in self.G]))

    def normalisation_hw(self, d: Sequence[int]) -> np.ndarray:
        """Half widths on ``psi'(f_d)`` from the uncertainty of the normalising matrix.

        First order: ``delta(G^-1 v) = -G^-1 dG G^-1 v`` with ``G^-1 v ~ d``.
        """
        H = np.array([[e.half_width for e in row] for row in self.G])
        u = np.asarray(d, dtype=float)
        return np.sqrt(((self.Ginv**2) @ (H**2)) @ (u**2))


def zk_dual(
    k: int,
    schedule=None,
    seed: int = 0,
    patterns: Sequence[str] = DEFAULT_PATTERNS,
    max_length: int = 6,
    **build_kw,
) -> ZkDual:
    """Build f_1..f_k and their flow-level dual quasi-morphisms.

    Exact duals on braids give words ``beta_j`` with ``psi_i(beta_j) = delta_ij``;
    the Monte Carlo matrix ``G_ij = Phibar(psi_i, f_j)`` is then inverted so the
    combinations ``psi'_i`` satisfy ``psi'_i(f_j) = delta_ij`` at flow level.
    """
    from . import gg_estimator as GG
    from .flowlab import build_zk_system

    if len(patterns) < k:
        raise ValueError("not enough patterns for k duals")
    schedule = schedule or GG.Schedule((4, 8, 16), 10_000)
    base = [InvariantQM.from_pattern(p) for p in patterns[:k]]
    psis, words, C = exact_dual(base, max_length)
    words_s = tuple(w.letters for w in words)
    system = build_zk_system(k, words_s, **build_kw)
    dom = GG.support_cover(system.element([1] * k))
    cols = [GG.phi_n_bar_multi(f, psis, 3, schedule, seed + 7919 * (j + 1), domain=dom) for j, f in enumerate(system.flows)]
    G = tuple(tuple(cols[j][i] for j in range(k)) for i in range(k))
    Gm = np.array([[e.mean for e in row] for row in G])
    Ginv = np.linalg.inv(Gm)
    duals = tuple(InvariantQM.combination(psis, [float(v) for v in Ginv[i]], label=f"psi'{i + 1}") for i in range(k))
    return ZkDual(system, tuple(base), words_s, C, G, Ginv, duals, int(seed))


def zk_evaluate(dual: ZkDual, d: Sequence[int], schedule=None, seed: int = 1) -> list[Estimate]:
    """``psi'_i(f_d)`` for ``f_d = f_1^{d_1} ... f_k^{d_k}``, with normalisation error propagated."""
    from . import gg_estimator as GG

    schedule = schedule or GG.Schedule((4, 8, 16), 10_000)
    if len(d) != dual.k:
        raise ValueError("exponent vector has the wrong length")
    if not any(d):
        return [Estimate(0.0, 0.0, 0, int(seed), schedule.powers) for _ in range(dual.k)]
    spec = dual.system.element(d)
    dom = GG.support_cover(dual.system.element([1] * dual.k))
    ests = GG.phi_n_bar_multi(spec, dual.duals, 3, schedule, seed, domain=dom)
    extra = dual.normalisation_hw(d)
    out = []
    for e, x in zip(ests, extra):
        out.append(Estimate(e.mean, math.hypot(e.half_width, float(x)), e.samples, e.seed, e.p_schedule,
                            e.flags + ("normalisation propagated",), e.trace))
    return out


def affine_growth(ms: Sequence[float], bounds: Sequence[float]) -> dict:
    """Least-squares line through (m, bound); growth is affine with positive slope."""
    m = np.asarray(ms, dtype=float)
    b = np.asarray(bounds, dtype=float)
    A = np.stack([m, np.ones_like(m)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = b - (slope * m + icpt)
    rel = float(np.abs(resid).max() / max(abs(slope) * (m.max() - m.min()), 1e-300))
    return {"slope": float(slope), "intercept": float(icpt), "max_relative_residual": rel,
            "increasing": bool(np.all(np.diff(b) > 0)), "positive_slope": bool(slope > 0)}
