"""Exact algebra for braid words, the P3 -> F2 projection and Brooks quasi-morphisms.

Braid words are sequences of signed Artin generators: ``2`` is sigma_2 and
``-1`` is sigma_1^{-1}.  Free words over F2 = <x, y> are strings over
``x, X, y, Y`` with capitals denoting inverses.  Here ``x`` is the image of
sigma_1^2 and ``y`` the image of sigma_2^2.

Braid group elements are never put into a normal form.  Identities between
elements of B3 are checked through the triple (SL2 matrix, writhe,
permutation), which is enough for every comparison made in this package.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

__all__ = [
    "BraidWord",
    "FreeWord",
    "IntMatrix2",
    "BrooksQM",
    "InvariantQM",
    "free_reduce",
    "permutation",
    "is_pure",
    "writhe",
    "eta",
    "full_twist",
    "sl2_matrix",
    "p3_to_f2",
    "evaluate_free_word",
    "brooks_count",
    "brooks_hom",
    "qm_on_braid",
    "braid_from_free_word",
    "COSET_REPRESENTATIVES",
]


# ---------------------------------------------------------------------------
# braid words


@dataclass(frozen=True)
class BraidWord:
    """A word in the Artin generators of B_n.

    ``letters`` holds signed generator indices, so ``(1, 2, -1)`` is
    sigma_1 sigma_2 sigma_1^{-1}.
    """

    strands: int
    letters: tuple[int, ...] = ()

    def __post_init__(self):
        if self.strands < 2:
            raise ValueError(f"need at least 2 strands, got {self.strands}")
        letters = tuple(int(a) for a in self.letters)
        for a in letters:
            if a == 0 or abs(a) >= self.strands:
                raise ValueError(f"generator {a} out of range for B_{self.strands}")
        object.__setattr__(self, "letters", letters)

    @classmethod
    def from_list(cls, strands: int, letters: Iterable[int]) -> "BraidWord":
        return cls(strands, tuple(letters))

    def to_list(self) -> list[int]:
        return list(self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def __mul__(self, other: "BraidWord") -> "BraidWord":
        if other.strands != self.strands:
            raise ValueError("cannot multiply braids on different strand counts")
        return BraidWord(self.strands, self.letters + other.letters)

    def inverse(self) -> "BraidWord":
        return BraidWord(self.strands, tuple(-a for a in reversed(self.letters)))

    def __pow__(self, k: int) -> "BraidWord":
        if k < 0:
            return self.inverse() ** (-k)
        return BraidWord(self.strands, self.letters * k)

    def mirror(self) -> "BraidWord":
        return BraidWord(self.strands, tuple(-a for a in self.letters))

    def __str__(self) -> str:
        return " ".join(str(a) for a in self.letters) if self.letters else "e"


def free_reduce(w: BraidWord) -> BraidWord:
    """Cancel adjacent inverse pairs until none remain."""
    stack: list[int] = []
    for a in w.letters:
        if stack and stack[-1] == -a:
            stack.pop()
        else:
            stack.append(a)
    return BraidWord(w.strands, tuple(stack))


def permutation(w: BraidWord) -> tuple[int, ...]:
    """Underlying permutation as a tuple ``perm`` with ``perm[k]`` the final
    position (1-based) of the strand starting at position ``k + 1``."""
    # pos_of[s] is the current position of strand s
    pos_of = list(range(w.strands))
    at = list(range(w.strands))
    for a in w.letters:
        i = abs(a) - 1
        s, t = at[i], at[i + 1]
        at[i], at[i + 1] = t, s
        pos_of[s], pos_of[t] = i + 1, i
    return tuple(p + 1 for p in pos_of)


def is_pure(w: BraidWord) -> bool:
    return permutation(w) == tuple(range(1, w.strands + 1))


def writhe(w: BraidWord) -> int:
    return sum(1 if a > 0 else -1 for a in w.letters)


def _a_gen(j: int, i: int, n: int) -> BraidWord:
    # A_{j,i} = (s_{i-1} ... s_{j+1}) s_j^2 (s_{j+1}^{-1} ... s_{i-1}^{-1})
    head = tuple(range(i - 1, j, -1))
    return BraidWord(n, head + (j, j) + tuple(-a for a in reversed(head)))


def eta(i: int, n: int) -> BraidWord:
    """Pure braid in which strand ``i`` loops once, positively, around strands
    ``1 .. i-1``: the product A_{1,i} A_{2,i} ... A_{i-1,i}."""
    if not 2 <= i <= n:
        raise ValueError(f"eta(i, n) needs 2 <= i <= n, got i={i}, n={n}")
    out = BraidWord(n)
    for j in range(1, i):
        out = out * _a_gen(j, i, n)
    return out


def full_twist(n: int) -> BraidWord:
    """(sigma_1 ... sigma_{n-1})^n, the generator of the centre of P_n."""
    if n < 2:
        raise ValueError(f"full twist needs n >= 2, got {n}")
    return BraidWord(n, tuple(range(1, n)) * n)


# ---------------------------------------------------------------------------
# SL(2, Z)


class IntMatrix2(NamedTuple):
    a: int
    b: int
    c: int
    d: int

    def __matmul__(self, o: "IntMatrix2") -> "IntMatrix2":
        return IntMatrix2(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )

    def __neg__(self) -> "IntMatrix2":
        return IntMatrix2(-self.a, -self.b, -self.c, -self.d)

    def det(self) -> int:
        return self.a * self.d - self.b * self.c

    def inverse(self) -> "IntMatrix2":
        # only used on determinant-one matrices
        return IntMatrix2(self.d, -self.b, -self.c, self.a)

    def is_pm_identity(self) -> bool:
        return self.b == 0 and self.c == 0 and self.a == self.d and abs(self.a) == 1

    def norm1(self) -> int:
        return abs(self.a) + abs(self.b) + abs(self.c) + abs(self.d)

    def as_rows(self) -> list[list[int]]:
        return [[self.a, self.b], [self.c, self.d]]


IDENTITY = IntMatrix2(1, 0, 0, 1)
_SIGMA = {
    1: IntMatrix2(1, 1, 0, 1),
    -1: IntMatrix2(1, -1, 0, 1),
    2: IntMatrix2(1, 0, -1, 1),
    -2: IntMatrix2(1, 0, 1, 1),
}
X_MAT = IntMatrix2(1, 2, 0, 1)
Y_MAT = IntMatrix2(1, 0, -2, 1)
_FREE_MAT = {
    "x": X_MAT,
    "X": X_MAT.inverse(),
    "y": Y_MAT,
    "Y": Y_MAT.inverse(),
}


def _require_b3(w: BraidWord) -> None:
    if w.strands != 3:
        raise ValueError(f"expected a braid on 3 strands, got {w.strands}")


def sl2_matrix(w: BraidWord) -> IntMatrix2:
    """Image of ``w`` under sigma_1 -> [[1,1],[0,1]], sigma_2 -> [[1,0],[-1,1]]."""
    _require_b3(w)
    m = IDENTITY
    for a in w.letters:
        m = m @ _SIGMA[a]
    return m


# ---------------------------------------------------------------------------
# free words


_INV = {"x": "X", "X": "x", "y": "Y", "Y": "y"}


def _reduce_str(s: str) -> str:
    stack: list[str] = []
    for ch in s:
        if ch not in _INV:
            raise ValueError(f"bad free-word letter {ch!r}")
        if stack and stack[-1] == _INV[ch]:
            stack.pop()
        else:
            stack.append(ch)
    return "".join(stack)


@dataclass(frozen=True)
class FreeWord:
    """Freely reduced word in F2 = <x, y>; capitals are inverses."""

    letters: str = ""

    def __post_init__(self):
        object.__setattr__(self, "letters", _reduce_str(self.letters))

    def __len__(self) -> int:
        return len(self.letters)

    def __mul__(self, other: "FreeWord") -> "FreeWord":
        return FreeWord(self.letters + other.letters)

    def inverse(self) -> "FreeWord":
        return FreeWord("".join(_INV[c] for c in reversed(self.letters)))

    def __pow__(self, k: int) -> "FreeWord":
        if k < 0:
            return self.inverse() ** (-k)
        return FreeWord(self.letters * k)

    def cyclic_reduce(self) -> "FreeWord":
        s = self.letters
        i, j = 0, len(s)
        while j - i >= 2 and s[i] == _INV[s[j - 1]]:
            i += 1
            j -= 1
        return FreeWord(s[i:j])

    def mirror(self) -> "FreeWord":
        """Image under x -> x^{-1}, y -> y^{-1}."""
        return FreeWord(self.letters.swapcase())

    def __str__(self) -> str:
        return self.letters or "e"


def evaluate_free_word(g: FreeWord) -> IntMatrix2:
    m = IDENTITY
    for ch in g.letters:
        m = m @ _FREE_MAT[ch]
    return m


def braid_from_free_word(g: FreeWord) -> BraidWord:
    """The pure braid in <sigma_1^2, sigma_2^2> spelled by ``g``."""
    table = {"x": (1, 1), "X": (-1, -1), "y": (2, 2), "Y": (-2, -2)}
    return BraidWord(3, tuple(itertools.chain.from_iterable(table[c] for c in g.letters)))


_DESCENT_STEPS = tuple((ch, _FREE_MAT[ch]) for ch in "xXyY")


def _matrix_to_free_word(m: IntMatrix2) -> FreeWord:
    if (m.a - 1) % 2 or m.b % 2 or m.c % 2 or (m.d - 1) % 2:
        raise ValueError(f"matrix {m.as_rows()} is not in the level-2 subgroup")
    peeled: list[str] = []
    while not m.is_pm_identity():
        best = None
        for ch, step in _DESCENT_STEPS:
            cand = step @ m
            if best is None or cand.norm1() < best[1].norm1():
                best = (ch, cand)
        if best[1].norm1() >= m.norm1():
            raise RuntimeError(f"descent stalled at {m.as_rows()}")
        peeled.append(best[0])
        m = best[1]
    # step_k ... step_1 M = +-I, so M = +- step_1^{-1} ... step_k^{-1}
    return FreeWord("".join(_INV[c] for c in peeled))


def p3_to_f2(w: BraidWord) -> FreeWord:
    """Project a pure 3-braid to F2 = <sigma_1^2, sigma_2^2>, killing the centre."""
    _require_b3(w)
    if not is_pure(w):
        raise ValueError("p3_to_f2 needs a pure braid")
    return _matrix_to_free_word(sl2_matrix(w))


# ---------------------------------------------------------------------------
# Brooks quasi-morphisms


def _count(pattern: str, text: str) -> int:
    n = 0
    start = text.find(pattern)
    while start != -1:
        n += 1
        start = text.find(pattern, start + 1)
    return n


def _periodic_count(pattern: str, cyc: str) -> int:
    if not cyc:
        return 0
    reps = -(-len(pattern) // len(cyc)) + 1
    text = cyc * reps
    n = 0
    for p in range(len(cyc)):
        if text.startswith(pattern, p):
            n += 1
    return n


@dataclass(frozen=True)
class BrooksQM:
    """Counting quasi-morphism for a non-trivial reduced pattern."""

    pattern: FreeWord

    def __post_init__(self):
        if isinstance(self.pattern, str):
            object.__setattr__(self, "pattern", FreeWord(self.pattern))
        if len(self.pattern) == 0:
            raise ValueError("Brooks pattern must be non-trivial")
        if self.pattern.cyclic_reduce() != self.pattern:
            raise ValueError(f"Brooks pattern {self.pattern} is not cyclically reduced")

    @property
    def name(self) -> str:
        return self.pattern.letters

    def uses_both_letters(self) -> bool:
        s = self.pattern.letters.lower()
        return "x" in s and "y" in s


def brooks_count(q: BrooksQM, g: FreeWord) -> int:
    w = q.pattern.letters
    return _count(w, g.letters) - _count(q.pattern.inverse().letters, g.letters)


def brooks_hom(q: BrooksQM, g: FreeWord) -> int:
    """Homogenised Brooks count, evaluated exactly on the periodic word."""
    c = g.cyclic_reduce().letters
    return _periodic_count(q.pattern.letters, c) - _periodic_count(
        q.pattern.inverse().letters, c
    )


def qm_on_braid(q: BrooksQM, w: BraidWord) -> int:
    """``brooks_hom(q, p3_to_f2(w))`` for a pure 3-braid.

    Patterns that are powers of a single letter are rejected: the pullback
    must vanish on eta(2,3) and eta(3,3), which map to x and x^{-1}.
    """
    if not q.uses_both_letters():
        raise ValueError(f"pattern {q.name} must contain both x and y")
    return brooks_hom(q, p3_to_f2(w))


# ---------------------------------------------------------------------------
# B3-invariant extension

# one representative per coset of P3 in B3
COSET_REPRESENTATIVES: tuple[BraidWord, ...] = tuple(
    BraidWord(3, t) for t in [(), (1,), (2,), (1, 2), (2, 1), (1, 2, 1)]
)
_COSET_MATS = tuple((sl2_matrix(s), sl2_matrix(s.inverse())) for s in COSET_REPRESENTATIVES)


def _cyclic_key(m: IntMatrix2) -> FreeWord:
    return _matrix_to_free_word(m).cyclic_reduce()


@dataclass(frozen=True)
class InvariantQM:
    """Homogeneous quasi-morphism on P3 that is invariant under conjugation in B3.

    The value on a pure braid ``w`` is the sum of ``weights[k] * brooks_hom``
    over all conjugates ``s w s^{-1}`` by coset representatives ``s`` of P3
    in B3.  Averaging over the cosets is what lets the function extend to a
    homogeneous quasi-morphism of B3; the pullback of a single Brooks count
    is only P3-invariant.

    ``mirror=True`` adds the same sum for the mirrored pattern, making the
    function invariant under sigma_i -> sigma_i^{-1}.
    """

    terms: tuple[tuple[BrooksQM, float], ...]
    mirror: bool = False
    label: str = ""

    @classmethod
    def from_pattern(cls, pattern: str, mirror: bool = False) -> "InvariantQM":
        return cls(((BrooksQM(FreeWord(pattern)), 1.0),), mirror, pattern)

    @classmethod
    def combination(
        cls, parts: Sequence["InvariantQM"], coeffs: Sequence[float], label: str = ""
    ) -> "InvariantQM":
        terms: dict[str, float] = {}
        mirror = None
        for part, c in zip(parts, coeffs):
            if mirror is None:
                mirror = part.mirror
            elif part.mirror != mirror:
                raise ValueError("cannot combine mirrored and plain quasi-morphisms")
            for q, wgt in part.terms:
                terms[q.name] = terms.get(q.name, 0.0) + c * wgt
        return cls(
            tuple((BrooksQM(FreeWord(k)), v) for k, v in terms.items() if v != 0.0),
            bool(mirror),
            label,
        )

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return "+".join(f"{w:g}*{q.name}" for q, w in self.terms)

    def free_value(self, g: FreeWord) -> float:
        """Value on the pure braid whose F2 projection is ``g``."""
        return self.matrix_value(evaluate_free_word(g))

    def matrix_value(self, m: IntMatrix2) -> float:
        total = 0.0
        for s, s_inv in _COSET_MATS:
            c = _cyclic_key(s @ m @ s_inv)
            for q, wgt in self.terms:
                total += wgt * brooks_hom(q, c)
                if self.mirror:
                    total += wgt * brooks_hom(q, c.mirror())
        return total

    def __call__(self, w: BraidWord) -> float:
        _require_b3(w)
        if not is_pure(w):
            raise ValueError("InvariantQM is evaluated on pure braids only")
        return self.matrix_value(sl2_matrix(w))

    def is_admissible(self) -> bool:
        """True when the function vanishes on A3 = <eta(2,3), eta(3,3)>.

        The centre maps to the identity of F2, so vanishing on sigma_1^2 is
        equivalent.
        """
        return self.matrix_value(X_MAT) == 0.0
