"""Monte Carlo estimate container shared by the flow and estimator modules."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

Z95 = 1.959963984540054


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo value with a normal-approximation 95% half width."""

    mean: float
    half_width: float
    samples: int
    seed: int
    p_schedule: tuple[int, ...] = (1,)
    flags: tuple[str, ...] = ()
    # per-power (p, value/p, half_width/p) when a schedule was run
    trace: tuple[tuple[int, float, float], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.half_width >= 0:
            raise ValueError("half_width must be non-negative")

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return abs(self.mean - value) <= self.half_width + slack

    @property
    def converged(self) -> bool:
        return "non-converged" not in self.flags

    def scaled(self, c: float) -> "Estimate":
        return Estimate(
            self.mean * c,
            self.half_width * abs(c),
            self.samples,
            self.seed,
            self.p_schedule,
            self.flags,
            tuple((p, v * c, h * abs(c)) for p, v, h in self.trace),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p_schedule"] = list(self.p_schedule)
        d["flags"] = list(self.flags)
        d["trace"] = [list(t) for t in self.trace]
        return d


def mean_and_var(values: np.ndarray) -> tuple[float, float]:
    """Mean and unbiased variance with an order-fixed, correctly rounded sum."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        raise ValueError("no samples")
    m = math.fsum(v.tolist()) / n
    if n == 1:
        return m, 0.0
    var = math.fsum(((v - m) ** 2).tolist()) / (n - 1)
    return m, var


def combine_strata(parts: list[tuple[float, np.ndarray]]) -> tuple[float, float, int]:
    """Stratified combination: ``sum_s w_s mean_s`` and its 95% half width."""
    total = 0.0
    var = 0.0
    count = 0
    terms = []
    for w, vals in parts:
        m, v = mean_and_var(vals)
        terms.append(w * m)
        var += w * w * v / len(vals)
        count += len(vals)
    total = math.fsum(terms)
    return total, Z95 * math.sqrt(var), count


def from_samples(values, scale: float, seed: int, p_schedule=(1,), flags=()) -> Estimate:
    m, v = mean_and_var(values)
    n = len(values)
    return Estimate(m * scale, Z95 * math.sqrt(v / n) * abs(scale), n, int(seed), tuple(p_schedule), tuple(flags))
