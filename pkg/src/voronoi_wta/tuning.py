"""Golden-section search for the kernel scaling factor."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...


@dataclass(frozen=True)
class SearchConfig:
    lo: float = 0.1
    hi: float = 2.0
    tolerance: float = 0.1
    max_iters: int = 100

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValueError(f"need 0 < lo < hi, got [{self.lo}, {self.hi}]")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")

    def max_evaluations(self) -> int:
        width = self.hi - self.lo
        if width <= self.tolerance:
            return 2
        return 2 + math.ceil(math.log(width / self.tolerance) / math.log(1.0 / INV_PHI))


@dataclass
class SearchResult:
    h: float
    value: float
    evals: int
    converged: bool
    best_h: float
    brackets: list = field(default_factory=list)


def golden_section_min(objective, cfg: SearchConfig = SearchConfig()) -> SearchResult:
    """Minimise a unimodal ``objective`` on ``[cfg.lo, cfg.hi]``.

    Returns the midpoint of the final bracket (width <= tolerance) as ``h``;
    ``value`` and ``best_h`` are the best evaluation seen.  Each distinct
    point is evaluated once.  If ``max_iters`` runs out, ``converged`` is
    False and the best point so far is still returned.
    """
    cache: dict = {}

    def f(h):
        if h not in cache:
            cache[h] = float(objective(h))
        return cache[h]

    a, b = cfg.lo, cfg.hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    brackets = [(a, b)]
    iters = 0
    while b - a > cfg.tolerance:
        if iters >= cfg.max_iters:
            log.warning("golden-section search stopped after %d iterations", iters)
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
        brackets.append((a, b))
        iters += 1
    best_h = min(cache, key=cache.get)
    return SearchResult(
        h=0.5 * (a + b),
        value=cache[best_h],
        evals=len(cache),
        converged=b - a <= cfg.tolerance,
        best_h=best_h,
        brackets=brackets,
    )
