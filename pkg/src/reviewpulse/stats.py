"""Fisher's exact test, Pearson correlation, quantile binning and rate tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Rows are conditions; columns are (addressed, not addressed)."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("cell counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


def hypergeometric_pmf(row1: int, col1: int, total: int) -> dict[int, float]:
    """P(a = k) for every feasible top-left cell with the given margins."""
    lo, hi = max(0, row1 + col1 - total), min(row1, col1)
    denom = math.comb(total, col1)
    return {k: math.comb(row1, k) * math.comb(total - row1, col1 - k) / denom for k in range(lo, hi + 1)}


def fisher_exact(t: ContingencyTable2x2, slack: float = 1e-12) -> float:
    """Two-sided p: total probability of tables no more likely than the observed one."""
    n = t.total
    if n == 0:
        raise ValueError("empty table")
    row1, col1 = t.a + t.b, t.a + t.c
    if row1 in (0, n) or col1 in (0, n):
        return 1.0
    pmf = hypergeometric_pmf(row1, col1, n)
    observed = pmf[t.a]
    p = sum(v for v in pmf.values() if v <= observed + slack)
    return min(1.0, p)


@dataclass(frozen=True)
class Correlation:
    r: float
    constant: bool = False

    def __float__(self) -> float:
        return self.r


def pearson(x: Sequence[float], y: Sequence[float]) -> Correlation:
    if len(x) != len(y):
        raise ValueError("length mismatch")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    dx, dy = xa - xa.mean(), ya - ya.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return Correlation(0.0, True)
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return Correlation(max(-1.0, min(1.0, r)))


def quantile_bins(values: Iterable[float], k: int = 5) -> list[float]:
    """Edges [min, q1, ..., max] at the i/k lower quantiles, duplicates merged.

    Bins are (edge_i, edge_i+1]; the first bin also includes the minimum, so
    a repeated minimum yields a degenerate first bin such as (-0, 0].
    """
    v = sorted(float(x) for x in values)
    if not v:
        raise ValueError("no values to bin")
    n = len(v)
    inner = [v[max(0, math.ceil(i * n / k) - 1)] for i in range(1, k)]
    upper = sorted(set(inner + [v[-1]]))
    return [v[0]] + upper


def bin_index(value: float, edges: Sequence[float]) -> int:
    """Index of the (lo, hi] bin holding ``value``; out-of-range values clamp."""
    nbins = len(edges) - 1
    if value <= edges[1]:
        return 0
    for i in range(1, nbins):
        if value <= edges[i + 1]:
            return i
    return nbins - 1


def bin_label(edges: Sequence[float], i: int, fmt: str = "{:.2f}") -> str:
    lo, hi = edges[i], edges[i + 1]
    left = ("–" + fmt.format(abs(lo))) if i == 0 and lo == 0 else fmt.format(lo)
    return f"({left}, {fmt.format(hi)}]"


@dataclass
class BinnedRateTable:
    edges: list[float]
    groups: list[str]
    counts: dict = field(default_factory=dict)  # (bin, group) -> n
    addressed: dict = field(default_factory=dict)  # (bin, group) -> n addressed

    @property
    def nbins(self) -> int:
        return len(self.edges) - 1

    def fraction(self, b: int, g: str):
        n = self.counts.get((b, g), 0)
        return self.addressed.get((b, g), 0) / n if n else None

    def group_total(self, g: str) -> int:
        return sum(self.counts.get((b, g), 0) for b in range(self.nbins))

    def cell(self, b: int, g: str) -> str:
        n = self.counts.get((b, g), 0)
        f = self.fraction(b, g)
        return f"{n} ({f * 100:.1f}%)" if f is not None else "0 (—)"

    def to_dict(self) -> dict:
        return {
            "edges": self.edges,
            "groups": self.groups,
            "rows": [
                {"bin": bin_label(self.edges, b),
                 **{g: {"count": self.counts.get((b, g), 0), "addressed_fraction": self.fraction(b, g)}
                    for g in self.groups}}
                for b in range(self.nbins)
            ],
        }


def rate_table(records: Iterable[tuple[str, float, bool]], edges: Sequence[float],
               groups: Sequence[str] | None = None) -> BinnedRateTable:
    records = list(records)
    groups = list(groups) if groups is not None else sorted({g for g, _, _ in records})
    table = BinnedRateTable(list(edges), groups)
    for g, value, addressed in records:
        if value < edges[0] or value > edges[-1]:
            log.warning("value %r outside [%r, %r]; assigned to boundary bin", value, edges[0], edges[-1])
        b = bin_index(value, edges)
        table.counts[(b, g)] = table.counts.get((b, g), 0) + 1
        table.addressed[(b, g)] = table.addressed.get((b, g), 0) + int(bool(addressed))
    return table
