"""Empirical entropies and the closed forms that cross-check the Shapley engine.

Distributions keep integer counts; probabilities only appear inside the log
sums, which are accumulated with :func:`math.fsum`.

Nothing here touches the AD-tree or per-subject cohorts.  Averaging the
Shapley values over all subjects gives a weighted sum of conditional
entropies, and averaging over a subset gives the same sum with cross
entropies, so these functions are an independent route to the aggregates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import CategoricalTable, DataError, SubjectSet
from .shapley import weight_table


@dataclass(frozen=True)
class EmpiricalDistribution:
    subset: tuple[int, ...]
    counts: dict
    total: int

    def __post_init__(self):
        if self.total < 1:
            raise DataError("distribution needs a positive total")
        if any(c <= 0 for c in self.counts.values()):
            raise DataError("distribution counts must be positive")
        if sum(self.counts.values()) != self.total:
            raise DataError("counts do not sum to total")

    def prob(self, key) -> float:
        return self.counts.get(key, 0) / self.total

    def probs(self) -> dict:
        return {k: c / self.total for k, c in self.counts.items()}


def _rows(table: CategoricalTable, v: SubjectSet | Sequence[int] | None) -> np.ndarray | None:
    if v is None:
        return None
    if not isinstance(v, SubjectSet):
        v = SubjectSet(tuple(v))
    return v.check(table.n).array()


def marginal(
    table: CategoricalTable,
    w: Iterable[int],
    v: SubjectSet | Sequence[int] | None = None,
) -> EmpiricalDistribution:
    """Distribution of the tuple of columns ``w`` over rows ``v`` (all rows by default)."""
    w = tuple(sorted(set(w)))
    rows = _rows(table, v)
    total = table.n if rows is None else rows.size
    if not w:
        return EmpiricalDistribution((), {(): total}, total)
    block = table.codes[:, w] if rows is None else table.codes[np.ix_(rows, w)]
    keys, counts = np.unique(block, axis=0, return_counts=True)
    return EmpiricalDistribution(w, dict(zip(map(tuple, keys.tolist()), counts.tolist())), total)


def entropy(dist: EmpiricalDistribution) -> float:
    n = dist.total
    return math.fsum(-(c / n) * math.log2(c / n) for c in dist.counts.values()) + 0.0


def entropy_of_probs(p: Iterable[float]) -> float:
    """Entropy in bits of a probability vector; zero entries contribute nothing."""
    return math.fsum(-x * math.log2(x) for x in p if x > 0) + 0.0


def joint_entropy(table: CategoricalTable, w: Iterable[int], v=None) -> float:
    return entropy(marginal(table, w, v))


def conditional_entropy(table: CategoricalTable, target: Iterable[int], given: Iterable[int]) -> float:
    """``H(target | given) = H(target, given) - H(given)``."""
    target, given = set(target), set(given)
    if target & given:
        raise DataError(f"target and given overlap on {sorted(target & given)}")
    return joint_entropy(table, target | given) - joint_entropy(table, given)


def _check_support(q: EmpiricalDistribution, p: EmpiricalDistribution) -> None:
    if q.subset != p.subset:
        raise DataError(f"distributions are over different variables {q.subset} vs {p.subset}")
    for key in q.counts:
        if key not in p.counts:
            raise DataError(f"value {key} has mass under q but not under p")


def relative_entropy(q: EmpiricalDistribution, p: EmpiricalDistribution) -> float:
    """``D(q || p) = sum q log2(q / p)`` in bits."""
    _check_support(q, p)
    return math.fsum(
        (c / q.total) * math.log2((c / q.total) / p.prob(k)) for k, c in q.counts.items()
    ) + 0.0


def cross_entropy(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """``H(p, q) = -sum_x q(x) log2 p(x)``: expected code length under ``p`` for draws from ``q``."""
    _check_support(q, p)
    return math.fsum(-(c / q.total) * math.log2(p.prob(k)) for k, c in q.counts.items()) + 0.0


def _masks_without(d: int, j: int):
    for mask in range(1 << d):
        if not mask >> j & 1:
            yield mask


def _members(mask: int, d: int) -> list[int]:
    return [k for k in range(d) if mask >> k & 1]


def _weighted_increments(d: int, j: int, level: dict[int, float]) -> float:
    # (1/d) sum_{u without j} C(d-1,|u|)^-1 (level[u+j] - level[u]), bucketed by |u|
    w = weight_table(d)
    buckets: list[list[float]] = [[] for _ in range(d)]
    for mask in _masks_without(d, j):
        buckets[bin(mask).count("1")].append(level[mask | 1 << j] - level[mask])
    return math.fsum(w[r] * math.fsum(b) for r, b in enumerate(buckets))


def all_joint_entropies(table: CategoricalTable, v=None) -> dict[int, float]:
    d = table.d
    return {mask: joint_entropy(table, _members(mask, d), v) for mask in range(1 << d)}


def global_shapley_via_entropy(table: CategoricalTable, j: int, entropies: dict[int, float] | None = None) -> float:
    """Mean Shapley value of variable ``j`` over all subjects, from conditional entropies."""
    if entropies is None:
        entropies = all_joint_entropies(table)
    return _weighted_increments(table.d, j, entropies)


def all_cross_entropies(table: CategoricalTable, v) -> dict[int, float]:
    """``H(p_w, q_w)`` for every column subset ``w``: p over all rows, q over ``v``."""
    d = table.d
    out = {}
    for mask in range(1 << d):
        w = _members(mask, d)
        out[mask] = cross_entropy(marginal(table, w), marginal(table, w, v))
    return out


def subset_shapley_via_cross_entropy(
    table: CategoricalTable,
    v: SubjectSet | Sequence[int],
    j: int,
    cross: dict[int, float] | None = None,
) -> float:
    """Mean Shapley value of ``j`` over subjects ``v``, from cross entropies."""
    if cross is None:
        cross = all_cross_entropies(table, v)
    return _weighted_increments(table.d, j, cross)
