"""Uniqueness Shapley values per subject, exact and Monte Carlo.

For subject ``t`` the value of revealing the variables in ``u`` is
``-log2(N_t(u) / n)`` where ``N_t(u)`` is the number of subjects matching
``t`` on ``u``.  The Shapley share of variable ``j`` is

    phi[t, j] = sum over u not containing j of
                gamma(d, |u|) * log2(N_t(u) / N_t(u + j))

with ``gamma(d, r) = 1 / (d * C(d - 1, r))``.  Everything is in bits.

Exact mode fetches all ``2**d`` cohort sizes of a subject in one batched
tree walk and combines them with precomputed weights.  Identical rows have
identical cohorts, so each distinct row is evaluated once.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .adtree import ADTree, naive_count
from .dataset import CategoricalTable, DataError, SubjectSet

log = logging.getLogger(__name__)

DEFAULT_MAX_EXACT_D = 20
# cap on chunk_size * 2**d cohort counts held in memory at once
_CHUNK_CELLS = 1 << 20


class ExactModeLimitError(DataError):
    pass


@dataclass(frozen=True)
class SubsetWeight:
    d: int
    r: int
    exact: Fraction

    @property
    def value(self) -> float:
        return float(self.exact)


def subset_weight(d: int, r: int) -> SubsetWeight:
    """Shapley weight of one subset of size ``r`` out of the ``d - 1`` others."""
    if not 0 <= r < d:
        raise ValueError(f"need 0 <= r < d, got r={r}, d={d}")
    return SubsetWeight(d, r, Fraction(1, d * math.comb(d - 1, r)))


def keyed_subset_weight(d: int, r: int) -> SubsetWeight:
    """Weight once a perfectly identifying key variable is posited alongside the ``d``."""
    if not 0 <= r < d:
        raise ValueError(f"need 0 <= r < d, got r={r}, d={d}")
    return SubsetWeight(d, r, Fraction(1, (d + 1) * math.comb(d, r)))


@lru_cache(maxsize=None)
def weight_table(d: int, keyed: bool = False) -> np.ndarray:
    fn = keyed_subset_weight if keyed else subset_weight
    return np.array([fn(d, r).value for r in range(d)])


@lru_cache(maxsize=32)
def _design(d: int, keyed: bool):
    # per variable j: masks u without j, masks u + j, and the weight of each u
    masks = np.arange(1 << d, dtype=np.int64)
    popcount = np.zeros(1 << d, dtype=np.int64)
    for j in range(d):
        popcount += (masks >> j) & 1
    w = weight_table(d, keyed)
    out = []
    for j in range(d):
        without = masks[(masks >> j) & 1 == 0]
        out.append((without, without | (1 << j), w[popcount[without]]))
    return out


def combine(counts: np.ndarray, d: int, keyed: bool = False) -> np.ndarray:
    """Shapley values from cohort sizes indexed by subset mask.

    ``counts`` has shape ``(m, 2**d)``; the result has shape ``(m, d)``.  Each
    output row depends only on its own input row.
    """
    logs = np.log2(np.asarray(counts, dtype=np.float64).reshape(-1, 1 << d))
    phi = np.empty((logs.shape[0], d))
    for j, (without, with_j, w) in enumerate(_design(d, keyed)):
        phi[:, j] = ((logs[:, without] - logs[:, with_j]) * w).sum(axis=1)
    return phi


def _check_exact(d: int, max_exact_d: int) -> None:
    if d > max_exact_d:
        raise ExactModeLimitError(
            f"d={d} exceeds the exact-mode limit of {max_exact_d}; use Monte Carlo mode"
        )


def _check_subject(table: CategoricalTable, t: int) -> None:
    if not 0 <= t < table.n:
        raise DataError(f"subject {t} out of range for n={table.n}")


def shapley_subject(tree: ADTree, table: CategoricalTable, t: int, max_exact_d: int = DEFAULT_MAX_EXACT_D) -> np.ndarray:
    _check_subject(table, t)
    _check_exact(table.d, max_exact_d)
    return combine(tree.cohort_counts_batch(table.codes[t:t + 1]), table.d)[0]


def shapley_subject_keyed(tree: ADTree, table: CategoricalTable, t: int, max_exact_d: int = DEFAULT_MAX_EXACT_D) -> np.ndarray:
    """Shapley values as if a database key variable were also present.

    The key is never materialized: revealing it after ``j`` leaves ``j``'s
    increment intact and revealing it before ``j`` zeroes it, which amounts
    to reweighting each subset.
    """
    _check_subject(table, t)
    _check_exact(table.d, max_exact_d)
    return combine(tree.cohort_counts_batch(table.codes[t:t + 1]), table.d, keyed=True)[0]


def naive_cohort_counts(table: CategoricalTable, t: int) -> np.ndarray:
    """All ``2**d`` cohort sizes of subject ``t`` by linear scans."""
    d = table.d
    return np.array(
        [naive_count(table, t, [j for j in range(d) if m >> j & 1]) for m in range(1 << d)],
        dtype=np.int64,
    )


@dataclass
class ShapleyMatrix:
    values: np.ndarray
    names: tuple[str, ...]
    provenance: str = "exact"
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def totals(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def to_csv(self, path, values: np.ndarray | None = None) -> None:
        values = self.values if values is None else values
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", *self.names])
            for t, row in enumerate(values.tolist()):
                w.writerow([t, *map(repr, row)])

    @classmethod
    def from_csv(cls, path) -> "ShapleyMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:1] != ["subject_id"]:
            raise DataError(f"{path}: expected a header starting with subject_id")
        names = tuple(rows[0][1:])
        body = rows[1:]
        if [int(r[0]) for r in body] != list(range(len(body))):
            raise DataError(f"{path}: subject ids must run 0..n-1 in order")
        values = np.array([[float(x) for x in r[1:]] for r in body]).reshape(len(body), len(names))
        return cls(values, names, provenance="file")


# -- exact engine over all subjects -----------------------------------------

_SHARED: dict = {}


def _chunk_counts(bounds):
    lo, hi = bounds
    counter = _SHARED["counter"]
    return counter(lo, hi)


def _chunk_size(d: int) -> int:
    return max(1, min(1024, _CHUNK_CELLS >> d))


def _run_chunks(counter: Callable[[int, int], np.ndarray], m: int, d: int, keyed: bool, workers: int) -> np.ndarray:
    step = _chunk_size(d)
    chunks = [(lo, min(lo + step, m)) for lo in range(0, m, step)]
    phi = np.empty((m, d))
    if workers > 1 and len(chunks) > 1:
        # fork shares the read-only tree with workers without pickling it
        _SHARED["counter"] = counter
        ctx = multiprocessing.get_context("fork")
        try:
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                for (lo, hi), counts in zip(chunks, pool.map(_chunk_counts, chunks)):
                    phi[lo:hi] = combine(counts, d, keyed)
        finally:
            _SHARED.clear()
    else:
        for lo, hi in chunks:
            phi[lo:hi] = combine(counter(lo, hi), d, keyed)
    return phi


def shapley_all(
    tree: ADTree | None,
    table: CategoricalTable,
    workers: int = 1,
    keyed: bool = False,
    engine: str = "tree",
    max_exact_d: int = DEFAULT_MAX_EXACT_D,
) -> ShapleyMatrix:
    """Exact values for every subject; ``engine="naive"`` swaps in linear scans.

    The output does not depend on ``workers``: rows are cut into chunks whose
    size depends only on ``d``, and each row's arithmetic is independent of
    the rest of its chunk.
    """
    _check_exact(table.d, max_exact_d)
    uniq, first, inverse = np.unique(table.codes, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if engine == "tree":
        if tree is None:
            raise ValueError("tree engine needs a built ADTree")

        def counter(lo, hi):
            return tree.cohort_counts_batch(uniq[lo:hi])
    elif engine == "naive":

        def counter(lo, hi):
            return np.stack([naive_cohort_counts(table, int(t)) for t in first[lo:hi]])
    else:
        raise ValueError(f"unknown engine {engine!r}")
    log.debug("exact %s engine: %d subjects, %d distinct rows", engine, table.n, len(uniq))
    phi = _run_chunks(counter, len(uniq), table.d, keyed, workers)
    return ShapleyMatrix(phi[inverse], table.names, "keyed" if keyed else "exact")


# -- Monte Carlo --------------------------------------------------------------


def _subject_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t,)))


def shapley_subject_mc(
    tree: ADTree,
    table: CategoricalTable,
    t: int,
    permutations: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Average incremental value over random variable orders.

    Returns the estimates and their standard errors (sample standard
    deviation over permutations divided by ``sqrt(permutations)``; zero when
    only one permutation is drawn).  The generator is derived from
    ``(seed, t)`` so a subject's estimate does not depend on which other
    subjects are processed or how.
    """
    _check_subject(table, t)
    if permutations < 1:
        raise ValueError("permutations must be >= 1")
    d = table.d
    if d > 62:
        raise ExactModeLimitError("Monte Carlo mode supports at most 62 variables")
    rng = _subject_rng(seed, t)
    perms = rng.permuted(np.tile(np.arange(d), (permutations, 1)), axis=1)
    bits = np.int64(1) << perms
    after = np.cumsum(bits, axis=1)
    before = after - bits
    needed, where = np.unique(np.concatenate([before, after], axis=1), return_inverse=True)
    x = table.codes[t].tolist()
    memo: dict = {}
    logs = np.log2([tree.count_mask(x, int(m), memo) for m in needed.tolist()])
    lg = logs[where.reshape(permutations, 2 * d)]
    inc = np.empty((permutations, d))
    np.put_along_axis(inc, perms, lg[:, :d] - lg[:, d:], axis=1)
    est = inc.mean(axis=0)
    if permutations > 1:
        se = inc.std(axis=0, ddof=1) / math.sqrt(permutations)
    else:
        se = np.zeros(d)
    return est, se


def _mc_chunk(bounds):
    lo, hi = bounds
    tree, table, permutations, seed = _SHARED["mc"]
    out = [shapley_subject_mc(tree, table, t, permutations, seed) for t in range(lo, hi)]
    return np.array([o[0] for o in out]), np.array([o[1] for o in out])


def shapley_all_mc(
    tree: ADTree,
    table: CategoricalTable,
    permutations: int,
    seed: int,
    workers: int = 1,
) -> ShapleyMatrix:
    n, d = table.n, table.d
    chunks = [(lo, min(lo + 256, n)) for lo in range(0, n, 256)]
    values = np.empty((n, d))
    se = np.empty((n, d))
    _SHARED["mc"] = (tree, table, permutations, seed)
    try:
        if workers > 1 and len(chunks) > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                results = list(pool.map(_mc_chunk, chunks))
        else:
            results = [_mc_chunk(c) for c in chunks]
    finally:
        _SHARED.clear()
    for (lo, hi), (v, s) in zip(chunks, results):
        values[lo:hi] = v
        se[lo:hi] = s
    return ShapleyMatrix(
        values,
        table.names,
        f"monte_carlo(permutations={permutations}, seed={seed})",
        stderr=se,
    )


# -- aggregation --------------------------------------------------------------


@dataclass
class AggregateReport:
    subject_set: SubjectSet
    names: tuple[str, ...]
    shapley: np.ndarray
    entropy: np.ndarray | None
    fraction: float

    def rows(self) -> list[dict]:
        out = []
        for j, name in enumerate(self.names):
            out.append(
                {
                    "variable": name,
                    "shapley_bits": float(self.shapley[j]),
                    "entropy_bits": None if self.entropy is None else float(self.entropy[j]),
                    "subset_size": len(self.subject_set),
                    "pop_percent": 100.0 * self.fraction,
                }
            )
        return out

    def write(self, dest, fmt: str = "csv") -> None:
        """Write to a path or an open text stream as CSV or JSON."""
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.write(fh, fmt)
        rows = self.rows()
        if fmt == "json":
            payload = {"subset_size": len(self.subject_set), "pop_percent": 100.0 * self.fraction, "variables": rows}
            json.dump(payload, dest, indent=2)
            dest.write("\n")
        else:
            w = csv.DictWriter(dest, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def aggregate(matrix: ShapleyMatrix, v: SubjectSet | Sequence[int], table: CategoricalTable | None = None) -> AggregateReport:
    """Mean Shapley value over a subject set, with marginal entropies when a table is given."""
    if not isinstance(v, SubjectSet):
        v = SubjectSet(tuple(v))
    v.check(matrix.n)
    phi = matrix.values[v.array()].mean(axis=0)
    entropy = None
    if table is not None:
        from .infotheory import entropy as _entropy, marginal

        entropy = np.array([_entropy(marginal(table, [j])) for j in range(table.d)])
    return AggregateReport(v, matrix.names, phi, entropy, len(v) / matrix.n)
