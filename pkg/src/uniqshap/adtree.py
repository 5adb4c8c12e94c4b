"""All-dimension tree (Moore & Lee) over a categorical table.

The tree answers conjunctive count queries ``#{i : x[i, u] == a}`` by walking
from the root along ``variable == value`` branches.  Two memory savings are
applied:

* most-common-value (MCV) pruning: at every vary node the child for the most
  frequent value is not materialized.  Its count is rebuilt at query time as
  ``count(parent context) - sum(counts of the sibling values)``.
* leaf-lists: a node covering at most ``leaf_threshold`` rows keeps the rows
  themselves instead of a subtree, and queries below it scan those rows.

Variables are branched on in table column order.  A node reached by
branching on variable ``k`` only carries vary nodes for variables ``> k``.
"""

from __future__ import annotations

import hashlib
import io
import pickle
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import CategoricalTable, DataError

CACHE_MAGIC = b"UQSHAP-ADTREE"
CACHE_VERSION = 1
DEFAULT_LEAF_THRESHOLD = 16


@dataclass(frozen=True)
class PartialAssignment:
    """Values for the variables of a subset ``u`` (column indices)."""

    subset: tuple[int, ...]
    values: tuple[int, ...]

    def __post_init__(self):
        if len(self.subset) != len(self.values):
            raise DataError("assignment needs exactly one value per variable")
        if len(set(self.subset)) != len(self.subset):
            raise DataError("assignment repeats a variable")


def subset_mask(u: Iterable[int]) -> int:
    mask = 0
    for j in u:
        mask |= 1 << j
    return mask


def mask_members(mask: int) -> tuple[int, ...]:
    out = []
    j = 0
    while mask:
        if mask & 1:
            out.append(j)
        mask >>= 1
        j += 1
    return tuple(out)


def assignment(table: CategoricalTable, t: int, u: Iterable[int]) -> PartialAssignment:
    """The assignment ``x[t, u]`` that defines the cohort of subject ``t``."""
    u = tuple(sorted(u))
    return PartialAssignment(u, tuple(int(table.codes[t, j]) for j in u))


def naive_count(table: CategoricalTable, t: int, u: Iterable[int]) -> int:
    """Linear scan: number of rows matching row ``t`` on every column in ``u``."""
    if not 0 <= t < table.n:
        raise DataError(f"subject {t} out of range for n={table.n}")
    cols = list(u)
    if not cols:
        return table.n
    block = table.codes[:, cols]
    return int(np.count_nonzero((block == table.codes[t, cols]).all(axis=1)))


class _Node:
    __slots__ = ("idx", "count", "first", "vary", "rows", "block")

    def __init__(self, idx, count, first):
        self.idx = idx
        self.count = count
        self.first = first
        self.vary = None  # list of _Vary for variables first..d-1
        self.rows = None  # leaf-list: tuple of (row index, code tuple)
        self.block = None  # leaf-list codes as an array


class _Vary:
    __slots__ = ("var", "mcv", "children", "level_counts")

    def __init__(self, var, mcv, children, level_counts):
        self.var = var
        self.mcv = mcv
        self.children = children  # level -> _Node, MCV and empty levels absent
        self.level_counts = level_counts  # count per level, MCV included


class ADTree:
    """Immutable count index over a :class:`CategoricalTable`.

    Build with :meth:`build`.  All query methods are read-only, so one tree
    can serve any number of concurrent readers.
    """

    def __init__(self, root: _Node, d: int, n: int, leaf_threshold: int, n_nodes: int, table_hash: str):
        self.root = root
        self.d = d
        self.n = n
        self.leaf_threshold = leaf_threshold
        self.n_nodes = n_nodes
        self.table_hash = table_hash
        self._members: dict[int, tuple[int, ...]] = {}

    @classmethod
    def build(cls, table: CategoricalTable, leaf_threshold: int = DEFAULT_LEAF_THRESHOLD) -> "ADTree":
        if leaf_threshold < 0:
            raise ValueError("leaf_threshold must be >= 0")
        codes = table.codes
        d = table.d
        n_levels = [len(lv) for lv in table.levels]
        counter = [0]

        def make_node(rows: np.ndarray, first: int) -> _Node:
            node = _Node(counter[0], int(rows.size), first)
            counter[0] += 1
            if rows.size <= leaf_threshold:
                node.block = codes[rows]
                node.rows = tuple(zip(rows.tolist(), map(tuple, node.block.tolist())))
                return node
            node.vary = [make_vary(rows, k) for k in range(first, d)]
            return node

        def make_vary(rows: np.ndarray, k: int) -> _Vary:
            values = codes[rows, k]
            counts = np.bincount(values, minlength=n_levels[k])
            mcv = int(np.argmax(counts))
            order = np.argsort(values, kind="stable")
            bounds = np.concatenate(([0], np.cumsum(counts)))
            children = {}
            for v in np.flatnonzero(counts).tolist():
                if v == mcv:
                    continue
                children[v] = make_node(rows[order[bounds[v]:bounds[v + 1]]], k + 1)
            counts.flags.writeable = False
            return _Vary(k, mcv, children, counts)

        try:
            root = make_node(np.arange(table.n, dtype=np.int64), 0)
        except MemoryError:
            raise MemoryError(f"out of memory building AD-tree after {counter[0]} nodes") from None
        return cls(root, d, table.n, leaf_threshold, counter[0], table.content_hash())

    # -- queries -----------------------------------------------------------

    def members(self, mask: int) -> tuple[int, ...]:
        m = self._members.get(mask)
        if m is None:
            m = self._members[mask] = mask_members(mask)
        return m

    def _count(self, node: _Node, x: Sequence[int], mask: int, memo: dict | None, visits: list | None) -> int:
        if mask == 0:
            return node.count
        if memo is not None:
            key = (node.idx << self.d) | mask
            hit = memo.get(key)
            if hit is not None:
                return hit
        if visits is not None:
            visits[0] += 1
        if node.rows is not None:
            cols = self.members(mask)
            c = 0
            for _, r in node.rows:
                for k in cols:
                    if r[k] != x[k]:
                        break
                else:
                    c += 1
        else:
            low = mask & -mask
            rest = mask ^ low
            vary = node.vary[low.bit_length() - 1 - node.first]
            v = x[vary.var]
            if v == vary.mcv:
                c = self._count(node, x, rest, memo, visits)
                for child in vary.children.values():
                    c -= self._count(child, x, rest, memo, visits)
            else:
                child = vary.children.get(v)
                c = 0 if child is None else self._count(child, x, rest, memo, visits)
        if memo is not None:
            memo[key] = c
        return c

    def count(self, a: PartialAssignment | Mapping[int, int], visits: list | None = None) -> int:
        """Exact number of rows matching the assignment."""
        if isinstance(a, Mapping):
            a = PartialAssignment(tuple(a), tuple(a.values()))
        x = [-1] * self.d
        for j, v in zip(a.subset, a.values):
            if not 0 <= j < self.d:
                raise DataError(f"variable {j} out of range for d={self.d}")
            x[j] = int(v)
        return self._count(self.root, x, subset_mask(a.subset), {}, visits)

    def count_mask(self, x: Sequence[int], mask: int, memo: dict | None = None) -> int:
        """Count rows agreeing with the full row ``x`` on the variables in ``mask``."""
        return self._count(self.root, x, mask, memo, None)

    def cohort_counts(self, x: Sequence[int]) -> np.ndarray:
        """Cohort sizes of the row ``x`` for all ``2**d`` subsets, indexed by mask."""
        x = list(x)
        memo: dict = {}
        root = self.root
        return np.fromiter(
            (self._count(root, x, m, memo, None) for m in range(1 << self.d)),
            dtype=np.int64,
            count=1 << self.d,
        )

    def cohort_counts_batch(self, X: np.ndarray) -> np.ndarray:
        """Cohort sizes for a block of rows at once: shape ``(len(X), 2**d)``.

        Same answers as :meth:`cohort_counts` row by row, but the tree is
        walked once per (node, variable) pair for the whole block.
        """
        X = np.asarray(X, dtype=np.int64).reshape(-1, self.d)
        return self._walk(self.root, 0, X)

    def _walk(self, node: _Node, f: int, X: np.ndarray) -> np.ndarray:
        # counts in node's context for all masks over variables f..d-1;
        # bit 0 of the local mask index stands for variable f
        m = X.shape[0]
        if f == self.d:
            return np.full((m, 1), node.count, dtype=np.int64)
        if node.block is not None:
            return _leaf_counts(node.block[:, f:], X[:, f:])
        vary = node.vary[f - node.first]
        lo = self._walk(node, f + 1, X)
        out = np.empty((m, 2 * lo.shape[1]), dtype=np.int64)
        out[:, 0::2] = lo
        vals = X[:, f]
        if f + 1 == self.d:
            out[:, 1] = vary.level_counts[vals]
            return out
        hi = out[:, 1::2]
        is_mcv = vals == vary.mcv
        if is_mcv.all():
            acc = lo.copy()
            for child in vary.children.values():
                acc -= self._walk(child, f + 1, X)
            hi[:] = acc
            return out
        hi[:] = 0
        if is_mcv.any():
            idx = np.flatnonzero(is_mcv)
            sub = X[idx]
            acc = lo[idx]
            for child in vary.children.values():
                acc -= self._walk(child, f + 1, sub)
            hi[idx] = acc
        rest = np.flatnonzero(~is_mcv)
        rvals = vals[rest]
        order = np.argsort(rvals, kind="stable")
        levels, starts = np.unique(rvals[order], return_index=True)
        bounds = np.append(starts, rest.size)
        for v, a, b in zip(levels.tolist(), bounds[:-1].tolist(), bounds[1:].tolist()):
            child = vary.children.get(v)
            if child is None:
                continue
            idx = rest[order[a:b]]
            hi[idx] = self._walk(child, f + 1, X[idx])
        return out

    # -- inspection ----------------------------------------------------------

    def iter_nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node.vary:
                for vary in node.vary:
                    stack.extend(vary.children.values())

    def iter_vary(self):
        for node in self.iter_nodes():
            if node.vary:
                for vary in node.vary:
                    yield node, vary

    def __repr__(self):
        return f"ADTree(n={self.n}, d={self.d}, nodes={self.n_nodes}, leaf_threshold={self.leaf_threshold})"

    # -- cache ---------------------------------------------------------------

    def save(self, path) -> None:
        """Write a versioned binary cache keyed by the table content hash."""
        body = io.BytesIO()
        pickle.dump(self, body, protocol=pickle.HIGHEST_PROTOCOL)
        payload = body.getvalue()
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(CACHE_VERSION.to_bytes(2, "little"))
            fh.write(self.table_hash.encode("ascii"))
            fh.write(hashlib.sha256(payload).digest())
            fh.write(payload)

    @classmethod
    def load(cls, path, table: CategoricalTable | None = None) -> "ADTree":
        with open(path, "rb") as fh:
            blob = fh.read()
        head = len(CACHE_MAGIC)
        if blob[:head] != CACHE_MAGIC:
            raise DataError(f"{path}: not an AD-tree cache")
        version = int.from_bytes(blob[head:head + 2], "little")
        if version != CACHE_VERSION:
            raise DataError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
        table_hash = blob[head + 2:head + 66].decode("ascii")
        digest = blob[head + 66:head + 98]
        payload = blob[head + 98:]
        if hashlib.sha256(payload).digest() != digest:
            raise DataError(f"{path}: cache payload is corrupt")
        if table is not None and table.content_hash() != table_hash:
            raise DataError(f"{path}: cache was built from a different table")
        tree = pickle.loads(payload)
        tree._members = {}
        return tree

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_members"] = {}
        return state


def _leaf_counts(block: np.ndarray, X: np.ndarray) -> np.ndarray:
    # count rows of block agreeing with each row of X on every mask
    k = X.shape[1]
    masks = np.arange(1 << k, dtype=np.int64)
    weights = np.int64(1) << np.arange(k, dtype=np.int64)
    agree = (X[:, None, :] == block[None, :, :]) @ weights  # (m, rows) bitmasks
    m, r = agree.shape
    if m * r * masks.size <= 1 << 22:
        return ((agree[:, :, None] & masks) == masks).sum(axis=1)
    out = np.zeros((m, masks.size), dtype=np.int64)
    for i in range(r):
        out += (agree[:, i:i + 1] & masks) == masks
    return out


def build(table: CategoricalTable, leaf_threshold: int = DEFAULT_LEAF_THRESHOLD) -> ADTree:
    return ADTree.build(table, leaf_threshold)


def count(tree: ADTree, a: PartialAssignment | Mapping[int, int]) -> int:
    return tree.count(a)
