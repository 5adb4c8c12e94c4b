"""Categorical tables: CSV ingestion, level encoding, coarsening and fixtures.

A :class:`CategoricalTable` stores an ``n x d`` matrix of integer level codes
together with the raw string level for every code.  Codes are assigned in
order of first appearance down each column, so two runs over the same file
always produce the same encoding.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

#: hard ceiling on synthetic fixture size; anything larger is a caller bug
MAX_SYNTH_ROWS = 2**31 - 1


class DataError(ValueError):
    """Raised for malformed input data or invalid table operations."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CategoricalTable:
    codes: np.ndarray
    levels: tuple[tuple[str, ...], ...]
    names: tuple[str, ...]

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.int64)
        if codes.ndim != 2:
            raise DataError("codes must be a 2-d matrix")
        n, d = codes.shape
        if n < 1 or d < 1:
            raise DataError(f"table must have n >= 1 and d >= 1, got n={n}, d={d}")
        if len(self.levels) != d or len(self.names) != d:
            raise DataError("levels and names must have one entry per column")
        for j, lv in enumerate(self.levels):
            if len(lv) < 1:
                raise DataError(f"column {self.names[j]!r} has no levels")
            if len(set(lv)) != len(lv):
                raise DataError(f"column {self.names[j]!r} has duplicate levels")
            col = codes[:, j]
            if col.min() < 0 or col.max() >= len(lv):
                raise DataError(f"column {self.names[j]!r} has codes outside its levels")
        object.__setattr__(self, "codes", _freeze(codes))
        object.__setattr__(self, "levels", tuple(tuple(lv) for lv in self.levels))
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def d(self) -> int:
        return self.codes.shape[1]

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence], names: Sequence[str] | None = None):
        """Encode raw rows (any values, stringified) by first appearance."""
        rows = [[str(v) for v in r] for r in rows]
        if not rows:
            raise DataError("no rows given")
        d = len(rows[0])
        if names is None:
            names = [f"x{j + 1}" for j in range(d)]
        for i, r in enumerate(rows):
            if len(r) != d:
                raise DataError(f"row {i} has {len(r)} fields, expected {d}")
        columns = [[r[j] for r in rows] for j in range(d)]
        return cls._from_columns(columns, names)

    @classmethod
    def _from_columns(cls, columns: Sequence[Sequence[str]], names: Sequence[str]):
        codes = np.empty((len(columns[0]), len(columns)), dtype=np.int64)
        levels = []
        for j, col in enumerate(columns):
            index: dict[str, int] = {}
            for i, v in enumerate(col):
                code = index.get(v)
                if code is None:
                    code = index[v] = len(index)
                codes[i, j] = code
            levels.append(tuple(index))
        return cls(codes, tuple(levels), tuple(names))

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}; have {list(self.names)}") from None

    def select(self, columns: Sequence[str | int]) -> "CategoricalTable":
        """Keep only the given columns (by name or index), in the given order.

        Codes are carried over unchanged; first-appearance order within a
        column does not depend on the other columns.
        """
        idx = [c if isinstance(c, int) else self.column_index(c) for c in columns]
        if not idx:
            raise DataError("at least one column must be selected")
        return CategoricalTable(
            self.codes[:, idx],
            tuple(self.levels[j] for j in idx),
            tuple(self.names[j] for j in idx),
        )

    def decode(self) -> list[list[str]]:
        """Raw string cells, row-major."""
        return [[self.levels[j][c] for j, c in enumerate(row)] for row in self.codes.tolist()]

    def level_code(self, column: int, level: str) -> int:
        try:
            return self.levels[column].index(level)
        except ValueError:
            raise DataError(f"column {self.names[column]!r} has no level {level!r}") from None

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(repr((self.names, self.levels, self.codes.shape)).encode())
        h.update(self.codes.tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, CategoricalTable):
            return NotImplemented
        return (
            self.names == other.names
            and self.levels == other.levels
            and np.array_equal(self.codes, other.codes)
        )

    def __hash__(self):
        return hash(self.content_hash())

    def __repr__(self):
        return f"CategoricalTable(n={self.n}, d={self.d}, names={list(self.names)})"


@dataclass(frozen=True)
class SubjectSet:
    """Non-empty sorted set of subject (row) indices."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if not idx:
            raise DataError("subject set is empty")
        if len(idx) != len(self.indices):
            raise DataError("subject set has duplicate indices")
        if idx[0] < 0:
            raise DataError("subject indices must be non-negative")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def all(cls, n: int) -> "SubjectSet":
        return cls(tuple(range(n)))

    def check(self, n: int) -> "SubjectSet":
        if self.indices[-1] >= n:
            raise DataError(f"subject index {self.indices[-1]} out of range for n={n}")
        return self

    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)

    def __len__(self):
        return len(self.indices)


def parse_filter(expr: str) -> list[tuple[str, tuple[str, ...]]]:
    """Parse ``col=level[,col=level...]``; ``col=a|b`` accepts either level."""
    terms = []
    for part in expr.split(","):
        part = part.strip()
        if not part:
            continue
        col, sep, value = part.partition("=")
        if not sep or not col.strip():
            raise DataError(f"bad filter term {part!r}; expected column=level")
        terms.append((col.strip(), tuple(value.split("|"))))
    if not terms:
        raise DataError(f"empty filter expression {expr!r}")
    return terms


def filter_subjects(table: CategoricalTable, expr: str) -> SubjectSet:
    """Subjects matching every ``column=level`` term of the filter."""
    mask = np.ones(table.n, dtype=bool)
    for col, values in parse_filter(expr):
        j = table.column_index(col)
        codes = [table.levels[j].index(v) for v in values if v in table.levels[j]]
        mask &= np.isin(table.codes[:, j], codes)
    hits = np.flatnonzero(mask)
    if hits.size == 0:
        raise DataError(f"filter {expr!r} selects no subjects")
    return SubjectSet(tuple(hits.tolist()))


def ingest_csv(path: str | os.PathLike, selected_columns: Sequence[str] | None = None) -> CategoricalTable:
    """Read a UTF-8 CSV with a header row into a :class:`CategoricalTable`.

    Empty cells are kept as the level ``""``.  With ``selected_columns=None``
    every column is kept.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DataError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if selected_columns is None:
            selected_columns = header
        idx = []
        for name in selected_columns:
            if name not in header:
                raise DataError(f"{path}: column {name!r} not in header {header}")
            idx.append(header.index(name))
        columns: list[list[str]] = [[] for _ in idx]
        for row in reader:
            # csv line numbers are 1-based and count the header
            if row == []:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {reader.line_num} has {len(row)} fields, expected {len(header)}"
                )
            for out, j in zip(columns, idx):
                out.append(row[j])
    if not columns[0]:
        raise DataError(f"{path}: no data rows")
    return CategoricalTable._from_columns(columns, list(selected_columns))


def write_csv(table: CategoricalTable, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.names)
        w.writerows(table.decode())


@dataclass(frozen=True)
class CoarseningMap:
    column: int
    mapping: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.mapping:
            raise DataError("coarsening map is empty")


def load_coarsening_map(path: str | os.PathLike, column: int) -> CoarseningMap:
    """Read a two-column ``old_level,new_bucket`` CSV (header optional)."""
    mapping: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}: line {lineno} needs exactly 2 fields")
            if lineno == 1 and row == ["old_level", "new_bucket"]:
                continue
            old, new = row
            if old in mapping and mapping[old] != new:
                raise DataError(f"{path}: level {old!r} mapped twice")
            mapping[old] = new
    return CoarseningMap(column, mapping)


def write_coarsening_map(cmap: CoarseningMap, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["old_level", "new_bucket"])
        w.writerows(cmap.mapping.items())


def bucket_map(table: CategoricalTable, column: int, width: int, origin: int = 0) -> CoarseningMap:
    """Expand a numeric binning rule into an explicit level mapping.

    Level ``"37"`` with ``width=10`` maps to ``"30-39"``.  Non-numeric levels
    map to themselves.  ``width=0`` lumps everything into one bucket.
    """
    mapping = {}
    for lv in table.levels[column]:
        if width == 0:
            mapping[lv] = "all"
            continue
        try:
            v = int(lv)
        except ValueError:
            mapping[lv] = lv
            continue
        lo = origin + (v - origin) // width * width
        mapping[lv] = f"{lo}-{lo + width - 1}"
    return CoarseningMap(column, mapping)


def coarsen(table: CategoricalTable, cmap: CoarseningMap) -> CategoricalTable:
    """Merge the levels of one column into buckets; all else is untouched."""
    j = cmap.column
    if not 0 <= j < table.d:
        raise DataError(f"coarsening column {j} out of range")
    lookup = []
    for lv in table.levels[j]:
        if lv not in cmap.mapping:
            raise DataError(f"level {lv!r} of column {table.names[j]!r} has no bucket")
        lookup.append(cmap.mapping[lv])
    # re-encode buckets by first appearance down the rows
    bucket_code: dict[str, int] = {}
    old_to_new = np.empty(len(lookup), dtype=np.int64)
    first_seen = np.unique(table.codes[:, j], return_index=True)
    order = first_seen[0][np.argsort(first_seen[1])]
    for old in order:
        b = lookup[old]
        old_to_new[old] = bucket_code.setdefault(b, len(bucket_code))
    codes = table.codes.copy()
    codes[:, j] = old_to_new[table.codes[:, j]]
    levels = list(table.levels)
    levels[j] = tuple(bucket_code)
    return CategoricalTable(codes, tuple(levels), table.names)


def synth_product(
    level_counts: Sequence[int],
    replication: int = 1,
    weights: Sequence[Sequence[int]] | None = None,
) -> CategoricalTable:
    """Full factorial design; every column is exactly independent of the rest.

    ``weights[j][k]`` repeats level ``k`` of column ``j`` that many times in
    the design, which skews the marginals without breaking independence.
    Each cell of the design appears ``replication`` times, consecutively.
    """
    if any(c < 1 for c in level_counts) or not level_counts:
        raise DataError("level_counts must be non-empty and all >= 1")
    if replication < 1:
        raise DataError("replication must be >= 1")
    if weights is None:
        weights = [[1] * c for c in level_counts]
    if len(weights) != len(level_counts):
        raise DataError("need one weight vector per column")
    for c, w in zip(level_counts, weights):
        if len(w) != c or any(x < 1 for x in w):
            raise DataError("weights must give a positive multiplicity per level")
    n = replication * math.prod(sum(w) for w in weights)
    if n > MAX_SYNTH_ROWS:
        raise OverflowError(f"product design has {n} rows, above {MAX_SYNTH_ROWS}")
    per_col = [np.repeat(np.arange(c), w) for c, w in zip(level_counts, weights)]
    grid = np.array(list(itertools.product(*per_col)), dtype=np.int64)
    codes = np.repeat(grid, replication, axis=0)
    levels = tuple(tuple(str(k) for k in range(c)) for c in level_counts)
    # product order makes codes first-appearance ordered already
    return CategoricalTable(codes, levels, tuple(f"x{j + 1}" for j in range(len(level_counts))))


def synth_skewed(
    n: int,
    level_counts: Sequence[int],
    seed: int = 0,
    skew: float = 1.2,
    dependence: float = 0.3,
) -> CategoricalTable:
    """Random table with Zipf-like marginals and chained dependence.

    Each column draws from a Zipf(``skew``) law over its levels; with
    probability ``dependence`` a cell instead copies a level derived from the
    previous column, which induces the correlation seen in census-like data.
    """
    rng = np.random.default_rng(seed)
    cols = []
    for j, k in enumerate(level_counts):
        p = 1.0 / np.arange(1, k + 1) ** skew
        col = rng.choice(k, size=n, p=p / p.sum())
        if j > 0 and dependence > 0:
            tie = rng.random(n) < dependence
            col = np.where(tie, cols[-1] % k, col)
        cols.append(col)
    raw = [[str(v) for v in c] for c in cols]
    return CategoricalTable._from_columns(raw, [f"x{j + 1}" for j in range(len(level_counts))])


def synth_voters(n: int, seed: int = 0) -> CategoricalTable:
    """County-sized synthetic voter roll: zip, race, party, gender, age.

    The schema mirrors public voter registration extracts.  Age is stored as
    whole years so it can be coarsened with :func:`bucket_map`.
    """
    rng = np.random.default_rng(seed)
    zips = np.array([f"27{k:03d}" for k in range(20)])
    zip_p = rng.dirichlet(np.full(20, 2.0))
    races = np.array(["W", "B", "A", "I", "O", "U"])
    parties = np.array(["DEM", "REP", "UNA", "LIB"])
    genders = np.array(["F", "M", "U"])
    z = rng.choice(20, size=n, p=zip_p)
    # race mix depends on zip
    white_share = 0.35 + 0.55 * (np.arange(20) % 7) / 6
    race_base = np.array([0.0, 0.6, 0.1, 0.08, 0.12, 0.1])
    race = np.empty(n, dtype=np.int64)
    for k in range(20):
        idx = np.flatnonzero(z == k)
        p = race_base * (1 - white_share[k])
        p[0] = white_share[k]
        race[idx] = rng.choice(6, size=idx.size, p=p / p.sum())
    party_p = np.where(race[:, None] == 1, [[0.75, 0.05, 0.19, 0.01]], [[0.3, 0.36, 0.32, 0.02]])
    party = (rng.random(n)[:, None] > np.cumsum(party_p, axis=1)).sum(1)
    gender = rng.choice(3, size=n, p=[0.52, 0.44, 0.04])
    age = np.clip(rng.normal(47, 17, size=n).round().astype(np.int64), 18, 100)
    cols = [zips[z], races[race], parties[party], genders[gender], age.astype(str)]
    return CategoricalTable._from_columns(
        [c.tolist() for c in cols], ["zip", "race", "party", "gender", "age"]
    )


def solar_flare_path() -> str:
    """Path to the bundled UCI solar flare (second data set) CSV."""
    return str(resources.files("uniqshap").joinpath("data/flare2.csv"))


FLARE_PREDICTORS = (
    "zurich-class",
    "largest-spot-size",
    "spot-distribution",
    "activity",
    "evolution",
    "previous-24h-flare-activity",
    "hist-complex",
    "hist-complex-this-pass",
    "area",
)


def load_solar_flare(columns: Sequence[str] = FLARE_PREDICTORS) -> CategoricalTable:
    return ingest_csv(solar_flare_path(), columns)
