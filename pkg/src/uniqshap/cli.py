"""Command-line front end.

    uniqshap shapley    --input data.csv --columns a,b,c --output phi.csv
    uniqshap aggregate  --input data.csv --filter party=LIB --output agg.csv
    uniqshap entropy    --input data.csv --output entropy.csv
    uniqshap benchmark  --synthetic 30000 --output timings.csv
    uniqshap coarsen-study --input data.csv --coarsen-column age --coarsen-map age5.csv:age10.csv
    uniqshap plotdata   --input data.csv --every 100 --output stacked.csv

Exit status: 0 on success, 1 on input or validation errors, 2 when two
engines that must agree do not.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from .adtree import DEFAULT_LEAF_THRESHOLD, ADTree
from .infotheory import entropy, marginal
from .shapley import (
    DEFAULT_MAX_EXACT_D,
    ShapleyMatrix,
    aggregate,
    shapley_all,
    shapley_all_mc,
)

log = logging.getLogger("uniqshap")

# name -> (path, default analysis columns)
BUILTIN_DATA = {"builtin:flare2": (ds.solar_flare_path, list(ds.FLARE_PREDICTORS))}
DEFAULT_NAIVE_CUTOFF = 50_000
AGREEMENT_TOL = 1e-9


class CorrectnessError(RuntimeError):
    """Two computations that must agree did not."""


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    columns: list[str] | None = None
    filter: str | None = None
    mode: str = "exact"
    permutations: int = 1000
    seed: int = 0
    workers: int = 1
    leaf_threshold: int = DEFAULT_LEAF_THRESHOLD
    output: str | None = None
    format: str = "csv"
    matrix: str | None = None
    coarsen_maps: list[str] | None = None
    coarsen_column: str | None = None
    every: int = 1
    force_exact: bool = False
    max_exact_d: int = DEFAULT_MAX_EXACT_D
    synthetic: int | None = None
    synthetic_levels: list[int] | None = None
    naive_cutoff: int = DEFAULT_NAIVE_CUTOFF

    def validate(self) -> None:
        if self.mode not in ("exact", "mc", "keyed"):
            raise ds.DataError(f"unknown mode {self.mode!r}")
        if self.mode == "mc" and self.permutations < 1:
            raise ds.DataError("--permutations must be >= 1 in mc mode")
        if self.workers < 1:
            raise ds.DataError("--workers must be >= 1")
        if self.leaf_threshold < 0:
            raise ds.DataError("--leaf-threshold must be >= 0")
        if self.every < 1:
            raise ds.DataError("--every must be >= 1")
        if self.format not in ("csv", "json"):
            raise ds.DataError(f"unknown format {self.format!r}")
        if self.input is None and self.synthetic is None:
            raise ds.DataError("--input is required")


def _split(s: str | None) -> list[str] | None:
    if s is None:
        return None
    return [p.strip() for p in s.split(",") if p.strip()]


@contextlib.contextmanager
def atomic_output(path: str | None):
    """Yield a temp path that replaces ``path`` only if the block succeeds."""
    if path is None:
        yield None
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, target)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_table(path: str | None, header: list[str], rows: list[list], fmt: str) -> None:
    def fmt_cell(v):
        return repr(v) if isinstance(v, float) else v

    with atomic_output(path) as tmp:
        fh = open(tmp, "w", newline="", encoding="utf-8") if tmp else sys.stdout
        try:
            if fmt == "json":
                json.dump([dict(zip(header, r)) for r in rows], fh, indent=2)
                fh.write("\n")
            else:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows([[fmt_cell(v) for v in r] for r in rows])
        finally:
            if tmp:
                fh.close()


# -- loading ------------------------------------------------------------------


def _input_path(cfg: RunConfig) -> str:
    if cfg.input in BUILTIN_DATA:
        return BUILTIN_DATA[cfg.input][0]()
    return cfg.input


def load_tables(cfg: RunConfig) -> tuple[ds.CategoricalTable, ds.CategoricalTable]:
    """The full raw table (for filters) and the analysis table (selected columns)."""
    if cfg.synthetic is not None:
        levels = cfg.synthetic_levels or [20, 6, 4, 3, 80]
        table = ds.synth_skewed(cfg.synthetic, levels, seed=cfg.seed)
        return table, table
    raw = ds.ingest_csv(_input_path(cfg))
    columns = cfg.columns
    if columns is None and cfg.input in BUILTIN_DATA:
        columns = BUILTIN_DATA[cfg.input][1]
    table = raw.select(columns) if columns else raw
    return raw, table


def compute_matrix(cfg: RunConfig, table: ds.CategoricalTable) -> tuple[ShapleyMatrix, float, float]:
    t0 = time.perf_counter()
    tree = ADTree.build(table, cfg.leaf_threshold)
    t1 = time.perf_counter()
    mode = cfg.mode
    if mode != "mc" and table.d > cfg.max_exact_d and not cfg.force_exact:
        log.warning("d=%d above exact limit %d; switching to Monte Carlo", table.d, cfg.max_exact_d)
        mode = "mc"
    if mode == "mc":
        m = shapley_all_mc(tree, table, cfg.permutations, cfg.seed, cfg.workers)
    else:
        limit = max(cfg.max_exact_d, table.d) if cfg.force_exact else cfg.max_exact_d
        m = shapley_all(tree, table, cfg.workers, keyed=(mode == "keyed"), max_exact_d=limit)
    t2 = time.perf_counter()
    log.info("built tree with %d nodes", tree.n_nodes)
    return m, t1 - t0, t2 - t1


def _matrix_for(cfg: RunConfig, table: ds.CategoricalTable) -> ShapleyMatrix:
    if cfg.matrix:
        m = ShapleyMatrix.from_csv(cfg.matrix)
        if m.n != table.n or m.names != table.names:
            raise ds.DataError(f"{cfg.matrix}: matrix does not match the selected input columns")
        return m
    return compute_matrix(cfg, table)[0]


def _entropies(table: ds.CategoricalTable) -> np.ndarray:
    return np.array([entropy(marginal(table, [j])) for j in range(table.d)])


# -- commands -----------------------------------------------------------------


def cmd_shapley(cfg: RunConfig) -> int:
    """Per-subject Shapley values."""
    _, table = load_tables(cfg)
    m, build_s, compute_s = compute_matrix(cfg, table)
    print(
        f"n={table.n} d={table.d} build_seconds={build_s:.3f} compute_seconds={compute_s:.3f}",
        file=sys.stdout if cfg.output else sys.stderr,
    )
    with atomic_output(cfg.output) as tmp:
        if cfg.format == "json":
            payload = {"names": list(m.names), "provenance": m.provenance, "values": m.values.tolist()}
            with open(tmp, "w", encoding="utf-8") if tmp else contextlib.nullcontext(sys.stdout) as fh:
                json.dump(payload, fh)
                fh.write("\n")
        elif tmp:
            m.to_csv(tmp)
        else:
            _write_table(None, ["subject_id", *m.names], [[t, *r] for t, r in enumerate(m.values.tolist())], "csv")
    if m.stderr is not None and cfg.output:
        se_path = str(Path(cfg.output).with_suffix("")) + ".stderr.csv"
        with atomic_output(se_path) as tmp:
            m.to_csv(tmp, m.stderr)
    return 0


def cmd_aggregate(cfg: RunConfig) -> int:
    """Mean values over a filtered subject set, with entropies."""
    raw, table = load_tables(cfg)
    v = ds.filter_subjects(raw, cfg.filter) if cfg.filter else ds.SubjectSet.all(table.n)
    m = _matrix_for(cfg, table)
    report = aggregate(m, v, table)
    with atomic_output(cfg.output) as tmp:
        report.write(tmp if tmp else sys.stdout, cfg.format)
    return 0


def cmd_entropy(cfg: RunConfig) -> int:
    """Marginal entropy next to the global Shapley value."""
    _, table = load_tables(cfg)
    m = _matrix_for(cfg, table)
    h = _entropies(table)
    phi = m.values.mean(axis=0)
    rows = [[name, float(h[j]), float(phi[j])] for j, name in enumerate(table.names)]
    _write_table(cfg.output, ["variable", "entropy_bits", "shapley_bits"], rows, cfg.format)
    return 0


def run_benchmark(cfg: RunConfig, table: ds.CategoricalTable) -> list[list]:
    t0 = time.perf_counter()
    tree = ADTree.build(table, cfg.leaf_threshold)
    t1 = time.perf_counter()
    fast = shapley_all(tree, table, cfg.workers, max_exact_d=max(cfg.max_exact_d, table.d))
    t2 = time.perf_counter()
    rows = [["adtree", table.n, table.d, t1 - t0, t2 - t1, t2 - t0]]
    if table.n > cfg.naive_cutoff:
        rows.append(["naive", table.n, table.d, "n/a", "n/a", "n/a"])
        return rows
    slow = shapley_all(None, table, cfg.workers, engine="naive", max_exact_d=max(cfg.max_exact_d, table.d))
    t3 = time.perf_counter()
    gap = float(np.max(np.abs(fast.values - slow.values)))
    if not gap <= AGREEMENT_TOL:
        raise CorrectnessError(f"AD-tree and naive engines disagree by {gap:.3g}")
    rows.append(["naive", table.n, table.d, 0.0, t3 - t2, t3 - t2])
    return rows


def cmd_benchmark(cfg: RunConfig) -> int:
    """Time the AD-tree engine against linear scans."""
    _, table = load_tables(cfg)
    rows = run_benchmark(cfg, table)
    tree_total, naive_total = rows[0][5], rows[1][5]
    if naive_total != "n/a":
        print(f"speedup={naive_total / max(tree_total, 1e-12):.1f}x")
    _write_table(
        cfg.output,
        ["engine", "n", "d", "build_seconds", "query_seconds", "total_seconds"],
        rows,
        cfg.format,
    )
    return 0


def coarsen_study(cfg: RunConfig, table: ds.CategoricalTable) -> list[list]:
    if not cfg.coarsen_column:
        raise ds.DataError("--coarsen-column is required")
    j = table.column_index(cfg.coarsen_column)
    out = []
    levels = [("baseline", table)]
    for path in cfg.coarsen_maps or []:
        cmap = ds.load_coarsening_map(path, j)
        levels.append((Path(path).stem, ds.coarsen(table, cmap)))
    for label, tab in levels:
        sub = RunConfig(**{**cfg.__dict__, "matrix": None})
        m = compute_matrix(sub, tab)[0]
        out.append([label, *m.values.mean(axis=0).tolist()])
    return out


def cmd_coarsen_study(cfg: RunConfig) -> int:
    """Global values after each coarsening of one column."""
    _, table = load_tables(cfg)
    rows = coarsen_study(cfg, table)
    _write_table(cfg.output, ["coarsening", *table.names], rows, cfg.format)
    return 0


def plot_rows(m: ShapleyMatrix, every: int) -> list[list]:
    totals = m.totals()
    order = np.argsort(totals, kind="stable")[::every]
    return [[int(t), *m.values[t].tolist(), float(totals[t])] for t in order]


def cmd_plotdata(cfg: RunConfig) -> int:
    """Per-subject values sorted by total, for stacked plots."""
    _, table = load_tables(cfg)
    m = _matrix_for(cfg, table)
    _write_table(cfg.output, ["subject_id", *m.names, "total"], plot_rows(m, cfg.every), cfg.format)
    return 0


COMMANDS = {
    "shapley": cmd_shapley,
    "aggregate": cmd_aggregate,
    "entropy": cmd_entropy,
    "benchmark": cmd_benchmark,
    "coarsen-study": cmd_coarsen_study,
    "plotdata": cmd_plotdata,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are validation failures (exit 1); exit 2 is reserved
    def error(self, message):
        raise ds.DataError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--input", help="CSV file with a header row, or builtin:flare2")
    common.add_argument("--columns", help="comma-separated columns to analyse (default: all)")
    common.add_argument("--filter", help="subject filter col=level[,col=level...]; col=a|b accepts either")
    common.add_argument("--mode", default="exact", choices=["exact", "mc", "keyed"])
    common.add_argument("--permutations", type=int, default=1000)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--leaf-threshold", type=int, default=DEFAULT_LEAF_THRESHOLD)
    common.add_argument("--output", help="output path (default: stdout)")
    common.add_argument("--format", default="csv", choices=["csv", "json"])
    common.add_argument("--matrix", help="reuse a per-subject CSV written by `shapley`")
    common.add_argument("--coarsen-map", help="FILE[:FILE...] of old_level,new_bucket maps")
    common.add_argument("--coarsen-column", help="column the coarsening maps apply to")
    common.add_argument("--every", type=int, default=1, help="keep every K-th subject")
    common.add_argument("--force-exact", action="store_true", help="stay exact above the d limit")
    common.add_argument("--max-exact-d", type=int, default=DEFAULT_MAX_EXACT_D)
    common.add_argument("--synthetic", type=int, help="benchmark on N synthetic skewed rows")
    common.add_argument("--synthetic-levels", help="level counts of the synthetic columns")
    common.add_argument("--naive-cutoff", type=int, default=DEFAULT_NAIVE_CUTOFF)

    parser = _Parser(prog="uniqshap", description="Uniqueness Shapley values for categorical data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__)
    return parser


def config_from_args(argv=None) -> RunConfig:
    a = build_parser().parse_args(argv)
    cfg = RunConfig(
        command=a.command,
        input=a.input,
        columns=_split(a.columns),
        filter=a.filter,
        mode=a.mode,
        permutations=a.permutations,
        seed=a.seed,
        workers=a.workers,
        leaf_threshold=a.leaf_threshold,
        output=a.output,
        format=a.format,
        matrix=a.matrix,
        coarsen_maps=a.coarsen_map.split(":") if a.coarsen_map else None,
        coarsen_column=a.coarsen_column,
        every=a.every,
        force_exact=a.force_exact,
        max_exact_d=a.max_exact_d,
        synthetic=a.synthetic,
        synthetic_levels=[int(x) for x in _split(a.synthetic_levels)] if a.synthetic_levels else None,
        naive_cutoff=a.naive_cutoff,
    )
    cfg.validate()
    return cfg


def _setup_logging() -> None:
    level = os.environ.get("UNIQ_SHAP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        cfg = config_from_args(argv)
        return COMMANDS[cfg.command](cfg)
    except CorrectnessError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ds.DataError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
