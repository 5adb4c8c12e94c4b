"""Uniqueness Shapley: how strongly each categorical variable identifies each subject."""

from .adtree import ADTree, PartialAssignment, assignment, naive_count
from .dataset import (
    CategoricalTable,
    CoarseningMap,
    DataError,
    SubjectSet,
    coarsen,
    ingest_csv,
    load_solar_flare,
    synth_product,
)
from .shapley import (
    AggregateReport,
    ShapleyMatrix,
    aggregate,
    shapley_all,
    shapley_all_mc,
    shapley_subject,
    shapley_subject_keyed,
    shapley_subject_mc,
)

__version__ = "0.1.0"

__all__ = [
    "ADTree",
    "AggregateReport",
    "CategoricalTable",
    "CoarseningMap",
    "DataError",
    "PartialAssignment",
    "ShapleyMatrix",
    "SubjectSet",
    "aggregate",
    "assignment",
    "coarsen",
    "ingest_csv",
    "load_solar_flare",
    "naive_count",
    "shapley_all",
    "shapley_all_mc",
    "shapley_subject",
    "shapley_subject_keyed",
    "shapley_subject_mc",
    "synth_product",
]
