import itertools

import numpy as np
import pytest

from uniqshap import infotheory as it
from uniqshap.dataset import (
    FLARE_PREDICTORS,
    CategoricalTable,
    CoarseningMap,
    DataError,
    SubjectSet,
    bucket_map,
    coarsen,
    filter_subjects,
    ingest_csv,
    load_coarsening_map,
    load_solar_flare,
    parse_filter,
    solar_flare_path,
    synth_product,
    synth_skewed,
    synth_voters,
    write_coarsening_map,
    write_csv,
)


def _write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_ingest_first_appearance_codes(tmp_path):
    p = _write(tmp_path, "a,b\nA,0\nA,1\nB,0\nB,0\n")
    t = ingest_csv(p, ["a", "b"])
    assert t.levels == (("A", "B"), ("0", "1"))
    assert t.codes.tolist() == [[0, 0], [0, 1], [1, 0], [1, 0]]
    assert (t.n, t.d) == (4, 2)


def test_ingest_empty_cell_is_a_level(tmp_path):
    p = _write(tmp_path, "age,sex\n30,F\n,M\n30,\n")
    t = ingest_csv(p, ["age", "sex"])
    assert "" in t.levels[0]
    assert "" in t.levels[1]
    assert t.decode()[1] == ["", "M"]


def test_ingest_quoted_fields(tmp_path):
    p = _write(tmp_path, 'name,city\n"Smith, J","New York"\n"Doe ""Jr""",Boston\n')
    t = ingest_csv(p)
    assert t.levels[0] == ("Smith, J", 'Doe "Jr"')


def test_ingest_selects_and_orders_columns(tmp_path):
    p = _write(tmp_path, "a,b,c\n1,2,3\n4,5,6\n")
    t = ingest_csv(p, ["c", "a"])
    assert t.names == ("c", "a")
    assert t.decode() == [["3", "1"], ["6", "4"]]


@pytest.mark.parametrize(
    "text,cols,msg",
    [
        ("a,b\n1,2\n3\n", ["a"], "row 3"),
        ("a,b\n1,2\n", ["zzz"], "zzz"),
        ("a,b\n", ["a"], "no data rows"),
        ("", ["a"], "header"),
    ],
)
def test_ingest_errors(tmp_path, text, cols, msg):
    p = _write(tmp_path, text)
    with pytest.raises(DataError, match=msg):
        ingest_csv(p, cols)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        ingest_csv(tmp_path / "nope.csv", ["a"])


def test_round_trip_decode(tmp_path):
    rows = [["x", "1", ""], ["y", "2", "q"], ["x", "3", "q"]]
    p = _write(tmp_path, "a,b,c\n" + "\n".join(",".join(r) for r in rows) + "\n")
    t = ingest_csv(p)
    assert t.decode() == rows
    out = tmp_path / "out.csv"
    write_csv(t, out)
    assert ingest_csv(out) == t


def test_flare_shape():
    t = load_solar_flare()
    assert (t.n, t.d) == (1066, 9)
    assert t.names == FLARE_PREDICTORS
    raw = ingest_csv(solar_flare_path())
    # tenth predictor is constant and is left to column selection, not auto-dropped
    assert len(raw.levels[raw.column_index("largest-spot-area")]) == 1


def test_table_invariants_enforced():
    with pytest.raises(DataError):
        CategoricalTable(np.array([[0, 2]]), (("a",), ("a", "b")), ("x", "y"))
    with pytest.raises(DataError):
        CategoricalTable(np.array([[0]]), (("a", "a"),), ("x",))
    with pytest.raises(DataError):
        CategoricalTable(np.zeros((0, 1), dtype=int), (("a",),), ("x",))


def test_table_is_immutable(d1):
    with pytest.raises(ValueError):
        d1.codes[0, 0] = 1


def test_subject_set():
    assert SubjectSet((3, 1, 2)).indices == (1, 2, 3)
    with pytest.raises(DataError):
        SubjectSet(())
    with pytest.raises(DataError):
        SubjectSet((1, 1))
    with pytest.raises(DataError):
        SubjectSet((0, 9)).check(5)


def test_filter(d1):
    assert filter_subjects(d1, "var1=B").indices == (2, 3)
    assert filter_subjects(d1, "var1=A,var2=1").indices == (1,)
    assert filter_subjects(d1, "var2=0|1").indices == (0, 1, 2, 3)
    with pytest.raises(DataError, match="selects no subjects"):
        filter_subjects(d1, "var1=Z")
    with pytest.raises(DataError):
        parse_filter("var1")


# -- coarsening ---------------------------------------------------------------


def test_coarsen_identity(d1):
    cmap = CoarseningMap(0, {"A": "A", "B": "B"})
    assert coarsen(d1, cmap) == d1


def test_coarsen_one_bucket(d1):
    out = coarsen(d1, CoarseningMap(1, {"0": "all", "1": "all"}))
    assert out.levels[1] == ("all",)
    assert np.array_equal(out.codes[:, 0], d1.codes[:, 0])


def test_coarsen_unmapped_level(d1):
    with pytest.raises(DataError, match="'B'"):
        coarsen(d1, CoarseningMap(0, {"A": "x"}))


def test_age_buckets():
    ages = [str(a) for a in range(0, 121)]
    t = CategoricalTable.from_rows([(a,) for a in ages], ["age"])
    out = coarsen(t, bucket_map(t, 0, 25))
    assert len(out.levels[0]) == 5
    assert out.levels[0][0] == "0-24"
    assert out.n == t.n


def test_coarsen_preserves_shape_and_other_columns():
    t = synth_voters(500, seed=3)
    out = coarsen(t, bucket_map(t, t.column_index("age"), 10))
    assert (out.n, out.d) == (t.n, t.d)
    for j in range(t.d):
        if t.names[j] != "age":
            assert np.array_equal(out.codes[:, j], t.codes[:, j])
            assert out.levels[j] == t.levels[j]
    before = np.array(t.levels[4])[t.codes[:, 4]].astype(int)
    after = np.array(out.levels[4])[out.codes[:, 4]]
    assert all(a.startswith(str(b // 10 * 10)) for a, b in zip(after, before))


def test_coarsening_map_file_round_trip(tmp_path, d1):
    cmap = CoarseningMap(0, {"A": "AB", "B": "AB"})
    p = tmp_path / "m.csv"
    write_coarsening_map(cmap, p)
    assert load_coarsening_map(p, 0) == cmap
    p.write_text("A,x\nB\n")
    with pytest.raises(DataError, match="line 2"):
        load_coarsening_map(p, 0)


# -- synthetic fixtures ---------------------------------------------------------


def test_synth_product_shapes():
    t = synth_product([2, 2], 1)
    assert sorted(map(tuple, t.codes.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert synth_product([2, 3, 4], 2).n == 48


def test_synth_product_errors():
    with pytest.raises(DataError):
        synth_product([0, 2])
    with pytest.raises(DataError):
        synth_product([2], replication=0)
    with pytest.raises(OverflowError):
        synth_product([1000] * 4, replication=1000)


@pytest.mark.parametrize(
    "levels,rep,weights",
    [([2, 3, 4], 2, None), ([2, 3], 1, [[9, 1], [1, 2, 3]]), ([3, 1, 2], 3, None)],
)
def test_synth_product_exact_independence(levels, rep, weights):
    t = synth_product(levels, rep, weights)
    n = t.n
    for j, k in itertools.combinations(range(t.d), 2):
        joint = it.marginal(t, [j, k])
        pj = it.marginal(t, [j])
        pk = it.marginal(t, [k])
        for a in range(levels[j]):
            for b in range(levels[k]):
                # exact rational check: count(a,b) * n == count(a) * count(b)
                assert joint.counts.get((a, b), 0) * n == pj.counts[(a,)] * pk.counts[(b,)]
        mi = it.joint_entropy(t, [j]) + it.joint_entropy(t, [k]) - it.joint_entropy(t, [j, k])
        assert abs(mi) <= 1e-12


def test_synth_skewed_reproducible():
    a = synth_skewed(500, [5, 3, 7], seed=11)
    b = synth_skewed(500, [5, 3, 7], seed=11)
    assert a == b
    assert a != synth_skewed(500, [5, 3, 7], seed=12)
