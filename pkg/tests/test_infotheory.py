import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uniqshap import infotheory as it
from uniqshap.adtree import ADTree
from uniqshap.dataset import DataError, synth_product
from uniqshap.shapley import shapley_all

from .conftest import random_table
from .oracles import entropy_bits


def test_d1_marginals(d1):
    p1 = it.marginal(d1, [0])
    assert p1.probs() == {(0,): 0.5, (1,): 0.5}
    p2 = it.marginal(d1, [1])
    assert p2.counts == {(0,): 3, (1,): 1}
    sub = it.marginal(d1, [1], [2, 3])
    assert sub.counts == {(0,): 2} and sub.total == 2
    assert it.marginal(d1, []).counts == {(): 4}


@pytest.mark.parametrize(
    "p,h",
    [([0.5, 0.5], 1.0), ([0.9, 0.1], 0.468996), ([1.0], 0.0), ([0.25] * 4, 2.0), ([1.0, 0.0], 0.0)],
)
def test_entropy_of_probs(p, h):
    assert it.entropy_of_probs(p) == pytest.approx(h, abs=1e-6)


def test_entropy_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        table = random_table(rng)
        for j in range(table.d):
            assert math.isclose(
                it.joint_entropy(table, [j]), entropy_bits(table.codes[:, j].tolist()), abs_tol=1e-12
            )
        full = [tuple(r) for r in table.codes.tolist()]
        assert math.isclose(it.joint_entropy(table, range(table.d)), entropy_bits(full), abs_tol=1e-12)


def test_conditional_entropy_d1(d1):
    # H(var2 | var1) = 0.5 * H(1/2, 1/2) + 0.5 * 0
    assert it.conditional_entropy(d1, [1], [0]) == pytest.approx(0.5, abs=1e-12)
    # H(var1 | var2) = 3/4 * H(1/3, 2/3) + 1/4 * 0
    assert it.conditional_entropy(d1, [0], [1]) == pytest.approx(0.688722, abs=1e-6)
    assert it.conditional_entropy(d1, [0], []) == pytest.approx(1.0)
    with pytest.raises(DataError, match="overlap"):
        it.conditional_entropy(d1, [0], [0, 1])


def test_chain_rule():
    rng = np.random.default_rng(5)
    table = random_table(rng, n=150, d=4)
    # H(0,1,2,3) = H(0) + H(1|0) + H(2|0,1) + H(3|0,1,2)
    parts = [it.conditional_entropy(table, [k], range(k)) for k in range(4)]
    assert math.isclose(sum(parts), it.joint_entropy(table, range(4)), abs_tol=1e-12)


def test_relative_entropy_d1(d1):
    q = it.marginal(d1, [0], [2, 3])
    p = it.marginal(d1, [0])
    assert it.relative_entropy(q, p) == pytest.approx(1.0, abs=1e-12)
    assert it.relative_entropy(p, p) == 0.0


def test_support_violation_names_value(d1):
    p = it.marginal(d1, [1], [2, 3])  # var2 = 1 has no mass here
    q = it.marginal(d1, [1], [1])
    with pytest.raises(DataError, match=r"\(1,\)"):
        it.relative_entropy(q, p)
    with pytest.raises(DataError):
        it.cross_entropy(p, q)
    with pytest.raises(DataError, match="different variables"):
        it.relative_entropy(it.marginal(d1, [0]), it.marginal(d1, [1]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gibbs_and_cross_entropy_decomposition(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng)
    size = int(rng.integers(1, table.n + 1))
    v = sorted(rng.choice(table.n, size=size, replace=False).tolist())
    w = sorted(rng.choice(table.d, size=int(rng.integers(1, table.d + 1)), replace=False).tolist())
    p = it.marginal(table, w)
    q = it.marginal(table, w, v)
    kl = it.relative_entropy(q, p)
    assert kl >= -1e-12
    assert math.isclose(it.cross_entropy(p, q), it.entropy(q) + kl, abs_tol=1e-9)


def test_global_mean_equals_entropy_form(d1):
    assert it.global_shapley_via_entropy(d1, 0) == pytest.approx(0.8443609, abs=1e-6)
    assert it.global_shapley_via_entropy(d1, 1) == pytest.approx(0.6556391, abs=1e-6)


def test_global_identity_random_tables():
    rng = np.random.default_rng(17)
    for _ in range(10):
        table = random_table(rng)
        m = shapley_all(ADTree.build(table), table).values.mean(axis=0)
        h = it.all_joint_entropies(table)
        for j in range(table.d):
            assert math.isclose(m[j], it.global_shapley_via_entropy(table, j, h), abs_tol=1e-9)


def test_subset_identity_random_tables():
    rng = np.random.default_rng(18)
    for _ in range(10):
        table = random_table(rng)
        m = shapley_all(ADTree.build(table), table).values
        v = sorted(rng.choice(table.n, size=int(rng.integers(1, table.n)), replace=False).tolist())
        cross = it.all_cross_entropies(table, v)
        for j in range(table.d):
            got = it.subset_shapley_via_cross_entropy(table, v, j, cross)
            assert math.isclose(m[v, j].mean(), got, abs_tol=1e-9)


def test_bracketing():
    rng = np.random.default_rng(19)
    for _ in range(20):
        table = random_table(rng)
        m = shapley_all(ADTree.build(table), table).values.mean(axis=0)
        h_all = it.joint_entropy(table, range(table.d))
        for j in range(table.d):
            assert it.joint_entropy(table, [j]) / table.d - 1e-12 <= m[j] <= h_all + 1e-12


def test_two_variable_expansion():
    rng = np.random.default_rng(20)
    table = random_table(rng, d=2)
    for j, k in ((0, 1), (1, 0)):
        expected = 0.5 * it.joint_entropy(table, [j]) + 0.5 * it.conditional_entropy(table, [j], [k])
        assert math.isclose(it.global_shapley_via_entropy(table, j), expected, abs_tol=1e-12)


@pytest.mark.parametrize("levels,weights", [([2, 3, 4], None), ([2, 3], [[9, 1], [1, 1, 2]])])
def test_independent_column_gets_its_entropy(levels, weights):
    table = synth_product(levels, 3, weights)
    for j in range(table.d):
        assert abs(it.global_shapley_via_entropy(table, j) - it.joint_entropy(table, [j])) <= 1e-9


def test_chain_rule_disjoint_blocks():
    rng = np.random.default_rng(21)
    table = random_table(rng, n=150, d=5)
    for u, w in (([0, 2], [1, 4]), ([3], [0, 1, 2]), ([4, 1], [])):
        joint = it.joint_entropy(table, u + w)
        assert math.isclose(joint, it.joint_entropy(table, w) + it.conditional_entropy(table, u, w), abs_tol=1e-9)
        assert it.conditional_entropy(table, u, w) >= -1e-12
