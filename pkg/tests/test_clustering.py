import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform
from scipy.stats import spearmanr

from domscreen.clustering import (
    CLUSTER_COLUMNS, REFERENCE_CLUSTERS, FeatureMatrix, TiedColumnWarning, average_ranks, constant_columns,
    correlation_matrix, cut, format_dendrogram, hcluster, name_groups, spearman_rho,
)
from domscreen.errors import ValidationError
from domscreen.synth import PLANTED_GROUPS

from oracles import adjusted_rand


def test_average_ranks_ties():
    assert average_ranks([10, 20, 20, 5]).tolist() == [2.0, 3.5, 3.5, 1.0]


def test_spearman_with_ties_frozen():
    # 3 / sqrt(10), worked by hand from the average ranks
    assert spearman_rho([1, 2, 2, 4], [1, 3, 2, 4]) == pytest.approx(0.9486832980505138, abs=1e-15)


def test_spearman_constant_column_warns():
    with pytest.warns(TiedColumnWarning):
        assert spearman_rho([1, 1, 1], [1, 2, 3]) == 0.0


def test_spearman_length_checks():
    with pytest.raises(ValidationError):
        spearman_rho([1, 2], [1, 2, 3])
    with pytest.raises(ValidationError):
        spearman_rho([1], [1])


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=3, max_size=40))
def test_spearman_matches_scipy(pairs):
    x, y = map(list, zip(*pairs))
    if len(set(x)) == 1 or len(set(y)) == 1:
        return
    assert spearman_rho(x, y) == pytest.approx(spearmanr(x, y)[0], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=3, max_size=60), st.randoms())
def test_spearman_row_permutation_is_exact(pairs, rnd):
    x, y = map(list, zip(*pairs))
    if len(set(x)) == 1 or len(set(y)) == 1:
        return
    order = list(range(len(x)))
    rnd.shuffle(order)
    assert spearman_rho(x, y) == spearman_rho([x[i] for i in order], [y[i] for i in order])


def test_correlation_matrix_properties(synth903):
    m = FeatureMatrix.from_records(synth903.records)
    rho = correlation_matrix(m)
    assert rho.shape == (14, 14)
    assert np.array_equal(rho, rho.T)
    assert np.all(np.diag(rho) == 1.0)
    i, j = m.names.index("pr"), m.names.index("da")
    assert 0 < rho[i, j] < 1


def test_oriented_columns_negated(synth903):
    raw = FeatureMatrix.from_records(synth903.records[:5], oriented=False)
    oriented = FeatureMatrix.from_records(synth903.records[:5])
    j = CLUSTER_COLUMNS.index("alexa")
    assert np.array_equal(oriented.values[:, j], -raw.values[:, j])
    k = CLUSTER_COLUMNS.index("pr")
    assert np.array_equal(oriented.values[:, k], raw.values[:, k])


def test_feature_matrix_shape_checks():
    with pytest.raises(ValidationError):
        FeatureMatrix(np.ones((1, 3)), ("a", "b", "c"))
    with pytest.raises(ValidationError):
        FeatureMatrix(np.array([[1.0, np.nan], [2.0, 3.0]]), ("a", "b"))


def test_linkage_matches_scipy_average():
    rng = np.random.default_rng(7)
    for _ in range(20):
        base = rng.standard_normal((60, 3))
        values = np.column_stack([base[:, i % 3] + 0.5 * rng.standard_normal(60) for i in range(8)])
        m = FeatureMatrix(values, tuple(f"c{i}" for i in range(8)))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            rho = correlation_matrix(m)
        ref = linkage(squareform(1 - rho, checks=False), method="average")
        tree = hcluster(m)
        assert [mg.distance for mg in tree.merges] == pytest.approx(ref[:, 2].tolist(), abs=1e-12)
        for k in (2, 3, 5):
            ours = np.empty(8, dtype=int)
            for g, members in enumerate(cut(tree, k)):
                ours[members] = g
            assert adjusted_rand(ours, fcluster(ref, k, criterion="maxclust")) == 1.0


def test_cut_bounds():
    m = FeatureMatrix(np.array([[1.0, 2, 3], [2, 1, 3], [3, 3, 1], [4, 5, 0]]), ("a", "b", "c"))
    tree = hcluster(m)
    assert cut(tree, 1) == [[0, 1, 2]]
    assert cut(tree, 3) == [[0], [1], [2]]
    with pytest.raises(ValidationError):
        cut(tree, 4)


def test_two_columns_one_merge():
    tree = hcluster(FeatureMatrix(np.array([[1.0, 2], [2, 1], [3, 4]]), ("x", "y")))
    assert len(tree.merges) == 1
    text = format_dendrogram(tree)
    assert text.splitlines()[0].startswith("+ [")
    assert text.count("- ") == 2


def test_name_groups_best_overlap():
    names = CLUSTER_COLUMNS
    groups = [[names.index(c) for c in cols] for cols in PLANTED_GROUPS.values()]
    assert set(name_groups(groups, names)) == set(REFERENCE_CLUSTERS)


def test_synthetic_groups_recovered(synth903):
    m = FeatureMatrix.from_records(synth903.records)
    assert not constant_columns(m)
    got = sorted(sorted(m.names[i] for i in g) for g in cut(hcluster(m), 5))
    assert got == sorted(sorted(v) for v in PLANTED_GROUPS.values())


def test_oriented_raw_columns_equal_scored_columns(synth903):
    from domscreen.features import transform_feature

    records = synth903.records[:300]
    oriented = FeatureMatrix.from_records(records)
    scored = FeatureMatrix(
        np.array([[transform_feature(getattr(r, c), c, 2016) for c in CLUSTER_COLUMNS] for r in records]),
        CLUSTER_COLUMNS,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TiedColumnWarning)
        assert np.allclose(correlation_matrix(oriented), correlation_matrix(scored), atol=1e-12, rtol=0)
