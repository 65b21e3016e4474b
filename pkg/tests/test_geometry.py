import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmatcov.geometry import (BoundingBox, Cluster, PointSet, apply_permutation,
                              build_block_cluster_tree, build_cluster_tree, is_admissible)

from conftest import random_points


def _box_cluster(lo, hi):
    return Cluster(0, 1, BoundingBox(np.array(lo, float), np.array(hi, float)), 0, None)


def test_empty_input_rejected():
    with pytest.raises(ValueError, match="empty input"):
        PointSet(np.zeros((0, 2)))


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        PointSet(np.array([[0.0, np.nan]]))


def test_collinear_four_points():
    pts = np.array([[0.0, 0], [1, 0], [2, 0], [3, 0]])
    ct = build_cluster_tree(PointSet(pts), n_min=1)
    assert ct.depth == 2
    assert sorted(c.size for c in ct.root.children) == [2, 2]


def test_single_point_tree():
    ct = build_cluster_tree(PointSet(np.array([[0.3, 0.7]])), n_min=32)
    assert ct.root.is_leaf
    assert list(ct.perm_i2e) == [0] and list(ct.perm_e2i) == [0]


def test_random_tree_invariants():
    ct = build_cluster_tree(PointSet(random_points(1000)), n_min=32)
    leaves = ct.leaves()
    assert all(c.size <= 32 for c in leaves)
    assert len(leaves) >= math.ceil(1000 / 32)
    assert ct.root.start == 0 and ct.root.stop == 1000
    for c in ct.nodes():
        if not c.is_leaf:
            a, b = c.children
            assert a.start == c.start and a.stop == b.start and b.stop == c.stop
            assert 0 <= a.size - b.size <= 1


def test_tree_rejects_bad_nmin():
    with pytest.raises(ValueError):
        build_cluster_tree(PointSet(random_points(10)), n_min=0)


def test_bounding_boxes_contain_cluster_points():
    ps = PointSet(random_points(300, seed=4))
    ct = build_cluster_tree(ps, n_min=8)
    pts = ct.internal_points()
    for c in ct.nodes():
        sub = pts[c.start:c.stop]
        assert np.all(sub >= c.bbox.lo - 1e-15) and np.all(sub <= c.bbox.hi + 1e-15)


def test_split_axis_is_widest_extent():
    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.random(64) * 10.0, rng.random(64)])
    ct = build_cluster_tree(PointSet(pts), n_min=32)
    left, right = ct.root.children
    assert left.bbox.hi[0] <= right.bbox.lo[0]


def test_admissible_far_boxes():
    a = _box_cluster([0, 0], [1, 1])
    b = _box_cluster([11, 0], [12, 1])
    assert is_admissible(a, b, 2.0)


def test_overlapping_boxes_inadmissible():
    a = _box_cluster([0, 0], [1, 1])
    b = _box_cluster([0.5, 0.5], [2, 2])
    assert not is_admissible(a, b, 2.0)


def test_hand_geometry_inadmissible():
    a = _box_cluster([0, 0], [1, 1])
    b = _box_cluster([1.5, 0], [2.5, 1])
    assert a.bbox.diameter == pytest.approx(math.sqrt(2))
    assert a.bbox.distance(b.bbox) == pytest.approx(0.5)
    assert not is_admissible(a, b, 2.0)


def test_zero_distance_point_cluster_inadmissible():
    a = _box_cluster([0, 0], [0, 0])
    b = _box_cluster([0, 0], [1, 1])
    assert not is_admissible(a, b, 2.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.floats(0.1, 5.0))
def test_admissibility_symmetric(c, eta):
    lo1, lo2 = np.array(c[:2]), np.array(c[4:6])
    a = _box_cluster(lo1, lo1 + np.abs(c[2:4]))
    b = _box_cluster(lo2, lo2 + np.abs(c[6:8]))
    assert is_admissible(a, b, eta) == is_admissible(b, a, eta)


def _leaf_cover(bct, n):
    cover = np.zeros((n, n), dtype=int)
    for leaf in bct.leaves():
        cover[leaf.row.start:leaf.row.stop, leaf.col.start:leaf.col.stop] += 1
    return cover


def test_single_leaf_block_tree():
    ct = build_cluster_tree(PointSet(random_points(20)), n_min=32)
    bct = build_block_cluster_tree(ct, 2.0)
    assert bct.root.is_leaf and not bct.root.admissible


def test_two_separated_clusters():
    rng = np.random.default_rng(0)
    a = rng.random((64, 2)) * 0.1
    b = rng.random((64, 2)) * 0.1 + np.array([5.0, 0.0])
    ct = build_cluster_tree(PointSet(np.vstack([a, b])), n_min=64)
    counts = build_block_cluster_tree(ct, 2.0).counts()
    assert counts == {"admissible": 2, "dense": 2}


@pytest.mark.parametrize("seed", range(3))
def test_leaves_partition_index_square(seed):
    n = 500
    ct = build_cluster_tree(PointSet(random_points(n, seed)), n_min=16)
    bct = build_block_cluster_tree(ct, 2.0)
    cover = _leaf_cover(bct, n)
    assert np.all(cover == 1)
    assert sum(l.shape[0] * l.shape[1] for l in bct.leaves()) == n * n


def test_leaf_kinds_follow_admissibility():
    ct = build_cluster_tree(PointSet(random_points(400, 5)), n_min=16)
    bct = build_block_cluster_tree(ct, 2.0)
    for leaf in bct.leaves():
        if leaf.admissible:
            assert is_admissible(leaf.row, leaf.col, 2.0)
        else:
            assert leaf.row.is_leaf and leaf.col.is_leaf


def test_permutation_roundtrip_and_table():
    rng = np.random.default_rng(1)
    ps = PointSet(rng.random((200, 2)))
    ct = build_cluster_tree(ps, n_min=8)
    v = rng.standard_normal(200)
    assert np.array_equal(apply_permutation(apply_permutation(v, ct, "e2i"), ct, "i2e"), v)
    idx = np.arange(200)
    assert np.array_equal(apply_permutation(idx, ct, "e2i"), ct.perm_i2e)
    assert np.array_equal(ct.perm_e2i[ct.perm_i2e], idx)
    assert sorted(ct.perm_e2i) == list(idx)


def test_permutation_identity_tree():
    ct = build_cluster_tree(PointSet(np.array([[1.0, 2.0]])), n_min=4)
    assert np.array_equal(apply_permutation(np.array([3.5]), ct, "e2i"), [3.5])


def test_permutation_length_mismatch():
    ct = build_cluster_tree(PointSet(random_points(10)), n_min=4)
    with pytest.raises(ValueError, match="length mismatch"):
        apply_permutation(np.zeros(9), ct, "e2i")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 300), st.integers(1, 40), st.integers(0, 10_000))
def test_tree_invariants_property(n, n_min, seed):
    ct = build_cluster_tree(PointSet(random_points(n, seed)), n_min)
    assert all(c.size <= n_min for c in ct.leaves())
    assert np.array_equal(np.sort(ct.perm_i2e), np.arange(n))
    assert np.array_equal(ct.perm_i2e[ct.perm_e2i], np.arange(n))


def test_three_dimensional_points():
    ct = build_cluster_tree(PointSet(random_points(300, 3, dim=3)), n_min=16)
    bct = build_block_cluster_tree(ct, 2.0)
    assert np.all(_leaf_cover(bct, 300) == 1)
