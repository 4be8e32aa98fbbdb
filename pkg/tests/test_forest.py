import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kdforest import (
    EmptyTree,
    ForestExhausted,
    ForestMode,
    IntervalForest,
    InvalidConfig,
    KdTree,
    KExceedsMax,
    NotFound,
    Point,
    box_distance,
    forest_size_plan,
    interval_overlap,
    knn_bruteforce,
    knn_search,
)
from kdforest.bench import Distribution, generate_dataset, generate_queries
from kdforest.knn import BruteForce


def seqs(hits):
    return [h.seq for h in hits]


def forest_1d(values, cap, trees=4):
    forest = IntervalForest(1, tree_count=trees, per_tree_capacity=cap)
    for v in values:
        forest.add((float(v),))
    return forest


def key_intervals(forest):
    return [(t.interval_min[0], t.interval_max[0]) for t in forest.trees[:forest.active]]


def manual_forest(dims, groups, cap=8):
    """Forest whose trees are filled directly, bypassing routing."""
    forest = IntervalForest(dims, tree_count=len(groups), per_tree_capacity=cap)
    seq = 0
    for tree, group in zip(forest.trees, groups):
        for coords in group:
            coords = (coords,) if np.isscalar(coords) else coords
            tree.add(tuple(map(float, coords)), seq)
            seq += 1
    forest.active = len(groups)
    forest.next_seq = forest.total_points = seq
    forest.sort()
    return forest


# -- plan -------------------------------------------------------------------

@pytest.mark.parametrize("n,plan", [(64000, (13, 4924)), (1, (1, 1)), (1000, (8, 125))])
def test_size_plan(n, plan):
    assert forest_size_plan(n) == plan


def test_plan_covers_n():
    for n in range(1, 3000, 37):
        trees, cap = forest_size_plan(n)
        assert trees * cap >= n and trees * (cap - 1) < n


def test_config_errors():
    with pytest.raises(InvalidConfig):
        IntervalForest(2)
    with pytest.raises(InvalidConfig):
        IntervalForest(2, 100, sort_key_dim=2)


# -- routing -----------------------------------------------------------------

def test_first_add_opens_tree():
    forest = IntervalForest(2, 10)
    forest.add((0.3, 0.4))
    assert forest.active == 1
    assert forest.trees[0].live_count == 1
    assert interval_overlap(forest.trees[0], (0.3, 0.4))
    forest.free()


def test_containment_routes_to_covering_tree():
    forest = forest_1d([0, 4, 2, 6, 10], cap=3)
    assert key_intervals(forest) == [(0.0, 4.0), (6.0, 10.0)]
    forest.add((7.0,))
    assert [t.live_count for t in forest.trees[:2]] == [3, 3]
    assert forest.trees[1].point_search((7.0,)) is not None
    forest.free()


def test_full_tree_opens_new_one():
    forest = forest_1d([1, 2], cap=2)
    assert forest.active == 1
    forest.add((1.5,))
    assert forest.active == 2
    forest.free()


def test_exhausted():
    forest = forest_1d([1, 2, 3, 4], cap=2, trees=2)
    with pytest.raises(ForestExhausted):
        forest.add((5.0,))
    forest.free()


def test_falls_back_to_any_free_tree():
    # both trees opened; the nearest one is full, the far one still has room
    forest = forest_1d([0, 1, 10], cap=2, trees=2)
    forest.add((0.5,))
    assert sorted(t.live_count for t in forest.trees) == [2, 2]
    forest.free()


def test_seqs_are_global_and_delete_works():
    forest = forest_1d([3, 1, 4, 1, 5], cap=2)
    assert forest.next_seq == 5
    assert forest.delete((1.0,)) == 1
    assert len(forest) == 4
    with pytest.raises(NotFound):
        forest.delete((9.0,))
    hits = forest.knn((1.0,), 4)
    assert seqs(hits) == [3, 0, 2, 4]
    forest.free()


# -- sort --------------------------------------------------------------------

def medians(forest):
    return [t.medians[0] for t in forest.trees[:forest.active] if t.live_count]


def test_sort_by_median():
    forest = manual_forest(1, [[5], [1], [9]])
    assert medians(forest) == [1.0, 5.0, 9.0]
    forest.free()


def test_sort_is_stable():
    forest = manual_forest(1, [[1], [5], [9]])
    order = list(forest.trees)
    forest.sort()
    assert forest.trees == order
    forest.free()
    forest = manual_forest(1, [[7], [3], [3]])
    a, b = forest.trees[0], forest.trees[1]
    assert a.medians[0] == b.medians[0] == 3.0
    forest.trees[0], forest.trees[1] = b, a
    forest.sort()
    assert forest.trees[:2] == [b, a]
    forest.free()


def test_sort_puts_empty_last():
    forest = manual_forest(1, [[], [4], [], [2]])
    assert [t.live_count for t in forest.trees] == [1, 1, 0, 0]
    assert medians(forest) == [2.0, 4.0]
    forest.free()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=120))
def test_sorted_after_every_add(values):
    forest = IntervalForest(1, tree_count=8, per_tree_capacity=16)
    for v in values:
        forest.add((v,))
        m = medians(forest)
        assert m == sorted(m)
    assert len(forest) == len(values)
    forest.free()


# -- overlap and candidate ------------------------------------------------

def test_interval_overlap_examples():
    forest = manual_forest(2, [[(3, 3)], [(0, 0), (5, 5)]])
    point_tree = next(t for t in forest.trees if t.live_count == 1)
    box_tree = next(t for t in forest.trees if t.live_count == 2)
    assert interval_overlap(point_tree, (3.0, 3.0))
    assert not interval_overlap(box_tree, (6.0, 1.0))
    assert interval_overlap(box_tree, (5.0, 5.0))
    forest.free()
    empty = KdTree.create(2, 2)
    with pytest.raises(EmptyTree):
        interval_overlap(empty, (0.0, 0.0))
    with pytest.raises(EmptyTree):
        box_distance(empty, (0.0, 0.0))
    empty.free()


def test_candidate_single_tree():
    forest = forest_1d([1, 2, 3], cap=10, trees=1)
    assert forest.candidate_tree((50.0,)) is forest.trees[0]
    forest.free()


def test_candidate_empty_forest():
    forest = IntervalForest(1, tree_count=2, per_tree_capacity=2)
    assert forest.candidate_tree((0.0,)) is None
    assert forest.knn((0.0,), 1) == []
    forest.free()


def three_tree_forest():
    forest = forest_1d([0, 2, 1, 4, 6, 5, 8, 10, 9], cap=3)
    assert key_intervals(forest) == [(0.0, 2.0), (4.0, 6.0), (8.0, 10.0)]
    return forest


def test_candidate_binary_search():
    forest = three_tree_forest()
    assert forest.candidate_index((5.0,)) == 1
    assert forest.last_probes <= 2
    forest.free()


def test_candidate_fallback_tie_goes_low():
    forest = three_tree_forest()
    assert medians(forest) == [1.0, 5.0, 9.0]
    assert forest.candidate_index((3.0,)) == 0
    assert forest.candidate_index((3.5,)) == 1
    assert forest.candidate_index((-4.0,)) == 0
    assert forest.candidate_index((40.0,)) == 2
    forest.free()


# -- box distance ----------------------------------------------------------

def test_box_distance_examples():
    forest = manual_forest(2, [[(0, 0), (1, 1)]])
    tree = forest.trees[0]
    assert box_distance(tree, (0.5, 0.5)) == 0.0
    assert box_distance(tree, (4.0, 5.0)) == 5.0
    forest.free()


def test_box_distance_lower_bound(rng):
    for trial in range(100):
        pts = rng.normal(size=(rng.integers(1, 20), 3))
        tree = KdTree.create(3, len(pts))
        for p in pts:
            tree.add(tuple(p))
        q = tuple(rng.normal(scale=3, size=3))
        nearest = min(np.linalg.norm(pts - q, axis=1))
        assert box_distance(tree, q) <= nearest + 1e-12
        tree.free()


# -- forest knn ------------------------------------------------------------

def test_one_tree_forest_matches_tree():
    points = generate_dataset(2, 300, 2)
    forest = IntervalForest(2, tree_count=1, per_tree_capacity=300)
    tree = KdTree.create(2, 300)
    for pt in points:
        forest.add(pt.coords)
        tree.add(pt.coords, pt.seq)
    for q in generate_queries(2, 20, 2):
        for mode in ForestMode:
            assert forest.knn(q, 7, mode) == knn_search(tree, q, 7)
    forest.free()
    tree.free()


@pytest.mark.parametrize("dist", list(Distribution))
def test_exact_forest_matches_bruteforce(dist):
    points = generate_dataset(13, 1000, 3, dist)
    forest = IntervalForest(3, tree_count=8, per_tree_capacity=125)
    for pt in points:
        forest.add(pt.coords)
    brute = BruteForce(points)
    for q in generate_queries(13, 30, 3, dist):
        assert seqs(forest.knn(q, 5)) == seqs(brute.query(q, 5))
    forest.free()


def test_adversarial_single_tree_miss():
    forest = manual_forest(2, [[(0, 0), (10, 10)], [(5, 11), (6, 12)]])
    q = (5.0, 5.0)
    a = forest.candidate_tree(q)
    assert a.point_search((0.0, 0.0)) is not None
    union = [Point((0.0, 0.0), 0), Point((10.0, 10.0), 1), Point((5.0, 11.0), 2), Point((6.0, 12.0), 3)]
    truth = knn_bruteforce(union, q, 1)
    assert seqs(truth) == [2]
    assert seqs(forest.knn(q, 1, ForestMode.SINGLE_TREE)) != [2]
    assert seqs(forest.knn(q, 1, ForestMode.EXACT_FOREST)) == [2]
    assert forest.knn(q, 1)[0].distance == 6.0
    forest.free()


def test_forest_knn_errors():
    forest = forest_1d([1, 2], cap=4)
    with pytest.raises(KExceedsMax):
        forest.knn((0.0,), 33)
    forest.free()


def test_rebuild_touches_only_its_tree():
    points = generate_dataset(17, 400, 2)
    forest = IntervalForest(2, 400, auto_rebuild=False)
    for pt in points:
        forest.add(pt.coords)
    snapshot = {id(t): t.serialize() for t in forest.trees}
    target = forest.trees[2]
    assert target.rebuild() == target.live_count
    forest.sort()
    for t in forest.trees:
        if t is target:
            assert t.serialize() != snapshot[id(t)]
        else:
            assert t.serialize() == snapshot[id(t)]
    forest.free()


def test_rebuild_work_bounded_per_tree():
    points = generate_dataset(5, 2000, 3)
    forest = IntervalForest(3, 2000)
    for pt in points:
        forest.add(pt.coords)
    assert forest.max_rebuild_work() <= forest.per_tree_capacity
    assert sum(t.live_count for t in forest.trees) == 2000
    forest.free()


def test_summary_csv():
    forest = three_tree_forest()
    lines = forest.summary_csv().splitlines()
    assert lines[0] == "tree_index,live_count,median_key,interval_min_key,interval_max_key,rebuild_count"
    assert lines[2] == "1,3,5.0,4.0,6.0,1"
    forest.free()
