"""Forest of interval kd-trees.

Trees sit in one fixed array, ordered by the median of a key dimension, with no
links between them.  Each tree keeps its own pool, rebuild bookkeeping and
bounding box, so rebuilding one tree never touches another; the forest only
re-sorts its array afterwards.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Optional, Sequence

from .buffer import BestKBuffer, NeighborHit
from .errors import (
    EmptyTree,
    ForestExhausted,
    InvalidConfig,
    KExceedsMax,
    NotFound,
    RebuildInProgress,
)
from .kdtree import KdTree, SplitPolicy, check_coords
from .knn import KnnMode, emit_hits, exact_into, knn_search
from .memory_pool import acquire, release


class ForestMode(str, Enum):
    SINGLE_TREE = "single-tree"
    EXACT_FOREST = "exact-forest"


def forest_size_plan(n: int) -> tuple[int, int]:
    """(tree count, per-tree capacity) for ``n`` expected points.

    Tree count is ceil(ln n) + 1; capacity is rounded up so that
    count * capacity >= n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    trees = math.ceil(math.log(n)) + 1
    return trees, -(-n // trees)


def interval_overlap(tree: KdTree, q: Sequence[float]) -> bool:
    """True when ``q`` lies inside the tree's bounding box, faces included."""
    if tree.live_count < 1:
        raise EmptyTree("empty tree has no interval")
    lo, hi = tree.interval_min, tree.interval_max
    for d in range(tree.dims):
        if q[d] < lo[d] or q[d] > hi[d]:
            return False
    return True


def box_distance_sq(tree: KdTree, q: Sequence[float]) -> float:
    lo, hi = tree.interval_min, tree.interval_max
    s = 0.0
    for d in range(tree.dims):
        x = q[d]
        if x < lo[d]:
            t = lo[d] - x
            s += t * t
        elif x > hi[d]:
            t = x - hi[d]
            s += t * t
    return s


def box_distance(tree: KdTree, q: Sequence[float]) -> float:
    """Euclidean distance from ``q`` to the tree's box; 0 inside."""
    if tree.live_count < 1:
        raise EmptyTree("empty tree has no interval")
    return math.sqrt(box_distance_sq(tree, q))


class IntervalForest:
    """A fixed array of independent kd-trees sharding one logical index.

    Sizing defaults to :func:`forest_size_plan` for ``expected_n``; pass
    ``tree_count`` and ``per_tree_capacity`` to override.  Every tree and its
    pool are allocated here, up front.

    Points are routed to the lowest-index non-full tree whose key-dimension
    interval contains them; failing that, to the tree with the nearest key
    median, opening a fresh tree when that one is full.
    """

    def __init__(self, dims: int, expected_n: Optional[int] = None, *,
                 tree_count: Optional[int] = None, per_tree_capacity: Optional[int] = None,
                 max_k: int = 32, threshold: float = 2.0,
                 policy: SplitPolicy = SplitPolicy.NODE_SPLIT, auto_rebuild: bool = True,
                 sort_key_dim: int = 0):
        if expected_n is not None:
            planned_trees, planned_cap = forest_size_plan(expected_n)
            tree_count = tree_count or planned_trees
            per_tree_capacity = per_tree_capacity or planned_cap
        if not tree_count or not per_tree_capacity:
            raise InvalidConfig("give expected_n or both tree_count and per_tree_capacity")
        if not 0 <= sort_key_dim < dims:
            raise InvalidConfig(f"sort_key_dim {sort_key_dim} outside [0, {dims})")
        self.dims = dims
        self.max_k = max_k
        self.per_tree_capacity = per_tree_capacity
        self.sort_key_dim = sort_key_dim
        self.trees = [KdTree.create(dims, per_tree_capacity, max_k, threshold=threshold,
                                    policy=policy, auto_rebuild=auto_rebuild)
                      for _ in range(tree_count)]
        self.results = BestKBuffer.allocate(max_k)
        self._box_d2 = acquire("d", tree_count, "forest_box_d2")
        self._order = acquire("q", tree_count, "forest_order")
        self._freed = False
        self._reset_state()

    def _reset_state(self) -> None:
        self.active = 0
        self.total_points = 0
        self.next_seq = 0
        self.last_probes = 0
        self.last_visits = 0

    @property
    def capacity_trees(self) -> int:
        return len(self.trees)

    def init(self) -> "IntervalForest":
        for tree in self.trees:
            tree.init()
        self._reset_state()
        return self

    def free(self) -> None:
        for tree in self.trees:
            tree.free()
        for buf in (self.results.nodes, self.results.seqs, self.results.owners,
                    self.results.d2s, self._box_d2, self._order):
            release(buf)
        self._freed = True

    def __len__(self) -> int:
        return self.total_points

    def _key(self, tree: KdTree) -> float:
        return tree.medians[self.sort_key_dim]

    def _full(self, tree: KdTree) -> bool:
        return tree.total_count >= self.per_tree_capacity

    # -- mutation ----------------------------------------------------------

    def _route(self, coords: Sequence[float]) -> int:
        key = coords[self.sort_key_dim]
        kd = self.sort_key_dim
        for i in range(self.active):
            t = self.trees[i]
            if t.live_count and not self._full(t) and t.interval_min[kd] <= key <= t.interval_max[kd]:
                return i
        nearest = -1
        best = math.inf
        for i in range(self.active):
            t = self.trees[i]
            if t.live_count:
                gap = abs(self._key(t) - key)
                if gap < best:
                    nearest, best = i, gap
        if nearest >= 0 and not self._full(self.trees[nearest]):
            return nearest
        if self.active < len(self.trees):
            self.active += 1
            return self.active - 1
        nearest = -1
        best = math.inf
        for i in range(self.active):
            t = self.trees[i]
            if not self._full(t):
                gap = abs(self._key(t) - key) if t.live_count else math.inf
                if nearest < 0 or gap < best:
                    nearest, best = i, gap
        if nearest < 0:
            raise ForestExhausted(
                f"all {len(self.trees)} trees hold {self.per_tree_capacity} points")
        return nearest

    def add(self, coords: Sequence[float]) -> int:
        """Insert a point into the forest; returns its forest-wide seq."""
        check_coords(coords, self.dims)
        for i in range(self.active):
            if self.trees[i].rebuilding:
                raise RebuildInProgress("a forest tree is rebuilding")
        opened_before = self.active
        target = self._route(coords)
        tree = self.trees[target]
        rebuilds_before = tree.rebuild_count
        was_empty = tree.live_count == 0
        seq = self.next_seq
        tree.add(coords, seq=seq)
        self.next_seq = seq + 1
        self.total_points += 1
        if self.active != opened_before or was_empty or tree.rebuild_count != rebuilds_before:
            self.sort()
        return seq

    def delete(self, coords: Sequence[float]) -> int:
        """Tombstone the lowest-seq live point at ``coords``; returns its seq."""
        check_coords(coords, self.dims)
        owner, best = None, -1
        for i in range(self.active):
            tree = self.trees[i]
            if tree.live_count and interval_overlap(tree, coords):
                ref = tree.point_search(coords)
                if ref is not None and (owner is None or tree.pool.seq[ref] < best):
                    owner, best = tree, tree.pool.seq[ref]
        if owner is None:
            raise NotFound(f"no live point at {tuple(coords)!r}")
        owner.delete(coords)
        self.total_points -= 1
        return best

    def sort(self) -> None:
        """Stable binary-insertion sort of the active trees by key median.

        Trees with no live points go last.
        """
        trees = self.trees
        for i in range(1, self.active):
            t = trees[i]
            empty = t.live_count == 0
            key = self._key(t)
            lo, hi = 0, i
            while lo < hi:
                mid = (lo + hi) >> 1
                other = trees[mid]
                other_empty = other.live_count == 0
                # strictly-after test keeps equal keys in original order
                if empty or (not other_empty and self._key(other) <= key):
                    lo = mid + 1
                else:
                    hi = mid
            if empty and lo < i:
                lo = i
            for j in range(i, lo, -1):
                trees[j] = trees[j - 1]
            trees[lo] = t

    # -- queries -----------------------------------------------------------

    def _nonempty(self) -> int:
        n = 0
        for i in range(self.active):
            if self.trees[i].live_count:
                n = i + 1
        return n

    def candidate_index(self, q: Sequence[float]) -> Optional[int]:
        """Index of the tree to search first, by binary search on key medians."""
        m = self._nonempty()
        self.last_probes = 0
        if m == 0:
            return None
        key = q[self.sort_key_dim]
        lo, hi = 0, m - 1
        trees = self.trees
        while lo <= hi:
            mid = (lo + hi) >> 1
            self.last_probes += 1
            tree = trees[mid]
            if interval_overlap(tree, q):
                return mid
            if key >= self._key(tree):
                lo = mid + 1
            else:
                hi = mid - 1
        # sorted by median, so the nearest median is at hi or lo
        if hi < 0:
            return lo
        if lo >= m:
            return hi
        return hi if key - self._key(trees[hi]) <= self._key(trees[lo]) - key else lo

    def candidate_tree(self, q: Sequence[float]) -> Optional[KdTree]:
        idx = self.candidate_index(q)
        return None if idx is None else self.trees[idx]

    def knn(self, q: Sequence[float], k: int,
            mode: ForestMode = ForestMode.EXACT_FOREST) -> list[NeighborHit]:
        """k nearest points across the forest, ascending by (distance, seq).

        ``SINGLE_TREE`` searches only the candidate tree and can miss neighbors
        held by other trees.  ``EXACT_FOREST`` seeds the buffer from the
        candidate, then visits the rest nearest-box-first, stopping once a box
        is farther than the current k-th best.
        """
        check_coords(q, self.dims)
        if k > self.max_k:
            raise KExceedsMax(f"k={k} exceeds max_k={self.max_k}")
        self.last_visits = 0
        cand = self.candidate_index(q)
        if cand is None:
            return []
        if ForestMode(mode) is ForestMode.SINGLE_TREE:
            tree = self.trees[cand]
            hits = knn_search(tree, q, k, KnnMode.EXACT)
            self.last_visits = tree.last_visits
            return hits

        for i in range(self.active):
            if self.trees[i].rebuilding:
                raise RebuildInProgress("a forest tree is rebuilding")
        buf = self.results
        buf.reset(k)
        visits = exact_into(self.trees[cand], q, buf, cand)
        order, box = self._order, self._box_d2
        m = 0
        for i in range(self.active):
            t = self.trees[i]
            if i == cand or not t.live_count:
                continue
            d2 = box_distance_sq(t, q)
            j = m
            while j > 0 and box[j - 1] > d2:
                box[j] = box[j - 1]
                order[j] = order[j - 1]
                j -= 1
            box[j] = d2
            order[j] = i
            m += 1
        for j in range(m):
            if buf.filled >= buf.k and box[j] > buf.worst_d2:
                break
            visits += exact_into(self.trees[order[j]], q, buf, order[j])
        self.last_visits = visits
        return emit_hits(buf, self.trees)

    # -- reporting ---------------------------------------------------------

    def rebuild_node_work(self) -> int:
        return sum(t.rebuild_node_work for t in self.trees)

    def rebuild_count(self) -> int:
        return sum(t.rebuild_count for t in self.trees)

    def max_rebuild_work(self) -> int:
        return max((t.max_rebuild_work for t in self.trees), default=0)

    def summary_csv(self) -> str:
        """``tree_index,live_count,median_key,interval_min_key,interval_max_key,rebuild_count``."""
        kd = self.sort_key_dim
        lines = ["tree_index,live_count,median_key,interval_min_key,interval_max_key,rebuild_count"]
        for i in range(self.active):
            t = self.trees[i]
            lines.append(f"{i},{t.live_count},{t.medians[kd]!r},{t.interval_min[kd]!r},"
                         f"{t.interval_max[kd]!r},{t.rebuild_count}")
        return "\n".join(lines) + "\n"
