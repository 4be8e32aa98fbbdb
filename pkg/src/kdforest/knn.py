"""Exact and path-descent k-nearest-neighbor search, radius search, and the
brute-force oracle used to check them.

All comparisons use squared Euclidean distance accumulated dimension by
dimension in index order; the root is taken only when a result is emitted.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Iterable, Sequence, TextIO

import numpy as np

from .buffer import BestKBuffer, NeighborHit
from .errors import DimensionMismatch, InvalidPoint, KExceedsMax, RebuildInProgress, ResultOverflow
from .kdtree import KdTree, Point, SplitPolicy, check_coords
from .memory_pool import NIL

__all__ = [
    "KnnMode",
    "NeighborHit",
    "BruteForce",
    "euclidean_distance",
    "knn_search",
    "knn_radius",
    "knn_bruteforce",
    "visit_counter",
    "write_hits_csv",
]


class KnnMode(str, Enum):
    EXACT = "exact"
    PATH_DESCENT = "path-descent"


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise DimensionMismatch(f"{len(a)} vs {len(b)} coordinates")
    s = 0.0
    for x, y in zip(a, b):
        t = x - y
        s += t * t
    return math.sqrt(s)


def _check_query(tree: KdTree, q: Sequence[float]) -> None:
    if tree.rebuilding:
        raise RebuildInProgress("search during rebuild")
    check_coords(q, tree.dims)


def exact_into(tree: KdTree, q: Sequence[float], buf: BestKBuffer, owner: int = 0) -> int:
    """Depth-first best-k search over the pool's explicit stack.

    The near child is followed in a loop; the far child is pushed with its
    squared axis separation and skipped on pop once the buffer is full and the
    separation exceeds the current worst.  Returns the number of nodes visited.
    """
    p = tree.pool
    root = tree.root
    if root == NIL:
        return 0
    dims = tree.dims
    coords, left, right, tomb, seqs = p.coords, p.left, p.right, p.tomb, p.seq
    s_node, s_depth, s_sep = p.stack_node, p.stack_depth, p.stack_sep
    node_split = tree.policy is SplitPolicy.NODE_SPLIT
    medians = tree.medians
    offer = buf.offer
    visits = 0
    top = 1
    s_node[0] = root
    s_depth[0] = 0
    s_sep[0] = 0.0
    while top:
        top -= 1
        node = s_node[top]
        if buf.filled >= buf.k and s_sep[top] > buf.worst_d2:
            continue
        depth = s_depth[top]
        while node != NIL:
            visits += 1
            base = node * dims
            if not tomb[node]:
                d2 = 0.0
                for d in range(dims):
                    t = coords[base + d] - q[d]
                    d2 += t * t
                offer(d2, seqs[node], node, owner)
            cd = depth % dims
            diff = q[cd] - (coords[base + cd] if node_split else medians[cd])
            depth += 1
            if diff < 0:
                far = right[node]
                node = left[node]
            else:
                far = left[node]
                node = right[node]
            if far != NIL:
                s_node[top] = far
                s_depth[top] = depth
                s_sep[top] = diff * diff
                top += 1
    return visits


def path_descent_into(tree: KdTree, q: Sequence[float], buf: BestKBuffer, owner: int = 0) -> int:
    """Single root-to-leaf walk offering every node on the path."""
    p = tree.pool
    dims = tree.dims
    coords, left, right, tomb, seqs = p.coords, p.left, p.right, p.tomb, p.seq
    node_split = tree.policy is SplitPolicy.NODE_SPLIT
    medians = tree.medians
    visits = 0
    depth = 0
    node = tree.root
    while node != NIL:
        visits += 1
        base = node * dims
        if not tomb[node]:
            d2 = 0.0
            for d in range(dims):
                t = coords[base + d] - q[d]
                d2 += t * t
            buf.offer(d2, seqs[node], node, owner)
        cd = depth % dims
        split = coords[base + cd] if node_split else medians[cd]
        node = left[node] if q[cd] < split else right[node]
        depth += 1
    return visits


def emit_hits(buf: BestKBuffer, trees: Sequence[KdTree]) -> list[NeighborHit]:
    """Sorted buffer contents as hits; annotates each node's distance field."""
    buf.sort()
    out = []
    for i in range(buf.filled):
        tree = trees[buf.owners[i]]
        node = buf.nodes[i]
        dist = math.sqrt(buf.d2s[i])
        tree.pool.dist[node] = dist
        out.append(NeighborHit(tree.coords_of(node), dist, buf.seqs[i]))
    return out


def knn_search(tree: KdTree, q: Sequence[float], k: int,
               mode: KnnMode = KnnMode.EXACT) -> list[NeighborHit]:
    """The ``k`` nearest live points to ``q``, ascending by (distance, seq).

    ``EXACT`` is guaranteed exact.  ``PATH_DESCENT`` only inspects the nodes on
    the descent path of ``q`` and may miss true neighbors.
    """
    _check_query(tree, q)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > tree.pool.max_k:
        raise KExceedsMax(f"k={k} exceeds the pool's max_k={tree.pool.max_k}")
    buf = tree.results
    buf.reset(k)
    if KnnMode(mode) is KnnMode.EXACT:
        tree.last_visits = exact_into(tree, q, buf)
    else:
        tree.last_visits = path_descent_into(tree, q, buf)
    return emit_hits(buf, (tree,))


def knn_radius(tree: KdTree, q: Sequence[float], radius: float) -> list[NeighborHit]:
    """Every live point within ``radius`` of ``q`` (boundary included)."""
    _check_query(tree, q)
    if not (math.isfinite(radius) and radius > 0):
        raise InvalidPoint(f"radius must be positive and finite, got {radius!r}")
    p = tree.pool
    buf = tree.results
    buf.reset(p.max_k)
    r2 = radius * radius
    dims = tree.dims
    coords, left, right, tomb, seqs = p.coords, p.left, p.right, p.tomb, p.seq
    s_node, s_depth = p.stack_node, p.stack_depth
    node_split = tree.policy is SplitPolicy.NODE_SPLIT
    medians = tree.medians
    visits = 0
    top = 0
    if tree.root != NIL:
        s_node[0] = tree.root
        s_depth[0] = 0
        top = 1
    while top:
        top -= 1
        node = s_node[top]
        depth = s_depth[top]
        while node != NIL:
            visits += 1
            base = node * dims
            if not tomb[node]:
                d2 = 0.0
                for d in range(dims):
                    t = coords[base + d] - q[d]
                    d2 += t * t
                if d2 <= r2:
                    if buf.filled >= buf.k:
                        raise ResultOverflow(f"more than max_k={p.max_k} points within radius {radius}")
                    buf.offer(d2, seqs[node], node, 0)
            cd = depth % dims
            diff = q[cd] - (coords[base + cd] if node_split else medians[cd])
            depth += 1
            if diff < 0:
                far = right[node]
                node = left[node]
            else:
                far = left[node]
                node = right[node]
            if far != NIL and diff * diff <= r2:
                s_node[top] = far
                s_depth[top] = depth
                top += 1
    tree.last_visits = visits
    return emit_hits(buf, (tree,))


def visit_counter(tree: KdTree) -> int:
    """Nodes visited by the most recent search on ``tree``."""
    return tree.last_visits


class BruteForce:
    """Linear-scan reference index over a fixed point set.

    Squared distances are accumulated per dimension in index order, the same
    arithmetic the tree search uses, so distance ties resolve identically.
    """

    def __init__(self, points: Iterable[Point]):
        points = list(points)
        self.coords = np.array([pt.coords for pt in points], dtype=np.float64)
        self.seqs = np.array([pt.seq for pt in points], dtype=np.int64)
        self.dims = self.coords.shape[1] if points else 0

    def query(self, q: Sequence[float], k: int) -> list[NeighborHit]:
        if len(self.seqs) == 0:
            return []
        if len(q) != self.dims:
            raise DimensionMismatch(f"expected {self.dims} coordinates, got {len(q)}")
        d2 = np.zeros(len(self.seqs))
        for d in range(self.dims):
            t = self.coords[:, d] - q[d]
            d2 += t * t
        idx = np.lexsort((self.seqs, d2))[:k]
        return [NeighborHit(tuple(self.coords[i].tolist()), math.sqrt(d2[i]), int(self.seqs[i]))
                for i in idx]


def knn_bruteforce(points: Iterable[Point], q: Sequence[float], k: int) -> list[NeighborHit]:
    return BruteForce(points).query(q, k)


def write_hits_csv(results: Iterable[tuple[int, Sequence[NeighborHit]]], out: TextIO) -> None:
    """``query_id,rank,seq,distance`` lines for oracle diffing."""
    out.write("query_id,rank,seq,distance\n")
    for query_id, hits in results:
        for rank, hit in enumerate(hits):
            out.write(f"{query_id},{rank},{hit.seq},{hit.distance!r}\n")
