"""Iterative kd-tree over a fixed node pool.

Every walk in this module is a loop: descents follow child links, full
traversals follow parent links, and the balanced rebuild drives an explicit
range queue kept in the pool.  No function here recurses and none grows a
container.
"""

from __future__ import annotations

import logging
import math
from enum import Enum
from typing import Callable, NamedTuple, Optional, Sequence

from .buffer import BestKBuffer
from .errors import (
    DimensionMismatch,
    EmptyTree,
    InvalidConfig,
    InvalidPoint,
    KdError,
    NotFound,
    RebuildFailed,
    RebuildInProgress,
)
from .memory_pool import NIL, NodePool, PoolConfig

log = logging.getLogger(__name__)


class SplitPolicy(str, Enum):
    """How a node's comparison value is chosen.

    ``GLOBAL_MEDIAN`` compares against the tree-wide column median of the
    cycling dimension, so every node at one depth shares the same value.
    ``NODE_SPLIT`` compares against the resident node's own coordinate.
    """

    GLOBAL_MEDIAN = "global-median"
    NODE_SPLIT = "node-split"


class Point(NamedTuple):
    coords: tuple
    seq: int


class KdNode(NamedTuple):
    """Read-only snapshot of one pool slot."""

    ref: int
    left: int
    right: int
    parent: int
    coords: tuple
    seq: int
    distance_to_neighbor: float
    tombstone: bool


def check_coords(coords: Sequence[float], dims: int) -> Sequence[float]:
    if len(coords) != dims:
        raise DimensionMismatch(f"expected {dims} coordinates, got {len(coords)}")
    for c in coords:
        if not math.isfinite(c):
            raise InvalidPoint(f"non-finite coordinate {c!r}")
    return coords


def estimate_rebuilds(n: int) -> int:
    """Approximate rebuild count of one tree grown to ``n`` nodes: ceil(ln n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.ceil(math.log(n))


def select_inplace(vals, lo: int, hi: int, nth: int, order=None) -> None:
    """Partially order ``vals[lo:hi]`` so that ``vals[nth]`` holds its rank value.

    Iterative Hoare-style selection with a median-of-three pivot; small ranges
    finish with insertion sort.  When ``order`` is given it is permuted in
    lockstep with ``vals``.
    """
    hi -= 1
    while hi > lo:
        if hi - lo < 16:
            for i in range(lo + 1, hi + 1):
                v = vals[i]
                o = order[i] if order is not None else 0
                j = i - 1
                while j >= lo and vals[j] > v:
                    vals[j + 1] = vals[j]
                    if order is not None:
                        order[j + 1] = order[j]
                    j -= 1
                vals[j + 1] = v
                if order is not None:
                    order[j + 1] = o
            return
        a, b, c = vals[lo], vals[(lo + hi) >> 1], vals[hi]
        if a > b:
            a, b = b, a
        if b > c:
            b = c if a <= c else a
        pivot = b
        i, j = lo, hi
        while i <= j:
            while vals[i] < pivot:
                i += 1
            while vals[j] > pivot:
                j -= 1
            if i <= j:
                vals[i], vals[j] = vals[j], vals[i]
                if order is not None:
                    order[i], order[j] = order[j], order[i]
                i += 1
                j -= 1
        if nth <= j:
            hi = j
        elif nth >= i:
            lo = i
        else:
            return


def median_inplace(vals, n: int) -> float:
    """Textbook median of ``vals[:n]``; mean of the two middles for even ``n``."""
    if n < 1:
        raise EmptyTree("median of an empty column")
    mid = n >> 1
    select_inplace(vals, 0, n, mid)
    upper = vals[mid]
    if n & 1:
        return upper
    # after selection every value left of mid is <= upper
    lower = vals[0]
    for i in range(1, mid):
        if vals[i] > lower:
            lower = vals[i]
    return (lower + upper) / 2.0


class KdTree:
    """A kd-tree whose nodes live in a :class:`NodePool`.

    Inserts descend with ``<`` going left and ``>=`` going right, so duplicate
    coordinates accumulate on the right.  Deletes tombstone a node; the slot is
    reclaimed by the next rebuild.  When ``auto_rebuild`` is on, each insert
    checks the growth ratio of the tree as it stood *before* the insert and,
    if it reached ``threshold``, rebuilds once the new point is linked.
    """

    def __init__(self, pool: NodePool, threshold: float = 2.0,
                 policy: SplitPolicy = SplitPolicy.NODE_SPLIT, auto_rebuild: bool = True):
        if not threshold >= 1:
            raise InvalidConfig(f"rebuild threshold must be >= 1, got {threshold!r}")
        self.pool = pool
        self.dims = pool.dims
        self.threshold = threshold
        self.policy = SplitPolicy(policy)
        self.auto_rebuild = auto_rebuild
        self.medians = pool.medians
        self.interval_min = pool.box_min
        self.interval_max = pool.box_max
        self.results = BestKBuffer(pool.hit_node, pool.hit_seq, pool.hit_owner, pool.hit_d2)
        self._reset_state()

    @classmethod
    def create(cls, dims: int, capacity: int, max_k: int = 32, **kwargs) -> "KdTree":
        """Allocate a dedicated pool and wrap it in a tree."""
        return cls(NodePool.alloc(PoolConfig(capacity, dims, max_k)), **kwargs)

    def _reset_state(self) -> None:
        self.root = NIL
        self.live_count = 0
        self.total_count = 0
        self.nodes_at_last_rebuild = 0
        self.rebuilding = False
        self.rebuild_count = 0
        self.rebuild_node_work = 0
        self.max_rebuild_work = 0
        self.next_seq = 0
        self.last_visits = 0
        self.last_error: Optional[KdError] = None

    def init(self) -> "KdTree":
        """Recycle the pool and forget every point.  Allocates nothing."""
        self.pool.init()
        self._reset_state()
        return self

    def free(self) -> None:
        self.pool.free()

    def __len__(self) -> int:
        return self.live_count

    @property
    def capacity(self) -> int:
        return self.pool.capacity

    # -- node access -------------------------------------------------------

    def coords_of(self, ref: int) -> tuple:
        base = ref * self.dims
        return tuple(self.pool.coords[base:base + self.dims])

    def node(self, ref: int) -> KdNode:
        p = self.pool
        return KdNode(ref, p.left[ref], p.right[ref], p.parent[ref], self.coords_of(ref),
                      p.seq[ref], p.dist[ref], bool(p.tomb[ref]))

    def split_value(self, ref: int, depth: int) -> float:
        cd = depth % self.dims
        if self.policy is SplitPolicy.NODE_SPLIT:
            return self.pool.coords[ref * self.dims + cd]
        return self.medians[cd]

    # -- mutation ----------------------------------------------------------

    def _guard_mutation(self) -> None:
        if self.rebuilding:
            raise RebuildInProgress("tree is rebuilding; mutations are locked")

    def add(self, coords: Sequence[float], seq: Optional[int] = None) -> int:
        """Insert a point; returns its sequence number."""
        self._guard_mutation()
        check_coords(coords, self.dims)
        due = self.auto_rebuild and self.needs_rebuild()
        if seq is None:
            seq = self.next_seq
        ref = self.pool.take()
        self._attach(ref, coords, 0, seq)
        self.next_seq = max(self.next_seq, seq + 1)
        if due:
            if self.rebuild() < 0:
                raise RebuildFailed(str(self.last_error))
        return seq

    def _attach(self, ref: int, src, base: int, seq: int, seed_medians: bool = True) -> None:
        """Copy ``src[base:base+D]`` into slot ``ref`` and link it by descent."""
        p = self.pool
        dims = self.dims
        coords, left, right = p.coords, p.left, p.right
        off = ref * dims
        for d in range(dims):
            coords[off + d] = src[base + d]
        p.seq[ref] = seq
        p.tomb[ref] = 0
        p.dist[ref] = 0.0
        left[ref] = NIL
        right[ref] = NIL
        lo, hi = self.interval_min, self.interval_max

        if self.root == NIL:
            self.root = ref
            p.parent[ref] = NIL
            for d in range(dims):
                v = coords[off + d]
                lo[d] = v
                hi[d] = v
                if seed_medians:
                    self.medians[d] = v
        else:
            node_split = self.policy is SplitPolicy.NODE_SPLIT
            medians = self.medians
            cur = self.root
            depth = 0
            while True:
                cd = depth % dims
                split = coords[cur * dims + cd] if node_split else medians[cd]
                if coords[off + cd] < split:
                    nxt = left[cur]
                    if nxt == NIL:
                        left[cur] = ref
                        break
                else:
                    nxt = right[cur]
                    if nxt == NIL:
                        right[cur] = ref
                        break
                cur = nxt
                depth += 1
            p.parent[ref] = cur
            if self.live_count == 0:
                for d in range(dims):
                    lo[d] = hi[d] = coords[off + d]
            else:
                for d in range(dims):
                    v = coords[off + d]
                    if v < lo[d]:
                        lo[d] = v
                    elif v > hi[d]:
                        hi[d] = v
        self.live_count += 1
        self.total_count += 1

    def point_search(self, coords: Sequence[float]) -> Optional[int]:
        """Slot of a live node with exactly these coordinates, lowest seq first."""
        check_coords(coords, self.dims)
        p = self.pool
        dims = self.dims
        pc, left, right, tomb, seqs = p.coords, p.left, p.right, p.tomb, p.seq
        node_split = self.policy is SplitPolicy.NODE_SPLIT
        medians = self.medians
        best = NIL
        cur = self.root
        depth = 0
        while cur != NIL:
            base = cur * dims
            if not tomb[cur]:
                for d in range(dims):
                    if pc[base + d] != coords[d]:
                        break
                else:
                    if best == NIL or seqs[cur] < seqs[best]:
                        best = cur
            cd = depth % dims
            split = pc[base + cd] if node_split else medians[cd]
            cur = left[cur] if coords[cd] < split else right[cur]
            depth += 1
        return None if best == NIL else best

    def delete(self, coords: Sequence[float]) -> int:
        """Tombstone the matching live node; returns its seq."""
        self._guard_mutation()
        ref = self.point_search(coords)
        if ref is None:
            raise NotFound(f"no live point at {tuple(coords)!r}")
        self.pool.tomb[ref] = 1
        self.live_count -= 1
        return self.pool.seq[ref]

    # -- traversal ---------------------------------------------------------

    def walk(self, on_pre: Optional[Callable[[int, int], None]] = None,
             on_in: Optional[Callable[[int, int], None]] = None) -> int:
        """Visit every node (tombstones included) via parent links.

        ``on_pre(ref, depth)`` fires on first arrival, ``on_in(ref, depth)``
        between the left and right subtrees.  Returns the height, counted in
        nodes along the longest root-to-leaf path.
        """
        p = self.pool
        left, right, parent = p.left, p.right, p.parent
        node = self.root
        prev = NIL
        depth = 0
        height = 0
        while node != NIL:
            up = parent[node]
            lc = left[node]
            if prev == up:
                if on_pre is not None:
                    on_pre(node, depth)
                if depth >= height:
                    height = depth + 1
                if lc != NIL:
                    prev, node = node, lc
                    depth += 1
                    continue
                from_left = True
            else:
                from_left = prev == lc
            if from_left:
                if on_in is not None:
                    on_in(node, depth)
                rc = right[node]
                if rc != NIL:
                    prev, node = node, rc
                    depth += 1
                    continue
            prev, node = node, up
            depth -= 1
        return height

    def traverse_inorder(self, visitor: Optional[Callable[[int], None]] = None) -> int:
        """Call ``visitor(ref)`` for each live node in left-root-right order."""
        tomb = self.pool.tomb
        count = 0

        def on_in(ref, _depth):
            nonlocal count
            if not tomb[ref]:
                count += 1
                if visitor is not None:
                    visitor(ref)

        self.walk(on_in=on_in)
        return count

    def height(self) -> int:
        return self.walk()

    def points(self) -> list[Point]:
        """Live points in in-order sequence."""
        out: list[Point] = []
        self.traverse_inorder(lambda ref: out.append(Point(self.coords_of(ref), self.pool.seq[ref])))
        return out

    # -- medians and rebuild -------------------------------------------------

    def column_median(self, dim: int) -> float:
        if self.live_count < 1:
            raise EmptyTree("column median of an empty tree")
        if not 0 <= dim < self.dims:
            raise IndexError(f"dimension {dim} out of range")
        col = self.pool.scratch_col
        coords = self.pool.coords
        dims = self.dims
        n = 0

        def grab(ref):
            nonlocal n
            col[n] = coords[ref * dims + dim]
            n += 1

        self.traverse_inorder(grab)
        return median_inplace(col, n)

    def needs_rebuild(self) -> bool:
        return self.live_count / max(self.nodes_at_last_rebuild, 1) >= self.threshold

    def rebuild(self) -> int:
        """Tear down and rebuild balanced.  Returns nodes rebuilt, or -1 on failure."""
        if self.rebuilding:
            raise RebuildInProgress("rebuild already running")
        self.rebuilding = True
        try:
            n = self._rebuild()
        except KdError as exc:
            log.error("rebuild failed: %s", exc)
            self.last_error = exc
            return -1
        finally:
            self.rebuilding = False
        return n

    def _rebuild(self) -> int:
        p = self.pool
        dims = self.dims
        pts, sseq, order = p.scratch_points, p.scratch_seq, p.scratch_order
        coords, seqs, tomb = p.coords, p.seq, p.tomb
        n = 0
        total = 0

        def extract(ref, _depth):
            nonlocal n, total
            order[total] = ref
            total += 1
            if not tomb[ref]:
                src = ref * dims
                dst = n * dims
                for d in range(dims):
                    pts[dst + d] = coords[src + d]
                sseq[n] = seqs[ref]
                n += 1

        self.walk(on_in=extract)
        for i in range(total):
            p.return_slot(order[i])
        self.root = NIL
        self.live_count = 0
        self.total_count = 0

        if n:
            col = p.scratch_col
            lo, hi = self.interval_min, self.interval_max
            for d in range(dims):
                for i in range(n):
                    col[i] = pts[i * dims + d]
                self.medians[d] = median_inplace(col, n)
            if self.policy is SplitPolicy.GLOBAL_MEDIAN:
                self._reinsert_sequential(n)
            else:
                self._reinsert_midpoint(n)
            for d in range(dims):
                lo[d] = hi[d] = pts[d]
                for i in range(1, n):
                    v = pts[i * dims + d]
                    if v < lo[d]:
                        lo[d] = v
                    elif v > hi[d]:
                        hi[d] = v
            self.rebuild_count += 1
            self.rebuild_node_work += n
            self.max_rebuild_work = max(self.max_rebuild_work, n)
        self.nodes_at_last_rebuild = n
        return n

    def _reinsert_sequential(self, n: int) -> None:
        p = self.pool
        for i in range(n):
            self._attach(p.take(), p.scratch_points, i * self.dims, p.scratch_seq[i], False)

    def _reinsert_midpoint(self, n: int) -> None:
        """Reinsert in breadth-first midpoint order over index ranges.

        Each range is split at the element of median rank on the cycling
        dimension, moved left past any equal keys so everything on its left is
        strictly smaller.
        """
        p = self.pool
        dims = self.dims
        pts, sseq, order, col, queue = (p.scratch_points, p.scratch_seq, p.scratch_order,
                                        p.scratch_col, p.scratch_queue)
        for i in range(n):
            order[i] = i
        head = 0
        queue[0], queue[1], queue[2] = 0, n, 0
        tail = 3
        while head < tail:
            lo, hi, depth = queue[head], queue[head + 1], queue[head + 2]
            head += 3
            cd = depth % dims
            for i in range(lo, hi):
                col[i] = pts[order[i] * dims + cd]
            mid = (lo + hi) >> 1
            select_inplace(col, lo, hi, mid, order)
            v = col[mid]
            s = mid
            for i in range(mid - 1, lo - 1, -1):
                if col[i] == v:
                    s -= 1
                    col[i], col[s] = col[s], col[i]
                    order[i], order[s] = order[s], order[i]
            idx = order[s]
            self._attach(p.take(), pts, idx * dims, sseq[idx], False)
            if s > lo:
                queue[tail], queue[tail + 1], queue[tail + 2] = lo, s, depth + 1
                tail += 3
            if hi > s + 1:
                queue[tail], queue[tail + 1], queue[tail + 2] = s + 1, hi, depth + 1
                tail += 3

    # -- diagnostics -------------------------------------------------------

    def check_invariants(self) -> list[str]:
        """Structural audit; returns a list of violations (empty when sound)."""
        p = self.pool
        problems: list[str] = []
        if self.root != NIL and p.parent[self.root] != NIL:
            problems.append("root has a parent")
        seen = 0
        live = 0

        def check(ref, _depth):
            nonlocal seen, live
            seen += 1
            if not p.tomb[ref]:
                live += 1
            for child in (p.left[ref], p.right[ref]):
                if child != NIL and p.parent[child] != ref:
                    problems.append(f"slot {child} parent link does not point to {ref}")

        self.walk(on_pre=check)
        if seen != self.total_count:
            problems.append(f"reached {seen} nodes, total_count is {self.total_count}")
        if live != self.live_count:
            problems.append(f"{live} live nodes, live_count is {self.live_count}")
        if p.used_slots != self.total_count:
            problems.append(f"pool holds {p.used_slots} slots for {self.total_count} nodes")
        if self.live_count:
            for d in range(self.dims):
                if self.interval_min[d] > self.interval_max[d]:
                    problems.append(f"inverted interval on dimension {d}")
        return problems

    def serialize(self) -> str:
        """One line per node in pre-order: seq,depth,parent_seq,coords...,tombstone."""
        p = self.pool
        lines: list[str] = []

        def emit(ref, depth):
            up = p.parent[ref]
            parent_seq = p.seq[up] if up != NIL else -1
            coords = ",".join(repr(c) for c in self.coords_of(ref))
            lines.append(f"{p.seq[ref]},{depth},{parent_seq},{coords},{p.tomb[ref]}")

        self.walk(on_pre=emit)
        return "".join(line + "\n" for line in lines)
