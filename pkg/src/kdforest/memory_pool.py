"""Fixed-capacity storage for kd-tree nodes and every scratch space they need.

Storage is acquired exactly once, by :meth:`NodePool.alloc`.  :meth:`NodePool.init`
recycles it in place and :meth:`NodePool.free` releases it.  Nothing else in the
package creates or resizes index storage; all buffers are flat ``array.array``
objects whose length never changes after allocation.

Tests observe the discipline through :func:`set_alloc_hook`, which is called for
every buffer handed out by :func:`acquire`.
"""

from __future__ import annotations

import ctypes
import logging
from array import array
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import CapacityOverflow, InvalidConfig, PoolExhausted, PoolStateError

log = logging.getLogger(__name__)

NIL = -1

# Upper bound on bytes a single pool may request.
HARD_CEILING_BYTES = 1 << 31

AllocHook = Callable[[int, str], None]

_alloc_hook: Optional[AllocHook] = None
_outstanding_bytes = 0


def set_alloc_hook(hook: Optional[AllocHook]) -> Optional[AllocHook]:
    """Install ``hook(nbytes, label)``; returns the previously installed hook."""
    global _alloc_hook
    previous, _alloc_hook = _alloc_hook, hook
    return previous


def outstanding_bytes() -> int:
    """Bytes acquired through :func:`acquire` and not yet released."""
    return _outstanding_bytes


def acquire(typecode: str, count: int, label: str) -> array:
    global _outstanding_bytes
    buf = array(typecode, [0]) * count
    nbytes = count * buf.itemsize
    _outstanding_bytes += nbytes
    if _alloc_hook is not None:
        _alloc_hook(nbytes, label)
    return buf


def release(buf: array) -> None:
    global _outstanding_bytes
    _outstanding_bytes -= len(buf) * buf.itemsize


def fill_bytes(buf: array, byte: int) -> None:
    """memset over the whole buffer; ``0xFF`` sets signed integer slots to -1."""
    addr, n = buf.buffer_info()
    if n:
        ctypes.memset(addr, byte, n * buf.itemsize)


@dataclass(frozen=True)
class PoolConfig:
    capacity: int
    dimensions: int
    max_k: int = 32
    forest_trees: int = 0

    def __post_init__(self):
        for name in ("capacity", "dimensions", "max_k"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.forest_trees, int) or self.forest_trees < 0:
            raise InvalidConfig(f"forest_trees must be >= 0, got {self.forest_trees!r}")

    def footprint(self) -> int:
        """Bytes :meth:`NodePool.alloc` will request for this configuration."""
        cap, dims, k = self.capacity, self.dimensions, self.max_k
        # links(3), seq, dist, free list, scratch seq/col/order, queue(3), stack(3)
        per_slot = 8 * (3 + 1 + 1 + 1 + 3 + 3 + 3) + 2
        per_coord = 8 * 2  # live coords + rebuild scratch
        return cap * (per_slot + dims * per_coord) + k * 32 + dims * 24


class NodePool:
    """Slot storage for one index.

    A slot reference is a plain ``int`` in ``[0, capacity)``.  Node fields live in
    parallel arrays indexed by slot: ``left``, ``right``, ``parent``, ``seq``,
    ``dist`` (distance to the query of the last search that returned it),
    ``tomb`` and the ``coords`` block of ``dims`` doubles per slot.

    Slots are handed out from a LIFO free list first, then by advancing the
    watermark.
    """

    def __init__(self, config: PoolConfig):
        # use NodePool.alloc(); __init__ only wires the buffers
        self.config = config
        self.capacity = config.capacity
        self.dims = config.dimensions
        self.max_k = config.max_k
        self._freed = False
        self._buffers: list[array] = []

        cap, dims, k = self.capacity, self.dims, self.max_k
        take = self._take_buffer
        self.left = take("q", cap, "left")
        self.right = take("q", cap, "right")
        self.parent = take("q", cap, "parent")
        self.seq = take("q", cap, "seq")
        self.dist = take("d", cap, "distance_to_neighbor")
        self.tomb = take("b", cap, "tombstone")
        self.in_use = take("b", cap, "in_use")
        self.coords = take("d", cap * dims, "coords")
        self.free_list = take("q", cap, "free_list")

        self.medians = take("d", dims, "medians")
        self.box_min = take("d", dims, "interval_min")
        self.box_max = take("d", dims, "interval_max")

        # rebuild workspace
        self.scratch_points = take("d", cap * dims, "scratch_points")
        self.scratch_seq = take("q", cap, "scratch_seq")
        self.scratch_col = take("d", cap, "scratch_median")
        self.scratch_order = take("q", cap, "scratch_order")
        self.scratch_queue = take("q", 3 * cap, "scratch_queue")

        # search workspace; stack depth never exceeds tree height <= capacity
        self.stack_node = take("q", cap, "stack_node")
        self.stack_depth = take("q", cap, "stack_depth")
        self.stack_sep = take("d", cap, "stack_sep")
        self.hit_node = take("q", k, "hit_node")
        self.hit_seq = take("q", k, "hit_seq")
        self.hit_owner = take("q", k, "hit_owner")
        self.hit_d2 = take("d", k, "hit_d2")

        self.watermark = 0
        self.free_top = 0
        self.takes = 0
        self.returns = 0
        self.init()

    def _take_buffer(self, typecode: str, count: int, label: str) -> array:
        buf = acquire(typecode, count, label)
        self._buffers.append(buf)
        return buf

    @classmethod
    def alloc(cls, config: PoolConfig) -> "NodePool":
        """The one call that acquires storage for an index."""
        need = config.footprint()
        if need > HARD_CEILING_BYTES:
            raise CapacityOverflow(
                f"pool for capacity={config.capacity}, D={config.dimensions} needs "
                f"{need} bytes, ceiling is {HARD_CEILING_BYTES}"
            )
        return cls(config)

    def _check_live(self) -> None:
        if self._freed:
            raise PoolStateError("pool used after free")

    def init(self) -> "NodePool":
        """Mark every slot free and zero all workspaces.  Allocates nothing."""
        self._check_live()
        for buf in (self.left, self.right, self.parent, self.free_list,
                    self.hit_node, self.hit_owner):
            fill_bytes(buf, 0xFF)
        for buf in (self.seq, self.dist, self.tomb, self.in_use, self.coords,
                    self.medians, self.box_min, self.box_max,
                    self.scratch_points, self.scratch_seq, self.scratch_col,
                    self.scratch_order, self.scratch_queue, self.stack_node,
                    self.stack_depth, self.stack_sep, self.hit_seq, self.hit_d2):
            fill_bytes(buf, 0)
        self.watermark = 0
        self.free_top = 0
        self.takes = 0
        self.returns = 0
        return self

    def free(self) -> None:
        if self._freed:
            raise PoolStateError("double free of node pool")
        for buf in self._buffers:
            release(buf)
        self._buffers.clear()
        self._freed = True
        for name in ("left", "right", "parent", "seq", "dist", "tomb", "in_use",
                     "coords", "free_list", "medians", "box_min", "box_max",
                     "scratch_points", "scratch_seq", "scratch_col",
                     "scratch_order", "scratch_queue", "stack_node",
                     "stack_depth", "stack_sep", "hit_node", "hit_seq",
                     "hit_owner", "hit_d2"):
            setattr(self, name, None)

    @property
    def freed(self) -> bool:
        return self._freed

    @property
    def used_slots(self) -> int:
        return self.watermark - self.free_top

    @property
    def free_slots(self) -> int:
        return self.capacity - self.used_slots

    def buffers(self) -> tuple[array, ...]:
        return tuple(self._buffers)

    def take(self) -> int:
        self._check_live()
        if self.free_top > 0:
            self.free_top -= 1
            ref = self.free_list[self.free_top]
        elif self.watermark < self.capacity:
            ref = self.watermark
            self.watermark += 1
        else:
            raise PoolExhausted(f"all {self.capacity} slots in use")
        self.in_use[ref] = 1
        self.takes += 1
        return ref

    def return_slot(self, ref: int) -> None:
        self._check_live()
        if not (0 <= ref < self.watermark) or not self.in_use[ref]:
            raise PoolStateError(f"slot {ref} was not taken from this pool or is already free")
        self.in_use[ref] = 0
        self.left[ref] = NIL
        self.right[ref] = NIL
        self.parent[ref] = NIL
        self.tomb[ref] = 0
        self.free_list[self.free_top] = ref
        self.free_top += 1
        self.returns += 1

    def free_list_view(self) -> list[int]:
        """Free slots, oldest return first (the next take pops the last one)."""
        return list(self.free_list[: self.free_top])
