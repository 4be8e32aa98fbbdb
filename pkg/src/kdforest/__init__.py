"""Deterministic, recursion-free exact kNN kd-tree and interval kd-tree forest."""

from .buffer import BestKBuffer, NeighborHit
from .errors import (
    CapacityOverflow,
    DimensionMismatch,
    EmptyTree,
    ForestExhausted,
    InvalidConfig,
    InvalidPoint,
    KdError,
    KExceedsMax,
    NotFound,
    PoolExhausted,
    PoolStateError,
    RebuildFailed,
    RebuildInProgress,
    ResultOverflow,
)
from .forest import ForestMode, IntervalForest, box_distance, forest_size_plan, interval_overlap
from .kdtree import KdNode, KdTree, Point, SplitPolicy, estimate_rebuilds
from .knn import (
    BruteForce,
    KnnMode,
    euclidean_distance,
    knn_bruteforce,
    knn_radius,
    knn_search,
    visit_counter,
)
from .memory_pool import NIL, NodePool, PoolConfig, set_alloc_hook

__version__ = "0.1.0"
