"""Benchmark scenarios: datasets, measurement records and CSV emission.

Wall times are recorded for curve-shape inspection only.  The counters
(node visits, rebuild count, rebuild node work, pool high-water mark) are pure
functions of the seed and the scenario, so two runs with the same arguments
produce identical CSV apart from ``wall_nanos``.
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

import numpy as np

from .errors import KdError
from .forest import ForestMode, IntervalForest, forest_size_plan
from .kdtree import KdTree, Point, SplitPolicy
from .knn import KnnMode, knn_search

log = logging.getLogger(__name__)

DRIFT_SPAN = 1.0

CSV_HEADER = ("scenario,n,threshold,policy,mode,rep,wall_nanos,node_visits,"
              "rebuild_count,rebuild_node_work,peak_pool_used")


class Distribution(str, Enum):
    UNIFORM = "uniform"
    DRIFT = "drift"
    ORTHANT = "orthant"


class Scenario(str, Enum):
    BUILD = "build"
    KNN = "knn"
    FOREST = "forest"
    VERIFY = "verify"


def generate_dataset(seed: int, n: int, dims: int,
                     distribution: Distribution = Distribution.UNIFORM) -> list[Point]:
    """Deterministic points for ``seed``; seq is the row index.

    UNIFORM draws i.i.d. from [0, 1)^D.  DRIFT adds ``DRIFT_SPAN * i / n`` to
    every coordinate of row ``i``, so later points crowd one side of earlier
    splits.  ORTHANT places points on a jittered, strictly increasing diagonal
    in shuffled order: whatever the column medians, every point falls in the
    all-below or all-above orthant, which collapses global-median splits into
    two chains.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    dist = Distribution(distribution)
    if dist is Distribution.UNIFORM:
        xs = rng.random((n, dims))
    elif dist is Distribution.DRIFT:
        xs = rng.random((n, dims)) + DRIFT_SPAN * (np.arange(n) / n)[:, None]
    else:
        base = np.arange(n, dtype=np.float64)[:, None]
        xs = (base + 0.5 * rng.random((n, dims))) / n
        xs = xs[rng.permutation(n)]
    return [Point(tuple(row), i) for i, row in enumerate(xs.tolist())]


def generate_queries(seed: int, count: int, dims: int,
                     distribution: Distribution = Distribution.UNIFORM) -> list[tuple]:
    """Query points from the data's distribution, on a stream separate from the data."""
    rng = np.random.default_rng([seed, 0x51])
    dist = Distribution(distribution)
    if dist is Distribution.DRIFT:
        xs = rng.random((count, dims)) + DRIFT_SPAN * rng.random((count, 1))
    elif dist is Distribution.ORTHANT:
        xs = np.repeat(rng.random((count, 1)), dims, axis=1) + 0.01 * rng.random((count, dims))
    else:
        xs = rng.random((count, dims))
    return [tuple(row) for row in xs.tolist()]


@dataclass
class BenchSpec:
    scenario: Scenario
    sizes: list[int]
    dims: int = 3
    k: int = 30
    threshold: float = 2.0
    policy: SplitPolicy = SplitPolicy.NODE_SPLIT
    mode: str = KnnMode.EXACT.value
    rebuild: str = "on"  # on | off | both
    distribution: Distribution = Distribution.UNIFORM
    seed: int = 42
    repetitions: int = 10
    out: Optional[Path] = None

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("sizes must be non-empty")
        if any(n < 1 for n in self.sizes):
            raise ValueError("sizes must be positive")
        if list(self.sizes) != sorted(self.sizes):
            raise ValueError("sizes must be ascending")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.rebuild not in ("on", "off", "both"):
            raise ValueError(f"rebuild must be on, off or both, got {self.rebuild!r}")

    def rebuild_settings(self) -> list[bool]:
        return {"on": [True], "off": [False], "both": [True, False]}[self.rebuild]


Number = Union[int, float]


@dataclass
class BenchRecord:
    scenario: str
    n: int
    threshold: Number
    policy: str
    mode: str
    rep: Union[int, str]
    wall_nanos: Number = 0
    node_visits: Number = 0
    rebuild_count: Number = 0
    rebuild_node_work: Number = 0
    peak_pool_used: Number = 0

    def csv_row(self) -> str:
        return ",".join(_fmt(getattr(self, f.name)) for f in fields(self))


def _fmt(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(int(value)) if value.is_integer() else repr(value)
    return str(value)


def _num(token: str) -> Number:
    try:
        return int(token)
    except ValueError:
        return float(token)


def _label(base: str, rebuild: bool) -> str:
    return base if rebuild else f"{base}-norebuild"


def summarize(rows: list[BenchRecord]) -> list[BenchRecord]:
    """``mean`` and ``median`` rows over a group of per-repetition rows."""
    out = []
    first = rows[0]
    numeric = ("wall_nanos", "node_visits", "rebuild_count", "rebuild_node_work", "peak_pool_used")
    for name, fn in (("mean", statistics.fmean), ("median", statistics.median)):
        values = {f: fn([getattr(r, f) for r in rows]) for f in numeric}
        out.append(BenchRecord(first.scenario, first.n, first.threshold, first.policy,
                               first.mode, name, **values))
    return out


def _build(tree: KdTree, points: list[Point]) -> int:
    start = time.perf_counter_ns()
    for pt in points:
        tree.add(pt.coords, pt.seq)
    return time.perf_counter_ns() - start


def bench_build(spec: BenchSpec) -> list[BenchRecord]:
    """Total build time and rebuild accounting per tree size."""
    records: list[BenchRecord] = []
    for rebuild in spec.rebuild_settings():
        for n in spec.sizes:
            points = generate_dataset(spec.seed, n, spec.dims, spec.distribution)
            tree = KdTree.create(spec.dims, n, max(spec.k, 1), threshold=spec.threshold,
                                 policy=spec.policy, auto_rebuild=rebuild)
            rows = []
            for rep in range(spec.repetitions):
                tree.init()
                try:
                    wall = _build(tree, points)
                except KdError as exc:
                    log.error("build n=%d failed: %s", n, exc)
                    rows.append(BenchRecord(_label("build-failed", rebuild), n, spec.threshold,
                                            spec.policy.value, "none", rep))
                    continue
                rows.append(BenchRecord(_label("build", rebuild), n, spec.threshold,
                                        spec.policy.value, "none", rep, wall, 0,
                                        tree.rebuild_count, tree.rebuild_node_work,
                                        tree.pool.watermark))
            tree.free()
            records.extend(rows)
            ok = [r for r in rows if not r.scenario.startswith("build-failed")]
            if ok:
                records.extend(summarize(ok))
            log.info("build n=%d rebuild=%s done", n, rebuild)
    return records


def bench_knn(spec: BenchSpec) -> list[BenchRecord]:
    """Per-query search time and node visits; one row per query point."""
    mode = KnnMode(spec.mode)
    records: list[BenchRecord] = []
    for rebuild in spec.rebuild_settings():
        for n in spec.sizes:
            points = generate_dataset(spec.seed, n, spec.dims, spec.distribution)
            queries = generate_queries(spec.seed, spec.repetitions, spec.dims, spec.distribution)
            tree = KdTree.create(spec.dims, n, spec.k, threshold=spec.threshold,
                                 policy=spec.policy, auto_rebuild=rebuild)
            _build(tree, points)
            rows = []
            for rep, q in enumerate(queries):
                start = time.perf_counter_ns()
                hits = knn_search(tree, q, spec.k, mode)
                wall = time.perf_counter_ns() - start
                if len(hits) != min(spec.k, n):
                    log.warning("n=%d query %d returned %d hits", n, rep, len(hits))
                rows.append(BenchRecord(_label("knn", rebuild), n, spec.threshold,
                                        spec.policy.value, mode.value, rep, wall,
                                        tree.last_visits, tree.rebuild_count,
                                        tree.rebuild_node_work, tree.pool.watermark))
            tree.free()
            records.extend(rows)
            records.extend(summarize(rows))
            log.info("knn n=%d rebuild=%s done", n, rebuild)
    return records


def bench_forest(spec: BenchSpec) -> list[BenchRecord]:
    """Single tree against a planned forest on the same points.

    Row labels, beyond the usual columns:

    * ``forest-plan``: ``rebuild_count`` holds the planned tree count and
      ``peak_pool_used`` the per-tree capacity.
    * ``single-maxwork`` / ``forest-maxwork``: ``rebuild_node_work`` holds the
      largest single rebuild.
    * ``forest-probes``: ``node_visits`` holds mean candidate-tree probes.
    * ``forest-knn``: mean wall time and node visits per query for ``mode``.
    """
    records: list[BenchRecord] = []
    b, pol = spec.threshold, spec.policy.value
    for n in spec.sizes:
        points = generate_dataset(spec.seed, n, spec.dims, spec.distribution)
        queries = generate_queries(spec.seed, spec.repetitions, spec.dims, spec.distribution)
        trees, cap = forest_size_plan(n)
        records.append(BenchRecord("forest-plan", n, b, pol, "none", 0, 0, 0, trees, 0, cap))

        single = KdTree.create(spec.dims, n, spec.k, threshold=b, policy=spec.policy)
        wall = _build(single, points)
        visits = 0
        for q in queries:
            knn_search(single, q, spec.k)
            visits += single.last_visits
        records.append(BenchRecord("single", n, b, pol, KnnMode.EXACT.value, 0, wall,
                                   visits / len(queries), single.rebuild_count,
                                   single.rebuild_node_work, single.pool.watermark))
        records.append(BenchRecord("single-maxwork", n, b, pol, "none", 0, 0, 0,
                                   single.rebuild_count, single.max_rebuild_work,
                                   single.pool.watermark))

        forest = IntervalForest(spec.dims, n, max_k=spec.k, threshold=b, policy=spec.policy)
        start = time.perf_counter_ns()
        for pt in points:
            forest.add(pt.coords)
        wall = time.perf_counter_ns() - start
        peak = sum(t.pool.watermark for t in forest.trees)
        records.append(BenchRecord("forest", n, b, pol, "none", 0, wall, 0,
                                   forest.rebuild_count(), forest.rebuild_node_work(), peak))
        records.append(BenchRecord("forest-maxwork", n, b, pol, "none", 0, 0, 0,
                                   forest.rebuild_count(), forest.max_rebuild_work(), peak))

        probes = 0
        for q in queries:
            forest.candidate_index(q)
            probes += forest.last_probes
        records.append(BenchRecord("forest-probes", n, b, pol, "none", 0, 0,
                                   probes / len(queries), 0, 0, peak))
        for mode in ForestMode:
            wall = 0
            visits = 0
            mismatches = 0
            for q in queries:
                start = time.perf_counter_ns()
                hits = forest.knn(q, spec.k, mode)
                wall += time.perf_counter_ns() - start
                visits += forest.last_visits
                if mode is ForestMode.EXACT_FOREST:
                    ref = knn_search(single, q, spec.k)
                    mismatches += [h.seq for h in hits] != [h.seq for h in ref]
            if mismatches:
                log.error("n=%d: %d exact-forest queries disagree with the single tree", n, mismatches)
            records.append(BenchRecord("forest-knn", n, b, pol, mode.value, "mean",
                                       wall / len(queries), visits / len(queries),
                                       forest.rebuild_count(), forest.rebuild_node_work(), peak))
        single.free()
        forest.free()
        log.info("forest n=%d done", n)
    return records


def emit_csv(records: Iterable[BenchRecord], out: Union[str, Path, TextIO]) -> None:
    """Header plus one row per record, newline-terminated, UTF-8."""
    records = list(records)
    if not records:
        raise ValueError("no records to emit")
    text = CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in records)
    if hasattr(out, "write"):
        out.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def read_csv(path: Union[str, Path]) -> list[BenchRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: not a benchmark CSV")
    out = []
    for line in lines[1:]:
        tok = line.split(",")
        rep = _num(tok[5]) if tok[5].lstrip("-").isdigit() else tok[5]
        out.append(BenchRecord(tok[0], int(tok[1]), _num(tok[2]), tok[3], tok[4], rep,
                               *(_num(t) for t in tok[6:])))
    return out


def strip_wall(csv_text: str) -> str:
    """CSV text with the ``wall_nanos`` column blanked, for reproducibility diffs."""
    out = []
    for line in csv_text.splitlines():
        tok = line.split(",")
        tok[6] = ""
        out.append(",".join(tok))
    return "\n".join(out)
