"""Oracle-equivalence matrix, allocation audit and invariant sweeps."""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass
from typing import Optional, TextIO

from . import memory_pool
from .bench import BenchRecord, BenchSpec, generate_dataset, generate_queries
from .forest import ForestMode, IntervalForest, forest_size_plan
from .kdtree import KdTree, SplitPolicy, estimate_rebuilds
from .knn import BruteForce, KnnMode, knn_radius, knn_search

DEFAULT_DIMS = (2, 3, 8)
DEFAULT_KS = (1, 5, 30)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def rebuild_law(n: int, b: float) -> int:
    """Rebuilds a tree grown to ``n`` points performs under the growth trigger.

    A rebuild fires on the insert that arrives when the tree already holds
    ``b`` times the last snapshot (minimum snapshot 1), and the snapshot
    becomes the rebuilt size, so sizes follow s' = ceil(b * s) + 1.
    """
    count, snap = 0, 1
    while True:
        size = math.ceil(b * snap) + 1
        if size > n:
            return count
        count += 1
        snap = size


def _seqs(hits) -> list[int]:
    return [h.seq for h in hits]


def _exactness(spec: BenchSpec, dims_list, ks, policies, records, checks) -> None:
    mode = KnnMode.PATH_DESCENT if spec.mode == KnnMode.PATH_DESCENT.value else KnnMode.EXACT
    cell = 0
    for n in spec.sizes:
        for dims in dims_list:
            points = generate_dataset(spec.seed, n, dims, spec.distribution)
            queries = generate_queries(spec.seed, spec.repetitions, dims, spec.distribution)
            brute = BruteForce(points)
            for policy in policies:
                tree = KdTree.create(dims, n, max(ks), threshold=spec.threshold, policy=policy,
                                     auto_rebuild=spec.rebuild != "off")
                for pt in points:
                    tree.add(pt.coords, pt.seq)
                for k in ks:
                    start = time.perf_counter_ns()
                    visits = 0
                    witness = None
                    for qi, q in enumerate(queries):
                        got = _seqs(knn_search(tree, q, k, mode))
                        visits += tree.last_visits
                        want = _seqs(brute.query(q, k))
                        if got != want and witness is None:
                            witness = (qi, q, want, got)
                    wall = time.perf_counter_ns() - start
                    name = f"exact n={n} D={dims} k={k} {policy.value} {mode.value}"
                    detail = ""
                    if witness:
                        qi, q, want, got = witness
                        detail = (f"seed={spec.seed} query#{qi}={tuple(round(x, 6) for x in q)} "
                                  f"expected={want} actual={got}")
                    checks.append(Check(name, witness is None, detail))
                    records.append(BenchRecord("verify", n, spec.threshold, policy.value,
                                               mode.value, cell, wall, visits,
                                               tree.rebuild_count, tree.rebuild_node_work,
                                               tree.pool.watermark))
                    cell += 1
                tree.free()


def _forest_exactness(spec: BenchSpec, dims: int, k: int, records, checks) -> None:
    mode = (ForestMode.SINGLE_TREE if spec.mode == ForestMode.SINGLE_TREE.value
            else ForestMode.EXACT_FOREST)
    for n in spec.sizes:
        points = generate_dataset(spec.seed, n, dims, spec.distribution)
        queries = generate_queries(spec.seed, spec.repetitions, dims, spec.distribution)
        brute = BruteForce(points)
        forest = IntervalForest(dims, n, max_k=k, threshold=spec.threshold, policy=spec.policy)
        for pt in points:
            forest.add(pt.coords)
        witness = None
        visits = 0
        start = time.perf_counter_ns()
        for qi, q in enumerate(queries):
            got = _seqs(forest.knn(q, k, mode))
            visits += forest.last_visits
            want = _seqs(brute.query(q, k))
            if got != want and witness is None:
                witness = (qi, want, got)
        wall = time.perf_counter_ns() - start
        detail = ""
        if witness:
            detail = f"seed={spec.seed} query#{witness[0]} expected={witness[1]} actual={witness[2]}"
        checks.append(Check(f"forest n={n} D={dims} k={k} {mode.value}", witness is None, detail))
        records.append(BenchRecord("verify-forest", n, spec.threshold, spec.policy.value,
                                   mode.value, 0, wall, visits, forest.rebuild_count(),
                                   forest.rebuild_node_work(),
                                   sum(t.pool.watermark for t in forest.trees)))
        forest.free()


def allocation_audit(n: int, dims: int, seed: int) -> Check:
    """Scripted session under the allocation hook; nothing may be acquired after init."""
    k = 30
    events: list[int] = []
    previous = memory_pool.set_alloc_hook(lambda nbytes, label: events.append(nbytes))
    try:
        tree = KdTree.create(dims, n, k)
        forest = IntervalForest(dims, n, max_k=k)
        points = generate_dataset(seed, n, dims)
        queries = generate_queries(seed, 100, dims)
        buffers = [(id(b), len(b)) for b in tree.pool.buffers()]
        tree.init()
        forest.init()
        baseline = len(events)

        for pt in points:
            tree.add(pt.coords, pt.seq)
        for _ in range(3):
            tree.rebuild()
        for q in queries:
            knn_search(tree, q, k)
            knn_search(tree, q, 5, KnnMode.PATH_DESCENT)
            knn_radius(tree, q, 0.05)
        for pt in points[:50]:
            tree.delete(pt.coords)
        tree.rebuild()
        for pt in points:
            forest.add(pt.coords)
        for q in queries:
            forest.knn(q, k)
            forest.knn(q, k, ForestMode.SINGLE_TREE)

        grew = len(events) - baseline
        same = buffers == [(id(b), len(b)) for b in tree.pool.buffers()]
        tree.free()
        forest.free()
    finally:
        memory_pool.set_alloc_hook(previous)
    return Check(f"allocation audit n={n}", grew == 0 and same,
                 f"{grew} acquisitions after init, buffers stable={same}")


def invariant_sweeps(spec: BenchSpec) -> list[Check]:
    checks = []
    dims = spec.dims
    for n in (7, 100, 4096):
        points = generate_dataset(spec.seed, n, dims)
        tree = KdTree.create(dims, n, 1, auto_rebuild=False)
        for pt in points:
            tree.add(pt.coords, pt.seq)
        before = sorted(tree.points(), key=lambda p: p.seq)
        tree.rebuild()
        after = sorted(tree.points(), key=lambda p: p.seq)
        bound = math.ceil(math.log2(tree.live_count + 1))
        problems = tree.check_invariants()
        checks.append(Check(f"balance after rebuild n={n}",
                            tree.height() <= bound and before == after and not problems,
                            f"height={tree.height()} bound={bound} problems={problems[:2]}"))
        tree.free()

    for b in (2, 3):
        n = 4096
        tree = KdTree.create(dims, n, 1, threshold=b)
        for pt in generate_dataset(spec.seed, n, dims):
            tree.add(pt.coords, pt.seq)
        expected = rebuild_law(n, b)
        checks.append(Check(f"rebuild count n={n} b={b}", tree.rebuild_count == expected,
                            f"got {tree.rebuild_count}, law {expected}"))
        tree.free()

    checks.append(Check("estimate_rebuilds(64000) = 12", estimate_rebuilds(64000) == 12))
    checks.append(Check("forest plan 64000 -> (13, 4924)", forest_size_plan(64000) == (13, 4924)))
    checks.append(Check("forest plan 1 -> (1, 1)", forest_size_plan(1) == (1, 1)))
    return checks


def verify(spec: BenchSpec, out: Optional[TextIO] = None,
           dims_list=None, ks=None, policies=None) -> tuple[bool, list[BenchRecord], list[Check]]:
    """Run every check, print a pass/fail table, and return (all passed, records, checks)."""
    out = out or sys.stdout
    dims_list = tuple(dims_list or DEFAULT_DIMS)
    ks = tuple(ks or DEFAULT_KS)
    policies = tuple(policies or SplitPolicy)
    records: list[BenchRecord] = []
    checks: list[Check] = []

    _exactness(spec, dims_list, ks, policies, records, checks)
    _forest_exactness(spec, dims_list[0], max(ks), records, checks)
    checks.append(allocation_audit(max(spec.sizes), spec.dims, spec.seed))
    checks.extend(invariant_sweeps(spec))

    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        line = f"{status}  {c.name.ljust(width)}"
        if c.detail and not c.passed:
            line += f"  {c.detail}"
        out.write(line.rstrip() + "\n")
    ok = all(c.passed for c in checks)
    out.write(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed\n")
    return ok, records, checks
