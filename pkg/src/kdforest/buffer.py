"""Bounded best-k candidate buffer backed by pre-allocated arrays."""

from __future__ import annotations

from array import array
from typing import NamedTuple

from .memory_pool import NIL, acquire


class NeighborHit(NamedTuple):
    coords: tuple
    distance: float
    seq: int


class BestKBuffer:
    """Keeps the ``k`` best candidates under the total order (distance, seq).

    Distances are offered squared.  Until the buffer fills, every offer is
    accepted; afterwards an offer replaces the current worst entry only when it
    orders strictly before it.  ``worst_d2`` is always exact.

    ``owner`` tags which tree a hit came from so a forest can merge several
    trees into one buffer.
    """

    __slots__ = ("nodes", "seqs", "owners", "d2s", "capacity", "k", "filled", "_worst")

    def __init__(self, nodes: array, seqs: array, owners: array, d2s: array):
        self.nodes = nodes
        self.seqs = seqs
        self.owners = owners
        self.d2s = d2s
        self.capacity = len(d2s)
        self.k = self.capacity
        self.filled = 0
        self._worst = 0

    @classmethod
    def allocate(cls, max_k: int) -> "BestKBuffer":
        return cls(acquire("q", max_k, "hit_node"), acquire("q", max_k, "hit_seq"),
                   acquire("q", max_k, "hit_owner"), acquire("d", max_k, "hit_d2"))

    def reset(self, k: int) -> None:
        if not 1 <= k <= self.capacity:
            raise ValueError(f"k must be in [1, {self.capacity}], got {k}")
        self.k = k
        self.filled = 0
        self._worst = 0

    @property
    def full(self) -> bool:
        return self.filled >= self.k

    @property
    def worst_d2(self) -> float:
        return self.d2s[self._worst] if self.filled else float("inf")

    def offer(self, d2: float, seq: int, node: int = NIL, owner: int = 0) -> bool:
        d2s, seqs = self.d2s, self.seqs
        filled = self.filled
        if filled < self.k:
            d2s[filled] = d2
            seqs[filled] = seq
            self.nodes[filled] = node
            self.owners[filled] = owner
            w = self._worst
            if filled == 0 or d2 > d2s[w] or (d2 == d2s[w] and seq > seqs[w]):
                self._worst = filled
            self.filled = filled + 1
            return True
        w = self._worst
        wd = d2s[w]
        if d2 > wd or (d2 == wd and seq > seqs[w]):
            return False
        d2s[w] = d2
        seqs[w] = seq
        self.nodes[w] = node
        self.owners[w] = owner
        # rescan for the new worst
        w = 0
        wd = d2s[0]
        ws = seqs[0]
        for i in range(1, filled):
            di = d2s[i]
            if di > wd or (di == wd and seqs[i] > ws):
                w, wd, ws = i, di, seqs[i]
        self._worst = w
        return True

    def sort(self) -> None:
        """Insertion sort of the filled prefix, ascending by (distance, seq)."""
        d2s, seqs, nodes, owners = self.d2s, self.seqs, self.nodes, self.owners
        for i in range(1, self.filled):
            d, s, nd, ow = d2s[i], seqs[i], nodes[i], owners[i]
            j = i - 1
            while j >= 0 and (d2s[j] > d or (d2s[j] == d and seqs[j] > s)):
                d2s[j + 1] = d2s[j]
                seqs[j + 1] = seqs[j]
                nodes[j + 1] = nodes[j]
                owners[j + 1] = owners[j]
                j -= 1
            d2s[j + 1] = d
            seqs[j + 1] = s
            nodes[j + 1] = nd
            owners[j + 1] = ow
        self._worst = self.filled - 1 if self.filled else 0

    def entries(self) -> list[tuple[float, int]]:
        """(squared distance, seq) pairs currently held, in storage order."""
        return [(self.d2s[i], self.seqs[i]) for i in range(self.filled)]
