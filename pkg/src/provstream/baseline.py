"""Stored-graph contrast baseline for the benchmark.

Accumulates the whole provenance graph and answers each loss-prevention
question by a full backward ancestry traversal from the sink, the way a
store-then-query stack would.  Per-query latency therefore grows with the
accumulated graph, which is exactly the behaviour the streaming engine's
constant per-edge cost is measured against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .model import Element, NodeId, NodeKind, ProvEdge, ProvNode, RelationKind
from .queries.lps import DEFAULT_RELEVANT, DEFAULT_SINKS, NodeSelector


def _pack(nid: NodeId) -> int:
    return (nid.object_id << 32) | nid.version


@dataclass
class AncestryProbe:
    edges_ingested: int
    visited: int
    confidential: bool
    seconds: float


class StoredGraphBaseline:
    """Reverse adjacency over int-packed node ids; no GC, no streaming state."""

    def __init__(self, sources: tuple[NodeSelector, ...] = (),
                 relevant: frozenset[RelationKind] = DEFAULT_RELEVANT,
                 sink_kinds: frozenset[NodeKind] = DEFAULT_SINKS):
        self.rev: dict[int, list[int]] = {}
        self.sources: set[int] = set()
        self.source_selectors = sources
        self.relevant = relevant
        self.sink_kinds = sink_kinds
        self.last_sink: int | None = None
        self.edges = 0
        self.nodes = 0

    def ingest(self, el: Element):
        if type(el) is ProvEdge:
            if el.kind in self.relevant:
                self.rev.setdefault(_pack(el.dst), []).append(_pack(el.src))
                self.edges += 1
        elif type(el) is ProvNode:
            self.nodes += 1
            if el.kind in self.sink_kinds:
                self.last_sink = _pack(el.id)
            elif any(sel.matches(el) for sel in self.source_selectors):
                self.sources.add(_pack(el.id))

    def ancestry_query(self, start: int | None = None) -> AncestryProbe:
        """Full backward closure from the sink; no early exit, so the cost
        reflects the stored graph's size."""
        t0 = time.perf_counter()
        root = self.last_sink if start is None else start
        visited: set[int] = set()
        if root is not None:
            stack = [root]
            visited.add(root)
            rev = self.rev
            while stack:
                n = stack.pop()
                for p in rev.get(n, ()):
                    if p not in visited:
                        visited.add(p)
                        stack.append(p)
        confidential = not visited.isdisjoint(self.sources)
        return AncestryProbe(self.edges, len(visited), confidential,
                             time.perf_counter() - t0)
