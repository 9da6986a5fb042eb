"""Structural identity: generation-wise ancestor in-degree sequences.

Each vertex accumulates a list L of n+1 generations: L[0] is its own
in-degree and L[i] the in-degrees of its i-th generation ancestors, merged in
from parents over in-edges and forwarded to children over out-edges.  When a
vertex's first out-edge fires its ancestry is complete (in-edges precede
out-edges), so the feature vector is computed and published exactly once;
vertices with no out-edges are flushed when they are garbage collected.

A vertex reachable through several length-i paths contributes once per path,
matching an exhaustive walk over the ancestor paths.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..engine import QueryModule
from ..model import NodeId, NodeKind, ProvEdge, ProvNode, RelationKind
from .dtw import dtw

_DELTA_KEYS = ("mem_usage", "cpu_usage")


@dataclass(slots=True)
class InDegreeSequenceList:
    """Mutable per-vertex accumulation state."""

    count: int = 0
    gens: list[list[int]] = field(default_factory=list)  # generations 1..n
    saturated: bool = False
    published: bool = False
    prev_attrs: dict | None = None
    canon: list[list[int]] | None = None

    def canonical(self, depth: int) -> list[list[int]]:
        """Sorted, fixed-arity form: [[own in-degree], gen1, ..., genN]."""
        if self.canon is None:
            gens = [sorted(g) for g in self.gens]
            gens.extend([] for _ in range(depth - len(gens)))
            self.canon = [[self.count]] + gens
        return self.canon


@dataclass(slots=True)
class FeatureVector:
    node: NodeId
    kind: str
    uid: int | None
    namespace: str | None
    security_context: str | None
    uid_changed: bool | None
    deltas: tuple[int | None, ...]
    distances: tuple[float, ...]
    saturated: bool

    @staticmethod
    def header(depth: int) -> list[str]:
        return (["node_id", "kind", "uid", "namespace", "security_context",
                 "uid_changed"]
                + [f"{k}_delta" for k in _DELTA_KEYS]
                + [f"dtw_gen{i}" for i in range(1, depth + 1)]
                + ["saturated"])

    def row(self) -> list:
        def enc(v):
            return "" if v is None else v
        return ([self.node.short(), self.kind, enc(self.uid), enc(self.namespace),
                 enc(self.security_context),
                 "" if self.uid_changed is None else int(self.uid_changed)]
                + [enc(d) for d in self.deltas]
                + list(self.distances) + [int(self.saturated)])


class StructuralIdentityQuery(QueryModule):
    name = "structid"

    def __init__(self, depth: int = 1, gen_width: int = 64,
                 sink: Callable[[FeatureVector], None] | None = None,
                 record_lists: bool = False):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self.gen_width = gen_width
        self.features: list[FeatureVector] = []
        self.sink = sink
        self.record_lists = record_lists
        self.lists: dict[NodeId, list[list[int]]] = {}

    def _state(self, vertex: ProvNode) -> InDegreeSequenceList:
        st = self.ctx.get_value(vertex.scratch)
        if st is None:
            st = InDegreeSequenceList(gens=[[] for _ in range(self.depth)])
            self.ctx.add_value(vertex.scratch, st)
        return st

    def in_edge(self, edge: ProvEdge, vertex: ProvNode):
        st = self._state(vertex)
        st.count += 1
        payload = self.ctx.get_value(edge.scratch)
        if payload is None:
            return None
        parent_list, parent_attrs = payload
        width = self.gen_width
        for i in range(min(len(parent_list), self.depth)):
            gen = st.gens[i]
            for d in parent_list[i]:
                if len(gen) >= width:
                    st.saturated = True
                    break
                gen.append(d)
        if edge.kind is RelationKind.VERSION and parent_attrs is not None:
            st.prev_attrs = parent_attrs
        return None

    def out_edge(self, vertex: ProvNode, edge: ProvEdge):
        st = self._state(vertex)
        if not st.published:
            self._publish(vertex, st)
        attrs = vertex.attributes if edge.kind is RelationKind.VERSION else None
        self.ctx.add_value(edge.scratch, (st.canonical(self.depth), attrs))
        return None

    def dispose_value(self, element, handle):
        if isinstance(element, ProvNode):
            st = handle if handle is not None else self._state(element)
            if not st.published:
                self._publish(element, st)

    def _publish(self, vertex: ProvNode, st: InDegreeSequenceList):
        st.published = True
        canon = st.canonical(self.depth)
        own = canon[0]
        distances = tuple(dtw(own, canon[i]) for i in range(1, self.depth + 1))
        attrs = vertex.attributes
        prev = st.prev_attrs
        uid = attrs.get("uid")
        uid_changed = None if prev is None else prev.get("uid") != uid
        deltas = tuple(
            attrs[k] - prev[k]
            if prev is not None and isinstance(prev.get(k), int)
            and isinstance(attrs.get(k), int) else None
            for k in _DELTA_KEYS)
        fv = FeatureVector(vertex.id, vertex.kind.value, uid,
                           attrs.get("namespace"), attrs.get("security_context"),
                           uid_changed, deltas, distances, st.saturated)
        if self.record_lists:
            self.lists[vertex.id] = canon
        if self.sink is not None:
            self.sink(fv)
        else:
            self.features.append(fv)


class FeatureCsvWriter:
    """Streams feature vectors into a CSV file with a fixed-arity header."""

    def __init__(self, fh, depth: int):
        self._writer = csv.writer(fh)
        self._writer.writerow(FeatureVector.header(depth))
        self.count = 0

    def __call__(self, fv: FeatureVector):
        self._writer.writerow(fv.row())
        self.count += 1
