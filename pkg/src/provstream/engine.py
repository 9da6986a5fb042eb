"""Stacked vertex-centric queries over the merged element stream.

A query is three callbacks: ``init`` once at registration, ``out_edge(v, e)``
on every outgoing edge of a vertex, and ``in_edge(e, v)`` on every incoming
edge.  For each edge u->v the engine invokes, per query in load order,
out_edge(u, e) then in_edge(e, v); the merge contract guarantees a vertex has
received all of its in-edges before any of its out-edges runs, so values
written on edges by sources are always visible at destinations.

The engine holds no graph: per-edge work depends only on per-element state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .errors import DuplicateName, ForeignBit, LabelBitsExhausted, OrderingViolation
from .model import NodeId, ProvEdge, ProvNode, QueryScratch

log = logging.getLogger(__name__)

MAX_LABEL_BITS = 64


class Mode(str, Enum):
    DETECT = "detect"
    ENFORCE = "enforce"


@dataclass(slots=True)
class Alert:
    payload: object = None


@dataclass(slots=True)
class Deny:
    payload: object = None


Verdict = Alert | Deny | None  # None means allow


@dataclass(slots=True)
class VerdictRecord:
    query: str
    action: str  # "alert" | "deny" | "panic"
    edge_id: int
    src: NodeId | None
    dst: NodeId | None
    payload: object = None
    honored: bool = True  # False for a Deny seen in detect mode

    def to_record(self) -> dict:
        return {"query": self.query, "verdict": self.action,
                "edge_id": self.edge_id,
                "from": list(self.src) if self.src else None,
                "to": list(self.dst) if self.dst else None,
                "payload": self.payload}


class QueryContext:
    """Per-query handle granting label bits and a private value slot."""

    def __init__(self, index: int, bits: tuple[int, ...], mode: Mode):
        self.index = index
        self.bits = bits
        self.mode = mode
        self._mask = 0
        for b in bits:
            self._mask |= 1 << b

    def add_label(self, scratch: QueryScratch, bit: int):
        m = 1 << bit
        if not m & self._mask:
            raise ForeignBit(f"bit {bit} not granted to this query")
        scratch.labels |= m

    def has_label(self, scratch: QueryScratch, bit: int) -> bool:
        return bool(scratch.labels & (1 << bit))

    def clear_label(self, scratch: QueryScratch, bit: int):
        m = 1 << bit
        if not m & self._mask:
            raise ForeignBit(f"bit {bit} not granted to this query")
        scratch.labels &= ~m

    def add_value(self, scratch: QueryScratch, handle: object):
        if scratch.values is None:
            scratch.values = {}
        scratch.values[self.index] = handle

    def get_value(self, scratch: QueryScratch, default=None):
        if scratch.values is None:
            return default
        return scratch.values.get(self.index, default)


class QueryModule:
    """Base class for vertex-centric queries."""

    name = "query"
    label_bits_needed = 0

    def init(self, ctx: QueryContext):
        self.ctx = ctx

    def out_edge(self, vertex: ProvNode, edge: ProvEdge) -> Verdict:
        return None

    def in_edge(self, edge: ProvEdge, vertex: ProvNode) -> Verdict:
        return None

    def dispose_value(self, element, handle):
        """Called at element GC; ``handle`` is this query's slot (or None)."""

    def finish(self):
        """Called once after the stream ends."""


class NilQuery(QueryModule):
    """Callbacks that do nothing; the measurement floor for benchmarks."""

    name = "nil"


class QueryEngine:
    """Registry plus dispatcher; queries run sequentially in load order."""

    def __init__(self, mode: Mode = Mode.DETECT,
                 verdict_sink: Callable[[VerdictRecord], None] | None = None,
                 check_ordering: bool = True):
        self.mode = mode
        self.queries: list[QueryModule] = []
        self.contexts: list[QueryContext] = []
        self.disabled: set[int] = set()
        self._names: set[str] = set()
        self._next_bit = 0
        self.verdicts: list[VerdictRecord] = []
        self.verdict_sink = verdict_sink
        self.check_ordering = check_ordering
        self.deny_count = 0

    def register(self, query: QueryModule) -> tuple[int, ...]:
        if query.name in self._names:
            raise DuplicateName(query.name)
        need = query.label_bits_needed
        if self._next_bit + need > MAX_LABEL_BITS:
            raise LabelBitsExhausted(
                f"{self._next_bit + need} bits requested, {MAX_LABEL_BITS} available")
        bits = tuple(range(self._next_bit, self._next_bit + need))
        self._next_bit += need
        ctx = QueryContext(len(self.queries), bits, self.mode)
        self._names.add(query.name)
        self.queries.append(query)
        self.contexts.append(ctx)
        query.init(ctx)
        return bits

    def _emit(self, rec: VerdictRecord):
        self.verdicts.append(rec)
        if rec.action == "deny" and rec.honored:
            self.deny_count += 1
        if self.verdict_sink is not None:
            self.verdict_sink(rec)

    def on_edge(self, src: ProvNode, edge: ProvEdge, dst: ProvNode):
        """Dispatch one edge through the stack; may suppress it in enforce mode."""
        if self.check_ordering and dst.scratch.out_seen:
            raise OrderingViolation(
                f"in-edge {edge.edge_id} for {dst.id} after an out-edge",
                edge_id=edge.edge_id)
        src.scratch.out_seen = True
        enforce = self.mode is Mode.ENFORCE
        for i, query in enumerate(self.queries):
            if i in self.disabled:
                continue
            denied = False
            for phase in (0, 1):
                try:
                    verdict = (query.out_edge(src, edge) if phase == 0
                               else query.in_edge(edge, dst))
                except OrderingViolation:
                    raise
                except Exception as exc:  # callback panic: isolate the query
                    log.exception("query %s failed; disabling", query.name)
                    self.disabled.add(i)
                    self._emit(VerdictRecord(query.name, "panic", edge.edge_id,
                                             src.id, dst.id, repr(exc)))
                    break
                if verdict is None:
                    continue
                if isinstance(verdict, Alert):
                    self._emit(VerdictRecord(query.name, "alert", edge.edge_id,
                                             src.id, dst.id, verdict.payload))
                elif isinstance(verdict, Deny):
                    self._emit(VerdictRecord(query.name, "deny", edge.edge_id,
                                             src.id, dst.id, verdict.payload,
                                             honored=enforce))
                    if enforce:
                        # Freeze the edge: no later query sees or extends it.
                        edge.scratch.suppressed = True
                        denied = True
                        break
            if denied:
                break
        # Edges are discarded immediately after processing.
        self.dispose_element(edge)

    def dispose_element(self, element):
        scratch = getattr(element, "scratch", None)
        if scratch is None:
            return
        values = scratch.values
        is_node = isinstance(element, ProvNode)
        if values is None and not is_node:
            return
        for i, query in enumerate(self.queries):
            if i in self.disabled:
                continue
            handle = values.get(i) if values else None
            if is_node or handle is not None:
                query.dispose_value(element, handle)
        scratch.values = None

    def finish(self):
        for i, query in enumerate(self.queries):
            if i not in self.disabled:
                query.finish()
