"""Versioned provenance graph elements and cycle-avoidance versioning.

Every mutable kernel-object stand-in is represented as a chain of immutable
version vertices.  A new version of an object is created whenever an object
that has already sent information receives new information; this local rule
keeps the emitted graph acyclic without consulting any global state.

Edge orientation is information-flow direction throughout: data flows from
``src`` to ``dst``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from itertools import count
from typing import Iterable, Iterator, NamedTuple, Union

from .errors import InvalidRelation, ParseError, UnknownObject

Scalar = Union[int, str, bool]


class NodeId(NamedTuple):
    """Identity of one version of one object; globally unique as a 4-tuple."""

    object_id: int
    machine_id: int
    boot_id: int
    version: int

    def bump(self) -> "NodeId":
        return self._replace(version=self.version + 1)

    def short(self) -> str:
        return f"{self.object_id}:{self.machine_id}:{self.boot_id}:{self.version}"


class NodeKind(str, Enum):
    TASK = "task"
    INODE = "inode"
    SOCKET = "socket"
    PACKET = "packet"
    SHARED_STATE = "shared_state"
    XATTR_VALUE = "xattr_value"
    ADDRESS = "address"
    AGENT = "agent"
    EXTENSION = "extension"


class RelationKind(str, Enum):
    READ = "read"
    WRITE = "write"
    VERSION = "version"
    CREATE = "create"
    EXEC = "exec"
    FORK = "fork"
    CLONE = "clone"
    SEND = "send"
    RECEIVE = "receive"
    SHARED_READ = "shared_read"
    SHARED_WRITE = "shared_write"
    SET_ATTR = "set_attr"
    TERMINATE = "terminate"
    EXTENSION = "extension"


# Relations that carry information flow; Version and Terminate are bookkeeping.
FLOW_KINDS = frozenset(RelationKind) - {RelationKind.VERSION, RelationKind.TERMINATE}


@dataclass(slots=True)
class QueryScratch:
    """Per-element state owned by the query engine.

    ``labels`` is a 64-bit bitmask whose bit assignment is owned by the query
    registry; ``values`` holds one opaque slot per registered query, keyed by
    query index, created lazily.  ``suppressed`` marks edges denied in
    enforce mode; ``out_seen`` backs the engine's defensive ordering check.
    """

    labels: int = 0
    values: dict[int, object] | None = None
    suppressed: bool = False
    out_seen: bool = False


@dataclass(slots=True)
class ProvNode:
    id: NodeId
    kind: NodeKind
    attributes: dict[str, Scalar]
    lane: int = 0
    edge_id: int = 0  # lane-sequential publication id, shared counter with edges
    scratch: QueryScratch = field(default_factory=QueryScratch)


@dataclass(slots=True)
class ProvEdge:
    edge_id: int
    src: NodeId
    dst: NodeId
    kind: RelationKind
    attributes: dict[str, Scalar] = field(default_factory=dict)
    lane: int = 0
    scratch: QueryScratch = field(default_factory=QueryScratch)


@dataclass(slots=True)
class TerminateMarker:
    """End-of-life marker for an object; not a flow edge, skipped by acyclicity."""

    edge_id: int
    node: NodeId
    lane: int = 0


Element = Union[ProvNode, ProvEdge, TerminateMarker]


@dataclass(slots=True)
class LiveObjectState:
    """Per-object capture state; exists only while the object is live."""

    object_id: int
    kind: NodeKind
    current_version: int = 0
    has_outgoing: bool = False
    attributes: dict[str, Scalar] = field(default_factory=dict)


class GraphBuilder:
    """Single-lane element factory implementing the versioning rule.

    Each lane owns its live-object slice and its gap-free edge_id counter;
    elements are immutable once emitted and safe to hand across threads.
    """

    def __init__(self, lane: int = 0, machine_id: int = 0, boot_id: int = 0,
                 id_allocator: Iterator[int] | None = None):
        self.lane = lane
        self.machine_id = machine_id
        self.boot_id = boot_id
        self._ids = id_allocator if id_allocator is not None else count(1)
        self._next_seq = 1
        self.live: dict[int, LiveObjectState] = {}

    def _seq(self) -> int:
        s = self._next_seq
        self._next_seq += 1
        return s

    def _node_id(self, state: LiveObjectState) -> NodeId:
        return NodeId(state.object_id, self.machine_id, self.boot_id,
                      state.current_version)

    def new_object(self, kind: NodeKind, attributes: dict[str, Scalar] | None = None,
                   object_id: int | None = None) -> ProvNode:
        """Create a version-0 node and register its live state."""
        oid = next(self._ids) if object_id is None else object_id
        attrs = dict(attributes or {})
        state = LiveObjectState(oid, kind, attributes=attrs)
        self.live[oid] = state
        return ProvNode(self._node_id(state), kind, dict(attrs),
                        lane=self.lane, edge_id=self._seq())

    def new_transient_object(self, kind: NodeKind,
                             attributes: dict[str, Scalar] | None = None) -> ProvNode:
        """Create a fire-and-forget node (e.g. a packet) with no live state."""
        oid = next(self._ids)
        return ProvNode(NodeId(oid, self.machine_id, self.boot_id, 0), kind,
                        dict(attributes or {}), lane=self.lane, edge_id=self._seq())

    def record_flow(self, source: int, sink: int, kind: RelationKind,
                    attrs: dict[str, Scalar] | None = None, *,
                    force_version: bool = False,
                    sink_attr_updates: dict[str, Scalar] | None = None) -> list[Element]:
        """Record an information flow between two live objects.

        If the sink has already sent information, a new sink version is
        created first (node, then Version edge) so the flow lands on the new
        version.  Only the two endpoint states are consulted.
        """
        if kind not in FLOW_KINDS:
            raise InvalidRelation(f"{kind.value} is not a flow relation")
        src_state = self.live.get(source)
        if src_state is None:
            raise UnknownObject(source)
        dst_state = self.live.get(sink)
        if dst_state is None:
            raise UnknownObject(sink)

        src_node = self._node_id(src_state)
        out: list[Element] = []
        # A self-flow would otherwise emit a self-loop; versioning keeps it acyclic.
        if dst_state.has_outgoing or force_version or source == sink:
            out.extend(self._bump_version(dst_state, sink_attr_updates))
        out.append(ProvEdge(self._seq(), src_node, self._node_id(dst_state), kind,
                            dict(attrs or {}), lane=self.lane))
        src_state.has_outgoing = True
        return out

    def record_foreign_flow(self, src_node: NodeId, sink: int, kind: RelationKind,
                            attrs: dict[str, Scalar] | None = None) -> list[Element]:
        """Flow from a node owned by another lane or machine (packet receive)."""
        if kind not in FLOW_KINDS:
            raise InvalidRelation(f"{kind.value} is not a flow relation")
        dst_state = self.live.get(sink)
        if dst_state is None:
            raise UnknownObject(sink)
        out: list[Element] = []
        if dst_state.has_outgoing:
            out.extend(self._bump_version(dst_state, None))
        out.append(ProvEdge(self._seq(), src_node, self._node_id(dst_state), kind,
                            dict(attrs or {}), lane=self.lane))
        return out

    def record_flow_to_foreign(self, source: int, dst_node: NodeId, kind: RelationKind,
                               attrs: dict[str, Scalar] | None = None) -> list[Element]:
        """Flow from a live object into a stateless node (e.g. a fresh packet)."""
        if kind not in FLOW_KINDS:
            raise InvalidRelation(f"{kind.value} is not a flow relation")
        src_state = self.live.get(source)
        if src_state is None:
            raise UnknownObject(source)
        edge = ProvEdge(self._seq(), self._node_id(src_state), dst_node, kind,
                        dict(attrs or {}), lane=self.lane)
        src_state.has_outgoing = True
        return [edge]

    def _bump_version(self, state: LiveObjectState,
                      attr_updates: dict[str, Scalar] | None) -> list[Element]:
        old = self._node_id(state)
        state.current_version += 1
        if attr_updates:
            state.attributes.update(attr_updates)
        node = ProvNode(self._node_id(state), state.kind, dict(state.attributes),
                        lane=self.lane, edge_id=self._seq())
        version_edge = ProvEdge(self._seq(), old, node.id, RelationKind.VERSION,
                                lane=self.lane)
        # The fresh version has not sent information yet.
        state.has_outgoing = False
        return [node, version_edge]

    def terminate_object(self, object_id: int) -> list[Element]:
        state = self.live.pop(object_id, None)
        if state is None:
            raise UnknownObject(object_id)
        return [TerminateMarker(self._seq(), self._node_id(state), lane=self.lane)]

    def emit_terminate_for(self, node: NodeId) -> list[Element]:
        """Terminate marker for a node this lane does not own (e.g. a packet)."""
        return [TerminateMarker(self._seq(), node, lane=self.lane)]


def is_acyclic(elements: Iterable[Element]) -> bool:
    """Kahn-style topological sort over all non-Terminate edges."""
    indeg: dict[NodeId, int] = {}
    succ: dict[NodeId, list[NodeId]] = {}
    for el in elements:
        if isinstance(el, ProvEdge):
            indeg.setdefault(el.src, 0)
            indeg[el.dst] = indeg.get(el.dst, 0) + 1
            succ.setdefault(el.src, []).append(el.dst)
        elif isinstance(el, ProvNode):
            indeg.setdefault(el.id, 0)
    ready = deque(n for n, d in indeg.items() if d == 0)
    seen = 0
    while ready:
        n = ready.popleft()
        seen += 1
        for m in succ.get(n, ()):
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    return seen == len(indeg)


# --- trace serialization ----------------------------------------------------
#
# Line-delimited records, one JSON object per element.  edge_id is the record
# sort key within a lane; the lane tag makes multi-lane files mergeable.

def to_record(el: Element) -> dict:
    if isinstance(el, ProvNode):
        return {"elem": "node", "edge_id": el.edge_id, "lane": el.lane,
                "id": list(el.id), "kind": el.kind.value, "attributes": el.attributes}
    if isinstance(el, ProvEdge):
        return {"elem": "edge", "edge_id": el.edge_id, "lane": el.lane,
                "from": list(el.src), "to": list(el.dst), "kind": el.kind.value,
                "attributes": el.attributes}
    return {"elem": "terminate", "edge_id": el.edge_id, "lane": el.lane,
            "node": list(el.node)}


def from_record(rec: dict) -> Element:
    try:
        elem = rec["elem"]
        if elem == "node":
            return ProvNode(NodeId(*rec["id"]), NodeKind(rec["kind"]),
                            dict(rec["attributes"]), lane=rec["lane"],
                            edge_id=rec["edge_id"])
        if elem == "edge":
            return ProvEdge(rec["edge_id"], NodeId(*rec["from"]), NodeId(*rec["to"]),
                            RelationKind(rec["kind"]), dict(rec["attributes"]),
                            lane=rec["lane"])
        if elem == "terminate":
            return TerminateMarker(rec["edge_id"], NodeId(*rec["node"]),
                                   lane=rec["lane"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad element record: {exc}") from exc
    raise ParseError(f"unknown element type {elem!r}")


def dump_elements(elements: Iterable[Element]) -> Iterator[str]:
    for el in elements:
        yield json.dumps(to_record(el), separators=(",", ":"))


def write_trace(path, elements: Iterable[Element]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for line in dump_elements(elements):
            fh.write(line)
            fh.write("\n")
            n += 1
    return n


def read_trace(path) -> Iterator[Element]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            yield from_record(rec)
