"""Merging per-lane element streams into one totally ordered stream.

Lanes emit gap-free, strictly increasing edge_ids.  The merger emits a
deterministic linear extension of the per-lane orders: elements are released
in (edge_id, lane) order up to the minimum watermark of the active lanes;
lanes that have gone quiet for longer than the QoS threshold, or that are
closed, stop holding the merge back and release everything contiguous they
have buffered.

Causality between lanes exists only through packets, so a receive edge is
held until the originating packet's send subgraph (node and in-edge) has
been emitted.  A receive whose origin never shows up is quarantined after
the QoS threshold and surfaced as a dangling-packet warning rather than
stalling the stream.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

from .errors import StaleElement
from .model import (
    Element,
    NodeId,
    NodeKind,
    ProvEdge,
    ProvNode,
    RelationKind,
    TerminateMarker,
)


@dataclass
class MergePolicy:
    """``qos_threshold`` is in units of the caller's clock (elements pushed,
    or seconds); a lane with no push for that long is assumed quiescent."""

    qos_threshold: float = 4096.0

    def __post_init__(self):
        if self.qos_threshold <= 0:
            raise ValueError("qos_threshold must be > 0")


class LaneBuffer:
    """Reorder buffer for one lane; watermark is the highest contiguous
    edge_id received."""

    __slots__ = ("key", "watermark", "ready", "ooo", "ooo_ids", "closed",
                 "last_push", "blocked_since")

    def __init__(self, key: Hashable, now: float = 0.0):
        self.key = key
        self.watermark = 0
        self.ready: deque = deque()
        self.ooo: list = []
        self.ooo_ids: set[int] = set()
        self.closed = False
        self.last_push = now
        self.blocked_since: float | None = None

    def push(self, element: Element, now: float):
        eid = element.edge_id
        if eid <= self.watermark or eid in self.ooo_ids:
            raise StaleElement(f"lane {self.key}: edge_id {eid} already seen "
                               f"(watermark {self.watermark})")
        heapq.heappush(self.ooo, (eid, id(element), element))
        self.ooo_ids.add(eid)
        while self.ooo and self.ooo[0][0] == self.watermark + 1:
            eid, _, el = heapq.heappop(self.ooo)
            self.ooo_ids.discard(eid)
            self.ready.append(el)
            self.watermark = eid
        self.last_push = now

    def head(self) -> Element | None:
        return self.ready[0] if self.ready else None

    def pop(self) -> Element:
        self.blocked_since = None
        return self.ready.popleft()

    def active(self, now: float, threshold: float) -> bool:
        return not self.closed and (now - self.last_push) < threshold

    def buffered(self) -> int:
        return len(self.ready) + len(self.ooo)


class VertexMap:
    """Live vertices only: nodes are dropped when a successor version's edge
    or their terminate marker has been processed."""

    def __init__(self):
        self._nodes: dict[NodeId, ProvNode] = {}
        self.peak = 0

    def add(self, node: ProvNode):
        self._nodes[node.id] = node
        if len(self._nodes) > self.peak:
            self.peak = len(self._nodes)

    def get(self, node_id: NodeId) -> ProvNode | None:
        return self._nodes.get(node_id)

    def gc_after(self, element: Element) -> list[ProvNode]:
        """Eviction rule, applied after the element was processed by all
        registered queries."""
        evicted = []
        if isinstance(element, ProvEdge):
            if element.kind is RelationKind.VERSION:
                old = self._nodes.pop(element.src, None)
                if old is not None:
                    evicted.append(old)
        elif isinstance(element, TerminateMarker):
            node = self._nodes.pop(element.node, None)
            if node is not None:
                evicted.append(node)
        return evicted

    def drain(self) -> list[ProvNode]:
        out = list(self._nodes.values())
        self._nodes.clear()
        return out

    def __len__(self):
        return len(self._nodes)

    def __contains__(self, node_id: NodeId):
        return node_id in self._nodes

    def __iter__(self):
        return iter(self._nodes.values())


class StreamMerger:
    """Multi-producer, single-consumer k-way merge honoring publish ordering."""

    def __init__(self, policy: MergePolicy | None = None):
        self.policy = policy or MergePolicy()
        self.lanes: dict[Hashable, LaneBuffer] = {}
        self.live_nodes: set[NodeId] = set()
        self.packet_pending: set[NodeId] = set()  # packet published, in-edge not yet
        self.warnings: list[dict] = []
        self.quarantined: list[Element] = []
        self.emitted = 0

    def lane(self, key: Hashable, now: float = 0.0) -> LaneBuffer:
        lb = self.lanes.get(key)
        if lb is None:
            lb = self.lanes[key] = LaneBuffer(key, now)
        return lb

    def push(self, key: Hashable, element: Element, now: float = 0.0):
        self.lane(key, now).push(element, now)

    def close(self, key: Hashable):
        self.lane(key).closed = True

    def close_all(self):
        for lb in self.lanes.values():
            lb.closed = True

    # -- emission --------------------------------------------------------

    def _blocked(self, element: Element) -> bool:
        if not isinstance(element, ProvEdge):
            return False
        src = element.src
        if src not in self.live_nodes:
            return True
        # Receive must wait for the whole send subgraph, not just the node.
        return (element.kind is RelationKind.RECEIVE
                and src in self.packet_pending)

    def _note(self, element: Element):
        if isinstance(element, ProvNode):
            self.live_nodes.add(element.id)
            if element.kind is NodeKind.PACKET:
                self.packet_pending.add(element.id)
        elif isinstance(element, ProvEdge):
            self.packet_pending.discard(element.dst)
            if element.kind is RelationKind.VERSION:
                self.live_nodes.discard(element.src)
        else:
            self.live_nodes.discard(element.node)
            self.packet_pending.discard(element.node)

    def drain(self, now: float | None = None) -> list[Element]:
        """Emit every releasable element in (edge_id, lane) order.

        ``now=None`` is the final drain: all lanes are treated as closed and
        still-blocked heads are quarantined instead of held.
        """
        final = now is None
        clock = math.inf if final else now
        threshold = self.policy.qos_threshold
        gated = {k for k, lb in self.lanes.items()
                 if not final and lb.active(clock, threshold)}
        min_wm = min((self.lanes[k].watermark for k in gated), default=math.inf)

        out: list[Element] = []
        while True:
            best_key = None
            best_rank = None
            blocked_heads = []
            for key, lb in self.lanes.items():
                el = lb.head()
                if el is None:
                    continue
                if key in gated and el.edge_id > min_wm:
                    continue
                if self._blocked(el):
                    if lb.blocked_since is None:
                        lb.blocked_since = clock if not final else math.inf
                    blocked_heads.append((el.edge_id, key, lb))
                    continue
                rank = (el.edge_id, _lane_rank(key))
                if best_rank is None or rank < best_rank:
                    best_rank, best_key = rank, key
            if best_key is not None:
                el = self.lanes[best_key].pop()
                self._note(el)
                self.emitted += 1
                out.append(el)
                continue
            # No progress: expire blocked heads past the QoS horizon.
            expired = [(eid, key, lb) for eid, key, lb in blocked_heads
                       if final or clock - lb.blocked_since > threshold]
            if not expired:
                break
            eid, key, lb = min(expired, key=lambda t: (t[0], _lane_rank(t[1])))
            el = lb.pop()
            self.quarantined.append(el)
            self.warnings.append({
                "kind": "dangling_packet",
                "lane": key if isinstance(key, int) else list(key),
                "edge_id": eid,
                "origin": list(el.src) if isinstance(el, ProvEdge) else None,
            })
        return out

    def stats(self) -> dict:
        return {
            "emitted": self.emitted,
            "live_nodes": len(self.live_nodes),
            "quarantined": len(self.quarantined),
            "lanes": {str(k): {"watermark": lb.watermark,
                               "buffered": lb.buffered(),
                               "closed": lb.closed}
                      for k, lb in self.lanes.items()},
        }


def _lane_rank(key: Hashable):
    # Normalize int and tuple lane keys into one comparable form.
    return key if isinstance(key, tuple) else (key,)


def cross_host_merge(streams: Mapping[int, Iterable[Element]],
                     policy: MergePolicy | None = None
                     ) -> tuple[list[Element], list[dict]]:
    """Merge per-machine streams into one order respecting packet causality.

    Every packet's send subgraph precedes the matching receive subgraph;
    otherwise ordering is (edge_id, machine_id, lane) lexicographic.  A
    receive whose origin packet is missing is quarantined and reported.
    """
    merger = StreamMerger(policy)
    for machine in sorted(streams):
        for el in streams[machine]:
            merger.push((machine, el.lane), el)
    merger.close_all()
    out = merger.drain()
    return out, merger.warnings
