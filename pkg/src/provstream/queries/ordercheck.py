"""Instrumentation query asserting the engine's delivery contract.

Checks, per element, that (a) no vertex receives an in-edge after one of its
out-edges ran, (b) the source's out_edge ran before the destination's
in_edge for the same edge, and (c) edge_ids strictly increase along every
directed path within a lane (ids are lane-local, so path monotonicity resets
where a path crosses lanes through a packet).
"""

from __future__ import annotations

from ..engine import QueryModule
from ..model import ProvEdge, ProvNode


class OrderAssertQuery(QueryModule):
    name = "ordercheck"

    def __init__(self):
        self.violations: list[dict] = []

    def _flag(self, kind: str, edge_id: int):
        self.violations.append({"check": kind, "edge_id": edge_id})

    def _state(self, vertex: ProvNode) -> list:
        st = self.ctx.get_value(vertex.scratch)
        if st is None:
            st = [False, 0]  # saw_out, max path edge_id into this vertex
            self.ctx.add_value(vertex.scratch, st)
        return st

    def out_edge(self, vertex: ProvNode, edge: ProvEdge):
        st = self._state(vertex)
        st[0] = True
        if vertex.lane == edge.lane:
            if edge.edge_id <= st[1]:
                self._flag("path_monotonicity", edge.edge_id)
            carried = st[1] if st[1] > edge.edge_id else edge.edge_id
        else:
            carried = edge.edge_id
        self.ctx.add_value(edge.scratch, carried)
        return None

    def in_edge(self, edge: ProvEdge, vertex: ProvNode):
        carried = self.ctx.get_value(edge.scratch)
        if carried is None:
            self._flag("same_edge_order", edge.edge_id)
            carried = edge.edge_id
        st = self._state(vertex)
        if st[0]:
            self._flag("in_after_out", edge.edge_id)
        if carried > st[1]:
            st[1] = carried
        return None
