"""Loss prevention: propagate a confidential label, alert when it hits a sink.

Sources are picked out by node selectors (kind plus attribute patterns), the
label travels only over the configured relation kinds, and reaching a node of
a sink kind raises an alert (detect mode) or a deny (enforce mode).
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field

from ..engine import Alert, Deny, Mode, QueryModule, Verdict
from ..model import NodeKind, ProvEdge, ProvNode, RelationKind


@dataclass(frozen=True)
class NodeSelector:
    """Matches nodes by kind and glob patterns over attribute values."""

    kinds: frozenset[NodeKind] | None = None
    attr_globs: tuple[tuple[str, str], ...] = ()

    def matches(self, node: ProvNode) -> bool:
        if self.kinds is not None and node.kind not in self.kinds:
            return False
        for key, pattern in self.attr_globs:
            value = node.attributes.get(key)
            if value is None or not fnmatch.fnmatchcase(str(value), pattern):
                return False
        return True

    @classmethod
    def path(cls, pattern: str, kind: NodeKind = NodeKind.INODE) -> "NodeSelector":
        return cls(kinds=frozenset({kind}), attr_globs=(("path", pattern),))


DEFAULT_RELEVANT = frozenset({
    RelationKind.READ, RelationKind.WRITE, RelationKind.VERSION,
    RelationKind.SEND, RelationKind.RECEIVE, RelationKind.SHARED_READ,
    RelationKind.SHARED_WRITE, RelationKind.CREATE, RelationKind.EXEC,
})

DEFAULT_SINKS = frozenset({NodeKind.SOCKET, NodeKind.PACKET})


@dataclass
class LpsConfig:
    sources: tuple[NodeSelector, ...] = ()
    relevant: frozenset[RelationKind] = DEFAULT_RELEVANT
    sinks: frozenset[NodeKind] = DEFAULT_SINKS

    def __post_init__(self):
        for sel in self.sources:
            if sel.kinds is not None and sel.kinds <= self.sinks:
                raise ValueError("source selector lies entirely inside sink kinds")

    @classmethod
    def for_paths(cls, patterns, **kw) -> "LpsConfig":
        return cls(sources=tuple(NodeSelector.path(p) for p in patterns), **kw)


class LossPreventionQuery(QueryModule):
    name = "lps"
    label_bits_needed = 1

    def __init__(self, config: LpsConfig):
        self.config = config

    def init(self, ctx):
        super().init(ctx)
        self.bit = ctx.bits[0]

    def _confidential(self, node: ProvNode) -> bool:
        scratch = node.scratch
        if self.ctx.has_label(scratch, self.bit):
            return True
        for sel in self.config.sources:
            if sel.matches(node):
                self.ctx.add_label(scratch, self.bit)
                return True
        return False

    def out_edge(self, vertex: ProvNode, edge: ProvEdge) -> Verdict:
        if edge.kind in self.config.relevant and self._confidential(vertex):
            self.ctx.add_label(edge.scratch, self.bit)
        return None

    def in_edge(self, edge: ProvEdge, vertex: ProvNode) -> Verdict:
        self._confidential(vertex)
        if not self.ctx.has_label(edge.scratch, self.bit):
            return None
        self.ctx.add_label(vertex.scratch, self.bit)
        if vertex.kind in self.config.sinks:
            payload = {"sink": vertex.id.short(), "sink_kind": vertex.kind.value}
            if self.ctx.mode is Mode.ENFORCE:
                return Deny(payload)
            return Alert(payload)
        return None
