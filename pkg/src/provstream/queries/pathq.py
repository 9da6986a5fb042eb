"""Path-property primitives reduced to single-pass label propagation.

Five query shapes over directed paths A => B:

  q1  some path from A reaches B
  q2  every path from A to B passes through v (as an interior vertex)
  q3  no path from A to B contains v
  q4  nothing is reachable from both of two flow sources
  q5  every vertex of type T on any A-to-B path satisfies a property

Each reduces to one or two label bits.  Because every in-edge of a vertex is
processed before its out-edges, a vertex label is an exact existential over
the full path set, so the streaming answers coincide with exhaustive path
enumeration; an empty path set makes the universally quantified queries
(q2, q3, q5) vacuously true.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field

from ..engine import QueryModule
from ..model import NodeKind, ProvEdge, ProvNode
from .lps import NodeSelector


@dataclass(frozen=True)
class PropertyPredicate:
    """P(v): glob patterns every named attribute must match."""

    attr_globs: tuple[tuple[str, str], ...] = ()

    def holds(self, node: ProvNode) -> bool:
        for key, pattern in self.attr_globs:
            value = node.attributes.get(key)
            if value is None or not fnmatch.fnmatchcase(str(value), pattern):
                return False
        return True


@dataclass
class PathQuerySpec:
    which: str                       # "q1".."q5"
    a: NodeSelector
    b: NodeSelector
    v: NodeSelector | None = None    # q2, q3
    type_t: NodeKind | None = None   # q5
    prop: PropertyPredicate = field(default_factory=PropertyPredicate)

    def __post_init__(self):
        if self.which not in {"q1", "q2", "q3", "q4", "q5"}:
            raise ValueError(f"unknown path query {self.which!r}")
        if self.which in {"q2", "q3"} and self.v is None:
            raise ValueError(f"{self.which} needs a v selector")
        if self.which == "q5" and self.type_t is None:
            raise ValueError("q5 needs a vertex type")


@dataclass
class PathQueryResult:
    which: str
    value: bool
    witness: int | None
    vacuous: bool
    unresolved: tuple[str, ...]

    def to_record(self) -> dict:
        return {"which": self.which, "value": self.value, "witness": self.witness,
                "vacuous": self.vacuous, "unresolved": list(self.unresolved)}


class PathQuery(QueryModule):
    """One registered instance evaluates one PathQuerySpec over the stream."""

    label_bits_needed = 2

    def __init__(self, spec: PathQuerySpec, name: str | None = None):
        self.spec = spec
        self.name = name or f"path-{spec.which}"
        self.witness: int | None = None
        self.falsified = False
        self.satisfied = False
        self.b_reached = False
        self.a_resolved = False
        self.b_resolved = False
        self.v_resolved = spec.v is None

    def init(self, ctx):
        super().init(ctx)
        self.reach_bit, self.aux_bit = ctx.bits

    # -- helpers -------------------------------------------------------------

    def _fails(self, node: ProvNode) -> bool:
        return node.kind is self.spec.type_t and not self.spec.prop.holds(node)

    def _seed(self, node: ProvNode, edge_id: int):
        ctx = self.ctx
        spec = self.spec
        scratch = node.scratch
        if spec.v is not None and spec.v.matches(node):
            self.v_resolved = True
        if spec.a.matches(node):
            self.a_resolved = True
            if not ctx.has_label(scratch, self.reach_bit):
                ctx.add_label(scratch, self.reach_bit)
                if spec.which == "q5" and self._fails(node):
                    ctx.add_label(scratch, self.aux_bit)
        if spec.which == "q4" and spec.b.matches(node):
            self.b_resolved = True
            ctx.add_label(scratch, self.aux_bit)
        elif spec.b.matches(node):
            self.b_resolved = True

    def _check_conflict(self, node: ProvNode, edge_id: int | None):
        ctx = self.ctx
        if (ctx.has_label(node.scratch, self.reach_bit)
                and ctx.has_label(node.scratch, self.aux_bit)
                and not self.falsified):
            self.falsified = True
            self.witness = edge_id

    # -- callbacks -----------------------------------------------------------

    def out_edge(self, vertex: ProvNode, edge: ProvEdge):
        ctx = self.ctx
        spec = self.spec
        which = spec.which
        self._seed(vertex, edge.edge_id)
        vs = vertex.scratch
        es = edge.scratch
        has_reach = ctx.has_label(vs, self.reach_bit)
        if which == "q1":
            if has_reach:
                ctx.add_label(es, self.reach_bit)
        elif which == "q2":
            if has_reach:
                ctx.add_label(es, self.reach_bit)
                # An interior occurrence of v blocks the avoiding label.
                blocked = spec.v.matches(vertex) and not spec.a.matches(vertex)
                avoid = (spec.a.matches(vertex)
                         or ctx.has_label(vs, self.aux_bit))
                if avoid and not blocked:
                    ctx.add_label(es, self.aux_bit)
        elif which == "q3":
            if has_reach:
                ctx.add_label(es, self.reach_bit)
                if spec.v.matches(vertex):
                    ctx.add_label(vs, self.aux_bit)
                if ctx.has_label(vs, self.aux_bit):
                    ctx.add_label(es, self.aux_bit)
        elif which == "q4":
            if has_reach:
                ctx.add_label(es, self.reach_bit)
            if ctx.has_label(vs, self.aux_bit):
                ctx.add_label(es, self.aux_bit)
            self._check_conflict(vertex, edge.edge_id)
        elif which == "q5":
            if has_reach:
                ctx.add_label(es, self.reach_bit)
                if ctx.has_label(vs, self.aux_bit):
                    ctx.add_label(es, self.aux_bit)
        return None

    def in_edge(self, edge: ProvEdge, vertex: ProvNode):
        ctx = self.ctx
        spec = self.spec
        which = spec.which
        self._seed(vertex, edge.edge_id)
        vs = vertex.scratch
        es = edge.scratch
        e_reach = ctx.has_label(es, self.reach_bit)
        e_aux = ctx.has_label(es, self.aux_bit)
        if which == "q1":
            if e_reach:
                ctx.add_label(vs, self.reach_bit)
                if spec.b.matches(vertex) and not self.satisfied:
                    self.satisfied = True
                    self.witness = edge.edge_id
        elif which == "q2":
            if e_reach:
                ctx.add_label(vs, self.reach_bit)
            if e_aux:
                ctx.add_label(vs, self.aux_bit)
            if spec.b.matches(vertex):
                if e_reach:
                    self.b_reached = True
                if e_aux and not self.falsified:
                    self.falsified = True
                    self.witness = edge.edge_id
        elif which == "q3":
            if e_reach:
                ctx.add_label(vs, self.reach_bit)
                if spec.v.matches(vertex):
                    ctx.add_label(vs, self.aux_bit)
            if e_aux:
                ctx.add_label(vs, self.aux_bit)
            if spec.b.matches(vertex):
                if e_reach:
                    self.b_reached = True
                if (ctx.has_label(vs, self.reach_bit)
                        and ctx.has_label(vs, self.aux_bit)
                        and not self.falsified):
                    self.falsified = True
                    self.witness = edge.edge_id
        elif which == "q4":
            if e_reach:
                ctx.add_label(vs, self.reach_bit)
            if e_aux:
                ctx.add_label(vs, self.aux_bit)
            self._check_conflict(vertex, edge.edge_id)
        elif which == "q5":
            if e_reach:
                ctx.add_label(vs, self.reach_bit)
                if e_aux or self._fails(vertex):
                    ctx.add_label(vs, self.aux_bit)
                if spec.b.matches(vertex):
                    self.b_reached = True
                    if (e_aux or self._fails(vertex)) and not self.falsified:
                        self.falsified = True
                        self.witness = edge.edge_id
        return None

    def dispose_value(self, element, handle):
        # Vertices that never appear on an edge still count for selector
        # resolution and for q4's both-labels conflict.
        if isinstance(element, ProvNode):
            self._seed(element, edge_id=0)
            if self.spec.which == "q4":
                self._check_conflict(element, None)

    # -- result ----------------------------------------------------------------

    def result(self) -> PathQueryResult:
        which = self.spec.which
        unresolved = tuple(
            name for name, ok in (("a", self.a_resolved), ("b", self.b_resolved),
                                  ("v", self.v_resolved)) if not ok)
        if which == "q1":
            value = self.satisfied
            vacuous = not (self.a_resolved and self.b_resolved)
        elif which == "q4":
            value = not self.falsified
            vacuous = not (self.a_resolved and self.b_resolved)
        else:
            value = not self.falsified
            vacuous = not self.b_reached
        return PathQueryResult(which, value, self.witness, vacuous, unresolved)
