"""Hash-chain signing of the provenance graph, with local verification.

Each vertex gets a digest over its canonical serialization concatenated with
the sorted digests of its provenance parents, then a keyed MAC over the
digest.  Verifying one vertex needs only that vertex and its parents'
entries, so tampering with a stored graph is caught at, or immediately
downstream of, the altered element without re-walking everything.
"""

from __future__ import annotations

import hashlib
import hmac
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

from ..engine import QueryModule
from ..errors import KeyMissing
from ..model import Element, NodeId, ProvEdge, ProvNode

DIGEST_SIZE = 32


def canonical_node_bytes(node: ProvNode) -> bytes:
    return json.dumps(
        {"id": list(node.id), "kind": node.kind.value, "attributes": node.attributes},
        sort_keys=True, separators=(",", ":")).encode()


def chain_digest(node: ProvNode, parent_digests: Iterable[bytes]) -> bytes:
    h = hashlib.sha256(canonical_node_bytes(node))
    for d in sorted(parent_digests):
        h.update(d)
    return h.digest()


@dataclass(slots=True)
class HashChainEntry:
    node: NodeId
    digest: bytes
    signature: bytes

    def to_record(self) -> dict:
        return {"node": list(self.node), "digest": self.digest.hex(),
                "signature": self.signature.hex()}

    @classmethod
    def from_record(cls, rec: dict) -> "HashChainEntry":
        return cls(NodeId(*rec["node"]), bytes.fromhex(rec["digest"]),
                   bytes.fromhex(rec["signature"]))


@dataclass(slots=True)
class _ChainState:
    parents: list[bytes] = field(default_factory=list)
    digest: bytes | None = None


class HashChainQuery(QueryModule):
    name = "sign"

    def __init__(self, key: bytes,
                 sink: Callable[[HashChainEntry], None] | None = None):
        if not key:
            raise KeyMissing("hash chain signing needs a key")
        self.key = key
        self.sink = sink
        self.entries: list[HashChainEntry] = []

    def _state(self, vertex: ProvNode) -> _ChainState:
        st = self.ctx.get_value(vertex.scratch)
        if st is None:
            st = _ChainState()
            self.ctx.add_value(vertex.scratch, st)
        return st

    def _finalize(self, vertex: ProvNode, st: _ChainState) -> bytes:
        digest = chain_digest(vertex, st.parents)
        st.digest = digest
        entry = HashChainEntry(vertex.id, digest,
                               hmac.new(self.key, digest, hashlib.sha256).digest())
        if self.sink is not None:
            self.sink(entry)
        else:
            self.entries.append(entry)
        return digest

    def in_edge(self, edge: ProvEdge, vertex: ProvNode):
        digest = self.ctx.get_value(edge.scratch)
        if digest is not None:
            self._state(vertex).parents.append(digest)
        return None

    def out_edge(self, vertex: ProvNode, edge: ProvEdge):
        st = self._state(vertex)
        if st.digest is None:
            self._finalize(vertex, st)
        self.ctx.add_value(edge.scratch, st.digest)
        return None

    def dispose_value(self, element, handle):
        # Vertices with no out-edges are finalized at garbage collection.
        if isinstance(element, ProvNode):
            st = handle if handle is not None else _ChainState()
            if st.digest is None:
                self._finalize(element, st)


@dataclass
class VerifyFinding:
    node: NodeId
    reason: str  # "digest_mismatch" | "bad_signature" | "missing_entry" | "missing_node"


@dataclass
class VerifyReport:
    ok: bool
    checked: int
    first_bad: NodeId | None
    findings: list[VerifyFinding]

    def to_record(self) -> dict:
        return {"ok": self.ok, "checked": self.checked,
                "first_bad": list(self.first_bad) if self.first_bad else None,
                "findings": [{"node": list(f.node), "reason": f.reason}
                             for f in self.findings]}


def verify_chain(elements: Iterable[Element], entries: Iterable[HashChainEntry],
                 key: bytes) -> VerifyReport:
    """Recompute every vertex digest from the stored graph and entry log.

    Verification is vertex-local: a vertex needs only its own stored bytes
    and its parents' logged digests.  Findings are reported in entry-log
    order, earliest first.
    """
    if not key:
        raise KeyMissing("verification needs the signing key")
    nodes: dict[NodeId, ProvNode] = {}
    parents: dict[NodeId, list[NodeId]] = {}
    for el in elements:
        if isinstance(el, ProvNode):
            nodes[el.id] = el
        elif isinstance(el, ProvEdge):
            parents.setdefault(el.dst, []).append(el.src)

    entry_list = list(entries)
    by_node = {e.node: e for e in entry_list}
    findings: list[VerifyFinding] = []
    checked = 0
    for entry in entry_list:
        checked += 1
        node = nodes.get(entry.node)
        if node is None:
            findings.append(VerifyFinding(entry.node, "missing_node"))
            continue
        bad = None
        digests = []
        for p in parents.get(entry.node, ()):
            pe = by_node.get(p)
            if pe is None:
                bad = "missing_entry"
                break
            digests.append(pe.digest)
        if bad is None and chain_digest(node, digests) != entry.digest:
            bad = "digest_mismatch"
        if bad is None and not hmac.compare_digest(
                hmac.new(key, entry.digest, hashlib.sha256).digest(),
                entry.signature):
            bad = "bad_signature"
        if bad is not None:
            findings.append(VerifyFinding(entry.node, bad))
    for nid in nodes:
        if nid not in by_node:
            findings.append(VerifyFinding(nid, "missing_entry"))
    first_bad = findings[0].node if findings else None
    return VerifyReport(not findings, checked, first_bad, findings)


def write_entries(path, entries: Iterable[HashChainEntry]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_record(), separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_entries(path) -> list[HashChainEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(HashChainEntry.from_record(json.loads(line)))
    return out
