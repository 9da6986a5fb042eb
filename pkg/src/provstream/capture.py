"""Simulated capture layer: system events, hook templates, workload generation.

Events are translated into provenance subgraphs directly at the capture
point, one template per event kind.  Each lane owns an independent
GraphBuilder; an object's events stay on a single lane (children inherit the
parent task's lane, files and sockets belong to the lane that first opened
them), so cross-lane causality exists only through network packets.
"""

from __future__ import annotations

import fnmatch
import random
from dataclasses import dataclass, field
from enum import Enum
from itertools import count
from typing import Iterator

from .errors import MalformedEvent, OrderingViolation, UnknownObject
from .model import (
    Element,
    GraphBuilder,
    NodeId,
    NodeKind,
    ProvEdge,
    ProvNode,
    RelationKind,
    TerminateMarker,
    read_trace,
)


class EventKind(str, Enum):
    READ = "read"
    WRITE = "write"
    OPEN = "open"
    EXEC = "exec"
    FORK = "fork"
    CLONE_THREAD = "clone_thread"
    MMAP = "mmap"
    MSYNC_READ = "msync_read"
    MSYNC_WRITE = "msync_write"
    SEND = "send"
    RECV = "recv"
    SET_XATTR = "set_xattr"
    EXIT = "exit"
    PACKET_OUT = "packet_out"
    PACKET_IN = "packet_in"


@dataclass(slots=True)
class SysEvent:
    lane: int
    seq: int
    kind: EventKind
    subject: int                     # task object_id
    object: int | str | None = None  # object_id, or path for OPEN
    params: dict = field(default_factory=dict)


class HookTranslator:
    """Translates events into graph elements via per-kind templates.

    Templates are total over the event vocabulary.  Shared-state handling is
    conservative: information always flows between tasks and shared states,
    in the direction of the touching operation.
    """

    def __init__(self, lanes: int = 1, machine_id: int = 0, boot_id: int = 0):
        ids = count(1)
        self.builders = [GraphBuilder(lane, machine_id, boot_id, id_allocator=ids)
                         for lane in range(lanes)]
        self.machine_id = machine_id
        self.boot_id = boot_id
        self.path_table: dict[str, int] = {}
        self.shared_for_inode: dict[int, int] = {}
        self.proc_memory: dict[int, int] = {}  # task -> process-memory shared state

    def builder(self, lane: int) -> GraphBuilder:
        if 0 <= lane < len(self.builders):
            return self.builders[lane]
        raise MalformedEvent(f"unknown lane {lane}")

    def bootstrap_task(self, lane: int, attributes=None) -> ProvNode:
        return self.builder(lane).new_object(NodeKind.TASK, attributes or {"uid": 0})

    def bootstrap_socket(self, lane: int, attributes=None) -> ProvNode:
        return self.builder(lane).new_object(NodeKind.SOCKET, attributes or {})

    def translate(self, ev: SysEvent) -> list[Element]:
        b = self.builder(ev.lane)
        kind = ev.kind
        if kind is EventKind.OPEN:
            return self._open(b, ev)
        if kind is EventKind.READ:
            return b.record_flow(self._fileid(ev), ev.subject, RelationKind.READ,
                                 ev.params.get("attrs"))
        if kind is EventKind.WRITE:
            return b.record_flow(ev.subject, self._fileid(ev), RelationKind.WRITE,
                                 ev.params.get("attrs"))
        if kind is EventKind.EXEC:
            return self._exec(b, ev)
        if kind is EventKind.FORK:
            return self._fork(b, ev, RelationKind.FORK, share_memory=False)
        if kind is EventKind.CLONE_THREAD:
            return self._fork(b, ev, RelationKind.CLONE, share_memory=True)
        if kind is EventKind.MMAP:
            return self._mmap(b, ev)
        if kind is EventKind.MSYNC_READ:
            return b.record_flow(self._shared(ev), ev.subject, RelationKind.SHARED_READ)
        if kind is EventKind.MSYNC_WRITE:
            return b.record_flow(ev.subject, self._shared(ev), RelationKind.SHARED_WRITE)
        if kind in (EventKind.SEND, EventKind.PACKET_OUT):
            return self._send(b, ev)
        if kind in (EventKind.RECV, EventKind.PACKET_IN):
            return self._recv(b, ev)
        if kind is EventKind.SET_XATTR:
            return self._set_xattr(b, ev)
        if kind is EventKind.EXIT:
            self.proc_memory.pop(ev.subject, None)
            return b.terminate_object(ev.subject)
        raise MalformedEvent(f"unhandled event kind {kind}")

    # -- templates -----------------------------------------------------------

    def _fileid(self, ev: SysEvent) -> int:
        if isinstance(ev.object, str):
            oid = self.path_table.get(ev.object)
            if oid is None:
                raise UnknownObject(ev.object)
            return oid
        if not isinstance(ev.object, int):
            raise MalformedEvent(f"{ev.kind.value} needs an object id or path")
        return ev.object

    def _objid(self, ev: SysEvent) -> int:
        if not isinstance(ev.object, int):
            raise MalformedEvent(f"{ev.kind.value} needs an object id")
        return ev.object

    def _open(self, b: GraphBuilder, ev: SysEvent) -> list[Element]:
        path = ev.object
        if not isinstance(path, str):
            raise MalformedEvent("open needs a path")
        if path in self.path_table:
            return []
        attrs = {"path": path}
        attrs.update(ev.params.get("attrs", {}))
        node = b.new_object(NodeKind.INODE, attrs)
        self.path_table[path] = node.id.object_id
        return [node]

    def _exec(self, b: GraphBuilder, ev: SysEvent) -> list[Element]:
        updates = ev.params.get("task_updates")
        # A credential change (setuid exec) is a new principal state.
        return b.record_flow(self._fileid(ev), ev.subject, RelationKind.EXEC,
                             force_version=bool(updates), sink_attr_updates=updates)

    def _fork(self, b: GraphBuilder, ev: SysEvent, kind: RelationKind,
              share_memory: bool) -> list[Element]:
        parent = b.live.get(ev.subject)
        if parent is None:
            raise UnknownObject(ev.subject)
        out: list[Element] = []
        shared = None
        if share_memory:
            shared = self.proc_memory.get(ev.subject)
            if shared is None:
                node = b.new_object(NodeKind.SHARED_STATE,
                                    {"backing": "process_memory"})
                shared = node.id.object_id
                self.proc_memory[ev.subject] = shared
                out.append(node)
        child_attrs = dict(parent.attributes)
        child_attrs.update(ev.params.get("attrs", {}))
        child = b.new_object(NodeKind.TASK, child_attrs)
        out.append(child)
        out.extend(b.record_flow(ev.subject, child.id.object_id, kind))
        if share_memory:
            # Process memory is a shared state between the two threads.
            self.proc_memory[child.id.object_id] = shared
            out.extend(b.record_flow(ev.subject, shared, RelationKind.SHARED_WRITE))
            out.extend(b.record_flow(shared, child.id.object_id,
                                     RelationKind.SHARED_READ))
        return out

    def _mmap(self, b: GraphBuilder, ev: SysEvent) -> list[Element]:
        inode = self._fileid(ev)
        if inode in self.shared_for_inode:
            return []
        node = b.new_object(NodeKind.SHARED_STATE, {"backing": "inode",
                                                    "inode": inode})
        self.shared_for_inode[inode] = node.id.object_id
        out: list[Element] = [node]
        # Mapped file content becomes visible through the shared state.
        out.extend(b.record_flow(inode, node.id.object_id, RelationKind.SHARED_WRITE))
        return out

    def _shared(self, ev: SysEvent) -> int:
        if ev.object is None:
            shared = self.proc_memory.get(ev.subject)
            if shared is None:
                raise MalformedEvent("msync: task has no process-memory state")
            return shared
        inode = self._fileid(ev)
        shared = self.shared_for_inode.get(inode)
        if shared is None:
            raise MalformedEvent(f"msync on unmapped inode {inode}")
        return shared

    def _send(self, b: GraphBuilder, ev: SysEvent) -> list[Element]:
        socket = self._objid(ev)
        out = b.record_flow(ev.subject, socket, RelationKind.SEND)
        packet = b.new_transient_object(NodeKind.PACKET, {"socket": socket})
        out.append(packet)
        out.extend(b.record_flow_to_foreign(socket, packet.id, RelationKind.SEND))
        return out

    def _recv(self, b: GraphBuilder, ev: SysEvent) -> list[Element]:
        socket = self._objid(ev)
        packet = ev.params.get("packet")
        if packet is None:
            raise MalformedEvent("recv needs params['packet']")
        if not isinstance(packet, NodeId):
            packet = NodeId(*packet)
        out = b.record_foreign_flow(packet, socket, RelationKind.RECEIVE)
        out.extend(b.record_flow(socket, ev.subject, RelationKind.RECEIVE))
        # A packet is never referenced again once received.
        out.extend(b.emit_terminate_for(packet))
        return out

    def _set_xattr(self, b: GraphBuilder, ev: SysEvent) -> list[Element]:
        inode = self._fileid(ev)
        name = ev.params.get("name", "user.attr")
        value = ev.params.get("value", "")
        xattr = b.new_object(NodeKind.XATTR_VALUE, {"name": name, "value": value})
        out: list[Element] = [xattr]
        out.extend(b.record_flow(ev.subject, xattr.id.object_id, RelationKind.WRITE))
        out.extend(b.record_flow(xattr.id.object_id, inode, RelationKind.SET_ATTR,
                                 force_version=True,
                                 sink_attr_updates={f"xattr.{name}": str(value)}))
        out.extend(b.terminate_object(xattr.id.object_id))
        return out


# --- workload generation -----------------------------------------------------


@dataclass
class WorkloadConfig:
    n_tasks: int = 8
    n_files: int = 32
    n_sockets: int = 8
    event_count: int = 1000
    confidential_paths: tuple[str, ...] = ("/secret/*",)
    seed: int = 1
    lanes: int = 1
    exfiltration_rate: float = 0.0


@dataclass
class WorkloadRun:
    """A generated workload: the event log, its translation, and ground truth."""

    config: WorkloadConfig
    events: list[SysEvent]
    elements: list[Element]
    sidecar: list[dict]


_WEIGHTS = [
    (EventKind.READ, 26),
    (EventKind.WRITE, 26),
    (EventKind.EXEC, 3),
    (EventKind.FORK, 2),
    (EventKind.CLONE_THREAD, 1),
    (EventKind.MMAP, 2),
    (EventKind.MSYNC_READ, 3),
    (EventKind.MSYNC_WRITE, 3),
    (EventKind.SEND, 8),
    (EventKind.RECV, 8),
    (EventKind.SET_XATTR, 2),
    (EventKind.EXIT, 2),
]


class _Generator:
    def __init__(self, config: WorkloadConfig):
        self.cfg = config
        self.rng = random.Random(config.seed)
        self.tr = HookTranslator(lanes=config.lanes)
        self.events: list[SysEvent] = []
        self.elements: list[Element] = []
        self.sidecar: list[dict] = []
        self.seq = [0] * config.lanes
        self.tasks: dict[int, int] = {}          # task id -> lane
        self.files: list[list[int]] = [[] for _ in range(config.lanes)]
        self.mapped: list[list[int]] = [[] for _ in range(config.lanes)]
        self.connections: list[tuple[int, int, int, int]] = []  # src_sock, src_lane, dst_sock, dst_lane
        self.inflight: list[tuple[int, NodeId, int]] = []       # dst_sock, packet, dst_lane
        self.next_path = count()
        self.next_uid = count(1000)
        self.plants = 0

    def emit(self, kind: EventKind, subject: int, object=None, **params) -> list[Element]:
        lane = self.tasks[subject]
        ev = SysEvent(lane, self.seq[lane], kind, subject, object, params)
        self.seq[lane] += 1
        els = self.tr.translate(ev)
        self.events.append(ev)
        self.elements.extend(els)
        return els

    def bootstrap(self):
        cfg = self.cfg
        for i in range(cfg.n_tasks):
            lane = i % cfg.lanes
            node = self.tr.bootstrap_task(lane, {"uid": next(self.next_uid),
                                                 "mem_usage": 4096})
            self.tasks[node.id.object_id] = lane
            self.elements.append(node)
        sockets: list[list[int]] = [[] for _ in range(cfg.lanes)]
        for i in range(max(cfg.n_sockets, cfg.lanes)):
            lane = i % cfg.lanes
            node = self.tr.bootstrap_socket(lane)
            sockets[lane].append(node.id.object_id)
            self.elements.append(node)
        for lane in range(cfg.lanes):
            for s in sockets[lane]:
                dst_lane = self.rng.randrange(cfg.lanes)
                dst = self.rng.choice(sockets[dst_lane])
                self.connections.append((s, lane, dst, dst_lane))
        for i in range(cfg.n_files):
            lane = i % cfg.lanes
            task = self.rng.choice(self._lane_tasks(lane))
            path = f"/data/f{next(self.next_path)}"
            self.emit(EventKind.OPEN, task, path)
            self.files[lane].append(self.tr.path_table[path])

    def _lane_tasks(self, lane: int) -> list[int]:
        return [t for t, l in self.tasks.items() if l == lane]

    def body(self):
        cfg = self.cfg
        target = max(cfg.n_tasks, cfg.lanes)
        while len(self.events) < cfg.event_count:
            lane = self.rng.randrange(cfg.lanes)
            tasks = self._lane_tasks(lane)
            if not tasks:
                continue
            task = self.rng.choice(tasks)
            kind = self._pick_kind(target)
            if kind is EventKind.SEND and self.rng.random() < cfg.exfiltration_rate:
                self.plant(lane)
                continue
            self._one(kind, lane, task, target)

    def _pick_kind(self, target: int) -> EventKind:
        kinds = [k for k, _ in _WEIGHTS]
        weights = []
        live = len(self.tasks)
        for k, w in _WEIGHTS:
            if k is EventKind.FORK:
                w = 4 if live < target else 1
            elif k is EventKind.EXIT:
                w = 4 if live > target else (0 if live <= max(1, target // 2) else 1)
            elif k is EventKind.RECV and not self.inflight:
                w = 0
            weights.append(w)
        return self.rng.choices(kinds, weights)[0]

    def _one(self, kind: EventKind, lane: int, task: int, target: int):
        rng = self.rng
        if kind in (EventKind.READ, EventKind.EXEC) and self.files[lane]:
            params = {}
            if kind is EventKind.EXEC and rng.random() < 0.2:
                params = {"task_updates": {"uid": next(self.next_uid),
                                           "mem_usage": rng.randrange(4096, 1 << 20)}}
            self.emit(kind, task, rng.choice(self.files[lane]), **params)
        elif kind is EventKind.WRITE and self.files[lane]:
            self.emit(kind, task, rng.choice(self.files[lane]))
        elif kind is EventKind.SET_XATTR and self.files[lane]:
            self.emit(kind, task, rng.choice(self.files[lane]),
                      name="user.tag", value=str(rng.randrange(100)))
        elif kind is EventKind.MMAP and self.files[lane]:
            inode = rng.choice(self.files[lane])
            self.emit(kind, task, inode)
            if inode not in self.mapped[lane]:
                self.mapped[lane].append(inode)
        elif kind is EventKind.MSYNC_READ and self.mapped[lane]:
            self.emit(kind, task, rng.choice(self.mapped[lane]))
        elif kind is EventKind.MSYNC_WRITE and self.mapped[lane]:
            self.emit(kind, task, rng.choice(self.mapped[lane]))
        elif kind is EventKind.FORK or kind is EventKind.CLONE_THREAD:
            els = self.emit(kind, task)
            child = next(e for e in els
                         if isinstance(e, ProvNode) and e.kind is NodeKind.TASK)
            self.tasks[child.id.object_id] = lane
        elif kind is EventKind.EXIT and len(self._lane_tasks(lane)) > 1:
            self.emit(kind, task)
            del self.tasks[task]
        elif kind is EventKind.SEND:
            conns = [c for c in self.connections if c[1] == lane]
            if conns:
                src_sock, _, dst_sock, dst_lane = rng.choice(conns)
                els = self.emit(kind, task, src_sock)
                packet = next(e for e in els
                              if isinstance(e, ProvNode) and e.kind is NodeKind.PACKET)
                self.inflight.append((dst_sock, packet.id, dst_lane))
        elif kind is EventKind.RECV and self.inflight:
            dst_sock, packet, dst_lane = self.inflight.pop(0)
            receivers = self._lane_tasks(dst_lane)
            if receivers:
                self.emit(EventKind.RECV, rng.choice(receivers), dst_sock,
                          packet=tuple(packet))
        # infeasible picks fall through silently; the loop retries

    def plant(self, lane: int):
        """Scripted leak: confidential read flows (maybe indirectly) to a send."""
        rng = self.rng
        cfg = self.cfg
        plant_id = self.plants
        self.plants += 1
        parent = rng.choice(self._lane_tasks(lane))
        pattern = cfg.confidential_paths[plant_id % len(cfg.confidential_paths)]
        conf_path = pattern.replace("*", "key")
        spawned = []

        els = self.emit(EventKind.FORK, parent)
        tp = next(e for e in els
                  if isinstance(e, ProvNode) and e.kind is NodeKind.TASK)
        self.tasks[tp.id.object_id] = lane
        spawned.append(tp.id.object_id)

        self.emit(EventKind.OPEN, tp.id.object_id, conf_path)
        conf_oid = self.tr.path_table[conf_path]
        conf_ver = self.tr.builder(lane).live[conf_oid].current_version
        self.emit(EventKind.READ, tp.id.object_id, conf_oid)
        source = NodeId(conf_oid, self.tr.machine_id, self.tr.boot_id, conf_ver)

        sender = tp.id.object_id
        if rng.random() < 0.5:
            # Indirect: stage through a private scratch file and a second task.
            tmp_path = f"/tmp/plant{plant_id}"
            self.emit(EventKind.OPEN, tp.id.object_id, tmp_path)
            tmp_oid = self.tr.path_table[tmp_path]
            self.emit(EventKind.WRITE, tp.id.object_id, tmp_oid)
            els = self.emit(EventKind.FORK, parent)
            tq = next(e for e in els
                      if isinstance(e, ProvNode) and e.kind is NodeKind.TASK)
            self.tasks[tq.id.object_id] = lane
            spawned.append(tq.id.object_id)
            self.emit(EventKind.READ, tq.id.object_id, tmp_oid)
            sender = tq.id.object_id

        sock = self.tr.bootstrap_socket(lane, {"private": True})
        self.elements.append(sock)
        els = self.emit(EventKind.SEND, sender, sock.id.object_id)
        send_ev = self.events[-1]
        packet = next(e for e in els
                      if isinstance(e, ProvNode) and e.kind is NodeKind.PACKET)
        for t in spawned:
            self.emit(EventKind.EXIT, t)
            del self.tasks[t]
        self.sidecar.append({
            "plant_id": plant_id,
            "source_node": list(source),
            "sink_event": {"lane": send_ev.lane, "seq": send_ev.seq,
                           "socket": sock.id.object_id,
                           "packet": list(packet.id)},
        })

    def epilogue(self):
        for task in sorted(self.tasks):
            self.emit(EventKind.EXIT, task)
        self.tasks.clear()
        for b in self.tr.builders:
            for oid in sorted(b.live):
                self.elements.extend(b.terminate_object(oid))


def generate_workload(config: WorkloadConfig) -> WorkloadRun:
    """Deterministic pseudo-random event stream plus its provenance translation."""
    gen = _Generator(config)
    gen.bootstrap()
    gen.body()
    gen.epilogue()
    return WorkloadRun(config, gen.events, gen.elements, gen.sidecar)


# --- canned scenarios ---------------------------------------------------------


def confidential_chain(machine_id: int = 0) -> tuple[list[Element], dict]:
    """Secret file -> task -> scratch file -> task -> socket, four flows.

    The canonical leak chain used in docs and tests: P reads F (r1), P writes
    G (w2), Q reads G (r3), Q writes the socket S (w4).
    """
    b = GraphBuilder(machine_id=machine_id)
    f = b.new_object(NodeKind.INODE, {"path": "/secret/report"})
    p = b.new_object(NodeKind.TASK, {"uid": 1000})
    g = b.new_object(NodeKind.INODE, {"path": "/tmp/scratch"})
    q = b.new_object(NodeKind.TASK, {"uid": 1001})
    s = b.new_object(NodeKind.SOCKET, {})
    elements: list[Element] = [f, p, g, q, s]
    elements += b.record_flow(f.id.object_id, p.id.object_id, RelationKind.READ)
    elements += b.record_flow(p.id.object_id, g.id.object_id, RelationKind.WRITE)
    elements += b.record_flow(g.id.object_id, q.id.object_id, RelationKind.READ)
    elements += b.record_flow(q.id.object_id, s.id.object_id, RelationKind.WRITE)
    info = {"source": f.id, "sink": s.id,
            "chain": [f.id, p.id, g.id, q.id, s.id]}
    return elements, info


def two_host_exchange() -> dict[int, list[Element]]:
    """One packet crossing two machines; streams keyed by machine id."""
    streams: dict[int, list[Element]] = {}
    sender = HookTranslator(machine_id=0)
    t0 = sender.bootstrap_task(0)
    s0 = sender.bootstrap_socket(0)
    out = [t0, s0]
    ev = SysEvent(0, 0, EventKind.PACKET_OUT, t0.id.object_id, s0.id.object_id)
    els = sender.translate(ev)
    packet = next(e for e in els
                  if isinstance(e, ProvNode) and e.kind is NodeKind.PACKET)
    out.extend(els)
    streams[0] = out

    receiver = HookTranslator(machine_id=1)
    t1 = receiver.bootstrap_task(0)
    s1 = receiver.bootstrap_socket(0)
    inn = [t1, s1]
    ev = SysEvent(0, 0, EventKind.PACKET_IN, t1.id.object_id, s1.id.object_id,
                  {"packet": tuple(packet.id)})
    inn.extend(receiver.translate(ev))
    streams[1] = inn
    return streams


# --- replay -------------------------------------------------------------------


def validate_stream(elements, *, per_lane: bool = True) -> Iterator[Element]:
    """Yield elements while checking the publish-ordering contract.

    Per lane: edge_ids contiguous from 1, nodes published exactly once and
    before any referencing edge, and no in-edge after an out-edge for the
    same vertex.  Receive edges may reference packets from a foreign lane.
    """
    last: dict[int, int] = {}
    nodes: dict[int, set[NodeId]] = {}
    out_seen: dict[int, set[NodeId]] = {}
    for el in elements:
        lane = el.lane
        if per_lane:
            prev = last.get(lane, 0)
            if el.edge_id != prev + 1:
                raise OrderingViolation(
                    f"lane {lane}: edge_id {el.edge_id} after {prev}",
                    edge_id=el.edge_id)
            last[lane] = el.edge_id
        known = nodes.setdefault(lane, set())
        outs = out_seen.setdefault(lane, set())
        if isinstance(el, ProvNode):
            if el.id in known:
                raise OrderingViolation(f"node {el.id} published twice",
                                        edge_id=el.edge_id)
            known.add(el.id)
        elif isinstance(el, ProvEdge):
            if el.src not in known and el.kind is not RelationKind.RECEIVE:
                raise OrderingViolation(
                    f"edge {el.edge_id} references unpublished source {el.src}",
                    edge_id=el.edge_id)
            if el.dst not in known:
                raise OrderingViolation(
                    f"edge {el.edge_id} references unpublished sink {el.dst}",
                    edge_id=el.edge_id)
            if el.dst in outs:
                raise OrderingViolation(
                    f"in-edge {el.edge_id} for {el.dst} after an out-edge",
                    edge_id=el.edge_id)
            outs.add(el.src)
        yield el


def replay(path) -> Iterator[Element]:
    """Stream a trace file back, enforcing the ordering invariants."""
    return validate_stream(read_trace(path))
