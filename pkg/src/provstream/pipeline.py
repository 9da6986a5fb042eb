"""Wires capture -> merge -> engine and fans results out to files.

The pipeline is the single consumer: it feeds lane-tagged elements into the
merger, walks the merged order, keeps the vertex map current, dispatches
edges through the query stack, and applies the GC rule after each element.
The clock is logical (elements pushed), so a fixed input yields bytewise
identical outputs.
"""

from __future__ import annotations

import json
import time
from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .capture import WorkloadConfig
from .engine import Mode, QueryEngine, QueryModule, NilQuery, VerdictRecord
from .errors import OrderingViolation, ProvStreamError
from .merge import MergePolicy, StreamMerger, VertexMap
from .model import (
    Element,
    NodeKind,
    ProvEdge,
    ProvNode,
    QueryScratch,
    TerminateMarker,
)
from .queries.lps import LossPreventionQuery, LpsConfig, NodeSelector
from .queries.ordercheck import OrderAssertQuery
from .queries.pathq import PathQuery, PathQuerySpec, PropertyPredicate
from .queries.sign import HashChainQuery
from .queries.structid import FeatureCsvWriter, StructuralIdentityQuery


@dataclass
class PipelineConfig:
    mode: Mode = Mode.DETECT
    qos_threshold: float = 4096.0
    drain_every: int = 4096
    vm_sample_every: int = 0  # 0 disables vertex-map size sampling
    check_ordering: bool = True
    alerts_path: str | None = None
    features_path: str | None = None
    entries_path: str | None = None
    metrics_path: str | None = None
    timing_hook: Callable[[ProvEdge, int], None] | None = None


@dataclass
class PipelineResult:
    edges: int = 0
    elements: int = 0
    deny_count: int = 0
    alerts: int = 0
    verdicts: list[VerdictRecord] = field(default_factory=list)
    queries: dict[str, QueryModule] = field(default_factory=dict)
    vm_samples: list[tuple[int, int]] = field(default_factory=list)
    vm_peak: int = 0
    vm_final: int = 0
    merge_warnings: list[dict] = field(default_factory=list)
    path_results: list[dict] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def exit_code(self) -> int:
        return 2 if self.deny_count else 0


def run_pipeline(elements: Iterable[Element], queries: list[QueryModule],
                 config: PipelineConfig | None = None) -> PipelineResult:
    cfg = config or PipelineConfig()
    result = PipelineResult()
    t_start = time.perf_counter()

    with ExitStack() as stack:
        alerts_fh = (stack.enter_context(open(cfg.alerts_path, "w"))
                     if cfg.alerts_path else None)

        def sink(rec: VerdictRecord):
            result.verdicts.append(rec)
            if rec.action == "alert":
                result.alerts += 1
            if alerts_fh is not None:
                alerts_fh.write(json.dumps(rec.to_record(), separators=(",", ":")))
                alerts_fh.write("\n")

        engine = QueryEngine(cfg.mode, verdict_sink=sink,
                             check_ordering=cfg.check_ordering)
        for q in queries:
            if cfg.features_path and isinstance(q, StructuralIdentityQuery) \
                    and q.sink is None:
                fh = stack.enter_context(open(cfg.features_path, "w", newline=""))
                q.sink = FeatureCsvWriter(fh, q.depth)
            engine.register(q)
            result.queries[q.name] = q

        metrics_fh = (stack.enter_context(open(cfg.metrics_path, "w"))
                      if cfg.metrics_path else None)
        merger = StreamMerger(MergePolicy(cfg.qos_threshold))
        vm = VertexMap()
        timing = cfg.timing_hook
        clock = 0

        def process(batch: list[Element]):
            for el in batch:
                if type(el) is ProvEdge:
                    src = vm.get(el.src)
                    dst = vm.get(el.dst)
                    if src is None or dst is None:
                        raise OrderingViolation(
                            f"edge {el.edge_id} references a vertex missing from "
                            f"the vertex map", edge_id=el.edge_id)
                    if timing is None:
                        engine.on_edge(src, el, dst)
                    else:
                        t0 = time.perf_counter_ns()
                        engine.on_edge(src, el, dst)
                        timing(el, time.perf_counter_ns() - t0)
                    result.edges += 1
                elif type(el) is ProvNode:
                    vm.add(el)
                for node in vm.gc_after(el):
                    engine.dispose_element(node)

        sample_every = cfg.vm_sample_every
        for el in elements:
            merger.push(el.lane, el, now=clock)
            clock += 1
            if clock % cfg.drain_every == 0:
                process(merger.drain(clock))
                if metrics_fh is not None:
                    rec = {"clock": clock, "vertex_map": len(vm),
                           **merger.stats()}
                    metrics_fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            if sample_every and clock % sample_every == 0:
                result.vm_samples.append((clock, len(vm)))

        merger.close_all()
        process(merger.drain(None))
        result.vm_final = len(vm)
        for node in vm.drain():
            engine.dispose_element(node)
        engine.finish()

        if cfg.entries_path:
            from .queries.sign import write_entries
            for q in queries:
                if isinstance(q, HashChainQuery):
                    write_entries(cfg.entries_path, q.entries)

        result.elements = clock
        result.deny_count = engine.deny_count
        result.vm_peak = vm.peak
        result.merge_warnings = merger.warnings
        for q in queries:
            if isinstance(q, PathQuery):
                result.path_results.append(q.result().to_record())
        result.wall_seconds = time.perf_counter() - t_start
    return result


def reset_scratch(elements: Iterable[Element]):
    """Strip engine state so one generated run can be replayed through
    several pipelines."""
    for el in elements:
        if not isinstance(el, TerminateMarker):
            el.scratch = QueryScratch()


# --- query construction from name[:key=value,...] specs -----------------------


def parse_query_flag(text: str) -> tuple[str, dict[str, str]]:
    name, _, rest = text.partition(":")
    options: dict[str, str] = {}
    if rest:
        for part in rest.split(","):
            key, _, value = part.partition("=")
            if not key or not value:
                raise ValueError(f"bad query option {part!r} in {text!r}")
            options[key] = value
    return name, options


def _selector(options: dict[str, str], prefix: str) -> NodeSelector | None:
    kind = options.get(f"{prefix}_kind")
    path = options.get(f"{prefix}_path")
    if kind is None and path is None:
        return None
    kinds = frozenset({NodeKind(kind)}) if kind else None
    globs = (("path", path),) if path else ()
    return NodeSelector(kinds=kinds, attr_globs=globs)


def build_query(name: str, options: dict[str, str],
                workload: WorkloadConfig | None = None) -> QueryModule:
    """Instantiate a built-in query from CLI-style options."""
    if name == "nil":
        return NilQuery()
    if name == "ordercheck":
        return OrderAssertQuery()
    if name == "lps":
        if "paths" in options:
            patterns = options["paths"].split("|")
        elif workload is not None:
            patterns = list(workload.confidential_paths)
        else:
            raise ValueError("lps needs paths=<glob>|<glob>... or a workload")
        return LossPreventionQuery(LpsConfig.for_paths(patterns))
    if name == "structid":
        return StructuralIdentityQuery(depth=int(options.get("depth", 1)),
                                       gen_width=int(options.get("width", 64)))
    if name == "sign":
        key = options.get("key", "")
        return HashChainQuery(key.encode())
    if name == "path":
        a = _selector(options, "a")
        b = _selector(options, "b")
        if a is None or b is None:
            raise ValueError("path query needs a_/b_ selectors")
        prop = PropertyPredicate(
            ((options["prop_key"], options["prop_glob"]),)
            if "prop_key" in options else ())
        spec = PathQuerySpec(
            which=options.get("which", "q1"), a=a, b=b,
            v=_selector(options, "v"),
            type_t=NodeKind(options["t"]) if "t" in options else None,
            prop=prop)
        return PathQuery(spec)
    raise ValueError(f"unknown query {name!r}")
