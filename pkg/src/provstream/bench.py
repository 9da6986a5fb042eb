"""Latency benchmarks: streaming per-edge cost and the stored-graph contrast."""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field

from .baseline import AncestryProbe, StoredGraphBaseline
from .capture import WorkloadConfig, generate_workload
from .pipeline import PipelineConfig, PipelineResult, build_query, reset_scratch, run_pipeline
from .queries.lps import NodeSelector


@dataclass
class WindowStat:
    end_edge: int
    count: int
    mean_ns: float
    median_ns: float
    p95_ns: float

    def to_record(self) -> dict:
        return {"end_edge": self.end_edge, "count": self.count,
                "mean_ns": round(self.mean_ns, 1),
                "median_ns": self.median_ns, "p95_ns": self.p95_ns}


def _window(end_edge: int, samples: list[int]) -> WindowStat:
    ordered = sorted(samples)
    p95 = ordered[min(len(ordered) - 1, int(0.95 * len(ordered)))]
    return WindowStat(end_edge, len(samples), statistics.fmean(samples),
                      statistics.median(ordered), p95)


@dataclass
class StreamingBenchReport:
    windows: list[WindowStat] = field(default_factory=list)
    total_edges: int = 0
    wall_seconds: float = 0.0
    pipeline: PipelineResult | None = None

    def window_ending_at(self, edge: int) -> WindowStat:
        for w in self.windows:
            if w.end_edge == edge:
                return w
        raise KeyError(f"no window ends at edge {edge}")


def run_streaming_bench(workload: WorkloadConfig, query_names: list[str],
                        window: int, metrics_path: str | None = None
                        ) -> StreamingBenchReport:
    """Median/p95 per-edge processing time per window of ``window`` edges."""
    run = generate_workload(workload)
    report = StreamingBenchReport()
    samples: list[int] = []
    edges = 0

    def timing(edge, ns):
        nonlocal edges
        edges += 1
        samples.append(ns)
        if len(samples) == window:
            report.windows.append(_window(edges, samples))
            samples.clear()

    queries = [build_query(n, {}, workload) for n in query_names]
    cfg = PipelineConfig(timing_hook=timing, metrics_path=metrics_path)
    t0 = time.perf_counter()
    report.pipeline = run_pipeline(run.elements, queries, cfg)
    report.wall_seconds = time.perf_counter() - t0
    if samples:
        report.windows.append(_window(edges, samples))
    report.total_edges = edges
    return report


def run_stored_baseline(workload: WorkloadConfig, checkpoints: list[int],
                        probes: int = 3) -> list[dict]:
    """Ancestry-query latency at increasing stored-graph sizes.

    Returns one record per checkpoint with the median probe latency; latency
    grows with the accumulated graph because every query re-traverses it.
    """
    run = generate_workload(workload)
    sources = tuple(NodeSelector.path(p) for p in workload.confidential_paths)
    base = StoredGraphBaseline(sources)
    pending = sorted(checkpoints)
    out = []
    for el in run.elements:
        base.ingest(el)
        if pending and base.edges >= pending[0]:
            pending.pop(0)
            results = [base.ancestry_query() for _ in range(probes)]
            out.append({
                "edges": base.edges,
                "visited": results[0].visited,
                "median_seconds": statistics.median(r.seconds for r in results),
            })
    return out


def run_cost_comparison(workload: WorkloadConfig, sign_key: str = "bench-key",
                        repeats: int = 1) -> dict[str, float]:
    """Mean per-event pipeline cost with no query, nil, lps, and sign."""
    run = generate_workload(workload)
    events = max(1, len(run.events))
    costs: dict[str, float] = {}
    for name in ("none", "nil", "lps", "sign"):
        best = None
        for _ in range(repeats):
            reset_scratch(run.elements)
            if name == "none":
                queries = []
            elif name == "sign":
                queries = [build_query("sign", {"key": sign_key}, workload)]
            else:
                queries = [build_query(name, {}, workload)]
            t0 = time.perf_counter()
            run_pipeline(run.elements, queries, PipelineConfig())
            elapsed = time.perf_counter() - t0
            best = elapsed if best is None else min(best, elapsed)
        costs[name] = best / events
    return costs


def write_window_metrics(path: str, report: StreamingBenchReport):
    with open(path, "w", encoding="utf-8") as fh:
        for w in report.windows:
            fh.write(json.dumps(w.to_record(), separators=(",", ":")) + "\n")
