"""Machine-readable run reports and a merge kernel shootout."""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

from .kernels import finalize_sort, hash_merge_unsorted, heap_merge_sorted
from .semiring import INT64_PLUS_TIMES
from .sparse import bit_identical
from .summa import MultiplyResult
from .synth import gen_rmat

REPORT_SCHEMA = "spgemm3d-report-v1"


def build_report(res: MultiplyResult, nnz_a: int, nnz_b: int,
                 nnz_c: int | None = None, with_timings: bool = True,
                 header_bytes: int = 0) -> dict:
    """Flatten one run into a schema-tagged dict ready for JSON."""
    plan = res.plan
    report = {
        "schema": REPORT_SCHEMA,
        "problem": {
            "nrows": res.nrows,
            "ncols": res.ncols,
            "nnz_a": nnz_a,
            "nnz_b": nnz_b,
            "nnz_c": nnz_c,
            "flops": res.total_flops,
            "sum_nnz_d": res.total_nnz_d,
        },
        "grid": {"p": res.grid.p, "layers": res.grid.l, "q": res.grid.q},
        "kernel": res.kernel,
        "plan": {
            "batches": plan.b,
            "source": plan.source,
            "max_nnz_c": plan.max_nnz_c,
            "max_nnz_a": plan.max_nnz_a,
            "max_nnz_b": plan.max_nnz_b,
            "per_rank_budget_words": plan.per_rank_budget_words,
        },
        "memory": {
            "hwm_words_max": max(res.hwm_words),
            "pile_words_max": res.max_pile_words,
            "record_bytes": res.record_bytes,
        },
        "counters": res.stats.as_dict(res.record_bytes, header_bytes),
    }
    if with_timings:
        report["seconds"] = {k: res.phase_seconds[k]
                             for k in sorted(res.phase_seconds)}
    return report


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                          encoding="ascii")


def write_csv(report: dict, path) -> None:
    """One row per phase: counters plus wall seconds where measured."""
    seconds = report.get("seconds", {})
    with open(path, "w", newline="", encoding="ascii") as f:
        w = csv.writer(f)
        w.writerow(["phase", "messages", "words", "bytes", "seconds"])
        phases = report["counters"]["phases"]
        for name in sorted(set(phases) | set(seconds)):
            c = phases.get(name, {"messages": 0, "words": 0, "bytes": 0})
            w.writerow([name, c["messages"], c["words"], c["bytes"],
                        seconds.get(name, "")])
        total = report["counters"]["total"]
        w.writerow(["total", total["messages"], total["words"],
                    total["bytes"], ""])


def merge_timing(scale: int = 12, parts: int = 16, seed: int = 1,
                 edge_factor: int = 4) -> dict:
    """Time both merge kernels on a pile of power-law partials.

    The pile imitates what a rank holds after the stage loop: ``parts``
    same-shaped partials with skewed row distributions. Both kernels
    must agree bit for bit once the unsorted result is put in order;
    the timings are reported for the curious and gate nothing.
    """
    sr = INT64_PLUS_TIMES
    pile = [gen_rmat(scale, edge_factor=edge_factor, seed=seed + i, sr=sr)
            for i in range(parts)]
    start = time.perf_counter()
    merged_hash = hash_merge_unsorted(pile, sr)
    hash_seconds = time.perf_counter() - start
    start = time.perf_counter()
    merged_heap = heap_merge_sorted(pile, sr)
    heap_seconds = time.perf_counter() - start
    agree = bit_identical(finalize_sort(merged_hash, sr), merged_heap)
    return {
        "scale": scale,
        "parts": parts,
        "edge_factor": edge_factor,
        "rows": 1 << scale,
        "pile_nnz": sum(m.nnz for m in pile),
        "result_nnz": merged_heap.nnz,
        "hash_seconds": hash_seconds,
        "heap_seconds": heap_seconds,
        "heap_over_hash": heap_seconds / hash_seconds if hash_seconds else None,
        "agree": agree,
    }
