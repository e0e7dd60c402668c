"""Time and memory scaling of the attention kernels with sequence length.

Wall time is the median over ``repeats`` of the per-call time (each repeat
loops enough calls to last ~0.2 s, as :meth:`timeit.Timer.autorange` does).
Repeats are taken in rounds across all lengths of a method.
Peak memory is the tracemalloc high-water mark of one extra call; numpy
reports its buffers to tracemalloc, so this counts the kernel's own array
allocations and excludes the inputs.
"""
from __future__ import annotations

import csv
import gc
import os
import statistics
import timeit
import tracemalloc
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import AttnConfig, LLNParams, attention, attention_grad

BENCH_METHODS = ("softmax", "lln", "lln_diag")
BENCH_COLUMNS = ("method", "seq_len", "dim", "block_size", "wall_time_s", "peak_bytes",
                 "repeats", "status")


@dataclass
class BenchRecord:
    method: str
    seq_len: int
    dim: int
    block_size: int
    wall_time_s: Optional[float]
    peak_bytes: Optional[int]
    repeats: int
    status: str = "ok"   # "ok" or "OOM"


def available_memory():
    """Bytes of physical memory currently available, or ``None`` if unknown."""
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def estimated_bytes(method, n, d, block_size, grad=False):
    """Rough upper bound of the working set, used to refuse runs that cannot fit."""
    f = 8
    linear = 12 * n * d * f
    if method == "softmax":
        return (5 if grad else 2) * n * n * f + linear
    if method == "lln_diag":
        return linear + (5 if grad else 2) * n * block_size * f
    return linear


def _make_call(method, q, k, v, block_size, params, grad):
    config = AttnConfig(method=method, block_size=block_size)
    if not grad:
        return lambda: attention(q, k, v, config, params)
    upstream = np.ones((q.shape[0], v.shape[1]))

    def fwd_bwd():
        attention(q, k, v, config, params)
        attention_grad(q, k, v, config, upstream, params)

    return fwd_bwd


def measure_peak_bytes(fn):
    gc.collect()
    tracemalloc.start()
    try:
        base = tracemalloc.get_traced_memory()[0]
        tracemalloc.reset_peak()
        fn()
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    return max(peak - base, 1)


def _prepare(method, n, dim, block_size, seed, grad, params, memory_budget):
    """Timer and loop count for one cell, or ``None`` if it cannot fit in memory."""
    if memory_budget is not None and estimated_bytes(method, n, dim, block_size, grad) > memory_budget:
        return None
    rng = np.random.default_rng([seed, n, dim])
    q, k, v = (rng.standard_normal((n, dim)) for _ in range(3))
    fn = _make_call(method, q, k, v, block_size, params, grad)
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return fn, timer, number


def _default_budget(memory_budget):
    if memory_budget is not None:
        return memory_budget
    avail = available_memory()
    return None if avail is None else int(0.8 * avail)


def _bench_method(method, seq_lens, dim, repeats, block_size, seed, grad, params, memory_budget):
    cells = {}
    for n in seq_lens:
        try:
            cells[n] = _prepare(method, n, dim, block_size, seed, grad, params, memory_budget)
        except MemoryError:
            cells[n] = None
    # Interleave: every round times each length once, so slow drifts in
    # machine load hit all lengths alike instead of biasing their ratios.
    times = {n: [] for n in seq_lens}
    for _ in range(repeats):
        for n, cell in cells.items():
            if cell is None:
                continue
            _, timer, number = cell
            try:
                times[n].append(timer.timeit(number) / number)
            except MemoryError:
                cells[n] = None
    records = []
    for n in seq_lens:
        cell = cells[n]
        peak = None
        if cell is not None:
            try:
                peak = measure_peak_bytes(cell[0])
            except MemoryError:
                cell = None
        if cell is None:
            records.append(BenchRecord(method, n, dim, block_size, None, None, repeats, "OOM"))
        else:
            records.append(BenchRecord(method, n, dim, block_size, statistics.median(times[n]),
                                       int(peak), repeats))
    return records


def bench_one(method, n, dim=64, repeats=5, block_size=64, seed=0, grad=False,
              params=None, memory_budget=None):
    """Benchmark one method at one length."""
    return run_benchmark((method,), (n,), dim, repeats, block_size, seed, grad,
                         memory_budget, params)[0]


def run_benchmark(methods=BENCH_METHODS, seq_lens=(512, 1024, 2048, 4096, 8192), dim=64,
                  repeats=5, block_size=64, seed=0, grad=False, memory_budget=None, params=None):
    """Benchmark every method at every length, sequentially.

    A cell whose estimated working set exceeds ``memory_budget`` bytes
    (default 80% of available RAM), or that raises :class:`MemoryError`, is
    reported with status ``"OOM"``.
    """
    if repeats < 3:
        raise ValueError("repeats must be >= 3 (wall time is a median)")
    unknown = set(methods) - set(BENCH_METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; expected a subset of {BENCH_METHODS}")
    seq_lens = list(seq_lens)
    if not seq_lens or any(n < 1 for n in seq_lens) or seq_lens != sorted(seq_lens):
        raise ValueError("sequence lengths must be positive and ascending")
    budget = _default_budget(memory_budget)
    params = params or LLNParams(1.0, 1.0)
    records = []
    for method in methods:
        records += _bench_method(method, seq_lens, dim, repeats, block_size, seed, grad,
                                 params, budget)
    return records


def doubling_ratios(records, method, field="wall_time_s", min_len=0):
    """``value(2N) / value(N)`` for consecutive successful lengths of ``method``."""
    ok = {r.seq_len: getattr(r, field) for r in records
          if r.method == method and r.status == "ok" and r.seq_len >= min_len}
    return [(n, ok[2 * n] / ok[n]) for n in sorted(ok) if 2 * n in ok]


def write_bench_csv(records, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(BENCH_COLUMNS)
    for r in records:
        writer.writerow([
            r.method, r.seq_len, r.dim, r.block_size,
            "" if r.wall_time_s is None else format(r.wall_time_s, ".17g"),
            "" if r.peak_bytes is None else r.peak_bytes,
            r.repeats, r.status,
        ])
