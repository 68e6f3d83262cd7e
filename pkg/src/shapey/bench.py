"""Throughput benchmark comparing the compiled kernel and the numpy fallback.

Times the distractor-side reduction (the hot path of a real run) on seeded
random data and reports references/second and effective GFLOP/s, plus the
maximum score disagreement between backends.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .engine import TileConfig, available_backends, group_best
from .store import EmbeddingStore, normalize


@dataclass(frozen=True)
class BenchResult:
    backend: str
    n_refs: int
    n_cands: int
    dim: int
    seconds: float
    refs_per_sec: float
    gflops: float


def _random_store(n: int, dim: int, seed: int) -> EmbeddingStore:
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n, dim)).astype(np.float32)
    ids = tuple(f"row_{k:07d}" for k in range(n))
    return normalize(EmbeddingStore(rows=rows, ids=ids))


def run_bench(
    n_refs: int = 256,
    n_cands: int = 8192,
    dim: int = 512,
    seed: int = 0,
    segment: int = 341,
    workers: int = 1,
    backends: tuple[str, ...] | None = None,
    repeats: int = 3,
) -> tuple[list[BenchResult], float | None]:
    """Benchmark each backend; returns results and the cross-backend deviation."""
    store = _random_store(n_cands, dim, seed)
    ref_rows = np.arange(n_refs) % n_cands
    bounds = np.arange(0, n_cands + segment - 1, segment)
    bounds[-1] = min(bounds[-1], n_cands)
    segments = np.stack([bounds[:-1], np.minimum(bounds[1:], n_cands)], axis=1)
    tile = TileConfig(workers=workers)

    names = backends or available_backends()
    results = []
    outputs = {}
    for name in names:
        best = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = group_best(store, ref_rows, segments, tile=tile, backend=name)
            dt = time.perf_counter() - t0
            best = dt if best is None else min(best, dt)
            outputs[name] = out[0]
        flops = 2.0 * n_refs * n_cands * dim
        results.append(
            BenchResult(
                backend=name,
                n_refs=n_refs,
                n_cands=n_cands,
                dim=dim,
                seconds=best,
                refs_per_sec=n_refs / best,
                gflops=flops / best / 1e9,
            )
        )
    deviation = None
    if len(outputs) == 2:
        a, b = outputs.values()
        deviation = float(np.abs(a - b).max())
    return results, deviation


def format_results(results: list[BenchResult], deviation: float | None) -> str:
    lines = [
        f"{'backend':<8} {'refs':>6} {'cands':>7} {'dim':>5} "
        f"{'sec':>8} {'refs/s':>9} {'GF/s':>7}"
    ]
    for r in results:
        lines.append(
            f"{r.backend:<8} {r.n_refs:>6} {r.n_cands:>7} {r.dim:>5} "
            f"{r.seconds:>8.3f} {r.refs_per_sec:>9.1f} {r.gflops:>7.2f}"
        )
    if deviation is not None:
        lines.append(f"max |native - python| score deviation: {deviation:.3e}")
    return "\n".join(lines)
