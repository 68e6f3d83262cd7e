"""Blocked masked-similarity operations over a normalized store.

Everything here is exact search: scores are float64 dot products computed
tile by tile (never materializing an all-pairs matrix), reductions break
ties toward the lower row index, and results are identical for any tile
configuration or worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..dataset import Manifest, Variant, VT
from ..store import EmbeddingStore

NEG_INF = float("-inf")


@dataclass(frozen=True)
class TileConfig:
    """Blocking parameters; results never depend on them."""

    ref_tile: int = 256
    cand_tile: int = 4096
    workers: int = 1

    def __post_init__(self) -> None:
        if self.ref_tile < 1 or self.cand_tile < 1 or self.workers < 1:
            raise ValueError("tile sizes and worker count must be >= 1")


@dataclass(frozen=True)
class TopKResult:
    """Top-k rows for one reference, scores descending, row index breaking ties."""

    reference_row: int
    rows: np.ndarray  # int64
    scores: np.ndarray  # float64

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(r), float(s)) for r, s in zip(self.rows, self.scores)]


def _resolve_backend(backend):
    from . import get_backend

    if backend is None or isinstance(backend, str):
        return get_backend(backend)
    return backend


def _require_normalized(store: EmbeddingStore) -> None:
    if not store.normalized:
        raise ValueError("store must be normalized before similarity search")


def _dot(backend, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    backend.dot_block(a, b, out)
    return out


def pairwise_scores(
    store: EmbeddingStore,
    rows_a: Sequence[int],
    rows_b: Sequence[int],
    backend=None,
) -> np.ndarray:
    """Dense float64 score block between two row lists."""
    _require_normalized(store)
    backend = _resolve_backend(backend)
    a = store.rows[np.asarray(rows_a, dtype=np.int64)]
    b = store.rows[np.asarray(rows_b, dtype=np.int64)]
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    return _dot(backend, a, b)


def tuning_curve(
    store: EmbeddingStore,
    manifest: Manifest,
    object_name: str,
    vt: VT,
    backend=None,
) -> np.ndarray:
    """11x11 within-series similarity matrix for one object and series."""
    rows = list(manifest.series_rows(object_name, vt, Variant.ORIGINAL))
    return pairwise_scores(store, rows, rows, backend=backend)


def _as_row_indices(mask, n_rows: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == np.bool_:
        if mask.shape != (n_rows,):
            raise ValueError("boolean mask length must equal store rows")
        return np.flatnonzero(mask).astype(np.int64)
    rows = np.unique(mask.astype(np.int64))
    if rows.size and (rows[0] < 0 or rows[-1] >= n_rows):
        raise ValueError("mask row index out of range")
    return rows


def _merge_topk(
    scores: np.ndarray, rows: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    # Total order: score descending, then row ascending.
    order = np.lexsort((rows, -scores))[:k]
    return scores[order], rows[order]


def masked_topk(
    store: EmbeddingStore,
    ref_rows: Sequence[int],
    masks: Sequence[np.ndarray],
    k: int,
    tile: TileConfig | None = None,
    backend=None,
) -> list[TopKResult]:
    """Exact top-k by dot product, restricted to each reference's mask.

    An empty mask yields an empty result. Candidates with equal scores are
    ordered by ascending row index.
    """
    _require_normalized(store)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(masks) != len(ref_rows):
        raise ValueError("one mask per reference required")
    backend = _resolve_backend(backend)
    tile = tile or TileConfig()

    def one(ref_row: int, mask) -> TopKResult:
        cand = _as_row_indices(mask, store.n_rows)
        ref = store.rows[ref_row : ref_row + 1]
        best_s = np.empty(0, dtype=np.float64)
        best_r = np.empty(0, dtype=np.int64)
        for lo in range(0, cand.size, tile.cand_tile):
            chunk = cand[lo : lo + tile.cand_tile]
            block = _dot(backend, ref, store.rows[chunk])[0]
            best_s, best_r = _merge_topk(
                np.concatenate([best_s, block]), np.concatenate([best_r, chunk]), k
            )
        return TopKResult(reference_row=int(ref_row), rows=best_r, scores=best_s)

    if tile.workers > 1 and len(ref_rows) > 1:
        with ThreadPoolExecutor(max_workers=tile.workers) as pool:
            return list(pool.map(one, ref_rows, masks))
    return [one(r, m) for r, m in zip(ref_rows, masks)]


def _pack_segments(segments: np.ndarray, cand_tile: int) -> list[list[int]]:
    """Group whole segments into candidate tiles of roughly cand_tile rows."""
    packs: list[list[int]] = []
    current: list[int] = []
    rows = 0
    for g in range(segments.shape[0]):
        size = int(segments[g, 1] - segments[g, 0])
        if current and rows + size > cand_tile:
            packs.append(current)
            current, rows = [], 0
        current.append(g)
        rows += size
    if current:
        packs.append(current)
    return packs


def group_best(
    store: EmbeddingStore,
    ref_rows: Sequence[int],
    segments: np.ndarray,
    tile: TileConfig | None = None,
    backend=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Best score (and its row) per reference per row segment.

    ``segments`` is an (G, 2) array of half-open, ascending, non-overlapping
    row ranges (one per group, e.g. one per object). Empty segments come
    back as -inf with row -1. Ties resolve to the lowest row index.
    """
    _require_normalized(store)
    backend = _resolve_backend(backend)
    tile = tile or TileConfig()
    segments = np.asarray(segments, dtype=np.int64).reshape(-1, 2)
    ref_rows = np.asarray(ref_rows, dtype=np.int64)
    m, n_groups = ref_rows.size, segments.shape[0]
    best = np.full((m, n_groups), NEG_INF, dtype=np.float64)
    best_row = np.full((m, n_groups), -1, dtype=np.int64)
    if m == 0 or n_groups == 0:
        return best, best_row
    packs = _pack_segments(segments, tile.cand_tile)

    def run_ref_tile(lo: int) -> None:
        hi = min(lo + tile.ref_tile, m)
        refs = store.rows[ref_rows[lo:hi]]
        for pack in packs:
            starts = segments[pack, 0]
            ends = segments[pack, 1]
            sizes = ends - starts
            if sizes.sum() == 0:
                continue
            contiguous = bool(np.all(starts[1:] == ends[:-1]))
            if contiguous:
                cand = store.rows[starts[0] : ends[-1]]
            else:
                idx = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)])
                cand = store.rows[idx]
            block = _dot(backend, refs, cand)
            col = 0
            for g, size in zip(pack, sizes):
                if size == 0:
                    continue
                sub = block[:, col : col + size]
                am = sub.argmax(axis=1)  # first max = lowest row
                best[lo:hi, g] = np.take_along_axis(sub, am[:, None], axis=1)[:, 0]
                best_row[lo:hi, g] = segments[g, 0] + am
                col += size

    tiles = list(range(0, m, tile.ref_tile))
    if tile.workers > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=tile.workers) as pool:
            list(pool.map(run_ref_tile, tiles))
    else:
        for lo in tiles:
            run_ref_tile(lo)
    return best, best_row


