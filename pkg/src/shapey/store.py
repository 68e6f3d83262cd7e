"""Binary embedding files and the in-memory, unit-normalized store.

File format (little-endian): magic ``SHPY``, version u32 = 1, row count u64,
dim u32, then ``count * dim`` float32 values row-major. A sidecar UTF-8
index file names one image id per line; line k names row k.

All similarity scores downstream are plain dot products, so normalization
happens once here and the hot loops never divide.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ImageId, Manifest

MAGIC = b"SHPY"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")

NORM_TOLERANCE = 1e-6
MIN_ROW_NORM = 1e-12


class StoreError(ValueError):
    """Malformed embedding file or degenerate row content."""


@dataclass(frozen=True)
class EmbeddingStore:
    """Row-major float32 embedding matrix plus its row -> image-id index."""

    rows: np.ndarray  # (n, dim) float32, C-contiguous
    ids: tuple[str, ...]
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.rows.ndim != 2:
            raise StoreError("embeddings must be a 2-D matrix")
        if self.rows.dtype != np.float32 or not self.rows.flags.c_contiguous:
            object.__setattr__(
                self, "rows", np.ascontiguousarray(self.rows, dtype=np.float32)
            )
        if len(self.ids) != self.rows.shape[0]:
            raise StoreError(
                f"index names {len(self.ids)} rows but matrix has {self.rows.shape[0]}"
            )

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def row_of(self, image_id: str | ImageId) -> int:
        mapping = self.__dict__.get("_row_of_cache")
        if mapping is None:
            mapping = {}
            for k, s in enumerate(self.ids):
                if s in mapping:
                    raise StoreError(f"duplicate id in index: {s}")
                mapping[s] = k
            object.__setattr__(self, "_row_of_cache", mapping)
        try:
            return mapping[str(image_id)]
        except KeyError:
            raise StoreError(f"id not in store: {image_id}") from None


def write_embeddings(
    path: str | Path,
    index_path: str | Path,
    rows: np.ndarray,
    ids: Sequence[str | ImageId],
) -> None:
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    if rows.ndim != 2:
        raise StoreError("embeddings must be a 2-D matrix")
    if rows.shape[0] != len(ids):
        raise StoreError("row count and id count differ")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, rows.shape[0], rows.shape[1]))
        f.write(rows.tobytes(order="C"))
    Path(index_path).write_text("".join(f"{i}\n" for i in map(str, ids)))


def read_embeddings(path: str | Path, index_path: str | Path) -> EmbeddingStore:
    """Load and validate an embedding file; rows come back unnormalized."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise StoreError(f"{path}: truncated header")
    magic, version, count, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise StoreError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise StoreError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + count * dim * 4
    if len(raw) != expected:
        raise StoreError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
            f"header promises {count}x{dim} float32 ({expected - _HEADER.size})"
        )
    rows = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    rows = np.ascontiguousarray(rows, dtype=np.float32)

    bad = ~np.isfinite(rows)
    if bad.any():
        first = int(np.flatnonzero(bad.any(axis=1))[0])
        raise StoreError(f"{path}: non-finite value in row {first}")

    lines = Path(index_path).read_text().splitlines()
    if len(lines) != count:
        raise StoreError(
            f"{index_path}: {len(lines)} ids for {count} rows in {path}"
        )
    return EmbeddingStore(rows=rows, ids=tuple(lines), normalized=False)


@dataclass(frozen=True)
class ValidationReport:
    missing: tuple[str, ...]  # manifest ids with no row
    extra: tuple[str, ...]  # rows whose id is not in the manifest
    duplicates: tuple[str, ...]  # ids naming more than one row
    misordered: bool  # rows present but not in manifest order

    @property
    def ok(self) -> bool:
        return not (self.missing or self.extra or self.duplicates or self.misordered)

    def summary(self) -> str:
        if self.ok:
            return "store matches manifest"
        parts = []
        for label, items in (
            ("missing", self.missing),
            ("extra", self.extra),
            ("duplicate", self.duplicates),
        ):
            if items:
                shown = ", ".join(items[:5]) + ("..." if len(items) > 5 else "")
                parts.append(f"{len(items)} {label} ids ({shown})")
        if self.misordered:
            parts.append("rows out of manifest order")
        return "; ".join(parts)


def validate_against_manifest(store: EmbeddingStore, manifest: Manifest) -> ValidationReport:
    """Check that store rows and manifest ids are the same set, once each."""
    seen: dict[str, int] = {}
    duplicates: list[str] = []
    for s in store.ids:
        seen[s] = seen.get(s, 0) + 1
        if seen[s] == 2:
            duplicates.append(s)
    wanted = [str(i) for i in manifest.ids]
    wanted_set = set(wanted)
    missing = tuple(s for s in wanted if s not in seen)
    extra = tuple(sorted(set(store.ids) - wanted_set))
    misordered = not missing and not extra and not duplicates and list(store.ids) != wanted
    return ValidationReport(
        missing=missing, extra=extra, duplicates=tuple(duplicates), misordered=misordered
    )


def normalize(store: EmbeddingStore, chunk: int = 4096) -> EmbeddingStore:
    """Rescale every row to unit L2 norm (computed in float64).

    Raises naming the offending image id if any row is (near) zero. After
    this, cosine similarity is exactly the dot product of stored rows.
    Works in row chunks so full-scale stores never need a float64 copy.
    """
    rows = np.empty_like(store.rows)
    for lo in range(0, store.n_rows, chunk):
        block = store.rows[lo : lo + chunk].astype(np.float64)
        norms = np.linalg.norm(block, axis=1)
        tiny = norms <= MIN_ROW_NORM
        if tiny.any():
            first = lo + int(np.flatnonzero(tiny)[0])
            raise StoreError(f"zero-norm row for id {store.ids[first]}")
        rows[lo : lo + chunk] = block / norms[:, None]
    return replace(store, rows=rows, normalized=True)
