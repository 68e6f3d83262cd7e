"""Candidate eligibility: viewpoint exclusion, category grouping, contrast modes.

For a reference view and a task configuration this module decides, exactly,
which rows may count as a correct match (positives) and which are
distractors (negatives). Views of the reference's own group that are not
eligible positives are suppressed entirely; leaving them in the distractor
pool would let near-identical views defeat the point of the exclusion
radius.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from .dataset import (
    SERIES_LENGTH,
    ImageId,
    Manifest,
    Variant,
    VT,
    superset_series,
)
from .store import EmbeddingStore


class ExclusionError(ValueError):
    """Inconsistent task configuration."""


class Level(Enum):
    OBJECT = "object"
    CATEGORY = "category"


class ContrastMode(Enum):
    NONE = "none"
    SOFT = "soft"
    HARD = "hard"


# Exclusion radius: either an integer r_e >= 0, or None meaning "no view
# excluded" (the leftmost point of contrast-exclusion curves). None is a
# distinct configuration, not radius -1.
Radius = Optional[int]

RADIUS_NONE: Radius = None


@dataclass(frozen=True)
class ExclusionSpec:
    """One matching-task configuration.

    ``category_map`` maps object name -> group label and defaults to the
    manifest's categories; the randomized-category control overrides it.
    """

    vt: VT
    radius: Radius
    level: Level = Level.OBJECT
    contrast: ContrastMode = ContrastMode.NONE
    category_map: Optional[Mapping[str, str]] = None

    def __post_init__(self) -> None:
        if self.radius is not None and self.radius < 0:
            raise ExclusionError(f"exclusion radius must be >= 0, got {self.radius}")
        if self.radius is None and self.contrast is ContrastMode.NONE:
            raise ExclusionError(
                "radius NONE without a contrast exclusion would let the "
                "reference match itself; use radius >= 0 or contrast soft/hard"
            )

    @property
    def positive_variant(self) -> Variant:
        return (
            Variant.ORIGINAL
            if self.contrast is ContrastMode.NONE
            else Variant.CONTRAST_REVERSED
        )

    @property
    def negative_variant(self) -> Variant:
        return (
            Variant.CONTRAST_REVERSED
            if self.contrast is ContrastMode.SOFT
            else Variant.ORIGINAL
        )

    def group_of(self, object_name: str, manifest: Manifest) -> str:
        if self.level is Level.OBJECT:
            return object_name
        if self.category_map is not None:
            try:
                return self.category_map[object_name]
            except KeyError:
                raise ExclusionError(f"object {object_name!r} missing from category_map")
        return manifest.category_of(object_name)


@dataclass(frozen=True)
class CandidateMask:
    """Row-index sets for one reference under one spec."""

    reference: ImageId
    positives: np.ndarray  # sorted int64 row indices
    negatives: np.ndarray  # sorted int64 row indices


def exclusion_zone(ref_index: int, radius: int) -> frozenset[int]:
    """Series indices within ``radius`` steps of the reference index."""
    if not 1 <= ref_index <= SERIES_LENGTH:
        raise ExclusionError(f"reference index {ref_index} outside 1..{SERIES_LENGTH}")
    if radius < 0:
        raise ExclusionError(f"radius must be >= 0, got {radius}")
    lo = max(1, ref_index - radius)
    hi = min(SERIES_LENGTH, ref_index + radius)
    return frozenset(range(lo, hi + 1))


def _check_reference(ref: ImageId, spec: ExclusionSpec, manifest: Manifest) -> None:
    if str(ref) not in manifest.row_of:
        raise ExclusionError(f"reference {ref} not in manifest")
    if ref.vt != spec.vt:
        raise ExclusionError(f"reference series {ref.vt} differs from spec series {spec.vt}")
    if ref.variant is not Variant.ORIGINAL:
        raise ExclusionError("references are always original-variant views")


def _group_members(ref: ImageId, spec: ExclusionSpec, manifest: Manifest) -> list[str]:
    group = spec.group_of(ref.object_name, manifest)
    return [o for o in manifest.object_names if spec.group_of(o, manifest) == group]


def positive_candidates(
    ref: ImageId, spec: ExclusionSpec, manifest: Manifest
) -> list[ImageId]:
    """Eligible positives: same group, superset series, outside the zone.

    Under contrast exclusion the returned ids carry the contrast-reversed
    variant. With radius NONE no index is excluded, so the reference's own
    contrast-reversed twin is among them.
    """
    _check_reference(ref, spec, manifest)
    variant = spec.positive_variant
    if variant not in manifest.variants:
        raise ExclusionError(
            f"contrast {spec.contrast.value} needs the {variant.value} variant"
        )
    zone = (
        frozenset()
        if spec.radius is None
        else exclusion_zone(ref.index, spec.radius)
    )
    eligible_indices = [i for i in range(1, SERIES_LENGTH + 1) if i not in zone]
    out: list[ImageId] = []
    for obj in _group_members(ref, spec, manifest):
        cat, ex = obj.rsplit("_", 1)
        for series in superset_series(spec.vt):
            for index in eligible_indices:
                out.append(ImageId(cat, int(ex), series, index, variant))
    return out


def candidate_pool(
    ref: ImageId, spec: ExclusionSpec, store: EmbeddingStore, manifest: Manifest
) -> CandidateMask:
    """Positive and negative row sets for one reference.

    Negatives are every view (all series, all indices) of every object
    outside the reference's group, in the spec's negative variant. Same-
    group views that are not eligible positives appear in neither set.
    """
    positives = positive_candidates(ref, spec, manifest)
    neg_variant = spec.negative_variant
    if neg_variant not in manifest.variants:
        raise ExclusionError(
            f"contrast {spec.contrast.value} needs the {neg_variant.value} variant"
        )
    group_objects = set(_group_members(ref, spec, manifest))
    neg_rows: list[int] = []
    for obj in manifest.object_names:
        if obj in group_objects:
            continue
        start, end = manifest.object_block(obj, neg_variant)
        neg_rows.extend(range(start, end))
    pos_rows = sorted(store.row_of(i) for i in positives)
    return CandidateMask(
        reference=ref,
        positives=np.asarray(pos_rows, dtype=np.int64),
        negatives=np.asarray(sorted(neg_rows), dtype=np.int64),
    )


def reference_set(spec: ExclusionSpec, manifest: Manifest) -> list[ImageId]:
    """All original-variant views in series exactly ``spec.vt``, manifest order."""
    return [
        i
        for i in manifest.ids
        if i.variant is Variant.ORIGINAL and i.vt == spec.vt
    ]
