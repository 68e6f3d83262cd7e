"""Runs the matching protocol and aggregates outcomes, error curves, ranks.

The sweep engine computes, per reference, two reusable reductions:

* best score per object over the distractor variant (radius-independent),
* best positive score per index-distance class (1..10 plus the class-0
  twin), from which every radius point follows by a suffix maximum.

A reference whose positive set is empty at some radius is "skipped" there:
it stays out of the error denominator but is counted in the curve record.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .dataset import (
    SERIES_LENGTH,
    ImageId,
    Manifest,
    Variant,
    VT,
    superset_series,
)
from .engine import TileConfig, group_best, pairwise_scores
from .exclusion import ContrastMode, ExclusionError, ExclusionSpec, Level, Radius
from .store import EmbeddingStore

NEG_INF = float("-inf")


@dataclass(frozen=True)
class MatchOutcome:
    """Result of matching one reference under one task configuration."""

    reference: str
    vt: str
    level: str
    contrast: str
    radius: Radius
    top_positive: Optional[tuple[str, float]]
    top_negative: Optional[tuple[str, float]]
    correct_object: bool
    correct_category: bool
    object_rank: int
    category_rank: int
    tie: bool = False

    @property
    def correct_at_level(self) -> bool:
        return self.correct_object if self.level == "object" else self.correct_category

    def to_json_dict(self) -> dict:
        def pair(p):
            return None if p is None else {"id": p[0], "score": p[1]}

        return {
            "reference": self.reference,
            "vt": self.vt,
            "level": self.level,
            "contrast": self.contrast,
            "radius": self.radius,
            "top_positive": pair(self.top_positive),
            "top_negative": pair(self.top_negative),
            "correct_object": self.correct_object,
            "correct_category": self.correct_category,
            "object_rank": self.object_rank,
            "category_rank": self.category_rank,
            "tie": self.tie,
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "MatchOutcome":
        def pair(p):
            return None if p is None else (p["id"], p["score"])

        return cls(
            reference=d["reference"],
            vt=d["vt"],
            level=d["level"],
            contrast=d["contrast"],
            radius=d["radius"],
            top_positive=pair(d["top_positive"]),
            top_negative=pair(d["top_negative"]),
            correct_object=d["correct_object"],
            correct_category=d["correct_category"],
            object_rank=d["object_rank"],
            category_rank=d["category_rank"],
            tie=d.get("tie", False),
        )


@dataclass(frozen=True)
class CurvePoint:
    radius: Radius
    error_rate: float
    n_scored: int
    n_skipped: int


@dataclass(frozen=True)
class ErrorCurve:
    vt: str
    level: str
    contrast: str
    points: tuple[CurvePoint, ...]


@dataclass(frozen=True)
class SweepResult:
    vt: str
    level: str
    contrast: str
    n_references: int
    outcomes: dict[Radius, list[MatchOutcome]]
    skipped: dict[Radius, list[str]]

    def all_outcomes(self) -> list[MatchOutcome]:
        out: list[MatchOutcome] = []
        for radius in sort_radii(self.outcomes):
            out.extend(self.outcomes[radius])
        return out


def sort_radii(radii: Iterable[Radius]) -> list[Radius]:
    """Canonical radius order: the no-exclusion point first, then ascending."""
    rs = set(radii)
    out: list[Radius] = [None] if None in rs else []
    out.extend(sorted(r for r in rs if r is not None))
    return out


def rank_of_top_positive(top_positive_score: float, group_best_scores: np.ndarray) -> int:
    """Number of out-of-group groups whose best candidate strictly outscores
    the top positive. Zero means the match was correct."""
    scores = np.asarray(group_best_scores, dtype=np.float64)
    return int((scores > top_positive_score).sum())


def _validate_inputs(
    store: EmbeddingStore,
    manifest: Manifest,
    contrast: ContrastMode,
    radii: Sequence[Radius],
) -> None:
    if not store.normalized:
        raise ExclusionError("store must be normalized before matching")
    if store.n_rows != manifest.n_rows:
        raise ExclusionError(
            f"store has {store.n_rows} rows, manifest expects {manifest.n_rows}"
        )
    if not radii:
        raise ExclusionError("at least one radius required")
    for r in radii:
        if r is None and contrast is ContrastMode.NONE:
            raise ExclusionError(
                "radius NONE without a contrast exclusion would let the "
                "reference match itself"
            )
        if r is not None and r < 0:
            raise ExclusionError(f"radius must be >= 0, got {r}")
    needed = {Variant.ORIGINAL}
    if contrast is not ContrastMode.NONE:
        needed.add(Variant.CONTRAST_REVERSED)
    missing = needed - set(manifest.variants)
    if missing:
        raise ExclusionError(
            f"contrast {contrast.value} needs variants "
            f"{sorted(v.value for v in missing)} not present in manifest"
        )


def _suffix_best(
    class_scores: np.ndarray, class_rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """suffix[c] = best (score, row) over classes >= c; index 11 is empty."""
    n = class_scores.shape[0]
    suf_s = np.full(n + 1, NEG_INF, dtype=np.float64)
    suf_r = np.full(n + 1, -1, dtype=np.int64)
    for c in range(n - 1, -1, -1):
        s, r = class_scores[c], class_rows[c]
        bs, br = suf_s[c + 1], suf_r[c + 1]
        if s > bs or (s == bs and r != -1 and (br == -1 or r < br)):
            bs, br = s, r
        suf_s[c], suf_r[c] = bs, br
    return suf_s, suf_r


def run_vt(
    store: EmbeddingStore,
    manifest: Manifest,
    vt: VT,
    radii: Sequence[Radius],
    levels: Sequence[Level] = (Level.OBJECT, Level.CATEGORY),
    contrast: ContrastMode = ContrastMode.NONE,
    category_map: Optional[Mapping[str, str]] = None,
    tile: TileConfig | None = None,
    backend=None,
) -> dict[Level, SweepResult]:
    """Run the full radius sweep for one series under test.

    The distractor-side reductions are shared across levels, so asking for
    both levels costs barely more than one.
    """
    _validate_inputs(store, manifest, contrast, radii)
    tile = tile or TileConfig()
    pos_variant = (
        Variant.ORIGINAL if contrast is ContrastMode.NONE else Variant.CONTRAST_REVERSED
    )
    neg_variant = (
        Variant.CONTRAST_REVERSED if contrast is ContrastMode.SOFT else Variant.ORIGINAL
    )

    objects = manifest.object_names
    n_obj = len(objects)
    obj_pos = {o: i for i, o in enumerate(objects)}
    cat_label = {o: (category_map[o] if category_map else manifest.category_of(o)) for o in objects}
    id_strings = manifest.id_strings
    obj_by_row = manifest.object_name_by_row

    # References: every original-variant view of the series under test.
    refs: list[ImageId] = []
    ref_rows: list[int] = []
    for obj in objects:
        for row in manifest.series_rows(obj, vt, Variant.ORIGINAL):
            refs.append(manifest.ids[row])
            ref_rows.append(row)
    ref_rows_arr = np.asarray(ref_rows, dtype=np.int64)

    # Distractor side, shared across levels: best per (reference, object).
    segments = np.asarray(
        [manifest.object_block(o, neg_variant) for o in objects], dtype=np.int64
    )
    neg_best, neg_row = group_best(store, ref_rows_arr, segments, tile=tile, backend=backend)

    sup = superset_series(vt)
    cand_index = np.tile(np.arange(1, SERIES_LENGTH + 1), len(sup))

    results: dict[Level, SweepResult] = {}
    for level in levels:
        group_label = (
            {o: o for o in objects} if level is Level.OBJECT else dict(cat_label)
        )
        labels = sorted(set(group_label.values()))
        label_id = {g: i for i, g in enumerate(labels)}
        group_id = np.asarray([label_id[group_label[o]] for o in objects])
        members: dict[str, list[str]] = {g: [] for g in labels}
        for o in objects:
            members[group_label[o]].append(o)

        # Positive side: best per (reference, index-distance class). For each
        # reference, reduce the group's positive universe (superset-series
        # views) to the best score per candidate series index, then fold the
        # two indices at each distance into a class maximum.
        suffix_s = np.empty((len(refs), SERIES_LENGTH + 1), dtype=np.float64)
        suffix_r = np.empty((len(refs), SERIES_LENGTH + 1), dtype=np.int64)
        ref_pos_by_obj = {o: [] for o in objects}
        for k, ref in enumerate(refs):
            ref_pos_by_obj[ref.object_name].append(k)
        j_offsets = np.arange(SERIES_LENGTH)
        for g in labels:
            univ: list[int] = []
            for obj in members[g]:
                for series in sup:
                    univ.extend(manifest.series_rows(obj, series, pos_variant))
            univ_arr = np.asarray(univ, dtype=np.int64)
            group_ref_ks = [k for obj in members[g] for k in ref_pos_by_obj[obj]]
            block = pairwise_scores(
                store, ref_rows_arr[group_ref_ks], univ_arr, backend=backend
            )
            resh = block.reshape(len(group_ref_ks), -1, SERIES_LENGTH)
            idx_best = resh.max(axis=1)  # (refs, 11): best score per index
            arg = resh.argmax(axis=1)  # first max = lowest row (universe ascending)
            idx_row = univ_arr[arg * SERIES_LENGTH + j_offsets]
            for pos, k in enumerate(group_ref_ks):
                i = refs[k].index
                class_s = np.full(SERIES_LENGTH, NEG_INF, dtype=np.float64)
                class_r = np.full(SERIES_LENGTH, -1, dtype=np.int64)
                for c in range(SERIES_LENGTH):
                    for j in {i - c, i + c}:
                        if 1 <= j <= SERIES_LENGTH:
                            s = idx_best[pos, j - 1]
                            r = idx_row[pos, j - 1]
                            if s > class_s[c] or (s == class_s[c] and r < class_r[c]):
                                class_s[c], class_r[c] = s, r
                suffix_s[k], suffix_r[k] = _suffix_best(class_s, class_r)

        # Rank bookkeeping per reference (radius-independent).
        rank_cats = sorted(set(cat_label.values()))
        rank_cat_id = {c: i for i, c in enumerate(rank_cats)}
        obj_rank_cat = np.asarray([rank_cat_id[cat_label[o]] for o in objects])

        outcomes: dict[Radius, list[MatchOutcome]] = {r: [] for r in sort_radii(radii)}
        skipped: dict[Radius, list[str]] = {r: [] for r in sort_radii(radii)}

        radii_order = sort_radii(radii)
        for k, ref in enumerate(refs):
            ref_str = id_strings[ref_rows[k]]
            ref_obj = ref.object_name
            ref_gid = group_id[obj_pos[ref_obj]]
            out_mask = group_id != ref_gid
            neg_s = neg_best[k, out_mask]
            neg_r = neg_row[k, out_mask]
            if neg_s.size and np.max(neg_s) > NEG_INF:
                top_neg_s = float(np.max(neg_s))
                top_neg_row = int(neg_r[neg_s == top_neg_s].min())
                top_neg = (id_strings[top_neg_row], top_neg_s)
            else:
                top_neg = None
            sorted_neg = np.sort(neg_s) if neg_s.size else neg_s
            # Per rank-category best over out-of-group objects.
            cat_best = np.full(len(rank_cats), NEG_INF, dtype=np.float64)
            np.maximum.at(cat_best, obj_rank_cat[out_mask], neg_s)
            ref_cat_idx = rank_cat_id[cat_label[ref_obj]]
            other_cat_best = np.delete(cat_best, ref_cat_idx)
            sorted_cat = np.sort(other_cat_best)

            for radius in radii_order:
                # suffix index 11 is the empty sentinel; any radius >= 10
                # excludes every possible index distance.
                c0 = 0 if radius is None else min(radius + 1, SERIES_LENGTH)
                pos_s = suffix_s[k, c0]
                pos_row = int(suffix_r[k, c0])
                if pos_row < 0:
                    skipped[radius].append(ref_str)
                    continue
                pos_obj = obj_by_row[pos_row]
                top_pos = (id_strings[pos_row], float(pos_s))

                if top_neg is None:
                    correct, tie, winner_positive = True, False, True
                    winner_obj = pos_obj
                elif pos_s > top_neg[1]:
                    correct, tie, winner_positive = True, False, True
                    winner_obj = pos_obj
                elif pos_s < top_neg[1]:
                    correct, tie, winner_positive = False, False, False
                    winner_obj = obj_by_row[top_neg_row]
                else:
                    # Equal top scores: deterministic winner by row, but the
                    # outcome is conservatively counted incorrect.
                    correct, tie = False, True
                    winner_positive = pos_row < top_neg_row
                    winner_obj = pos_obj if winner_positive else obj_by_row[top_neg_row]

                object_rank = int(sorted_neg.size - np.searchsorted(sorted_neg, pos_s, side="right"))
                category_rank = int(
                    sorted_cat.size - np.searchsorted(sorted_cat, pos_s, side="right")
                )

                if level is Level.OBJECT:
                    correct_object = correct
                    correct_category = winner_positive or (
                        cat_label[winner_obj] == cat_label[ref_obj]
                    )
                else:
                    correct_category = correct
                    correct_object = correct and pos_obj == ref_obj

                outcomes[radius].append(
                    MatchOutcome(
                        reference=ref_str,
                        vt=vt.label,
                        level=level.value,
                        contrast=contrast.value,
                        radius=radius,
                        top_positive=top_pos,
                        top_negative=top_neg,
                        correct_object=correct_object,
                        correct_category=correct_category,
                        object_rank=object_rank,
                        category_rank=category_rank,
                        tie=tie,
                    )
                )

        results[level] = SweepResult(
            vt=vt.label,
            level=level.value,
            contrast=contrast.value,
            n_references=len(refs),
            outcomes=outcomes,
            skipped=skipped,
        )
    return results


def run_matching_sweep(
    store: EmbeddingStore,
    manifest: Manifest,
    vt: VT,
    radii: Sequence[Radius],
    level: Level = Level.OBJECT,
    contrast: ContrastMode = ContrastMode.NONE,
    category_map: Optional[Mapping[str, str]] = None,
    tile: TileConfig | None = None,
    backend=None,
) -> SweepResult:
    return run_vt(
        store,
        manifest,
        vt,
        radii,
        levels=(level,),
        contrast=contrast,
        category_map=category_map,
        tile=tile,
        backend=backend,
    )[level]


def run_matching(
    store: EmbeddingStore,
    manifest: Manifest,
    spec: ExclusionSpec,
    tile: TileConfig | None = None,
    backend=None,
) -> list[MatchOutcome]:
    """All outcomes for one task configuration (single radius)."""
    sweep = run_matching_sweep(
        store,
        manifest,
        spec.vt,
        [spec.radius],
        level=spec.level,
        contrast=spec.contrast,
        category_map=spec.category_map,
        tile=tile,
        backend=backend,
    )
    return sweep.outcomes[spec.radius]


def error_curves(
    outcomes: Iterable[MatchOutcome], manifest: Manifest
) -> list[ErrorCurve]:
    """Aggregate outcomes into one error curve per (vt, level, contrast)."""
    n_refs = manifest.n_objects * SERIES_LENGTH
    grouped: dict[tuple[str, str, str], dict[Radius, list[MatchOutcome]]] = {}
    for o in outcomes:
        key = (o.vt, o.level, o.contrast)
        grouped.setdefault(key, {}).setdefault(o.radius, []).append(o)
    curves = []
    for (vt, level, contrast), by_radius in sorted(grouped.items()):
        points = []
        for radius in sort_radii(by_radius):
            outs = by_radius[radius]
            n_scored = len(outs)
            incorrect = sum(1 for o in outs if not o.correct_at_level)
            points.append(
                CurvePoint(
                    radius=radius,
                    error_rate=incorrect / n_scored if n_scored else 0.0,
                    n_scored=n_scored,
                    n_skipped=n_refs - n_scored,
                )
            )
        curves.append(ErrorCurve(vt=vt, level=level, contrast=contrast, points=tuple(points)))
    return curves


def curve_from_sweep(sweep: SweepResult) -> ErrorCurve:
    points = []
    for radius in sort_radii(sweep.outcomes):
        outs = sweep.outcomes[radius]
        n_scored = len(outs)
        incorrect = sum(1 for o in outs if not o.correct_at_level)
        points.append(
            CurvePoint(
                radius=radius,
                error_rate=incorrect / n_scored if n_scored else 0.0,
                n_scored=n_scored,
                n_skipped=len(sweep.skipped[radius]),
            )
        )
    return ErrorCurve(sweep.vt, sweep.level, sweep.contrast, tuple(points))


def make_randomized_category_map(
    manifest: Manifest, seed: int, group_size: int = 10
) -> dict[str, str]:
    """Shuffle objects into groups of ``group_size``, no two from one category.

    Deterministic per seed. Categories are dealt in shuffled order with
    each category's objects on consecutive deal positions, which lands any
    two same-category objects in different groups as long as the category
    is no larger than the number of groups.
    """
    objects = manifest.object_names
    if len(objects) % group_size != 0:
        raise ExclusionError(
            f"{len(objects)} objects cannot form groups of {group_size}; "
            f"pick a divisor of the object count"
        )
    n_groups = len(objects) // group_size
    per_cat = {c: [o for o in objs] for c, objs in zip(manifest.categories, manifest.objects)}
    if max(len(v) for v in per_cat.values()) > n_groups:
        raise ExclusionError(
            f"a category has more objects than the {n_groups} groups; "
            f"use a group size of at most {len(manifest.categories)}"
        )
    rng = np.random.default_rng(seed)
    cats = list(manifest.categories)
    rng.shuffle(cats)
    dealt: list[str] = []
    for c in cats:
        objs = list(per_cat[c])
        rng.shuffle(objs)
        dealt.extend(objs)
    mapping = {obj: f"group_{p % n_groups:02d}" for p, obj in enumerate(dealt)}
    # Constraint check: group sizes and within-group category uniqueness.
    by_group: dict[str, list[str]] = {}
    for obj, g in mapping.items():
        by_group.setdefault(g, []).append(obj)
    for g, objs in by_group.items():
        assert len(objs) == group_size
        assert len({manifest.category_of(o) for o in objs}) == len(objs)
    return mapping


def randomized_category_control(
    store: EmbeddingStore,
    manifest: Manifest,
    vt: VT,
    radii: Sequence[Radius],
    seed: int,
    group_size: int = 10,
    tile: TileConfig | None = None,
    backend=None,
) -> ErrorCurve:
    """Category-level error curve under a seeded random grouping of objects."""
    mapping = make_randomized_category_map(manifest, seed, group_size)
    sweep = run_matching_sweep(
        store,
        manifest,
        vt,
        radii,
        level=Level.CATEGORY,
        contrast=ContrastMode.NONE,
        category_map=mapping,
        tile=tile,
        backend=backend,
    )
    return curve_from_sweep(sweep)


def write_outcomes_jsonl(path: str | Path, outcomes: Iterable[MatchOutcome]) -> None:
    with open(path, "w") as f:
        for o in outcomes:
            f.write(json.dumps(o.to_json_dict(), sort_keys=True) + "\n")


def read_outcomes_jsonl(path: str | Path) -> list[MatchOutcome]:
    out = []
    with open(path) as f:
        for line in f:
            if line.strip():
                out.append(MatchOutcome.from_json_dict(json.loads(line)))
    return out


def write_curves_csv(path: str | Path, curves: Iterable[ErrorCurve]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["vt", "level", "contrast", "radius", "error", "scored", "skipped"])
        for c in curves:
            for p in c.points:
                radius = "none" if p.radius is None else p.radius
                w.writerow(
                    [c.vt, c.level, c.contrast, radius, repr(p.error_rate), p.n_scored, p.n_skipped]
                )


def read_curves_csv(path: str | Path) -> list[ErrorCurve]:
    grouped: dict[tuple[str, str, str], list[CurvePoint]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            radius = None if row["radius"] == "none" else int(row["radius"])
            grouped.setdefault((row["vt"], row["level"], row["contrast"]), []).append(
                CurvePoint(
                    radius=radius,
                    error_rate=float(row["error"]),
                    n_scored=int(row["scored"]),
                    n_skipped=int(row["skipped"]),
                )
            )
    return [
        ErrorCurve(vt=k[0], level=k[1], contrast=k[2], points=tuple(v))
        for k, v in sorted(grouped.items())
    ]
