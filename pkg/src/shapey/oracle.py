"""Brute-force reference evaluator: exhaustive scans, first-principles rules.

This module re-derives candidate eligibility from the image-id fields and
scores every reference against every row with plain matrix-vector products.
It shares the dataset types with the engine but none of its mask, tiling,
or kernel machinery; agreement between the two paths is the core
correctness evidence for the whole package.

Deliberately simple and single-threaded; refuses large instances.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import ImageId, Manifest, Variant, VT
from .exclusion import ContrastMode, ExclusionSpec, Level, Radius
from .scoring import MatchOutcome, SweepResult, sort_radii
from .store import EmbeddingStore

MAX_ROWS = 50_000


class OracleError(ValueError):
    pass


def _guard(manifest: Manifest) -> None:
    if manifest.n_rows > MAX_ROWS:
        raise OracleError(
            f"instance too large for the brute-force oracle "
            f"({manifest.n_rows} rows > {MAX_ROWS}); use the engine"
        )


def _object_group(object_name: str, level: Level, manifest: Manifest, category_map) -> str:
    if level is Level.OBJECT:
        return object_name
    if category_map is not None:
        return category_map[object_name]
    return manifest.category_of(object_name)


def _group_label(
    image_id: ImageId, level: Level, manifest: Manifest, category_map
) -> str:
    return _object_group(image_id.object_name, level, manifest, category_map)


def _eligible_positive(
    cand: ImageId,
    ref: ImageId,
    radius: Radius,
    level: Level,
    contrast: ContrastMode,
    manifest: Manifest,
    category_map,
) -> bool:
    if _group_label(cand, level, manifest, category_map) != _group_label(
        ref, level, manifest, category_map
    ):
        return False
    if not cand.vt.axis_set >= ref.vt.axis_set:
        return False
    want = Variant.ORIGINAL if contrast is ContrastMode.NONE else Variant.CONTRAST_REVERSED
    if cand.variant is not want:
        return False
    if radius is None:
        return True
    return abs(cand.index - ref.index) > radius


def _eligible_negative(
    cand: ImageId,
    ref: ImageId,
    level: Level,
    contrast: ContrastMode,
    manifest: Manifest,
    category_map,
) -> bool:
    if _group_label(cand, level, manifest, category_map) == _group_label(
        ref, level, manifest, category_map
    ):
        return False
    want = Variant.CONTRAST_REVERSED if contrast is ContrastMode.SOFT else Variant.ORIGINAL
    return cand.variant is want


def oracle_positive_ids(
    ref: ImageId, spec: ExclusionSpec, manifest: Manifest
) -> set[str]:
    """Positive candidates by direct enumeration over the manifest."""
    _guard(manifest)
    return {
        str(c)
        for c in manifest.ids
        if _eligible_positive(
            c, ref, spec.radius, spec.level, spec.contrast, manifest, spec.category_map
        )
    }


def oracle_pool_rows(
    ref: ImageId, spec: ExclusionSpec, manifest: Manifest
) -> tuple[set[int], set[int]]:
    """(positive rows, negative rows) by direct enumeration."""
    _guard(manifest)
    pos, neg = set(), set()
    for k, c in enumerate(manifest.ids):
        if _eligible_positive(
            c, ref, spec.radius, spec.level, spec.contrast, manifest, spec.category_map
        ):
            pos.add(k)
        elif _eligible_negative(c, ref, spec.level, spec.contrast, manifest, spec.category_map):
            neg.add(k)
    return pos, neg


def _best(scores: np.ndarray, rows: np.ndarray) -> tuple[float, int]:
    """Max score; ties go to the lowest row index."""
    s = scores[rows]
    top = s.max()
    return float(top), int(rows[s == top].min())


def _row_fields(manifest: Manifest) -> dict:
    """Per-row field arrays derived once from the parsed image ids."""
    cached = manifest.__dict__.get("_oracle_fields_cache")
    if cached is not None:
        return cached
    ids = manifest.ids
    obj_names = list(manifest.object_names)
    obj_pos = {o: i for i, o in enumerate(obj_names)}
    series_labels = sorted({i.vt.label for i in ids})
    series_pos = {s: i for i, s in enumerate(series_labels)}
    fields = {
        "index": np.asarray([i.index for i in ids]),
        "obj": np.asarray([obj_pos[i.object_name] for i in ids]),
        "series": np.asarray([series_pos[i.vt.label] for i in ids]),
        "series_axes": [frozenset(s) for s in series_labels],
        "is_original": np.asarray([i.variant is Variant.ORIGINAL for i in ids]),
        "obj_names": obj_names,
    }
    object.__setattr__(manifest, "_oracle_fields_cache", fields)
    return fields


def brute_force_sweep(
    store: EmbeddingStore,
    manifest: Manifest,
    vt: VT,
    radii: Sequence[Radius],
    level: Level = Level.OBJECT,
    contrast: ContrastMode = ContrastMode.NONE,
    category_map: Optional[Mapping[str, str]] = None,
) -> SweepResult:
    """Exhaustive per-reference evaluation of the matching task."""
    _guard(manifest)
    if not store.normalized:
        raise OracleError("store must be normalized")
    rows64 = store.rows.astype(np.float64)
    ids = manifest.ids
    id_strings = manifest.id_strings
    obj_name_by_row = manifest.object_name_by_row
    f = _row_fields(manifest)
    index_arr, obj_arr, is_original = f["index"], f["obj"], f["is_original"]
    obj_names = f["obj_names"]

    superset_by_series = np.asarray(
        [axes >= vt.axis_set for axes in f["series_axes"]]
    )
    superset = superset_by_series[f["series"]]
    is_pos_variant = (
        is_original if contrast is ContrastMode.NONE else ~is_original
    )
    is_neg_variant = ~is_original if contrast is ContrastMode.SOFT else is_original

    obj_label = {
        o: _object_group(o, level, manifest, category_map) for o in obj_names
    }
    obj_cat = {
        o: (category_map[o] if category_map else manifest.category_of(o))
        for o in obj_names
    }
    label_of_obj = np.asarray([obj_label[o] for o in obj_names], dtype=object)
    group_arr = label_of_obj[obj_arr]
    group_mask = {g: group_arr == g for g in set(obj_label.values())}
    neg_rows_by_obj = {
        oi: np.flatnonzero((obj_arr == oi) & is_neg_variant)
        for oi in range(len(obj_names))
    }
    pos_univ_base = superset & is_pos_variant

    references = [
        (k, i)
        for k, i in enumerate(ids)
        if i.variant is Variant.ORIGINAL and i.vt == vt
    ]
    radii_sorted = sort_radii(radii)
    outcomes: dict[Radius, list[MatchOutcome]] = {r: [] for r in radii_sorted}
    skipped: dict[Radius, list[str]] = {r: [] for r in radii_sorted}

    for ref_row, ref in references:
        scores = rows64 @ rows64[ref_row]
        ref_group = obj_label[ref.object_name]
        ref_cat = obj_cat[ref.object_name]

        neg_mask = ~group_mask[ref_group] & is_neg_variant
        neg_rows = np.flatnonzero(neg_mask)
        top_neg = None
        top_neg_row = -1
        if neg_rows.size:
            s, r = _best(scores, neg_rows)
            top_neg = (id_strings[r], s)
            top_neg_row = r

        # Per out-of-group object / category best, for the ranks.
        obj_best: dict[str, float] = {}
        for oi, rows_o in neg_rows_by_obj.items():
            o = obj_names[oi]
            if obj_label[o] != ref_group and rows_o.size:
                obj_best[o] = float(scores[rows_o].max())
        cat_best: dict[str, float] = {}
        for o, s in obj_best.items():
            label = obj_cat[o]
            if label != ref_cat:
                cat_best[label] = max(cat_best.get(label, float("-inf")), s)

        # The full-row scan happens once per reference; each radius then
        # re-filters the (small) positive universe by index distance.
        pos_univ_rows = np.flatnonzero(group_mask[ref_group] & pos_univ_base)
        pos_univ_dist = np.abs(index_arr[pos_univ_rows] - ref.index)
        pos_univ_scores = scores[pos_univ_rows]

        for radius in radii_sorted:
            if radius is None:
                sel = slice(None)
            else:
                sel = pos_univ_dist > radius
            pos_rows = pos_univ_rows[sel]
            if pos_rows.size == 0:
                skipped[radius].append(str(ref))
                continue
            s_sel = pos_univ_scores[sel]
            pos_s = float(s_sel.max())
            pos_row = int(pos_rows[s_sel == pos_s].min())
            pos_obj = obj_name_by_row[pos_row]

            if top_neg is None:
                correct, tie, winner_positive = True, False, True
                winner_obj = pos_obj
            elif pos_s > top_neg[1]:
                correct, tie, winner_positive = True, False, True
                winner_obj = pos_obj
            elif pos_s < top_neg[1]:
                correct, tie, winner_positive = False, False, False
                winner_obj = obj_name_by_row[top_neg_row]
            else:
                correct, tie = False, True
                winner_positive = pos_row < top_neg_row
                winner_obj = pos_obj if winner_positive else obj_name_by_row[top_neg_row]

            object_rank = sum(1 for s in obj_best.values() if s > pos_s)
            category_rank = sum(1 for s in cat_best.values() if s > pos_s)

            if level is Level.OBJECT:
                correct_object = correct
                correct_category = winner_positive or obj_cat[winner_obj] == ref_cat
            else:
                correct_category = correct
                correct_object = correct and pos_obj == ref.object_name

            outcomes[radius].append(
                MatchOutcome(
                    reference=id_strings[ref_row],
                    vt=vt.label,
                    level=level.value,
                    contrast=contrast.value,
                    radius=radius,
                    top_positive=(id_strings[pos_row], pos_s),
                    top_negative=top_neg,
                    correct_object=correct_object,
                    correct_category=correct_category,
                    object_rank=object_rank,
                    category_rank=category_rank,
                    tie=tie,
                )
            )

    return SweepResult(
        vt=vt.label,
        level=level.value,
        contrast=contrast.value,
        n_references=len(references),
        outcomes=outcomes,
        skipped=skipped,
    )


def compare_sweeps(
    engine: SweepResult, oracle: SweepResult, score_tol: float = 1e-9
) -> list[str]:
    """Field-for-field differences between engine and oracle sweeps.

    Flags, ranks, ids, ties, and skip lists must be identical; scores must
    agree within ``score_tol``. Returns human-readable difference strings
    (empty means equivalent).
    """
    diffs: list[str] = []

    def note(msg: str) -> None:
        if len(diffs) < 50:
            diffs.append(msg)

    tag = f"{engine.vt}/{engine.level}/{engine.contrast}"
    if sort_radii(engine.outcomes) != sort_radii(oracle.outcomes):
        return [f"{tag}: radius sets differ"]
    for radius in sort_radii(engine.outcomes):
        if engine.skipped[radius] != oracle.skipped[radius]:
            note(f"{tag} r={radius}: skipped lists differ")
        eo, oo = engine.outcomes[radius], oracle.outcomes[radius]
        if [o.reference for o in eo] != [o.reference for o in oo]:
            note(f"{tag} r={radius}: scored reference lists differ")
            continue
        for a, b in zip(eo, oo):
            where = f"{tag} r={radius} ref={a.reference}"
            for field in ("correct_object", "correct_category", "object_rank", "category_rank", "tie"):
                if getattr(a, field) != getattr(b, field):
                    note(f"{where}: {field} {getattr(a, field)} != {getattr(b, field)}")
            for field in ("top_positive", "top_negative"):
                pa, pb = getattr(a, field), getattr(b, field)
                if (pa is None) != (pb is None):
                    note(f"{where}: {field} presence differs")
                elif pa is not None:
                    if pa[0] != pb[0]:
                        note(f"{where}: {field} id {pa[0]} != {pb[0]}")
                    elif abs(pa[1] - pb[1]) > score_tol:
                        note(f"{where}: {field} score |{pa[1]} - {pb[1]}| > {score_tol}")
    return diffs


def brute_force_evaluate(
    store: EmbeddingStore, manifest: Manifest, spec: ExclusionSpec
) -> list[MatchOutcome]:
    """Outcomes for a single task configuration, exhaustively."""
    sweep = brute_force_sweep(
        store,
        manifest,
        spec.vt,
        [spec.radius],
        level=spec.level,
        contrast=spec.contrast,
        category_map=spec.category_map,
    )
    return sweep.outcomes[spec.radius]
