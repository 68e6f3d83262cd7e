import numpy as np
import pytest

from shapey.dataset import VT, Variant, build_manifest, tiny_config
from shapey.exclusion import ContrastMode, ExclusionError, ExclusionSpec, Level
from shapey.oracle import brute_force_sweep, compare_sweeps
from shapey.scoring import (
    MatchOutcome,
    curve_from_sweep,
    error_curves,
    make_randomized_category_map,
    randomized_category_control,
    rank_of_top_positive,
    read_curves_csv,
    read_outcomes_jsonl,
    run_matching,
    run_matching_sweep,
    run_vt,
    sort_radii,
    write_curves_csv,
    write_outcomes_jsonl,
)
from shapey.store import EmbeddingStore, normalize
from shapey.synth import default_planted_ref

PW = VT.parse("pw")
RADII = [0, 1, 2, 3, 4, 5]


class TestIdealStore:
    def test_zero_error_everywhere(self, tiny_ideal, backend):
        store, manifest = tiny_ideal
        for contrast in ContrastMode:
            radii = RADII + ([None] if contrast is not ContrastMode.NONE else [])
            results = run_vt(store, manifest, PW, radii, contrast=contrast, backend=backend)
            for level in Level:
                for point in curve_from_sweep(results[level]).points:
                    assert point.error_rate == 0.0

    def test_all_outcomes_correct_and_rank_zero(self, tiny_ideal):
        store, manifest = tiny_ideal
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        for radius, outs in sweep.outcomes.items():
            for o in outs:
                assert o.correct_object and o.correct_category
                assert o.object_rank == 0 and o.category_rank == 0


class TestPlantedDistractor:
    def test_error_exactly_at_and_beyond_d(self, tiny_planted):
        store, manifest, config = tiny_planted
        ref = str(default_planted_ref(manifest))
        results = run_vt(store, manifest, PW, RADII)
        for level in Level:
            sweep = results[level]
            wrong = {
                (r, o.reference)
                for r, outs in sweep.outcomes.items()
                for o in outs
                if not o.correct_at_level
            }
            # index 6 reference: radius 5 has no remaining positives (skip)
            assert wrong == {(3, ref), (4, ref)}

    def test_planted_object_rank_is_one(self, tiny_planted):
        store, manifest, _ = tiny_planted
        sweep = run_matching_sweep(store, manifest, PW, [3])
        [bad] = [o for o in sweep.outcomes[3] if not o.correct_object]
        assert bad.object_rank == 1  # only the planted view outscores
        assert bad.top_negative[0].startswith("bench_01-")

    def test_oracle_confirms(self, tiny_planted):
        store, manifest, _ = tiny_planted
        results = run_vt(store, manifest, PW, RADII)
        for level in Level:
            bf = brute_force_sweep(store, manifest, PW, RADII, level=level)
            assert compare_sweeps(results[level], bf) == []


class TestSkipAccounting:
    def test_central_reference_skipped_at_r6(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, [6])
        skipped = set(sweep.skipped[6])
        for obj in manifest.object_names:
            assert f"{obj}-pw-06" in skipped  # zone covers the whole series
            assert f"{obj}-pw-01" not in skipped
        assert len(sweep.outcomes[6]) + len(skipped) == sweep.n_references

    def test_scored_plus_skipped_constant(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, list(range(0, 11)))
        for radius in sweep.outcomes:
            assert (
                len(sweep.outcomes[radius]) + len(sweep.skipped[radius])
                == sweep.n_references
            )

    def test_radius_ten_skips_everyone(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, [10])
        assert not sweep.outcomes[10]
        assert len(sweep.skipped[10]) == sweep.n_references


class TestCurves:
    def _fake(self, flags, radius=2):
        return [
            MatchOutcome(
                reference=f"mug_01-pw-{k + 1:02d}",
                vt="pw",
                level="object",
                contrast="none",
                radius=radius,
                top_positive=("mug_01-xpw-01", 0.9),
                top_negative=("car_01-x-01", 0.5 if ok else 0.99),
                correct_object=ok,
                correct_category=ok,
                object_rank=0 if ok else 1,
                category_rank=0,
                tie=False,
            )
            for k, ok in enumerate(flags)
        ]

    def test_all_correct_flat_zero(self):
        manifest = build_manifest(tiny_config(1, 1, variants=(Variant.ORIGINAL,)))
        [curve] = error_curves(self._fake([True] * 11), manifest)
        assert curve.points[0].error_rate == 0.0
        assert curve.points[0].n_scored == 11
        assert curve.points[0].n_skipped == 0

    def test_all_incorrect_flat_one(self):
        manifest = build_manifest(tiny_config(1, 1, variants=(Variant.ORIGINAL,)))
        [curve] = error_curves(self._fake([False] * 11), manifest)
        assert curve.points[0].error_rate == 1.0

    def test_matches_oracle_curve(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        bf = brute_force_sweep(store, manifest, PW, RADII)
        assert curve_from_sweep(sweep) == curve_from_sweep(bf)

    def test_error_curves_equals_curve_from_sweep(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        [aggregated] = error_curves(sweep.all_outcomes(), manifest)
        assert aggregated == curve_from_sweep(sweep)

    def test_csv_round_trip(self, tmp_path, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        curves = [curve_from_sweep(sweep)]
        path = tmp_path / "curves.csv"
        write_curves_csv(path, curves)
        assert read_curves_csv(path) == curves


class TestRanksAndFlags:
    def test_rank_of_top_positive_counts_strictly_greater(self):
        assert rank_of_top_positive(0.5, np.array([0.9, 0.7, 0.5, 0.1])) == 2
        assert rank_of_top_positive(1.0, np.array([0.9])) == 0

    def test_correct_implies_rank_zero(self, tiny_random):
        store, manifest = tiny_random
        for level in Level:
            sweep = run_matching_sweep(store, manifest, PW, RADII, level=level)
            for outs in sweep.outcomes.values():
                for o in outs:
                    if o.correct_object:
                        assert o.object_rank == 0
                    if level is Level.CATEGORY and o.correct_category:
                        assert o.category_rank == 0

    def test_correctness_monotone_in_radius(self, tiny_random):
        # Positives shrink as the radius grows while negatives stay put, so
        # a correct match at r+1 must also be correct at r.
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        by_ref = {}
        for radius, outs in sweep.outcomes.items():
            for o in outs:
                by_ref.setdefault(o.reference, {})[radius] = o.correct_object
        for flags in by_ref.values():
            for r in RADII[:-1]:
                if r in flags and (r + 1) in flags and flags[r + 1]:
                    assert flags[r]

    def test_category_error_at_most_object_error(self, tiny_random):
        store, manifest = tiny_random
        results = run_vt(store, manifest, PW, RADII)
        obj_curve = curve_from_sweep(results[Level.OBJECT])
        cat_curve = curve_from_sweep(results[Level.CATEGORY])
        for po, pc in zip(obj_curve.points, cat_curve.points):
            assert pc.error_rate <= po.error_rate + 1e-12

    def test_run_matching_single_spec_consistent(self, tiny_random):
        store, manifest = tiny_random
        outs = run_matching(store, manifest, ExclusionSpec(PW, 2))
        sweep = run_matching_sweep(store, manifest, PW, [0, 1, 2, 3])
        assert outs == sweep.outcomes[2]


class TestTies:
    def test_exact_tie_counted_incorrect(self):
        manifest = build_manifest(tiny_config(2, 1, variants=(Variant.ORIGINAL,)))
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((manifest.n_rows, 8)).astype(np.float32)
        # Plant a negative row byte-identical to the reference's only strong
        # positive: both score identically against the reference.
        ref_row = manifest.row_of["airplane_01-pw-06"]
        pos_row = manifest.row_of["airplane_01-pw-01"]
        neg_row = manifest.row_of["bench_01-x-01"]
        rows[pos_row] = rows[ref_row] * 0.9 + 0.1
        rows[neg_row] = rows[pos_row]
        store = normalize(EmbeddingStore(rows, manifest.id_strings))
        sweep = run_matching_sweep(store, manifest, PW, [4])
        [out] = [o for o in sweep.outcomes[4] if o.reference == "airplane_01-pw-06"]
        if out.top_positive[1] == out.top_negative[1]:
            assert out.tie and not out.correct_object
        bf = brute_force_sweep(store, manifest, PW, [4])
        assert compare_sweeps(sweep, bf) == []


class TestRandomizedControl:
    def test_map_is_constrained_partition(self):
        manifest = build_manifest(tiny_config(4, 3, (Variant.ORIGINAL,)))
        mapping = make_randomized_category_map(manifest, seed=5, group_size=4)
        assert sorted(mapping) == sorted(manifest.object_names)
        groups = {}
        for obj, g in mapping.items():
            groups.setdefault(g, []).append(obj)
        assert all(len(objs) == 4 for objs in groups.values())
        for objs in groups.values():
            cats = {manifest.category_of(o) for o in objs}
            assert len(cats) == len(objs)

    def test_same_seed_same_map(self):
        manifest = build_manifest(tiny_config(4, 3, (Variant.ORIGINAL,)))
        a = make_randomized_category_map(manifest, seed=9, group_size=3)
        b = make_randomized_category_map(manifest, seed=9, group_size=3)
        assert a == b

    def test_indivisible_group_size_rejected(self):
        manifest = build_manifest(tiny_config(4, 3, (Variant.ORIGINAL,)))
        with pytest.raises(ExclusionError, match="divisor"):
            make_randomized_category_map(manifest, seed=0, group_size=5)

    def test_oversized_category_rejected(self):
        manifest = build_manifest(tiny_config(2, 6, (Variant.ORIGINAL,)))
        with pytest.raises(ExclusionError, match="group size"):
            make_randomized_category_map(manifest, seed=0, group_size=6)

    def test_singleton_groups_equal_object_level(self, tiny_random):
        store, manifest = tiny_random
        control = randomized_category_control(
            store, manifest, PW, RADII, seed=3, group_size=1
        )
        object_curve = curve_from_sweep(run_matching_sweep(store, manifest, PW, RADII))
        assert [p.error_rate for p in control.points] == [
            p.error_rate for p in object_curve.points
        ]
        assert [p.n_scored for p in control.points] == [
            p.n_scored for p in object_curve.points
        ]

    def test_same_seed_identical_curves(self, tiny_random):
        store, manifest = tiny_random
        a = randomized_category_control(store, manifest, PW, RADII, seed=11, group_size=4)
        b = randomized_category_control(store, manifest, PW, RADII, seed=11, group_size=4)
        assert a == b

    def test_permuted_map_matches_oracle(self, tiny_random):
        store, manifest = tiny_random
        mapping = make_randomized_category_map(manifest, seed=2, group_size=4)
        sweep = run_matching_sweep(
            store, manifest, PW, RADII, level=Level.CATEGORY, category_map=mapping
        )
        bf = brute_force_sweep(
            store, manifest, PW, RADII, level=Level.CATEGORY, category_map=mapping
        )
        assert compare_sweeps(sweep, bf) == []


class TestValidationErrors:
    def test_variant_missing_fails_before_compute(self):
        manifest = build_manifest(tiny_config(2, 2, variants=(Variant.ORIGINAL,)))
        rng = np.random.default_rng(0)
        store = normalize(
            EmbeddingStore(
                rng.standard_normal((manifest.n_rows, 4)).astype(np.float32),
                manifest.id_strings,
            )
        )
        with pytest.raises(ExclusionError, match="contrast-reversed"):
            run_matching_sweep(store, manifest, PW, [0], contrast=ContrastMode.SOFT)

    def test_unnormalized_store_rejected(self, tiny_random):
        _, manifest = tiny_random
        rng = np.random.default_rng(0)
        raw = EmbeddingStore(
            rng.standard_normal((manifest.n_rows, 4)).astype(np.float32),
            manifest.id_strings,
        )
        with pytest.raises(ExclusionError, match="normalized"):
            run_matching_sweep(raw, manifest, PW, [0])

    def test_none_radius_with_no_contrast_rejected(self, tiny_random):
        store, manifest = tiny_random
        with pytest.raises(ExclusionError):
            run_matching_sweep(store, manifest, PW, [None], contrast=ContrastMode.NONE)


class TestOutcomeSerialization:
    def test_jsonl_round_trip(self, tmp_path, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(
            store, manifest, PW, [None, 0, 2], contrast=ContrastMode.HARD
        )
        outs = sweep.all_outcomes()
        path = tmp_path / "outcomes.jsonl"
        write_outcomes_jsonl(path, outs)
        assert read_outcomes_jsonl(path) == outs

    def test_sort_radii_none_first(self):
        assert sort_radii([3, None, 0, 7]) == [None, 0, 3, 7]
