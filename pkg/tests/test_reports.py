import json

import numpy as np
import pytest

from shapey.dataset import VT, parse_image_id
from shapey.exclusion import ContrastMode, ExclusionSpec, Level
from shapey.reports import (
    RANK_BUCKETS,
    ScoreHistograms,
    error_panel,
    emit_plots,
    panel_layout_dict,
    panel_to_json_dict,
    rank_histogram,
    read_scatter_csv,
    scatter_data,
    scatter_failure_fractions,
    score_histograms,
    write_rank_histograms_csv,
    write_scatter_csv,
)
from shapey.scoring import curve_from_sweep, run_matching_sweep, run_vt
from shapey.synth import default_planted_ref
from shapey.engine import tuning_curve

PW = VT.parse("pw")
RADII = [0, 1, 2, 3, 4, 5]


class TestScoreHistograms:
    def test_mass_equals_pool_sizes(self, tiny_random):
        store, manifest = tiny_random
        ref = parse_image_id("airplane_01-pw-06")
        spec = ExclusionSpec(PW, 2)
        h = score_histograms(store, manifest, ref, spec, RADII)
        assert h.positive_counts[2].sum() == 48  # 8 series x 6 eligible indices
        assert h.positive_counts[0].sum() == 8 * 10  # zone of one index
        assert h.negative_counts.sum() == (manifest.n_objects - 1) * 341

    def test_top_positive_trace_non_increasing(self, tiny_random):
        store, manifest = tiny_random
        ref = parse_image_id("airplane_02-pw-04")
        h = score_histograms(store, manifest, ref, ExclusionSpec(PW, 0), RADII)
        trace = [h.top_positive[r] for r in RADII if r in h.top_positive]
        assert all(a >= b for a, b in zip(trace, trace[1:]))

    def test_maxima_match_outcomes(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        ref = parse_image_id("boat_01-pw-06")
        h = score_histograms(store, manifest, ref, ExclusionSpec(PW, 0), RADII)
        for radius in RADII:
            match = [o for o in sweep.outcomes[radius] if o.reference == str(ref)]
            if not match:
                assert radius not in h.top_positive
                continue
            [o] = match
            assert abs(h.top_positive[radius] - o.top_positive[1]) < 1e-9
            assert abs(h.top_negative - o.top_negative[1]) < 1e-9

    def test_json_round_trip(self, tiny_random):
        store, manifest = tiny_random
        ref = parse_image_id("airplane_01-pw-06")
        spec = ExclusionSpec(PW, None, contrast=ContrastMode.HARD)
        h = score_histograms(store, manifest, ref, spec, [None, 0, 2])
        back = ScoreHistograms.from_json_dict(json.loads(json.dumps(h.to_json_dict())))
        assert back.top_positive == h.top_positive
        assert all(
            np.array_equal(back.positive_counts[r], h.positive_counts[r])
            for r in h.positive_counts
        )


class TestScatter:
    def test_all_correct_above_diagonal(self, tiny_ideal):
        store, manifest = tiny_ideal
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        points = scatter_data(sweep.all_outcomes())
        assert points and all(p.top_positive > p.top_negative for p in points)

    def test_point_count_is_total_scored(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        points = scatter_data(sweep.all_outcomes())
        assert len(points) == sum(len(v) for v in sweep.outcomes.values())

    def test_failure_fractions_reproduce_error_curve(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        fractions = scatter_failure_fractions(scatter_data(sweep.all_outcomes()))
        for point in curve_from_sweep(sweep).points:
            assert fractions[point.radius] == point.error_rate

    def test_csv_round_trip(self, tmp_path, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, [0, 2])
        rows = [("object", "none", p) for p in scatter_data(sweep.all_outcomes())]
        path = tmp_path / "scatter-pw.csv"
        write_scatter_csv(path, rows)
        back = read_scatter_csv(path)
        assert back == rows


class TestErrorPanel:
    def test_empty_on_all_correct(self, tiny_ideal):
        store, manifest = tiny_ideal
        sweep = run_matching_sweep(store, manifest, PW, [2])
        rows = error_panel(sweep.all_outcomes(), store, manifest, ExclusionSpec(PW, 2))
        assert rows == []

    def test_planted_distractor_tops_panel(self, tiny_planted):
        store, manifest, config = tiny_planted
        sweep = run_matching_sweep(store, manifest, PW, [3])
        spec = ExclusionSpec(PW, 3)
        rows = error_panel(sweep.all_outcomes(), store, manifest, spec)
        assert len(rows) == 1
        row = rows[0]
        assert row.reference == str(default_planted_ref(manifest))
        assert row.entries[0].group == "bench_01"  # the planted distractor object
        assert not row.entries[0].positive
        scores = [e.score for e in row.entries]
        assert scores == sorted(scores, reverse=True)

    def test_positive_flag_agrees_with_outcome(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, [2])
        spec = ExclusionSpec(PW, 2)
        rows = error_panel(
            sweep.all_outcomes(), store, manifest, spec, n_rows=12, selection="all"
        )
        by_ref = {o.reference: o for o in sweep.outcomes[2]}
        for row in rows:
            outcome = by_ref[row.reference]
            assert row.entries[0].positive == outcome.correct_object

    def test_nearest_in_series_distance(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, [2])
        spec = ExclusionSpec(PW, 2)
        rows = error_panel(
            sweep.all_outcomes(), store, manifest, spec, n_rows=30, selection="all"
        )
        for row in rows:
            ref = parse_image_id(row.reference)
            near = parse_image_id(row.nearest_in_series.image_id)
            assert near.vt == ref.vt and near.object_name == ref.object_name
            assert abs(near.index - ref.index) == 3  # exactly r_e + 1

    def test_worst_rank_first_ordering(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, [2])
        spec = ExclusionSpec(PW, 2)
        rows = error_panel(
            sweep.all_outcomes(), store, manifest, spec, n_rows=10, selection="worst-rank-first"
        )
        by_ref = {o.reference: o.object_rank for o in sweep.outcomes[2]}
        ranks = [by_ref[r.reference] for r in rows]
        assert ranks == sorted(ranks, reverse=True)

    def test_layout_paths(self, tmp_path, tiny_planted):
        store, manifest, _ = tiny_planted
        sweep = run_matching_sweep(store, manifest, PW, [3])
        spec = ExclusionSpec(PW, 3)
        rows = error_panel(sweep.all_outcomes(), store, manifest, spec)
        layout = panel_layout_dict(rows, spec, tmp_path / "imgs")
        entry = layout["grid"][0]
        assert entry["reference"].endswith("airplane_01-pw-06.png")
        payload = panel_to_json_dict(rows, spec)
        assert payload["radius"] == 3 and payload["rows"][0]["correct"] is False

    def test_bad_selection_rejected(self, tiny_random):
        store, manifest = tiny_random
        with pytest.raises(ValueError, match="selection"):
            error_panel([], store, manifest, ExclusionSpec(PW, 2), selection="chaotic")


class TestRankHistogram:
    def test_buckets_and_totals(self, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, [0, 2])
        hist = rank_histogram(sweep.all_outcomes(), Level.OBJECT)
        for radius, buckets in hist.items():
            assert set(buckets) == set(RANK_BUCKETS)
            assert sum(buckets.values()) == len(sweep.outcomes[radius])
        correct = sum(1 for o in sweep.outcomes[2] if o.correct_object)
        assert hist[2]["0"] == correct

    def test_csv_writer(self, tmp_path, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, [2])
        hist = rank_histogram(sweep.all_outcomes(), Level.OBJECT)
        path = tmp_path / "ranks.csv"
        write_rank_histograms_csv(path, {("pw", "object", "none"): hist})
        lines = path.read_text().splitlines()
        assert lines[0] == "vt,level,contrast,radius,bucket,count"
        assert sum(int(l.split(",")[-1]) for l in lines[1:]) == len(sweep.outcomes[2])


class TestEmitPlots:
    def test_no_data_no_files(self, tmp_path):
        assert emit_plots(tmp_path / "plots") == []
        assert not (tmp_path / "plots").exists()

    def test_single_curve_one_svg_with_polyline_per_level(self, tmp_path, tiny_random):
        store, manifest = tiny_random
        results = run_vt(store, manifest, PW, RADII)
        curves = [curve_from_sweep(results[lv]) for lv in Level]
        [path] = emit_plots(tmp_path / "plots", curves=curves)
        svg = path.read_text()
        assert svg.count("<polyline") == 2
        assert "<svg" in svg and "</svg>" in svg

    def test_byte_identical_regeneration(self, tmp_path, tiny_random):
        store, manifest = tiny_random
        sweep = run_matching_sweep(store, manifest, PW, RADII)
        curves = [curve_from_sweep(sweep)]
        points = {"pw": scatter_data(sweep.all_outcomes())}
        ref = parse_image_id("airplane_01-pw-06")
        hists = [score_histograms(store, manifest, ref, ExclusionSpec(PW, 0), RADII)]
        tuning = {"airplane_01-pw": tuning_curve(store, manifest, "airplane_01", PW)}
        a = emit_plots(tmp_path / "a", curves=curves, scatter=points, histograms=hists, tuning=tuning)
        b = emit_plots(tmp_path / "b", curves=curves, scatter=points, histograms=hists, tuning=tuning)
        assert [p.name for p in a] == [p.name for p in b]
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()
