import json
from pathlib import Path

import pytest

from shapey.cli import main
from shapey.dataset import Manifest


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    """A small synthetic store on disk plus its manifest."""
    root = tmp_path_factory.mktemp("demo")
    prefix = root / "demo"
    assert (
        run_cli(
            "synth", "--mode", "random", "--seed", "3",
            "--categories", "3", "--objects", "2", "--dim", "8",
            "-o", prefix,
        )
        == 0
    )
    return {
        "embeddings": prefix.with_suffix(".shpy"),
        "index": prefix.with_suffix(".idx"),
        "manifest": prefix.with_suffix(".manifest.json"),
    }


def run_bundle(demo, out, *extra):
    return run_cli(
        "run",
        "--embeddings", demo["embeddings"],
        "--index", demo["index"],
        "--manifest", demo["manifest"],
        "--vts", "pw",
        "--radii", "0-3",
        "--contrast", "none,hard",
        "--panel-radius", "2",
        "-o", out,
        *extra,
    )


class TestManifestCommand:
    def test_default_manifest_has_68200_ids(self, tmp_path):
        out = tmp_path / "manifest.json"
        assert run_cli("manifest", "--default", "-o", out) == 0
        manifest = Manifest.load(out)
        assert manifest.n_rows == 68_200

    def test_small_manifest(self, tmp_path):
        out = tmp_path / "m.json"
        assert run_cli("manifest", "--categories", "2", "--objects", "1", "-o", out) == 0
        assert Manifest.load(out).n_rows == 682


class TestValidateCommand:
    def test_ok(self, demo):
        assert (
            run_cli(
                "validate",
                "--embeddings", demo["embeddings"],
                "--index", demo["index"],
                "--manifest", demo["manifest"],
            )
            == 0
        )

    def test_corrupted_index_fails(self, demo, tmp_path):
        bad = tmp_path / "bad.idx"
        lines = Path(demo["index"]).read_text().splitlines()
        lines[0] = lines[1]
        bad.write_text("".join(f"{l}\n" for l in lines))
        code = run_cli(
            "validate",
            "--embeddings", demo["embeddings"],
            "--index", bad,
            "--manifest", demo["manifest"],
        )
        assert code == 1

    def test_missing_file_is_usage_error(self, demo):
        code = run_cli(
            "validate",
            "--embeddings", "/nonexistent.shpy",
            "--index", demo["index"],
            "--manifest", demo["manifest"],
        )
        assert code == 2


class TestRunCommand:
    def test_bundle_contents(self, demo, tmp_path):
        out = tmp_path / "bundle"
        assert run_bundle(demo, out, "--histogram-refs", "1", "--randomized-control",
                          "--group-size", "2", "--dump-mask", "airplane_01-pw-06") == 0
        for name in (
            "config.json",
            "run_meta.json",
            "outcomes.jsonl",
            "curves.csv",
            "ranks.csv",
            "control-curves.csv",
            "scatter-pw.csv",
            "mask-airplane_01-pw-06-r0.json",
        ):
            assert (out / name).exists(), name
        assert list((out / "plots").glob("*.svg"))
        assert (out / "panel-pw-r2.json").exists()  # primary level/contrast combo
        assert list(out.glob("panel-pw-r2-*.json"))  # remaining combos, suffixed
        assert list((out / "histograms").glob("*.json"))
        config = json.loads((out / "config.json").read_text())
        assert config["vts"] == ["pw"] and config["radii"] == [0, 1, 2, 3]

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("run")
        assert exc.value.code == 2

    def test_deterministic_bundles(self, demo, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_bundle(demo, a) == 0
        assert run_bundle(demo, b) == 0
        names_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        names_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert names_a == names_b
        for rel in names_a:
            if rel.name == "run_meta.json":
                continue  # timestamps live here, nowhere else
            if rel.name == "config.json":
                ca = json.loads((a / rel).read_text())
                cb = json.loads((b / rel).read_text())
                ca.pop("out_dir"), cb.pop("out_dir")
                assert ca == cb
                continue
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_worker_count_does_not_change_results(self, demo, tmp_path):
        a, b = tmp_path / "w1", tmp_path / "w4"
        assert run_bundle(demo, a, "--workers", "1") == 0
        assert run_bundle(demo, b, "--workers", "4") == 0
        for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
            if rel.name in ("run_meta.json", "config.json"):
                continue  # these echo the worker count / wall clock
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_mask_dump_matches_candidate_pool(self, demo, tmp_path):
        out = tmp_path / "bundle"
        assert run_bundle(demo, out, "--dump-mask", "airplane_01-pw-06") == 0
        payload = json.loads((out / "mask-airplane_01-pw-06-r2.json").read_text())
        assert len(payload["positives"]) == 48
        assert all("-cr" not in p for p in payload["positives"])

    def test_soft_contrast_needs_reversed_variant(self, tmp_path):
        prefix = tmp_path / "orig"
        assert run_cli(
            "synth", "--seed", "1", "--categories", "2", "--objects", "1",
            "--dim", "4", "--variants", "original", "-o", prefix,
        ) == 0
        code = run_cli(
            "run",
            "--embeddings", prefix.with_suffix(".shpy"),
            "--index", prefix.with_suffix(".idx"),
            "--manifest", prefix.with_suffix(".manifest.json"),
            "--contrast", "soft",
            "-o", tmp_path / "x",
        )
        assert code == 2


class TestOracleCommand:
    def test_match_exit_zero(self, capsys):
        code = run_cli("oracle", "--seed", "5", "--size", "tiny", "--vts", "p,pw", "--radii", "0-4")
        assert code == 0
        assert "MATCH" in capsys.readouterr().out


class TestReportCommand:
    def test_regenerates_plots(self, demo, tmp_path):
        bundle = tmp_path / "bundle"
        assert run_bundle(demo, bundle) == 0
        plots = tmp_path / "replots"
        assert run_cli("report", "--bundle", bundle, "--out", plots) == 0
        assert list(plots.glob("*.svg"))

    def test_missing_bundle_exits_2(self, tmp_path):
        assert run_cli("report", "--bundle", tmp_path / "nope") == 2


class TestBenchCommand:
    def test_runs_and_writes_json(self, tmp_path, capsys):
        out = tmp_path / "bench.json"
        code = run_cli(
            "bench", "--refs", "16", "--cands", "512", "--dim", "64",
            "--repeats", "1", "--json", out,
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert {r["backend"] for r in payload["results"]} <= {"native", "python"}
        text = capsys.readouterr().out
        assert "GF/s" in text


class TestWorkersEnvFallback:
    def test_env_var_sets_default(self, monkeypatch):
        monkeypatch.setenv("SHAPEY_WORKERS", "5")
        from shapey.cli import _default_workers

        assert _default_workers() == 5

    def test_bad_env_ignored(self, monkeypatch):
        monkeypatch.setenv("SHAPEY_WORKERS", "lots")
        from shapey.cli import _default_workers

        assert _default_workers() == 1
