"""Operator command line: reproducible runs tying the modules together.

Subcommands: manifest, validate, synth, run, oracle, report, bench.
Exit codes: 0 success, 1 evaluation found failures (validate, oracle diff),
2 usage or input errors. All randomness flows from explicit --seed flags;
timestamps appear only in run_meta.json so result bundles stay diffable.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bench import format_results, run_bench
from .dataset import (
    DatasetConfig,
    DEFAULT_CATEGORIES,
    ImageId,
    Manifest,
    Variant,
    VT,
    build_manifest,
    enumerate_vts,
)
from .engine import BackendError, TileConfig, get_backend, tuning_curve
from .exclusion import ContrastMode, ExclusionSpec, Level, Radius, candidate_pool
from .oracle import brute_force_sweep, compare_sweeps
from .reports import (
    ScoreHistograms,
    emit_plots,
    error_panel,
    panel_layout_dict,
    panel_to_json_dict,
    rank_histogram,
    read_scatter_csv,
    scatter_data,
    score_histograms,
    write_rank_histograms_csv,
    write_scatter_csv,
)
from .scoring import (
    curve_from_sweep,
    randomized_category_control,
    read_curves_csv,
    run_vt,
    write_curves_csv,
    write_outcomes_jsonl,
)
from .store import normalize, read_embeddings, validate_against_manifest, write_embeddings
from .synth import SyntheticConfig, generate


class CliError(Exception):
    """Usage or input problem; exits with status 2."""


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run's results; echoed into the bundle."""

    embeddings: str
    index: str
    manifest: str
    vts: tuple[str, ...]
    radii: tuple[Optional[int], ...]
    levels: tuple[str, ...]
    contrasts: tuple[str, ...]
    out_dir: str
    workers: int = 1
    seed: int = 0
    backend: str = "auto"
    ref_tile: int = 256
    cand_tile: int = 4096
    randomized_control: bool = False
    group_size: int = 10
    histogram_refs: int = 0
    panel_radius: Optional[int] = 2
    images_dir: Optional[str] = None
    dump_masks: tuple[str, ...] = ()
    tuning_objects: int = 0

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["radii"] = ["none" if r is None else r for r in self.radii]
        return d


def _parse_radii(text: str) -> tuple[Optional[int], ...]:
    out: list[Optional[int]] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part == "none":
            out.append(None)
        elif "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise CliError(f"no radii in {text!r}")
    return tuple(out)


def _parse_vts(text: str) -> tuple[VT, ...]:
    if text == "all":
        return enumerate_vts()
    return tuple(VT.parse(p.strip()) for p in text.split(",") if p.strip())


def _parse_levels(text: str) -> tuple[Level, ...]:
    return tuple(Level(p.strip()) for p in text.split(",") if p.strip())


def _parse_contrasts(text: str) -> tuple[ContrastMode, ...]:
    return tuple(ContrastMode(p.strip()) for p in text.split(",") if p.strip())


def _load_store(embeddings: str, index: str, manifest_path: str):
    for p in (embeddings, index, manifest_path):
        if not Path(p).exists():
            raise CliError(f"file not found: {p}")
    manifest = Manifest.load(manifest_path)
    store = read_embeddings(embeddings, index)
    report = validate_against_manifest(store, manifest)
    if not report.ok:
        raise CliError(f"store does not match manifest: {report.summary()}")
    return normalize(store), manifest


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_manifest(args) -> int:
    if args.default:
        config = DatasetConfig()
    else:
        variants = (
            (Variant.ORIGINAL, Variant.CONTRAST_REVERSED)
            if args.variants == "both"
            else (Variant.ORIGINAL,)
        )
        config = DatasetConfig(
            categories=DEFAULT_CATEGORIES[: args.categories],
            objects_per_category=args.objects,
            variants=variants,
        )
    manifest = build_manifest(config)
    manifest.save(args.output)
    print(f"wrote {manifest.n_rows} ids to {args.output}")
    return 0


def cmd_validate(args) -> int:
    for p in (args.embeddings, args.index, args.manifest):
        if not Path(p).exists():
            raise CliError(f"file not found: {p}")
    manifest = Manifest.load(args.manifest)
    store = read_embeddings(args.embeddings, args.index)
    report = validate_against_manifest(store, manifest)
    if not report.ok:
        print(f"FAIL: {report.summary()}")
        return 1
    try:
        normalize(store)
    except Exception as e:  # zero rows etc.
        print(f"FAIL: {e}")
        return 1
    print(f"OK: {store.n_rows} rows x dim {store.dim} match the manifest")
    return 0


def cmd_synth(args) -> int:
    variants = (
        (Variant.ORIGINAL, Variant.CONTRAST_REVERSED)
        if args.variants == "both"
        else (Variant.ORIGINAL,)
    )
    config = SyntheticConfig(
        n_categories=args.categories,
        objects_per_category=args.objects,
        dim=args.dim,
        seed=args.seed,
        mode=args.mode,
        variants=variants,
        lam=getattr(args, "lam"),
        planted_distance=args.planted_distance,
        planted_ref=args.planted_ref,
        planted_distractor_object=args.planted_distractor,
    )
    store, manifest = generate(config)
    prefix = Path(args.output)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    emb = prefix.with_suffix(".shpy")
    idx = prefix.with_suffix(".idx")
    man = prefix.with_suffix(".manifest.json")
    write_embeddings(emb, idx, store.rows, store.ids)
    manifest.save(man)
    print(f"wrote {store.n_rows} x {store.dim} ({args.mode}) to {emb}, {idx}, {man}")
    return 0


def _spec_radii(radii: Sequence[Radius], contrast: ContrastMode) -> list[Radius]:
    rs = [r for r in radii if r is not None or contrast is not ContrastMode.NONE]
    if contrast is not ContrastMode.NONE and None not in rs:
        rs = [None, *rs]  # contrast-exclusion curves start at the no-exclusion point
    return rs


def cmd_run(args) -> int:
    config = RunConfig(
        embeddings=args.embeddings,
        index=args.index,
        manifest=args.manifest,
        vts=tuple(v.label for v in _parse_vts(args.vts)),
        radii=_parse_radii(args.radii),
        levels=tuple(l.value for l in _parse_levels(args.levels)),
        contrasts=tuple(c.value for c in _parse_contrasts(args.contrast)),
        out_dir=args.out,
        workers=args.workers,
        seed=args.seed,
        backend=args.backend,
        ref_tile=args.ref_tile,
        cand_tile=args.cand_tile,
        randomized_control=args.randomized_control,
        group_size=args.group_size,
        histogram_refs=args.histogram_refs,
        panel_radius=args.panel_radius,
        images_dir=args.images_dir,
        dump_masks=tuple(args.dump_mask or ()),
        tuning_objects=args.tuning_objects,
    )
    t_start = time.time()
    store, manifest = _load_store(config.embeddings, config.index, config.manifest)
    needed = {ContrastMode(c) for c in config.contrasts}
    if needed != {ContrastMode.NONE} and Variant.CONTRAST_REVERSED not in manifest.variants:
        raise CliError("contrast exclusions need the contrast-reversed variant")

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(config.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )

    backend = get_backend(config.backend)
    tile = TileConfig(
        ref_tile=config.ref_tile, cand_tile=config.cand_tile, workers=config.workers
    )
    levels = tuple(Level(l) for l in config.levels)
    vts = tuple(VT.parse(v) for v in config.vts)

    all_outcomes = []
    curves = []
    scatter_rows: dict[str, list] = {v.label: [] for v in vts}
    n_ties = 0
    for vt in vts:
        for contrast_name in config.contrasts:
            contrast = ContrastMode(contrast_name)
            radii = _spec_radii(config.radii, contrast)
            results = run_vt(
                store,
                manifest,
                vt,
                radii,
                levels=levels,
                contrast=contrast,
                tile=tile,
                backend=backend,
            )
            for level in levels:
                sweep = results[level]
                outs = sweep.all_outcomes()
                all_outcomes.extend(outs)
                curves.append(curve_from_sweep(sweep))
                n_ties += sum(1 for o in outs if o.tie)
                scatter_rows[vt.label].extend(
                    (level.value, contrast.value, p) for p in scatter_data(outs)
                )

    write_outcomes_jsonl(out_dir / "outcomes.jsonl", all_outcomes)
    write_curves_csv(out_dir / "curves.csv", curves)
    for vt_label, rows in scatter_rows.items():
        if rows:
            write_scatter_csv(out_dir / f"scatter-{vt_label}.csv", rows)

    rank_hists = {}
    for vt in vts:
        for contrast_name in config.contrasts:
            for level in levels:
                subset = [
                    o
                    for o in all_outcomes
                    if o.vt == vt.label and o.contrast == contrast_name and o.level == level.value
                ]
                hist = rank_histogram(subset, level)
                if hist:
                    rank_hists[(vt.label, level.value, contrast_name)] = hist
    if rank_hists:
        write_rank_histograms_csv(out_dir / "ranks.csv", rank_hists)

    control_curves = []
    if config.randomized_control:
        for vt in vts:
            control_curves.append(
                randomized_category_control(
                    store,
                    manifest,
                    vt,
                    [r for r in config.radii if r is not None],
                    seed=config.seed,
                    group_size=config.group_size,
                    tile=tile,
                    backend=backend,
                )
            )
        write_curves_csv(out_dir / "control-curves.csv", control_curves)

    # Panels: errors-only rows at the configured radius.
    panel_radius = config.panel_radius
    int_radii = [r for r in config.radii if r is not None]
    if panel_radius is None and int_radii:
        panel_radius = int_radii[0]
    if panel_radius in config.radii:
        for vt in vts:
            for contrast_name in config.contrasts:
                for level in levels:
                    spec = ExclusionSpec(
                        vt=vt,
                        radius=panel_radius,
                        level=level,
                        contrast=ContrastMode(contrast_name),
                    )
                    rows = error_panel(
                        all_outcomes, store, manifest, spec, backend=backend
                    )
                    if not rows:
                        continue
                    # The run's first level/contrast combo gets the canonical
                    # name; other combos are suffixed.
                    if level is levels[0] and contrast_name == config.contrasts[0]:
                        stem = f"panel-{vt.label}-r{panel_radius}"
                    else:
                        stem = f"panel-{vt.label}-r{panel_radius}-{level.value}-{contrast_name}"
                    (out_dir / f"{stem}.json").write_text(
                        json.dumps(panel_to_json_dict(rows, spec), indent=2, sort_keys=True)
                        + "\n"
                    )
                    if config.images_dir and Path(config.images_dir).is_dir():
                        (out_dir / f"{stem}.layout.json").write_text(
                            json.dumps(
                                panel_layout_dict(rows, spec, config.images_dir),
                                indent=2,
                                sort_keys=True,
                            )
                            + "\n"
                        )

    # Histograms for the first K references of each vt.
    histograms: list[ScoreHistograms] = []
    if config.histogram_refs > 0:
        (out_dir / "histograms").mkdir(exist_ok=True)
        for vt in vts:
            contrast = ContrastMode(config.contrasts[0])
            spec = ExclusionSpec(
                vt=vt,
                radius=_spec_radii(config.radii, contrast)[0],
                level=levels[0],
                contrast=contrast,
            )
            refs = [
                i
                for i in manifest.ids
                if i.variant is Variant.ORIGINAL and i.vt == vt
            ][: config.histogram_refs]
            for ref in refs:
                h = score_histograms(
                    store,
                    manifest,
                    ref,
                    spec,
                    _spec_radii(config.radii, contrast),
                    backend=backend,
                )
                (out_dir / "histograms" / f"{ref}.json").write_text(
                    json.dumps(h.to_json_dict(), indent=2, sort_keys=True) + "\n"
                )
                histograms.append(h)

    # Mask dumps for debugging candidate eligibility.
    for ref_str in config.dump_masks:
        ref = ImageId.parse(ref_str)
        contrast = ContrastMode(config.contrasts[0])
        for radius in _spec_radii(config.radii, contrast):
            spec = ExclusionSpec(
                vt=ref.vt, radius=radius, level=levels[0], contrast=contrast
            )
            mask = candidate_pool(ref, spec, store, manifest)
            tag = "none" if radius is None else radius
            (out_dir / f"mask-{ref_str}-r{tag}.json").write_text(
                json.dumps(
                    {
                        "reference": ref_str,
                        "vt": ref.vt.label,
                        "radius": radius,
                        "level": levels[0].value,
                        "contrast": contrast.value,
                        "positives": [str(manifest.ids[r]) for r in mask.positives],
                        "negatives": [str(manifest.ids[r]) for r in mask.negatives],
                    },
                    indent=2,
                    sort_keys=True,
                )
                + "\n"
            )

    tuning = {}
    if config.tuning_objects > 0:
        for vt in vts:
            for obj in manifest.object_names[: config.tuning_objects]:
                tuning[f"{obj}-{vt.label}"] = tuning_curve(
                    store, manifest, obj, vt, backend=backend
                )

    scatter_by_vt = {
        vt_label: [p for (_lv, _ct, p) in rows]
        for vt_label, rows in scatter_rows.items()
        if rows
    }
    emit_plots(
        out_dir / "plots",
        curves=curves + control_curves,
        scatter=scatter_by_vt,
        histograms=histograms,
        tuning=tuning,
    )

    meta = {
        "version": __version__,
        "numpy": np.__version__,
        "backend": getattr(backend, "NAME", "unknown"),
        "workers": config.workers,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t_start)),
        "duration_seconds": round(time.time() - t_start, 3),
        "n_outcomes": len(all_outcomes),
        "n_ties": n_ties,
    }
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote report bundle to {out_dir} ({len(all_outcomes)} outcomes, {n_ties} ties)")
    return 0


def cmd_oracle(args) -> int:
    sizes = {"tiny": (4, 3, 16), "small": (6, 4, 24)}
    if args.size not in sizes:
        raise CliError(f"--size must be one of {sorted(sizes)}")
    n_cat, n_obj, dim = sizes[args.size]
    config = SyntheticConfig(
        n_categories=n_cat,
        objects_per_category=n_obj,
        dim=dim,
        seed=args.seed,
        mode=args.mode,
    )
    store, manifest = generate(config)
    store = normalize(store)
    vts = _parse_vts(args.vts)
    radii = list(_parse_radii(args.radii))
    backend = get_backend(args.backend)
    tile = TileConfig(workers=args.workers)

    n_checked = 0
    for vt in vts:
        for contrast in (ContrastMode.NONE, ContrastMode.SOFT, ContrastMode.HARD):
            rs = _spec_radii(radii, contrast)
            results = run_vt(
                store,
                manifest,
                vt,
                rs,
                contrast=contrast,
                tile=tile,
                backend=backend,
            )
            for level in Level:
                reference = brute_force_sweep(
                    store, manifest, vt, rs, level=level, contrast=contrast
                )
                diffs = compare_sweeps(results[level], reference)
                n_checked += 1
                if diffs:
                    print(f"MISMATCH ({len(diffs)} differences):")
                    for d in diffs[:20]:
                        print(f"  {d}")
                    return 1
    print(f"MATCH: engine and brute-force oracle agree on {n_checked} sweeps")
    return 0


def cmd_report(args) -> int:
    bundle = Path(args.bundle)
    if not bundle.is_dir():
        raise CliError(f"bundle directory not found: {bundle}")
    curves = []
    curves_path = bundle / "curves.csv"
    if curves_path.exists():
        curves = read_curves_csv(curves_path)
    scatter = {}
    for path in sorted(bundle.glob("scatter-*.csv")):
        vt_label = path.stem.removeprefix("scatter-")
        scatter[vt_label] = [p for (_lv, _ct, p) in read_scatter_csv(path)]
    histograms = []
    for path in sorted((bundle / "histograms").glob("*.json")) if (bundle / "histograms").is_dir() else []:
        histograms.append(ScoreHistograms.from_json_dict(json.loads(path.read_text())))
    out = Path(args.out) if args.out else bundle / "plots"
    written = emit_plots(out, curves=curves, scatter=scatter, histograms=histograms)
    if not written:
        print("no report data found; nothing to plot")
        return 0
    print(f"wrote {len(written)} plots to {out}")
    return 0


def cmd_bench(args) -> int:
    backends = None
    if args.backend != "both":
        backends = (args.backend,)
    results, deviation = run_bench(
        n_refs=args.refs,
        n_cands=args.cands,
        dim=args.dim,
        seed=args.seed,
        workers=args.workers,
        backends=backends,
        repeats=args.repeats,
    )
    print(format_results(results, deviation))
    if args.json:
        payload = {
            "results": [asdict(r) for r in results],
            "max_backend_deviation": deviation,
        }
        Path(args.json).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapey",
        description="Shape-recognition benchmarking of embedding models "
        "via masked nearest-neighbor matching.",
    )
    parser.add_argument("--version", action="version", version=f"shapey {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manifest", help="write a dataset manifest")
    p.add_argument("--default", action="store_true", help="full 20x10 image set")
    p.add_argument("--categories", type=int, default=20)
    p.add_argument("--objects", type=int, default=10)
    p.add_argument("--variants", choices=("original", "both"), default="original")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("validate", help="check an embedding file against a manifest")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic embedding store")
    p.add_argument(
        "--mode",
        choices=("ideal", "tuned-decay", "planted-distractor", "random"),
        default="random",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--planted-distance", type=int, default=3)
    p.add_argument("--planted-ref", default=None)
    p.add_argument("--planted-distractor", default=None)
    p.add_argument("--variants", choices=("original", "both"), default="both")
    p.add_argument("-o", "--output", required=True, help="output path prefix")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the matching protocol, write a report bundle")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--vts", default="pw", help='comma-separated series labels or "all"')
    p.add_argument("--radii", default="0-9", help='e.g. "0-5" or "none,0,1,2"')
    p.add_argument("--levels", default="object,category")
    p.add_argument("--contrast", default="none", help="comma list of none,soft,hard")
    p.add_argument("-o", "--out", required=True, help="report bundle directory")
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default="auto", choices=("auto", "native", "python"))
    p.add_argument("--ref-tile", type=int, default=256)
    p.add_argument("--cand-tile", type=int, default=4096)
    p.add_argument("--randomized-control", action="store_true")
    p.add_argument("--group-size", type=int, default=10)
    p.add_argument("--histogram-refs", type=int, default=0)
    p.add_argument("--panel-radius", type=int, default=2)
    p.add_argument("--images-dir", default=None)
    p.add_argument("--dump-mask", action="append", metavar="IMAGE_ID")
    p.add_argument("--tuning-objects", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="diff the engine against the brute-force oracle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", default="tiny", choices=("tiny", "small"))
    p.add_argument("--mode", default="random")
    p.add_argument("--vts", default="all")
    p.add_argument("--radii", default="0-5")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--backend", default="auto", choices=("auto", "native", "python"))
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="regenerate plots from a report bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="compare kernel backends")
    p.add_argument("--refs", type=int, default=256)
    p.add_argument("--cands", type=int, default=8192)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--backend", default="both", choices=("both", "native", "python"))
    p.add_argument("--json", default=None, help="also write results as JSON")
    p.set_defaults(func=cmd_bench)

    return parser


def _default_workers() -> int:
    import os

    env = os.environ.get("SHAPEY_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, BackendError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
