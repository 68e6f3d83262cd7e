"""Diagnostic artifacts: score histograms, scatter data, error panels, SVG plots.

Everything here is derived from stored outcomes plus targeted engine
queries, and all emitted files are deterministic: the same data produces
byte-identical output, which keeps report bundles diffable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .dataset import ImageId, Manifest, SERIES_LENGTH
from .engine import group_best, pairwise_scores
from .exclusion import ExclusionSpec, Level, Radius, candidate_pool
from .scoring import ErrorCurve, MatchOutcome, sort_radii
from .store import EmbeddingStore

DEFAULT_BINS = 100
PANEL_SELECTIONS = ("errors-only", "worst-rank-first", "all")


@dataclass(frozen=True)
class ScoreHistograms:
    """Similarity-score distributions for one reference across radii."""

    reference: str
    vt: str
    level: str
    contrast: str
    bin_edges: np.ndarray  # n_bins + 1 edges spanning [-1, 1]
    positive_counts: dict[Radius, np.ndarray]
    negative_counts: np.ndarray
    top_positive: dict[Radius, float]
    top_negative: Optional[float]

    def to_json_dict(self) -> dict:
        def key(r: Radius) -> str:
            return "none" if r is None else str(r)

        return {
            "reference": self.reference,
            "vt": self.vt,
            "level": self.level,
            "contrast": self.contrast,
            "bin_edges": [float(e) for e in self.bin_edges],
            "positive_counts": {
                key(r): [int(c) for c in v] for r, v in self.positive_counts.items()
            },
            "negative_counts": [int(c) for c in self.negative_counts],
            "top_positive": {key(r): v for r, v in self.top_positive.items()},
            "top_negative": self.top_negative,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScoreHistograms":
        def radius(k: str) -> Radius:
            return None if k == "none" else int(k)

        return cls(
            reference=d["reference"],
            vt=d["vt"],
            level=d["level"],
            contrast=d["contrast"],
            bin_edges=np.asarray(d["bin_edges"]),
            positive_counts={
                radius(k): np.asarray(v, dtype=np.int64)
                for k, v in d["positive_counts"].items()
            },
            negative_counts=np.asarray(d["negative_counts"], dtype=np.int64),
            top_positive={radius(k): v for k, v in d["top_positive"].items()},
            top_negative=d["top_negative"],
        )


@dataclass(frozen=True)
class ScatterPoint:
    reference: str
    radius: Radius
    top_negative: float  # x
    top_positive: float  # y

    @property
    def failed(self) -> bool:
        # On-diagonal points are recorded ties, counted as failures.
        return self.top_positive <= self.top_negative


@dataclass(frozen=True)
class PanelEntry:
    group: str
    image_id: str
    score: float
    positive: bool


@dataclass(frozen=True)
class ErrorPanelRow:
    reference: str
    entries: tuple[PanelEntry, ...]  # descending score, top groups only
    top_positive: PanelEntry
    nearest_in_series: Optional[PanelEntry]
    correct: bool


def score_histograms(
    store: EmbeddingStore,
    manifest: Manifest,
    reference: ImageId,
    spec: ExclusionSpec,
    radii: Sequence[Radius],
    n_bins: int = DEFAULT_BINS,
    backend=None,
) -> ScoreHistograms:
    """Histogram the positive pool per radius and the negative pool once.

    Scores are clipped to [-1, 1] (float fuzz on unit rows can poke a few
    ulps past the cosine range) so histogram mass always equals pool size.
    """
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    ref_row = store.row_of(reference)

    positive_counts: dict[Radius, np.ndarray] = {}
    top_positive: dict[Radius, float] = {}
    negative_counts = np.zeros(n_bins, dtype=np.int64)
    top_negative: Optional[float] = None

    for i, radius in enumerate(sort_radii(radii)):
        rspec = ExclusionSpec(
            vt=spec.vt,
            radius=radius,
            level=spec.level,
            contrast=spec.contrast,
            category_map=spec.category_map,
        )
        mask = candidate_pool(reference, rspec, store, manifest)
        if i == 0:
            if mask.negatives.size:
                neg = pairwise_scores(store, [ref_row], mask.negatives, backend=backend)[0]
                negative_counts, _ = np.histogram(np.clip(neg, -1.0, 1.0), bins=edges)
                top_negative = float(neg.max())
        if mask.positives.size:
            pos = pairwise_scores(store, [ref_row], mask.positives, backend=backend)[0]
            counts, _ = np.histogram(np.clip(pos, -1.0, 1.0), bins=edges)
            positive_counts[radius] = counts
            top_positive[radius] = float(pos.max())
        else:
            positive_counts[radius] = np.zeros(n_bins, dtype=np.int64)

    return ScoreHistograms(
        reference=str(reference),
        vt=spec.vt.label,
        level=spec.level.value,
        contrast=spec.contrast.value,
        bin_edges=edges,
        positive_counts=positive_counts,
        negative_counts=negative_counts,
        top_positive=top_positive,
        top_negative=top_negative,
    )


def scatter_data(outcomes: Iterable[MatchOutcome]) -> list[ScatterPoint]:
    """One (top negative, top positive) point per scored reference per radius."""
    points = []
    for o in outcomes:
        if o.top_positive is None or o.top_negative is None:
            continue
        points.append(
            ScatterPoint(
                reference=o.reference,
                radius=o.radius,
                top_negative=o.top_negative[1],
                top_positive=o.top_positive[1],
            )
        )
    return points


RANK_BUCKETS = tuple(str(b) for b in range(10)) + ("10+",)


def rank_histogram(
    outcomes: Iterable[MatchOutcome], level: Level
) -> dict[Radius, dict[str, int]]:
    """Distribution of top-positive ranks per radius.

    Buckets are 0..9 plus a single "10+" overflow bucket. Rank 0 means the
    match was correct; the rank counts out-of-group objects (object level)
    or categories (category level) that outscore the best positive.
    """
    out: dict[Radius, dict[str, int]] = {}
    for o in outcomes:
        if o.level != level.value:
            continue
        rank = o.object_rank if level is Level.OBJECT else o.category_rank
        bucket = str(rank) if rank < 10 else "10+"
        by_bucket = out.setdefault(o.radius, {b: 0 for b in RANK_BUCKETS})
        by_bucket[bucket] += 1
    return out


def write_rank_histograms_csv(
    path: str | Path, histograms: dict[tuple[str, str, str], dict[Radius, dict[str, int]]]
) -> None:
    """Keys are (vt, level, contrast); rows cover every non-empty bucket."""
    with open(path, "w") as f:
        f.write("vt,level,contrast,radius,bucket,count\n")
        for (vt, level, contrast), by_radius in sorted(histograms.items()):
            for radius in sort_radii(by_radius):
                tag = "none" if radius is None else radius
                for bucket in RANK_BUCKETS:
                    count = by_radius[radius][bucket]
                    if count:
                        f.write(f"{vt},{level},{contrast},{tag},{bucket},{count}\n")


def scatter_failure_fractions(points: Iterable[ScatterPoint]) -> dict[Radius, float]:
    """Fraction of at-or-below-diagonal points per radius."""
    totals: dict[Radius, int] = {}
    fails: dict[Radius, int] = {}
    for p in points:
        totals[p.radius] = totals.get(p.radius, 0) + 1
        fails[p.radius] = fails.get(p.radius, 0) + int(p.failed)
    return {r: fails[r] / totals[r] for r in totals}


def write_scatter_csv(
    path: str | Path, rows: Iterable[tuple[str, str, ScatterPoint]]
) -> None:
    """Rows are (level, contrast, point); one file covers one vt."""
    with open(path, "w") as f:
        f.write("reference,level,contrast,radius,top_negative,top_positive\n")
        for level, contrast, p in rows:
            radius = "none" if p.radius is None else p.radius
            f.write(
                f"{p.reference},{level},{contrast},{radius},"
                f"{p.top_negative!r},{p.top_positive!r}\n"
            )


def read_scatter_csv(path: str | Path) -> list[tuple[str, str, ScatterPoint]]:
    rows = []
    with open(path) as f:
        header = f.readline()
        assert header.startswith("reference,")
        for line in f:
            ref, level, contrast, radius, x, y = line.rstrip("\n").split(",")
            rows.append(
                (
                    level,
                    contrast,
                    ScatterPoint(
                        reference=ref,
                        radius=None if radius == "none" else int(radius),
                        top_negative=float(x),
                        top_positive=float(y),
                    ),
                )
            )
    return rows


def error_panel(
    outcomes: Sequence[MatchOutcome],
    store: EmbeddingStore,
    manifest: Manifest,
    spec: ExclusionSpec,
    n_rows: int = 6,
    selection: str = "errors-only",
    n_groups: int = 10,
    backend=None,
) -> list[ErrorPanelRow]:
    """Per-reference best-match rows: top group candidates plus positives.

    ``outcomes`` must come from the single task configuration named by
    ``spec``; the panel re-queries the store for the per-group best
    candidates of the selected references.
    """
    if selection not in PANEL_SELECTIONS:
        raise ValueError(f"selection must be one of {PANEL_SELECTIONS}")
    pool = [
        o
        for o in outcomes
        if o.vt == spec.vt.label
        and o.level == spec.level.value
        and o.contrast == spec.contrast.value
        and o.radius == spec.radius
    ]
    if selection == "errors-only":
        chosen = [o for o in pool if not o.correct_at_level]
    elif selection == "worst-rank-first":
        rank = (
            (lambda o: o.object_rank)
            if spec.level is Level.OBJECT
            else (lambda o: o.category_rank)
        )
        chosen = sorted(pool, key=lambda o: (-rank(o), o.reference))
    else:
        chosen = list(pool)
    chosen = chosen[:n_rows]

    rows: list[ErrorPanelRow] = []
    for o in chosen:
        ref = ImageId.parse(o.reference)
        row = _panel_row(o, ref, store, manifest, spec, n_groups, backend)
        rows.append(row)
    return rows


def _panel_row(
    outcome: MatchOutcome,
    ref: ImageId,
    store: EmbeddingStore,
    manifest: Manifest,
    spec: ExclusionSpec,
    n_groups: int,
    backend,
) -> ErrorPanelRow:
    ref_row = store.row_of(ref)
    neg_variant = spec.negative_variant
    objects = manifest.object_names
    segments = np.asarray(
        [manifest.object_block(obj, neg_variant) for obj in objects], dtype=np.int64
    )
    best, best_row = group_best(store, [ref_row], segments, backend=backend)
    ref_group = spec.group_of(ref.object_name, manifest)

    top_pos = PanelEntry(
        group=ref_group,
        image_id=outcome.top_positive[0],
        score=outcome.top_positive[1],
        positive=True,
    )
    if spec.level is Level.OBJECT:
        group_of_obj = {obj: obj for obj in objects}
    else:
        group_of_obj = {obj: spec.group_of(obj, manifest) for obj in objects}
    # Best candidate per out-of-group group; ties fall to the lower row.
    per_group: dict[str, tuple[float, int]] = {}
    for gi, obj in enumerate(objects):
        g = group_of_obj[obj]
        if g == ref_group:
            continue
        s, r = float(best[0, gi]), int(best_row[0, gi])
        cur = per_group.get(g)
        if cur is None or s > cur[0] or (s == cur[0] and r < cur[1]):
            per_group[g] = (s, r)
    scored: list[tuple[float, int, PanelEntry]] = [
        (top_pos.score, store.row_of(top_pos.image_id), top_pos)
    ]
    for g, (s, r) in per_group.items():
        scored.append((s, r, PanelEntry(g, str(manifest.ids[r]), s, False)))
    ranked = tuple(e for _, _, e in sorted(scored, key=lambda t: (-t[0], t[1])))[:n_groups]

    nearest = _nearest_in_series(ref, spec, store, manifest, backend)
    return ErrorPanelRow(
        reference=str(ref),
        entries=tuple(ranked),
        top_positive=top_pos,
        nearest_in_series=nearest,
        correct=outcome.correct_at_level,
    )


def _nearest_in_series(
    ref: ImageId,
    spec: ExclusionSpec,
    store: EmbeddingStore,
    manifest: Manifest,
    backend,
) -> Optional[PanelEntry]:
    """In-series view at index distance exactly r_e + 1 (0 for radius NONE)."""
    dist = 0 if spec.radius is None else spec.radius + 1
    indices = [ref.index - dist, ref.index + dist] if dist else [ref.index]
    candidates = []
    for idx in indices:
        if 1 <= idx <= SERIES_LENGTH:
            cid = ImageId(ref.category, ref.exemplar, ref.vt, idx, spec.positive_variant)
            if str(cid) in manifest.row_of:
                candidates.append(cid)
    if not candidates:
        return None
    ref_row = store.row_of(ref)
    rows = [store.row_of(c) for c in candidates]
    scores = pairwise_scores(store, [ref_row], rows, backend=backend)[0]
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], rows[i]))
    pick = order[0]
    return PanelEntry(
        group=spec.group_of(ref.object_name, manifest),
        image_id=str(candidates[pick]),
        score=float(scores[pick]),
        positive=True,
    )


def panel_to_json_dict(rows: Sequence[ErrorPanelRow], spec: ExclusionSpec) -> dict:
    def entry(e: Optional[PanelEntry]):
        if e is None:
            return None
        return {"group": e.group, "id": e.image_id, "score": e.score, "positive": e.positive}

    return {
        "vt": spec.vt.label,
        "level": spec.level.value,
        "contrast": spec.contrast.value,
        "radius": spec.radius,
        "rows": [
            {
                "reference": r.reference,
                "correct": r.correct,
                "entries": [entry(e) for e in r.entries],
                "top_positive": entry(r.top_positive),
                "nearest_in_series": entry(r.nearest_in_series),
            }
            for r in rows
        ],
    }


def panel_layout_dict(
    rows: Sequence[ErrorPanelRow], spec: ExclusionSpec, images_dir: str | Path
) -> dict:
    """Image-grid layout referencing files by the `<id>.png` convention."""

    def path(image_id: str) -> str:
        return str(Path(images_dir) / f"{image_id}.png")

    return {
        "vt": spec.vt.label,
        "radius": spec.radius,
        "grid": [
            {
                "reference": path(r.reference),
                "candidates": [path(e.image_id) for e in r.entries],
                "top_positive": path(r.top_positive.image_id),
                "nearest_in_series": (
                    None if r.nearest_in_series is None else path(r.nearest_in_series.image_id)
                ),
            }
            for r in rows
        ],
    }


# ---------------------------------------------------------------------------
# Deterministic SVG emission (no plotting dependency)
# ---------------------------------------------------------------------------

_W, _H, _PAD = 480, 320, 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _axes(x_label: str, y_label: str, title: str) -> list[str]:
    return [
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="14" y="{_H // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {_H // 2})">{y_label}</text>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
    ]


def _scale(v: float, lo: float, hi: float, out_lo: float, out_hi: float) -> float:
    if hi <= lo:
        return (out_lo + out_hi) / 2
    return out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)


def _radius_coord(radius: Radius) -> float:
    # The no-exclusion point sits one slot left of radius 0.
    return -1.0 if radius is None else float(radius)


def curves_svg(curves: Sequence[ErrorCurve], title: str) -> str:
    xs = [_radius_coord(p.radius) for c in curves for p in c.points]
    lo, hi = min(xs), max(xs)
    body = _axes("exclusion radius", "error rate", title)
    for ci, curve in enumerate(curves):
        pts = []
        for p in curve.points:
            x = _scale(_radius_coord(p.radius), lo, hi, _PAD, _W - _PAD)
            y = _scale(p.error_rate, 0.0, 1.0, _H - _PAD, _PAD)
            pts.append(f"{_fmt(x)},{_fmt(y)}")
        color = _COLORS[ci % len(_COLORS)]
        body.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>'
        )
        body.append(
            f'<text x="{_W - _PAD + 4}" y="{_PAD + 14 * ci + 10}" font-size="10" '
            f'fill="{color}">{curve.level}/{curve.contrast}</text>'
        )
    return _svg(_W, _H, body)


def scatter_svg(points: Sequence[ScatterPoint], title: str) -> str:
    body = _axes("top negative score", "top positive score", title)
    d0 = _scale(-1.0, -1.0, 1.0, _PAD, _W - _PAD)
    d1 = _scale(1.0, -1.0, 1.0, _PAD, _W - _PAD)
    e0 = _scale(-1.0, -1.0, 1.0, _H - _PAD, _PAD)
    e1 = _scale(1.0, -1.0, 1.0, _H - _PAD, _PAD)
    body.append(
        f'<line x1="{_fmt(d0)}" y1="{_fmt(e0)}" x2="{_fmt(d1)}" y2="{_fmt(e1)}" '
        f'stroke="#d62728" stroke-dasharray="4 3"/>'
    )
    radii = sort_radii({p.radius for p in points})
    color_of = {r: _COLORS[i % len(_COLORS)] for i, r in enumerate(radii)}
    for p in points:
        x = _scale(p.top_negative, -1.0, 1.0, _PAD, _W - _PAD)
        y = _scale(p.top_positive, -1.0, 1.0, _H - _PAD, _PAD)
        body.append(
            f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="1.6" fill="{color_of[p.radius]}" '
            f'fill-opacity="0.6"/>'
        )
    return _svg(_W, _H, body)


def histograms_svg(h: ScoreHistograms) -> str:
    radii = sort_radii(h.positive_counts)
    panels = len(radii)
    height = _PAD + panels * 70 + _PAD
    body = [
        f'<rect x="0" y="0" width="{_W}" height="{height}" fill="white"/>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="13">'
        f"scores for {h.reference} ({h.vt}, {h.level}, {h.contrast})</text>",
    ]
    neg_max = max(1, int(h.negative_counts.max()))
    for pi, radius in enumerate(radii):
        y0 = _PAD + pi * 70
        counts = h.positive_counts[radius]
        pos_max = max(1, int(counts.max()))
        n = len(counts)
        bw = (_W - 2 * _PAD) / n
        for b in range(n):
            if h.negative_counts[b]:
                bh = 60 * h.negative_counts[b] / neg_max
                body.append(
                    f'<rect x="{_fmt(_PAD + b * bw)}" y="{_fmt(y0 + 60 - bh)}" '
                    f'width="{_fmt(bw)}" height="{_fmt(bh)}" fill="#ff7f0e" fill-opacity="0.5"/>'
                )
            if counts[b]:
                bh = 60 * counts[b] / pos_max
                body.append(
                    f'<rect x="{_fmt(_PAD + b * bw)}" y="{_fmt(y0 + 60 - bh)}" '
                    f'width="{_fmt(bw)}" height="{_fmt(bh)}" fill="#1f77b4" fill-opacity="0.7"/>'
                )
        label = "none" if radius is None else str(radius)
        body.append(f'<text x="{_PAD}" y="{y0 + 10}" font-size="10">r_e = {label}</text>')
        if radius in h.top_positive:
            x = _scale(h.top_positive[radius], -1.0, 1.0, _PAD, _W - _PAD)
            body.append(
                f'<line x1="{_fmt(x)}" y1="{y0}" x2="{_fmt(x)}" y2="{y0 + 60}" '
                f'stroke="#1f77b4" stroke-dasharray="3 2"/>'
            )
        if h.top_negative is not None:
            x = _scale(h.top_negative, -1.0, 1.0, _PAD, _W - _PAD)
            body.append(
                f'<line x1="{_fmt(x)}" y1="{y0}" x2="{_fmt(x)}" y2="{y0 + 60}" '
                f'stroke="#d62728" stroke-dasharray="3 2"/>'
            )
    return _svg(_W, height, body)


def tuning_svg(matrix: np.ndarray, title: str) -> str:
    body = _axes("series index", "similarity", title)
    n = matrix.shape[0]
    lo = min(-0.05, float(matrix.min()))
    for i in range(n):
        pts = []
        for j in range(n):
            x = _scale(j + 1, 1, n, _PAD, _W - _PAD)
            y = _scale(float(matrix[i, j]), lo, 1.0, _H - _PAD, _PAD)
            pts.append(f"{_fmt(x)},{_fmt(y)}")
        color = _COLORS[i % len(_COLORS)]
        body.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{" ".join(pts)}"/>'
        )
    return _svg(_W, _H, body)


def emit_plots(
    out_dir: str | Path,
    curves: Sequence[ErrorCurve] = (),
    scatter: dict[str, Sequence[ScatterPoint]] | None = None,
    histograms: Sequence[ScoreHistograms] = (),
    tuning: dict[str, np.ndarray] | None = None,
) -> list[Path]:
    """Write SVG files for whatever data is present; returns written paths.

    No data, no files. Regenerating from the same data is byte-identical.
    """
    out_dir = Path(out_dir)
    written: list[Path] = []

    by_key: dict[tuple[str, str], list[ErrorCurve]] = {}
    for c in curves:
        by_key.setdefault((c.vt, c.contrast), []).append(c)
    for (vt, contrast), group in sorted(by_key.items()):
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"curves-{vt}-{contrast}.svg"
        path.write_text(curves_svg(sorted(group, key=lambda c: c.level), f"{vt} ({contrast})"))
        written.append(path)

    for vt, points in sorted((scatter or {}).items()):
        if not points:
            continue
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"scatter-{vt}.svg"
        path.write_text(scatter_svg(points, f"top scores, {vt}"))
        written.append(path)

    for h in histograms:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"hist-{h.reference}-{h.level}-{h.contrast}.svg"
        path.write_text(histograms_svg(h))
        written.append(path)

    for name, matrix in sorted((tuning or {}).items()):
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"tuning-{name}.svg"
        path.write_text(tuning_svg(matrix, name))
        written.append(path)

    return written
