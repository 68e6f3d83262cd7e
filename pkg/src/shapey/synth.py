"""Synthetic embedding stores with controlled geometric structure.

These are the correctness anchors for the engine: each mode makes a
verifiable promise about the score landscape.

* ``ideal``       -- every same-object score strictly above every
                     cross-object score (matching can never fail).
* ``tuned-decay`` -- within every series, score(i, j) = exp(-lam * |i-j|),
                     realized per series from the eigendecomposition of the
                     target Gram matrix and a random orthonormal frame.
* ``planted-distractor`` -- one foreign view scores above all of one
                     reference's positives beyond index distance d and
                     below all of them within d, so the error flips on at
                     exactly r_e = d for that reference and nowhere else.
* ``random``      -- seeded Gaussian rows, no structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import (
    ORIGIN_INDEX,
    SERIES_LENGTH,
    DatasetConfig,
    ImageId,
    Manifest,
    Variant,
    VT,
    build_manifest,
    enumerate_vts,
    tiny_config,
)
from .store import EmbeddingStore

MODES = ("ideal", "tuned-decay", "planted-distractor", "random")

# ideal-mode mixing: alpha^2 on the object's center axis, beta^2 spread over
# noise directions orthogonal to every center. Same-object scores are then
# >= alpha^2 - beta^2 = 0.90 while cross-object scores are <= beta^2 = 0.05.
_ALPHA2 = 0.95

# planted-distractor score levels (see _planted_rows for the geometry)
_NEAR = 0.9
_FAR = 0.2
_DISTRACTOR = 0.5


class SynthError(ValueError):
    """Infeasible synthetic construction for the requested parameters."""


@dataclass(frozen=True)
class SyntheticConfig:
    n_categories: int = 4
    objects_per_category: int = 3
    dim: int = 16
    seed: int = 0
    mode: str = "random"
    variants: tuple[Variant, ...] = (Variant.ORIGINAL, Variant.CONTRAST_REVERSED)
    lam: float = 0.5  # tuned-decay rate
    planted_distance: int = 3
    planted_ref: Optional[str] = None  # image id string; defaults to first object, pw, origin
    planted_distractor_object: Optional[str] = None  # defaults to first object of 2nd category

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise SynthError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.dim < 2:
            raise SynthError("dim must be >= 2")

    def dataset_config(self) -> DatasetConfig:
        return tiny_config(self.n_categories, self.objects_per_category, self.variants)


def _orthonormal_columns(rng: np.random.Generator, dim: int, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, k)))
    return q * np.sign(np.diag(r))


def _unit_complement_noise(
    rng: np.random.Generator, basis: np.ndarray, n: int
) -> np.ndarray:
    """n unit vectors orthogonal to every column of ``basis``."""
    dim = basis.shape[0]
    w = rng.standard_normal((n, dim))
    w -= (w @ basis) @ basis.T
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    if (norms < 1e-9).any():
        raise SynthError("degenerate noise draw; complement dimension too small")
    return w / norms


def _ideal_rows(rng: np.random.Generator, manifest: Manifest, dim: int) -> np.ndarray:
    n_obj = manifest.n_objects
    if dim < n_obj + 2:
        raise SynthError(
            f"ideal mode needs dim >= n_objects + 2 ({n_obj + 2}), got {dim}"
        )
    centers = _orthonormal_columns(rng, dim, n_obj)
    alpha = math.sqrt(_ALPHA2)
    beta = math.sqrt(1.0 - _ALPHA2)
    obj_index = {o: i for i, o in enumerate(manifest.object_names)}
    noise = _unit_complement_noise(rng, centers, manifest.n_rows)
    rows = np.empty((manifest.n_rows, dim), dtype=np.float64)
    for k, image_id in enumerate(manifest.ids):
        c = centers[:, obj_index[image_id.object_name]]
        rows[k] = alpha * c + beta * noise[k]
    return rows


def _tuned_decay_rows(
    rng: np.random.Generator, manifest: Manifest, dim: int, lam: float
) -> np.ndarray:
    if dim < SERIES_LENGTH:
        raise SynthError(f"tuned-decay needs dim >= {SERIES_LENGTH}, got {dim}")
    idx = np.arange(SERIES_LENGTH)
    target = np.exp(-lam * np.abs(idx[:, None] - idx[None, :]))
    eigvals, eigvecs = np.linalg.eigh(target)
    if eigvals.min() < -1e-8 * max(1.0, eigvals.max()):
        raise SynthError(f"target Gram for lam={lam} is not positive semidefinite")
    coords = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))  # rows: views, unit norm

    rows = np.empty((manifest.n_rows, dim), dtype=np.float64)
    per_variant = manifest.rows_per_variant
    # One random orthonormal frame per (object, series): the within-series
    # Gram is exactly the target, cross-series scores are incidental.
    k = 0
    for _obj in manifest.object_names:
        for _series in enumerate_vts():
            frame = _orthonormal_columns(rng, dim, SERIES_LENGTH)
            rows[k : k + SERIES_LENGTH] = coords @ frame.T
            k += SERIES_LENGTH
    for v in range(1, len(manifest.variants)):
        # contrast twins share the original embedding
        rows[v * per_variant : (v + 1) * per_variant] = rows[:per_variant]
    return rows


def _planted_geometry() -> dict[str, float]:
    """Angles on the unit circle realizing the near/far/distractor scores."""
    theta_ref = math.acos(_FAR)  # far views sit at angle 0
    theta_near = theta_ref - math.acos(_NEAR)
    theta_x = theta_ref + math.acos(_DISTRACTOR)
    return {"ref": theta_ref, "near": theta_near, "far": 0.0, "x": theta_x}


def default_planted_ref(manifest: Manifest) -> ImageId:
    obj = manifest.object_names[0]
    cat, ex = obj.rsplit("_", 1)
    return ImageId(cat, int(ex), VT.parse("pw"), ORIGIN_INDEX, Variant.ORIGINAL)


def _planted_rows(
    rng: np.random.Generator,
    manifest: Manifest,
    dim: int,
    ref: ImageId,
    distractor_object: str,
    d: int,
) -> np.ndarray:
    n_obj = manifest.n_objects
    if n_obj < 2:
        raise SynthError("planted-distractor needs at least two objects")
    if dim < n_obj + 3:
        raise SynthError(
            f"planted-distractor needs dim >= n_objects + 3 ({n_obj + 3}), got {dim}"
        )
    if d < 1:
        raise SynthError("planted distance must be >= 1")
    max_dist = max(ref.index - 1, SERIES_LENGTH - ref.index)
    if d >= max_dist:
        raise SynthError(
            f"planted distance {d} leaves no farther-out views for reference "
            f"index {ref.index}; need d < {max_dist}"
        )
    if distractor_object == ref.object_name:
        raise SynthError("distractor must be a different object")

    # Basis: one center per object plus a dedicated direction b spanning the
    # planted object's 2-D circle; noise lives orthogonal to all of it.
    basis = _orthonormal_columns(rng, dim, n_obj + 1)
    centers, b = basis[:, :n_obj], basis[:, n_obj]
    obj_index = {o: i for i, o in enumerate(manifest.object_names)}
    planted_axis = centers[:, obj_index[ref.object_name]]
    angles = _planted_geometry()

    alpha = math.sqrt(_ALPHA2)
    beta = math.sqrt(1.0 - _ALPHA2)
    noise = _unit_complement_noise(rng, basis, manifest.n_rows)

    # The distractor view sits in a series that is not a superset of the
    # reference's series, so it is never a positive candidate in that test.
    x_series = next(v for v in enumerate_vts() if len(v.axes) == 1 and v != ref.vt)

    def circle(angle: float) -> np.ndarray:
        return math.cos(angle) * planted_axis + math.sin(angle) * b

    rows = np.empty((manifest.n_rows, dim), dtype=np.float64)
    for k, image_id in enumerate(manifest.ids):
        if image_id.object_name == ref.object_name:
            t = abs(image_id.index - ref.index)
            if t == 0:
                rows[k] = circle(angles["ref"])
            elif t <= d:
                rows[k] = circle(angles["near"])
            else:
                rows[k] = circle(angles["far"])
        elif (
            image_id.object_name == distractor_object
            and image_id.vt == x_series
            and image_id.index == ref.index
        ):
            rows[k] = circle(angles["x"])
        else:
            c = centers[:, obj_index[image_id.object_name]]
            rows[k] = alpha * c + beta * noise[k]
    return rows


def generate(config: SyntheticConfig) -> tuple[EmbeddingStore, Manifest]:
    """Deterministically generate a synthetic store and its manifest."""
    manifest = build_manifest(config.dataset_config())
    rng = np.random.default_rng(config.seed)
    if config.mode == "random":
        # float32 draw keeps full-scale instances at half the memory
        rows = rng.standard_normal((manifest.n_rows, config.dim), dtype=np.float32)
    elif config.mode == "ideal":
        rows = _ideal_rows(rng, manifest, config.dim)
    elif config.mode == "tuned-decay":
        rows = _tuned_decay_rows(rng, manifest, config.dim, config.lam)
    else:
        ref = (
            ImageId.parse(config.planted_ref)
            if config.planted_ref
            else default_planted_ref(manifest)
        )
        if str(ref) not in manifest.row_of:
            raise SynthError(f"planted reference {ref} not in manifest")
        distractor = config.planted_distractor_object
        if distractor is None:
            others = [
                o
                for o in manifest.object_names
                if manifest.category_of(o) != manifest.category_of(ref.object_name)
            ]
            if not others:
                raise SynthError("no object outside the reference category to plant")
            distractor = others[0]
        rows = _planted_rows(
            rng, manifest, config.dim, ref, distractor, config.planted_distance
        )
    store = EmbeddingStore(
        rows=rows.astype(np.float32),
        ids=tuple(str(i) for i in manifest.ids),
        normalized=False,
    )
    return store, manifest


def planted_error_set(config: SyntheticConfig, manifest: Manifest) -> tuple[str, int]:
    """(reference id, first failing radius) promised by a planted config."""
    ref = (
        ImageId.parse(config.planted_ref)
        if config.planted_ref
        else default_planted_ref(manifest)
    )
    return str(ref), config.planted_distance
