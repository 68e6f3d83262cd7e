"""Image-set combinatorics: axes, view series, image identifiers, manifests.

The image set is a 3-level hierarchy: categories contain objects, and every
object carries one 11-view series per viewpoint-transformation label (VT).
A VT is a non-empty subset of the five rigid viewpoint axes, so there are
31 series and 341 views per object per contrast variant. The engine never
touches pixels; everything downstream is keyed by the string form of
:class:`ImageId`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

# Canonical axis order; series labels are concatenations in this order.
AXES = ("x", "y", "p", "r", "w")
_AXIS_POS = {a: i for i, a in enumerate(AXES)}

SERIES_LENGTH = 11
ORIGIN_INDEX = 6  # central view of every series
SERIES_PER_OBJECT = 31  # non-empty subsets of 5 axes
VIEWS_PER_OBJECT = SERIES_PER_OBJECT * SERIES_LENGTH  # 341

# Rendering geometry, carried as documentation only (never used in scoring):
# rotational axes step 9 degrees per view, translations about 3.3% of the
# frame width per view.
ROTATION_STEP_DEGREES = 9.0
TRANSLATION_STEP_FRACTION = 0.033

DEFAULT_CATEGORIES = (
    "airplane", "bench", "boat", "bunkbed", "cabinet",
    "car", "chair", "desk", "faucet", "guitar",
    "lamp", "laptop", "monitor", "mug", "piano",
    "pistol", "plant", "sofa", "table", "train",
)
DEFAULT_OBJECTS_PER_CATEGORY = 10


class DatasetError(ValueError):
    """Invalid identifier, series label, or dataset configuration."""


class Variant(Enum):
    """Background-contrast variant of a rendered view."""

    ORIGINAL = "original"
    CONTRAST_REVERSED = "contrast-reversed"

    @property
    def suffix(self) -> str:
        return "-cr" if self is Variant.CONTRAST_REVERSED else ""


@dataclass(frozen=True, order=True)
class VT:
    """A viewpoint-transformation label: an ordered subset of the five axes.

    The string form concatenates axis letters in canonical order ("pw",
    "xprw", ...). Non-canonical orderings are rejected rather than
    normalized so that every label has exactly one spelling.
    """

    axes: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.axes:
            raise DatasetError("VT needs at least one axis")
        positions = [_AXIS_POS.get(a) for a in self.axes]
        if None in positions:
            bad = self.axes[positions.index(None)]
            raise DatasetError(f"unknown axis letter {bad!r}")
        if list(positions) != sorted(set(positions)):
            raise DatasetError(
                f"axis letters {''.join(self.axes)!r} not in canonical order "
                f"{''.join(AXES)!r}"
            )

    @classmethod
    def parse(cls, label: str) -> "VT":
        return cls(tuple(label))

    @property
    def label(self) -> str:
        return "".join(self.axes)

    @property
    def axis_set(self) -> frozenset[str]:
        return frozenset(self.axes)

    def is_superset_of(self, other: "VT") -> bool:
        return self.axis_set >= other.axis_set

    def __str__(self) -> str:
        return self.label


@lru_cache(maxsize=1)
def enumerate_vts() -> tuple[VT, ...]:
    """All 31 series labels, ordered by subset size then canonical spelling."""
    out: list[VT] = []
    for size in range(1, len(AXES) + 1):
        for combo in combinations(AXES, size):
            out.append(VT(combo))
    return tuple(out)


def superset_series(vt: VT) -> tuple[VT, ...]:
    """Every VT whose axes include all of ``vt``'s axes, ``vt`` itself included.

    These are the series whose views are eligible as positive match
    candidates when ``vt`` is the transformation under test; there are
    always ``2**(5 - len(vt.axes))`` of them.
    """
    return tuple(v for v in enumerate_vts() if v.is_superset_of(vt))


_ID_RE = re.compile(
    r"^(?P<category>[A-Za-z0-9][A-Za-z0-9_]*)_(?P<exemplar>\d{2})"
    r"-(?P<vt>[a-z]{1,5})-(?P<index>\d{2})(?P<cr>-cr)?$"
)


@dataclass(frozen=True)
class ImageId:
    """Identity of one rendered view.

    String form: ``<category>_<exemplar 2-digit>-<vt>-<index 2-digit>[-cr]``,
    e.g. ``airplane_03-pw-06`` or ``chair_10-xyprw-11-cr``.
    """

    category: str
    exemplar: int
    vt: VT
    index: int
    variant: Variant = Variant.ORIGINAL

    def __post_init__(self) -> None:
        if not 1 <= self.index <= SERIES_LENGTH:
            raise DatasetError(f"view index {self.index} outside 1..{SERIES_LENGTH}")
        if not 1 <= self.exemplar <= 99:
            raise DatasetError(f"exemplar {self.exemplar} outside 1..99")

    @property
    def object_name(self) -> str:
        return f"{self.category}_{self.exemplar:02d}"

    @classmethod
    def parse(cls, s: str) -> "ImageId":
        m = _ID_RE.match(s)
        if m is None:
            raise DatasetError(f"malformed image id {s!r}")
        variant = Variant.CONTRAST_REVERSED if m.group("cr") else Variant.ORIGINAL
        return cls(
            category=m.group("category"),
            exemplar=int(m.group("exemplar")),
            vt=VT.parse(m.group("vt")),
            index=int(m.group("index")),
            variant=variant,
        )

    def __str__(self) -> str:
        return (
            f"{self.category}_{self.exemplar:02d}-{self.vt.label}"
            f"-{self.index:02d}{self.variant.suffix}"
        )


def parse_image_id(s: str) -> ImageId:
    return ImageId.parse(s)


def format_image_id(image_id: ImageId) -> str:
    return str(image_id)


@dataclass(frozen=True)
class DatasetConfig:
    """Shape of the image set: category names, objects per category, variants.

    Defaults reproduce the full set: 20 categories x 10 objects x 341 views,
    original backgrounds only. Tiny configurations are used by the synthetic
    generator and the brute-force oracle.
    """

    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    objects_per_category: int = DEFAULT_OBJECTS_PER_CATEGORY
    variants: tuple[Variant, ...] = (Variant.ORIGINAL,)

    def validate(self) -> None:
        if not self.categories:
            raise DatasetError("at least one category required")
        if len(set(self.categories)) != len(self.categories):
            dupes = sorted({c for c in self.categories if self.categories.count(c) > 1})
            raise DatasetError(f"duplicate category names: {dupes}")
        for name in self.categories:
            if not re.fullmatch(r"[A-Za-z0-9][A-Za-z0-9_]*", name):
                raise DatasetError(f"invalid category name {name!r}")
        if not 1 <= self.objects_per_category <= 99:
            raise DatasetError("objects_per_category must be in 1..99")
        if not self.variants or len(set(self.variants)) != len(self.variants):
            raise DatasetError("variants must be a non-empty, duplicate-free list")
        if self.variants[0] is not Variant.ORIGINAL:
            raise DatasetError("the original variant is required and comes first")


@dataclass(frozen=True)
class Manifest:
    """Complete, ordered enumeration of the image set.

    Row order is variant-major, then category, object, series (in
    :func:`enumerate_vts` order), and index 1..11. The order is the row
    contract for embedding files: line k of an index file must name row k.
    """

    categories: tuple[str, ...]
    objects: tuple[tuple[str, ...], ...]  # per category, same order
    variants: tuple[Variant, ...]
    ids: tuple[ImageId, ...] = field(repr=False)

    @property
    def object_names(self) -> tuple[str, ...]:
        return tuple(o for objs in self.objects for o in objs)

    @property
    def n_objects(self) -> int:
        return sum(len(objs) for objs in self.objects)

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    @property
    def rows_per_variant(self) -> int:
        return self.n_objects * VIEWS_PER_OBJECT

    def category_of(self, object_name: str) -> str:
        try:
            return self._category_by_object[object_name]
        except KeyError:
            raise DatasetError(f"unknown object {object_name!r}") from None

    @property
    def _category_by_object(self) -> dict[str, str]:
        cached = self.__dict__.get("_category_by_object_cache")
        if cached is None:
            cached = {
                obj: cat for cat, objs in zip(self.categories, self.objects) for obj in objs
            }
            object.__setattr__(self, "_category_by_object_cache", cached)
        return cached

    @property
    def row_of(self) -> dict[str, int]:
        cached = self.__dict__.get("_row_of_cache")
        if cached is None:
            cached = {s: k for k, s in enumerate(self.id_strings)}
            object.__setattr__(self, "_row_of_cache", cached)
        return cached

    @property
    def id_strings(self) -> tuple[str, ...]:
        cached = self.__dict__.get("_id_strings_cache")
        if cached is None:
            cached = tuple(str(i) for i in self.ids)
            object.__setattr__(self, "_id_strings_cache", cached)
        return cached

    @property
    def object_name_by_row(self) -> tuple[str, ...]:
        cached = self.__dict__.get("_object_name_cache")
        if cached is None:
            cached = tuple(i.object_name for i in self.ids)
            object.__setattr__(self, "_object_name_cache", cached)
        return cached

    def variant_offset(self, variant: Variant) -> int:
        try:
            return self.variants.index(variant) * self.rows_per_variant
        except ValueError:
            raise DatasetError(f"variant {variant.value!r} not in manifest") from None

    def object_block(self, object_name: str, variant: Variant) -> tuple[int, int]:
        """Half-open row range holding all 341 views of one object."""
        cached = self.__dict__.get("_object_pos_cache")
        if cached is None:
            cached = {name: i for i, name in enumerate(self.object_names)}
            object.__setattr__(self, "_object_pos_cache", cached)
        try:
            pos = cached[object_name]
        except KeyError:
            raise DatasetError(f"unknown object {object_name!r}") from None
        start = self.variant_offset(variant) + pos * VIEWS_PER_OBJECT
        return start, start + VIEWS_PER_OBJECT

    def series_rows(self, object_name: str, vt: VT, variant: Variant) -> range:
        """Rows of one 11-view series, in index order."""
        start, _ = self.object_block(object_name, variant)
        si = enumerate_vts().index(vt)
        first = start + si * SERIES_LENGTH
        return range(first, first + SERIES_LENGTH)

    def to_json_dict(self) -> dict:
        return {
            "categories": [
                {"name": c, "objects": list(objs)}
                for c, objs in zip(self.categories, self.objects)
            ],
            "variants": [v.value for v in self.variants],
            "ids": [str(i) for i in self.ids],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"
        )

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "Manifest":
        categories = tuple(entry["name"] for entry in data["categories"])
        objects = tuple(tuple(entry["objects"]) for entry in data["categories"])
        variants = tuple(Variant(v) for v in data["variants"])
        ids = tuple(ImageId.parse(s) for s in data["ids"])
        return cls(categories=categories, objects=objects, variants=variants, ids=ids)

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def build_manifest(config: DatasetConfig) -> Manifest:
    """Deterministically enumerate every image id for a configuration."""
    config.validate()
    objects = tuple(
        tuple(f"{cat}_{k:02d}" for k in range(1, config.objects_per_category + 1))
        for cat in config.categories
    )
    vts = enumerate_vts()
    ids: list[ImageId] = []
    for variant in config.variants:
        for cat, objs in zip(config.categories, objects):
            for obj in objs:
                exemplar = int(obj.rsplit("_", 1)[1])
                for vt in vts:
                    for index in range(1, SERIES_LENGTH + 1):
                        ids.append(ImageId(cat, exemplar, vt, index, variant))
    return Manifest(
        categories=config.categories,
        objects=objects,
        variants=config.variants,
        ids=tuple(ids),
    )


def tiny_config(
    n_categories: int = 4,
    objects_per_category: int = 3,
    variants: Sequence[Variant] = (Variant.ORIGINAL, Variant.CONTRAST_REVERSED),
) -> DatasetConfig:
    """Small configuration used by synthetic stores and oracle runs."""
    if n_categories > len(DEFAULT_CATEGORIES):
        raise DatasetError(f"at most {len(DEFAULT_CATEGORIES)} stock category names")
    return DatasetConfig(
        categories=DEFAULT_CATEGORIES[:n_categories],
        objects_per_category=objects_per_category,
        variants=tuple(variants),
    )
