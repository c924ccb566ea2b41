"""Annotation data model for overlapping manuscript regions.

A corpus is a flat JSON file holding one record per document image; region
boundaries are stored as flat [x1, y1, x2, y2, ...] vertex arrays in original
image coordinates. Regions of any classes may overlap; overlap is never an
error.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

COLLECTIONS = ("PIH", "Bhoomi", "synthetic")
SPLITS = ("train", "validation", "test")

SCHEMA_VERSION = 1


class CorpusError(Exception):
    """Base error for corpus parsing/validation failures."""


class ParseError(CorpusError):
    pass


class ValidationError(CorpusError):
    pass


class RegionClass(Enum):
    """The nine annotated layout region classes."""

    CHARACTER_LINE_SEGMENT = "CLS"
    CHARACTER_COMPONENT = "CC"
    HOLE = "H"
    PAGE_BOUNDARY = "PB"
    LIBRARY_MARKER = "LM"
    DECORATOR = "D"
    PICTURE = "P"
    PHYSICAL_DEGRADATION = "PD"
    BOUNDARY_LINE = "BL"

    @property
    def abbreviation(self) -> str:
        return self.value

    @property
    def full_name(self) -> str:
        return _FULL_NAMES[self]

    @classmethod
    def from_abbreviation(cls, abbrev: str) -> "RegionClass":
        try:
            return cls(abbrev)
        except ValueError:
            raise ParseError(f"unknown region class {abbrev!r}") from None


_FULL_NAMES = {
    RegionClass.CHARACTER_LINE_SEGMENT: "Character Line Segment",
    RegionClass.CHARACTER_COMPONENT: "Character Component",
    RegionClass.HOLE: "Hole",
    RegionClass.PAGE_BOUNDARY: "Page Boundary",
    RegionClass.LIBRARY_MARKER: "Library Marker",
    RegionClass.DECORATOR: "Decorator",
    RegionClass.PICTURE: "Picture",
    RegionClass.PHYSICAL_DEGRADATION: "Physical Degradation",
    RegionClass.BOUNDARY_LINE: "Boundary Line",
}

SHAPE_KINDS = ("rectangle", "polygon", "freehand")


@dataclass(frozen=True)
class Polygon:
    """Closed polygon boundary; vertices are (x, y) image-pixel coordinates."""

    vertices: Tuple[Tuple[float, float], ...]
    shape_kind: str = "polygon"

    def __post_init__(self) -> None:
        if self.shape_kind not in SHAPE_KINDS:
            raise ValidationError(f"unknown shape kind {self.shape_kind!r}")
        if len(self.vertices) < 3:
            raise ValidationError("polygon needs at least 3 vertices")
        for x, y in self.vertices:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValidationError("polygon has non-finite coordinates")
        if self.shape_kind == "rectangle":
            if len(self.vertices) != 4:
                raise ValidationError("rectangle must have exactly 4 vertices")
            xs = sorted({v[0] for v in self.vertices})
            ys = sorted({v[1] for v in self.vertices})
            if len(xs) > 2 or len(ys) > 2:
                raise ValidationError("rectangle vertices must form an axis-aligned box")

    def bounds(self) -> Tuple[float, float, float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class RegionInstance:
    """One labeled, possibly overlapping layout region."""

    region_class: RegionClass
    boundary: Polygon
    annotator_id: Optional[str] = None
    revision: int = 0
    score: Optional[float] = None  # set on predicted regions only

    def __post_init__(self) -> None:
        if self.revision < 0:
            raise ValidationError("revision must be non-negative")


@dataclass
class DocumentAnnotation:
    """An image plus all of its region instances and provenance metadata."""

    doc_id: str
    image_path: str
    width: int
    height: int
    collection: str = "synthetic"
    script: str = ""
    regions: List[RegionInstance] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"doc {self.doc_id!r}: dimensions must be >= 1")
        if self.collection not in COLLECTIONS:
            raise ValidationError(f"doc {self.doc_id!r}: unknown collection {self.collection!r}")
        self.regions = [self._clamp_region(r) for r in self.regions]

    def _clamp_region(self, region: RegionInstance) -> RegionInstance:
        """Clamp vertices into [0, W] x [0, H]; border annotations are routine."""
        clamped = []
        touched = False
        for x, y in region.boundary.vertices:
            cx = min(max(x, 0.0), float(self.width))
            cy = min(max(y, 0.0), float(self.height))
            if (cx, cy) != (x, y):
                touched = True
            clamped.append((cx, cy))
        if not touched:
            return region
        logger.warning("doc %s: clamped out-of-bounds vertices to image bounds", self.doc_id)
        return replace(region, boundary=replace(region.boundary, vertices=tuple(clamped)))


@dataclass
class CorpusManifest:
    """doc_id -> split assignment; every doc belongs to exactly one split."""

    splits: Dict[str, str]

    def __post_init__(self) -> None:
        for doc_id, split in self.splits.items():
            if split not in SPLITS:
                raise ValidationError(f"doc {doc_id!r}: unknown split {split!r}")

    def doc_ids(self, split: str) -> List[str]:
        return sorted(d for d, s in self.splits.items() if s == split)


# ---------------------------------------------------------------------------
# serialization


def _region_to_json(region: RegionInstance) -> dict:
    flat: List[float] = []
    for x, y in region.boundary.vertices:
        flat.extend((float(x), float(y)))
    record = {
        "region_class": region.region_class.abbreviation,
        "shape_kind": region.boundary.shape_kind,
        "vertices": flat,
        "annotator_id": region.annotator_id,
        "revision": region.revision,
    }
    if region.score is not None:
        record["score"] = float(region.score)
    return record


def region_from_json(record: dict, context: str = "") -> RegionInstance:
    try:
        cls = RegionClass.from_abbreviation(record["region_class"])
        flat = record["vertices"]
        if len(flat) % 2 != 0:
            raise ParseError("odd vertex array length")
        vertices = tuple((float(flat[i]), float(flat[i + 1])) for i in range(0, len(flat), 2))
        boundary = Polygon(vertices=vertices, shape_kind=record.get("shape_kind", "polygon"))
        return RegionInstance(
            region_class=cls,
            boundary=boundary,
            annotator_id=record.get("annotator_id"),
            revision=int(record.get("revision", 0)),
            score=record.get("score"),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed region record {context}: {exc}") from exc


def _doc_to_json(doc: DocumentAnnotation) -> dict:
    return {
        "doc_id": doc.doc_id,
        "image_path": doc.image_path,
        "width": doc.width,
        "height": doc.height,
        "collection": doc.collection,
        "script": doc.script,
        "regions": [_region_to_json(r) for r in doc.regions],
    }


def _doc_from_json(record: dict) -> DocumentAnnotation:
    try:
        doc_id = record["doc_id"]
        regions = [
            region_from_json(r, context=f"doc {doc_id!r} region {i}")
            for i, r in enumerate(record["regions"])
        ]
        return DocumentAnnotation(
            doc_id=doc_id,
            image_path=record["image_path"],
            width=int(record["width"]),
            height=int(record["height"]),
            collection=record.get("collection", "synthetic"),
            script=record.get("script", ""),
            regions=regions,
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed document record {record.get('doc_id', '?')!r}: {exc}") from exc


def parse_annotation_file(path: str | Path) -> List[DocumentAnnotation]:
    """Read a corpus file; every returned document satisfies the type invariants."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "documents" not in payload:
        raise ParseError(f"{path}: missing top-level 'documents' array")
    docs = [_doc_from_json(rec) for rec in payload["documents"]]
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise ValidationError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
    return docs


def write_annotation_file(docs: Sequence[DocumentAnnotation], path: str | Path) -> None:
    """Write a corpus file; output bytes are stable for identical input."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "documents": [_doc_to_json(d) for d in docs],
    }
    text = json.dumps(payload, indent=1, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def parse_manifest_file(path: str | Path) -> CorpusManifest:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "splits" not in payload:
        raise ParseError(f"{path}: missing top-level 'splits' mapping")
    return CorpusManifest(splits=dict(payload["splits"]))


def write_manifest_file(manifest: CorpusManifest, path: str | Path) -> None:
    payload = {"schema_version": SCHEMA_VERSION, "splits": manifest.splits}
    text = json.dumps(payload, indent=1, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# statistics


def compute_region_statistics(
    docs: Iterable[DocumentAnnotation],
) -> Dict[str, Dict[RegionClass, int]]:
    """Per-collection (plus 'Combined') region counts keyed by class."""
    table: Dict[str, Dict[RegionClass, int]] = {
        coll: {cls: 0 for cls in RegionClass} for coll in COLLECTIONS
    }
    table["Combined"] = {cls: 0 for cls in RegionClass}
    for doc in docs:
        for region in doc.regions:
            table[doc.collection][region.region_class] += 1
            table["Combined"][region.region_class] += 1
    return table


def split_counts(
    manifest: CorpusManifest, docs: Iterable[DocumentAnnotation]
) -> Dict[str, Dict[str, int]]:
    """Per-collection (plus 'Total') document counts for each split."""
    counts: Dict[str, Dict[str, int]] = {
        coll: {split: 0 for split in SPLITS} for coll in COLLECTIONS
    }
    counts["Total"] = {split: 0 for split in SPLITS}
    for doc in docs:
        if doc.doc_id not in manifest.splits:
            raise ValidationError(f"doc {doc.doc_id!r} missing from manifest")
        split = manifest.splits[doc.doc_id]
        counts[doc.collection][split] += 1
        counts["Total"][split] += 1
    return counts
