"""Procedural generator of manuscript-like images with instance ground truth.

Documents mimic the layout phenomena of scanned palm-leaf pages: a page
boundary, closely spaced wavy text-line bands, binding holes that erase ink
but not annotations, degradation blotches and optional markers/decorations.
Text strokes are abstract dash marks, not real script. Generation is fully
deterministic per (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .corpus import (
    CorpusManifest,
    DocumentAnnotation,
    Polygon,
    RegionClass,
    RegionInstance,
    write_annotation_file,
    write_manifest_file,
)
from .geometry import rasterize_polygon


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class SynthConfig:
    width: int = 1024
    height: int = 512
    pages_per_image: int = 1
    stacking: str = "vertical"  # how a second page attaches
    lines_per_page: Tuple[int, int] = (3, 6)
    line_waviness: float = 3.0  # sinusoid amplitude in px
    line_spacing: Tuple[int, int] = (40, 70)
    hole_count: Tuple[int, int] = (0, 1)
    hole_radius: Tuple[int, int] = (12, 24)
    degradation_count: Tuple[int, int] = (0, 2)
    include_library_marker: bool = False
    include_decorator: bool = False
    include_picture: bool = False
    include_boundary_line: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 256 or self.height < 256:
            raise SynthError("image dimensions must be >= 256")
        if self.pages_per_image not in (1, 2):
            raise SynthError("pages_per_image must be 1 or 2")
        if self.stacking not in ("horizontal", "vertical"):
            raise SynthError(f"unknown stacking {self.stacking!r}")
        for name in ("lines_per_page", "line_spacing", "hole_count", "hole_radius", "degradation_count"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise SynthError(f"degenerate range for {name}")


def _band_polygon(
    x1: float, x2: float, yc: float, thickness: float, amplitude: float, phase: float, period: float
) -> Tuple[Tuple[float, float], ...]:
    """Wavy horizontal band: sampled top edge, then bottom edge reversed."""
    xs = np.linspace(x1, x2, 24)
    offset = amplitude * np.sin(2 * math.pi * xs / period + phase)
    top = [(float(x), float(yc - thickness / 2 + o)) for x, o in zip(xs, offset)]
    bottom = [(float(x), float(yc + thickness / 2 + o)) for x, o in zip(xs[::-1], offset[::-1])]
    return tuple(top + bottom)


def _rect_polygon(x1: float, y1: float, x2: float, y2: float) -> Polygon:
    return Polygon(vertices=((x1, y1), (x2, y1), (x2, y2), (x1, y2)), shape_kind="rectangle")


def _circle_polygon(cx: float, cy: float, radius: float, n: int = 24) -> Polygon:
    angles = np.linspace(0, 2 * math.pi, n, endpoint=False)
    verts = tuple((float(cx + radius * math.cos(a)), float(cy + radius * math.sin(a))) for a in angles)
    return Polygon(vertices=verts, shape_kind="freehand")


def _blob_polygon(rng: np.random.Generator, cx: float, cy: float, radius: float) -> Polygon:
    n = int(rng.integers(8, 13))
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    radii = radius * rng.uniform(0.5, 1.0, n)
    verts = tuple(
        (float(cx + r * math.cos(a)), float(cy + r * math.sin(a))) for a, r in zip(angles, radii)
    )
    return Polygon(vertices=verts, shape_kind="freehand")


def _fill(image: np.ndarray, polygon: Polygon, value: float, noise: np.ndarray | None = None) -> None:
    mask = rasterize_polygon(polygon.vertices, image.shape[0], image.shape[1])
    image[mask] = value if noise is None else value + noise[mask]


def _render_page(
    image: np.ndarray,
    rng: np.random.Generator,
    cfg: SynthConfig,
    px1: int,
    py1: int,
    px2: int,
    py2: int,
) -> List[RegionInstance]:
    regions: List[RegionInstance] = []
    margin = max(8, min(px2 - px1, py2 - py1) // 20)
    bx1, by1, bx2, by2 = px1 + margin, py1 + margin, px2 - margin, py2 - margin

    page_poly = _rect_polygon(bx1, by1, bx2, by2)
    _fill(image, page_poly, float(rng.uniform(165, 190)))
    regions.append(RegionInstance(RegionClass.PAGE_BOUNDARY, page_poly))

    inner_x1, inner_x2 = bx1 + margin, bx2 - margin
    inner_y1, inner_y2 = by1 + margin, by2 - margin

    n_lines = int(rng.integers(cfg.lines_per_page[0], cfg.lines_per_page[1] + 1))
    line_polys: List[Tuple[Tuple[float, float], ...]] = []
    if n_lines > 0:
        spacings = rng.uniform(cfg.line_spacing[0], cfg.line_spacing[1], n_lines)
        thickness = float(np.mean(spacings) * 0.55)
        needed = float(np.sum(spacings)) + thickness
        available = inner_y2 - inner_y1
        if needed > available:
            raise SynthError(
                f"{n_lines} lines need {needed:.0f}px but the page offers {available}px; "
                "lower lines_per_page or line_spacing"
            )
        yc = inner_y1 + thickness / 2
        period = float(rng.uniform(200, 500))
        for i in range(n_lines):
            yc += float(spacings[i]) if i > 0 else 0.0
            poly = _band_polygon(
                inner_x1,
                inner_x2,
                yc,
                thickness,
                cfg.line_waviness,
                float(rng.uniform(0, 2 * math.pi)),
                period,
            )
            line_polys.append(poly)
            band = rasterize_polygon(poly, image.shape[0], image.shape[1])
            # dashed ink marks: dark columns with small gaps, abstract glyphs
            cols = np.zeros(image.shape[1], dtype=bool)
            x = inner_x1
            while x < inner_x2:
                dash = int(rng.integers(8, 22))
                gap = int(rng.integers(2, 6))
                cols[int(x) : min(int(x + dash), image.shape[1])] = True
                x += dash + gap
            ink = band & cols[None, :]
            image[ink] = float(rng.uniform(40, 70))
            regions.append(
                RegionInstance(
                    RegionClass.CHARACTER_LINE_SEGMENT,
                    Polygon(vertices=poly, shape_kind="freehand"),
                )
            )

    # holes erase pixels but never clip the line annotations
    n_holes = int(rng.integers(cfg.hole_count[0], cfg.hole_count[1] + 1))
    for _ in range(n_holes):
        radius = float(rng.integers(cfg.hole_radius[0], cfg.hole_radius[1] + 1))
        if line_polys and rng.random() < 0.8:
            poly = line_polys[int(rng.integers(len(line_polys)))]
            ys = [v[1] for v in poly]
            cy = float(np.mean(ys))
            cx = float(rng.uniform(inner_x1 + radius, inner_x2 - radius))
        else:
            cx = float(rng.uniform(inner_x1 + radius, inner_x2 - radius))
            cy = float(rng.uniform(inner_y1 + radius, inner_y2 - radius))
        hole = _circle_polygon(cx, cy, radius)
        _fill(image, hole, float(rng.uniform(200, 230)))
        regions.append(RegionInstance(RegionClass.HOLE, hole))

    n_blobs = int(rng.integers(cfg.degradation_count[0], cfg.degradation_count[1] + 1))
    for _ in range(n_blobs):
        cx = float(rng.uniform(bx1 + 20, bx2 - 20))
        cy = float(rng.uniform(by1 + 20, by2 - 20))
        blob = _blob_polygon(rng, cx, cy, float(rng.uniform(10, 30)))
        _fill(image, blob, float(rng.uniform(90, 130)))
        regions.append(RegionInstance(RegionClass.PHYSICAL_DEGRADATION, blob))

    if cfg.include_library_marker:
        w, h = 40, 24
        x1 = float(rng.uniform(bx1 + 4, bx2 - w - 4))
        y1 = by1 + 4.0
        marker = _rect_polygon(x1, y1, x1 + w, y1 + h)
        _fill(image, marker, 120.0)
        regions.append(RegionInstance(RegionClass.LIBRARY_MARKER, marker))

    if cfg.include_decorator:
        y1 = float(rng.uniform(by1 + 4, by1 + 16))
        deco = _band_polygon(inner_x1, inner_x2, y1 + 6, 8, 4.0, 0.0, 60.0)
        _fill(image, Polygon(vertices=deco, shape_kind="freehand"), 80.0)
        regions.append(
            RegionInstance(RegionClass.DECORATOR, Polygon(vertices=deco, shape_kind="freehand"))
        )

    if cfg.include_picture:
        w = float(rng.uniform(60, 120))
        h = float(rng.uniform(40, 80))
        x1 = float(rng.uniform(inner_x1, inner_x2 - w))
        y1 = float(rng.uniform(inner_y1, inner_y2 - h))
        pic = _rect_polygon(x1, y1, x1 + w, y1 + h)
        mask = rasterize_polygon(pic.vertices, image.shape[0], image.shape[1])
        image[mask] = rng.uniform(50, 200, int(mask.sum()))
        regions.append(RegionInstance(RegionClass.PICTURE, pic))

    if cfg.include_boundary_line:
        x1 = bx1 + 2.0
        line = _rect_polygon(x1, by1 + 2, x1 + 3, by2 - 2)
        _fill(image, line, 60.0)
        regions.append(RegionInstance(RegionClass.BOUNDARY_LINE, line))

    return regions


def generate_document(
    cfg: SynthConfig, doc_seed: int, doc_id: Optional[str] = None
) -> Tuple[np.ndarray, DocumentAnnotation]:
    """Render one document; returns (grayscale uint8 image, annotation)."""
    rng = np.random.default_rng(doc_seed)
    # dark capture surface surrounding the leaf: gives the page boundary
    # a real visual edge, as in photographed manuscript collections
    image = rng.uniform(40, 60, (cfg.height, cfg.width))
    image += rng.normal(0, 4, image.shape)

    if cfg.pages_per_image == 1:
        page_rects = [(0, 0, cfg.width, cfg.height)]
    elif cfg.stacking == "vertical":
        mid = cfg.height // 2
        page_rects = [(0, 0, cfg.width, mid - 2), (0, mid + 2, cfg.width, cfg.height)]
    else:
        mid = cfg.width // 2
        page_rects = [(0, 0, mid - 2, cfg.height), (mid + 2, 0, cfg.width, cfg.height)]

    regions: List[RegionInstance] = []
    for rect in page_rects:
        regions.extend(_render_page(image, rng, cfg, *rect))

    image += rng.normal(0, 2, image.shape)
    image = np.clip(image, 0, 255).astype(np.uint8)

    doc = DocumentAnnotation(
        doc_id=doc_id or f"synth-{doc_seed:010d}",
        image_path=f"images/{doc_id or f'synth-{doc_seed:010d}'}.png",
        width=cfg.width,
        height=cfg.height,
        collection="synthetic",
        script="abstract",
        regions=regions,
    )
    return image, doc


def document_seed(master_seed: int, index: int) -> int:
    """Stable per-document seed; parallel and serial generation agree."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def split_sizes(n_docs: int, fractions: Tuple[float, float, float]) -> Tuple[int, int, int]:
    """Floor each split, then hand leftovers out cycling train, test, validation."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SynthError("split fractions must sum to 1")
    train = int(math.floor(n_docs * fractions[0]))
    val = int(math.floor(n_docs * fractions[1]))
    test = int(math.floor(n_docs * fractions[2]))
    counts = [train, val, test]
    leftover = n_docs - sum(counts)
    for i, slot in enumerate((0, 2, 1) * ((leftover // 3) + 1)):
        if i >= leftover:
            break
        counts[slot] += 1
    return counts[0], counts[1], counts[2]


def generate_corpus(
    cfg: SynthConfig,
    n_docs: int,
    fractions: Tuple[float, float, float],
    seed: int,
    out_dir: str | Path,
) -> Tuple[List[DocumentAnnotation], CorpusManifest]:
    """Generate a corpus on disk: images/, annotations.json and manifest.json."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    docs: List[DocumentAnnotation] = []
    for i in range(n_docs):
        doc_id = f"synth-{i:04d}"
        image, doc = generate_document(cfg, document_seed(seed, i), doc_id=doc_id)
        Image.fromarray(image).save(out / doc.image_path)
        docs.append(doc)

    n_train, n_val, _ = split_sizes(n_docs, fractions)
    splits = {}
    for i, doc in enumerate(docs):
        if i < n_train:
            splits[doc.doc_id] = "train"
        elif i < n_train + n_val:
            splits[doc.doc_id] = "validation"
        else:
            splits[doc.doc_id] = "test"
    manifest = CorpusManifest(splits=splits)

    write_annotation_file(docs, out / "annotations.json")
    write_manifest_file(manifest, out / "manifest.json")
    return docs, manifest
