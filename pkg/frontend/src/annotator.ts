/** Drawing tools and local annotation state for one open document. */

import {
  Point,
  decimatePath,
  rectangleFromDrag,
  toVertexArray,
  fromVertexArray,
  pointInPolygon,
} from "./geometry.js";
import { RegionPayload, ShapeKind, REGION_CLASSES } from "./types.js";

/** Freehand paths are decimated at this perpendicular-distance tolerance. */
export const FREEHAND_TOLERANCE_PX = 2;
export const FREEHAND_MIN_VERTICES = 8;
export const FREEHAND_MAX_VERTICES = 64;

export type Tool = "rectangle" | "polygon" | "freehand";

/** A region on the canvas: the service payload plus UI state. */
export interface CanvasRegion {
  regionClass: string;
  shapeKind: ShapeKind;
  points: Point[]; // image coordinates
  selected: boolean;
  hovered: boolean;
  inEdit: boolean;
}

export class DrawingError extends Error {}

function assertKnownClass(abbreviation: string): void {
  if (!REGION_CLASSES.some((c) => c.abbreviation === abbreviation)) {
    throw new DrawingError(`unknown region class ${abbreviation}`);
  }
}

export function regionFromRectangle(
  regionClass: string,
  dragStart: Point,
  dragEnd: Point
): CanvasRegion {
  assertKnownClass(regionClass);
  if (dragStart.x === dragEnd.x || dragStart.y === dragEnd.y) {
    throw new DrawingError("rectangle drag has zero width or height");
  }
  return {
    regionClass,
    shapeKind: "rectangle",
    points: rectangleFromDrag(dragStart, dragEnd),
    selected: false,
    hovered: false,
    inEdit: false,
  };
}

export function regionFromPolygon(
  regionClass: string,
  clicks: Point[]
): CanvasRegion {
  assertKnownClass(regionClass);
  if (clicks.length < 3) {
    throw new DrawingError("a polygon needs at least 3 vertices");
  }
  return {
    regionClass,
    shapeKind: "polygon",
    points: clicks.slice(),
    selected: false,
    hovered: false,
    inEdit: false,
  };
}

/**
 * Simplify a sampled pointer path into a freehand polygon. The decimation
 * tolerance loosens until the vertex count fits the configured bound; short
 * paths keep evenly spaced raw samples to reach the minimum.
 */
export function regionFromFreehand(
  regionClass: string,
  samples: Point[]
): CanvasRegion {
  assertKnownClass(regionClass);
  if (samples.length < 3) {
    throw new DrawingError("freehand path too short");
  }
  let tolerance = FREEHAND_TOLERANCE_PX;
  let simplified = decimatePath(samples, tolerance);
  while (simplified.length > FREEHAND_MAX_VERTICES) {
    tolerance *= 1.5;
    simplified = decimatePath(samples, tolerance);
  }
  if (simplified.length < FREEHAND_MIN_VERTICES) {
    const step = Math.max(1, Math.floor(samples.length / FREEHAND_MIN_VERTICES));
    simplified = [];
    for (let i = 0; i < samples.length; i += step) {
      simplified.push(samples[i]);
    }
  }
  if (simplified.length < 3) {
    throw new DrawingError("freehand path too short after simplification");
  }
  return {
    regionClass,
    shapeKind: "freehand",
    points: simplified,
    selected: false,
    hovered: false,
    inEdit: false,
  };
}

/** Serialize for PUT /documents/{id}/annotation; lossless for our state. */
export function regionToPayload(region: CanvasRegion): RegionPayload {
  return {
    region_class: region.regionClass,
    shape_kind: region.shapeKind,
    vertices: toVertexArray(region.points),
    annotator_id: null,
    revision: 0,
  };
}

export function regionFromPayload(payload: RegionPayload): CanvasRegion {
  assertKnownClass(payload.region_class);
  return {
    regionClass: payload.region_class,
    shapeKind: payload.shape_kind,
    points: fromVertexArray(payload.vertices),
    selected: false,
    hovered: false,
    inEdit: false,
  };
}

/** Local region list with selection/hit-testing; overlap is always allowed. */
export class AnnotationState {
  regions: CanvasRegion[] = [];

  add(region: CanvasRegion): void {
    this.regions.push(region);
  }

  /** Topmost (latest-drawn) region under the pointer, or null. */
  hitTest(p: Point): CanvasRegion | null {
    for (let i = this.regions.length - 1; i >= 0; i--) {
      if (pointInPolygon(p, this.regions[i].points)) {
        return this.regions[i];
      }
    }
    return null;
  }

  select(region: CanvasRegion | null): void {
    for (const r of this.regions) {
      r.selected = r === region;
    }
  }

  get selected(): CanvasRegion | null {
    return this.regions.find((r) => r.selected) ?? null;
  }

  removeSelected(): void {
    this.regions = this.regions.filter((r) => !r.selected);
  }

  toPayloads(): RegionPayload[] {
    return this.regions.map(regionToPayload);
  }

  loadPayloads(payloads: RegionPayload[]): void {
    this.regions = payloads.map(regionFromPayload);
  }
}

/**
 * Zoom/pan viewport. Annotations live in image coordinates; the viewport
 * only changes how they are displayed, never their stored vertices.
 */
export class Viewport {
  scale = 1;
  offsetX = 0; // screen position of image origin
  offsetY = 0;

  toScreen(p: Point): Point {
    return { x: p.x * this.scale + this.offsetX, y: p.y * this.scale + this.offsetY };
  }

  toImage(p: Point): Point {
    return { x: (p.x - this.offsetX) / this.scale, y: (p.y - this.offsetY) / this.scale };
  }

  /** Zoom by a factor keeping the image point under the cursor fixed. */
  zoomAt(screenPoint: Point, factor: number): void {
    const anchor = this.toImage(screenPoint);
    this.scale *= factor;
    this.offsetX = screenPoint.x - anchor.x * this.scale;
    this.offsetY = screenPoint.y - anchor.y * this.scale;
  }

  panBy(dx: number, dy: number): void {
    this.offsetX += dx;
    this.offsetY += dy;
  }
}
