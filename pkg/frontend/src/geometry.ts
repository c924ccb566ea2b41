/** Plain 2D helpers for drawing tools; everything works in image coordinates. */

export interface Point {
  x: number;
  y: number;
}

/** Perpendicular distance from p to the segment a-b. */
export function perpendicularDistance(p: Point, a: Point, b: Point): number {
  const dx = b.x - a.x;
  const dy = b.y - a.y;
  const lengthSq = dx * dx + dy * dy;
  if (lengthSq === 0) {
    return Math.hypot(p.x - a.x, p.y - a.y);
  }
  let t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / lengthSq;
  t = Math.max(0, Math.min(1, t));
  return Math.hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

/**
 * Ramer-Douglas-Peucker decimation: keep the endpoints, recursively keep the
 * point farthest from the chord while it exceeds the tolerance.
 */
export function decimatePath(points: Point[], tolerance: number): Point[] {
  if (points.length <= 2) {
    return points.slice();
  }
  const first = points[0];
  const last = points[points.length - 1];
  let maxDist = -1;
  let maxIndex = 0;
  for (let i = 1; i < points.length - 1; i++) {
    const d = perpendicularDistance(points[i], first, last);
    if (d > maxDist) {
      maxDist = d;
      maxIndex = i;
    }
  }
  if (maxDist <= tolerance) {
    return [first, last];
  }
  const left = decimatePath(points.slice(0, maxIndex + 1), tolerance);
  const right = decimatePath(points.slice(maxIndex), tolerance);
  return left.slice(0, -1).concat(right);
}

/** Shoelace area of a closed polygon (vertices in order). */
export function polygonArea(points: Point[]): number {
  let twice = 0;
  for (let i = 0; i < points.length; i++) {
    const a = points[i];
    const b = points[(i + 1) % points.length];
    twice += a.x * b.y - b.x * a.y;
  }
  return Math.abs(twice) / 2;
}

/** Axis-aligned rectangle from two drag corners, in drawing order. */
export function rectangleFromDrag(start: Point, end: Point): Point[] {
  const x1 = Math.min(start.x, end.x);
  const y1 = Math.min(start.y, end.y);
  const x2 = Math.max(start.x, end.x);
  const y2 = Math.max(start.y, end.y);
  return [
    { x: x1, y: y1 },
    { x: x2, y: y1 },
    { x: x2, y: y2 },
    { x: x1, y: y2 },
  ];
}

/** Flatten points into the service's [x1, y1, x2, y2, ...] vertex array. */
export function toVertexArray(points: Point[]): number[] {
  const flat: number[] = [];
  for (const p of points) {
    flat.push(p.x, p.y);
  }
  return flat;
}

/** Parse a flat vertex array back into points. */
export function fromVertexArray(vertices: number[]): Point[] {
  if (vertices.length % 2 !== 0) {
    throw new Error(`odd vertex array length ${vertices.length}`);
  }
  const points: Point[] = [];
  for (let i = 0; i < vertices.length; i += 2) {
    points.push({ x: vertices[i], y: vertices[i + 1] });
  }
  return points;
}

/** Even-odd point-in-polygon test for hit-testing regions. */
export function pointInPolygon(p: Point, polygon: Point[]): boolean {
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const a = polygon[i];
    const b = polygon[j];
    const crosses =
      a.y > p.y !== b.y > p.y &&
      p.x < ((b.x - a.x) * (p.y - a.y)) / (b.y - a.y) + a.x;
    if (crosses) {
      inside = !inside;
    }
  }
  return inside;
}
