/**
 * World geometry shared by rendering, drawing, and client-side validation.
 *
 * The collision rules mirror the server exactly: obstacles are closed sets
 * (touching an edge counts as a hit), the bounds are a closed containment
 * box, and a demonstration polyline is valid only if every vertex and every
 * segment stays collision-free.
 */

export interface Rect {
  min: [number, number];
  max: [number, number];
}

export interface WorldGeometry {
  bounds: Rect;
  obstacles: Rect[];
  goal: [number, number];
  goal_eps: number;
}

export type Point = [number, number];

export function pointInRect(p: Point, rect: Rect): boolean {
  return (
    p[0] >= rect.min[0] &&
    p[0] <= rect.max[0] &&
    p[1] >= rect.min[1] &&
    p[1] <= rect.max[1]
  );
}

export function collides(world: WorldGeometry, p: Point): boolean {
  if (!pointInRect(p, world.bounds)) return true;
  return world.obstacles.some((o) => pointInRect(p, o));
}

/** Does the open segment a-b pass through the rectangle's interior? */
export function segmentHitsRect(a: Point, b: Point, rect: Rect, shrink = 1e-9): boolean {
  const lo = [rect.min[0] + shrink, rect.min[1] + shrink];
  const hi = [rect.max[0] - shrink, rect.max[1] - shrink];
  let t0 = 0;
  let t1 = 1;
  for (let axis = 0; axis < 2; axis++) {
    const d = b[axis] - a[axis];
    if (Math.abs(d) < 1e-15) {
      if (a[axis] <= lo[axis] || a[axis] >= hi[axis]) return false;
    } else {
      let ta = (lo[axis] - a[axis]) / d;
      let tb = (hi[axis] - a[axis]) / d;
      if (ta > tb) [ta, tb] = [tb, ta];
      t0 = Math.max(t0, ta);
      t1 = Math.min(t1, tb);
      if (t0 >= t1) return false;
    }
  }
  return t0 < t1;
}

export interface PolylineCheck {
  valid: boolean;
  reason?: string;
  /** Index of the first offending segment (start vertex), when invalid. */
  badSegment?: number;
}

/** Client-side mirror of the server's demonstration validation. */
export function validatePolyline(world: WorldGeometry, points: Point[]): PolylineCheck {
  if (points.length < 2) {
    return { valid: false, reason: "draw at least two points" };
  }
  for (let i = 0; i < points.length; i++) {
    if (collides(world, points[i])) {
      return {
        valid: false,
        reason: "point inside an obstacle or out of bounds",
        badSegment: Math.max(0, i - 1),
      };
    }
  }
  for (let i = 0; i + 1 < points.length; i++) {
    for (const obstacle of world.obstacles) {
      if (segmentHitsRect(points[i], points[i + 1], obstacle)) {
        return { valid: false, reason: "segment crosses an obstacle", badSegment: i };
      }
    }
  }
  return { valid: true };
}

/** Drop points closer than minSpacing to the previously kept one. */
export function downsamplePolyline(points: Point[], minSpacing: number): Point[] {
  if (points.length === 0) return [];
  const kept: Point[] = [points[0]];
  for (let i = 1; i < points.length; i++) {
    const prev = kept[kept.length - 1];
    const dx = points[i][0] - prev[0];
    const dy = points[i][1] - prev[1];
    if (Math.hypot(dx, dy) >= minSpacing) {
      kept.push(points[i]);
    }
  }
  const last = points[points.length - 1];
  const tail = kept[kept.length - 1];
  if (kept.length >= 1 && (tail[0] !== last[0] || tail[1] !== last[1])) {
    kept.push(last);
  }
  return kept;
}

export function clampToBounds(p: Point, bounds: Rect): Point {
  return [
    Math.min(Math.max(p[0], bounds.min[0]), bounds.max[0]),
    Math.min(Math.max(p[1], bounds.min[1]), bounds.max[1]),
  ];
}

/** Affine world-to-canvas mapping (y flipped so world-up is screen-up). */
export class Viewport {
  constructor(
    readonly bounds: Rect,
    readonly width: number,
    readonly height: number,
  ) {}

  toCanvas(p: Point): Point {
    const sx = this.width / (this.bounds.max[0] - this.bounds.min[0]);
    const sy = this.height / (this.bounds.max[1] - this.bounds.min[1]);
    return [
      (p[0] - this.bounds.min[0]) * sx,
      this.height - (p[1] - this.bounds.min[1]) * sy,
    ];
  }

  toWorld(p: Point): Point {
    const sx = (this.bounds.max[0] - this.bounds.min[0]) / this.width;
    const sy = (this.bounds.max[1] - this.bounds.min[1]) / this.height;
    return [
      this.bounds.min[0] + p[0] * sx,
      this.bounds.min[1] + (this.height - p[1]) * sy,
    ];
  }

  /** Pixel spacing converted to world units (x axis). */
  pixelsToWorld(px: number): number {
    return (px * (this.bounds.max[0] - this.bounds.min[0])) / this.width;
  }
}

/** 1-std ellipse path parameters from a 2x2 covariance. */
export function covarianceEllipse(cov: number[][]): {
  rx: number;
  ry: number;
  angle: number;
} {
  const a = cov[0][0];
  const b = cov[0][1];
  const c = cov[1][1];
  const tr = a + c;
  const det = a * c - b * b;
  const disc = Math.sqrt(Math.max(tr * tr * 0.25 - det, 0));
  const l1 = tr / 2 + disc;
  const l2 = tr / 2 - disc;
  const angle = Math.abs(b) < 1e-12 && a >= c ? 0 : Math.atan2(l1 - a, b || 1e-300);
  return { rx: Math.sqrt(Math.max(l1, 0)), ry: Math.sqrt(Math.max(l2, 0)), angle };
}
