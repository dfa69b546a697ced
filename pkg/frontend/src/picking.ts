/** Vertex picking and drag-target unprojection. */

import { Vec3, add, dot, invert, normalize, scale, sub, transformPoint } from "./math3d.js";

export interface Ray {
  origin: Vec3;
  dir: Vec3; // unit length
}

/** Ray through a screen pixel given the combined view-projection matrix. */
export function rayFromScreen(
  x: number, y: number, width: number, height: number, viewProj: Float32Array,
): Ray | null {
  const inv = invert(viewProj);
  if (!inv) return null;
  const ndcX = (2 * x) / width - 1;
  const ndcY = 1 - (2 * y) / height;
  const near = transformPoint(inv, [ndcX, ndcY, -1]);
  const far = transformPoint(inv, [ndcX, ndcY, 1]);
  return { origin: near, dir: normalize(sub(far, near)) };
}

export function pointRayDistance(p: Vec3, ray: Ray): number {
  const w = sub(p, ray.origin);
  const t = dot(w, ray.dir);
  if (t <= 0) return Math.hypot(w[0], w[1], w[2]);
  const closest = add(ray.origin, scale(ray.dir, t));
  const d = sub(p, closest);
  return Math.hypot(d[0], d[1], d[2]);
}

/**
 * Nearest vertex to the ray among the given candidates (all vertices when
 * candidates is null), within maxDistance; -1 on a miss.
 */
export function pickVertex(
  ray: Ray, positions: Float32Array, candidates: Iterable<number> | null,
  maxDistance: number,
): number {
  let best = -1;
  let bestDist = maxDistance;
  const ids = candidates ?? rangeOf(positions.length / 3);
  for (const v of ids) {
    const p: Vec3 = [positions[3 * v], positions[3 * v + 1], positions[3 * v + 2]];
    const d = pointRayDistance(p, ray);
    if (d < bestDist) {
      bestDist = d;
      best = v;
    }
  }
  return best;
}

function* rangeOf(n: number): Iterable<number> {
  for (let i = 0; i < n; i++) yield i;
}

/** Vertices that appear in the surface triangle list. */
export function surfaceVertices(faces: number[][]): Set<number> {
  const out = new Set<number>();
  for (const f of faces) for (const v of f) out.add(v);
  return out;
}

/**
 * Drag target: intersection of the pointer ray with the camera-parallel
 * plane through the grab point (plane normal = view direction).
 */
export function dragPlanePoint(ray: Ray, grab: Vec3, viewDir: Vec3): Vec3 | null {
  const denom = dot(ray.dir, viewDir);
  if (Math.abs(denom) < 1e-12) return null;
  const t = dot(sub(grab, ray.origin), viewDir) / denom;
  if (t < 0) return null;
  return add(ray.origin, scale(ray.dir, t));
}
