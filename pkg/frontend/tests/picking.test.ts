import { describe, expect, it } from "vitest";

import { Vec3, dot, lookAt, multiply, normalize, perspective, sub } from "../src/math3d.js";
import { dragPlanePoint, pickVertex, rayFromScreen, surfaceVertices } from "../src/picking.js";

function mulberry(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function camera(): { vp: Float32Array; eye: Vec3; viewDir: Vec3 } {
  const eye: Vec3 = [0.6, 0.5, 0.4];
  const center: Vec3 = [0, 0, 0];
  const proj = perspective(0.9, 4 / 3, 0.01, 50);
  const view = lookAt(eye, center, [0, 0, 1]);
  return { vp: multiply(proj, view), eye, viewDir: normalize(sub(center, eye)) };
}

describe("rayFromScreen", () => {
  it("the center pixel ray passes through the look-at target", () => {
    const { vp, eye } = camera();
    const ray = rayFromScreen(400, 300, 800, 600, vp)!;
    // distance from the origin (the camera target) to the ray
    const w: Vec3 = [-ray.origin[0], -ray.origin[1], -ray.origin[2]];
    const t = dot(w, ray.dir);
    const dist = Math.sqrt(Math.max(dot(w, w) - t * t, 0));
    expect(dist).toBeLessThan(1e-4);
    // origin should sit at the near plane in front of the eye
    expect(dot(sub(ray.origin, eye), ray.dir)).toBeGreaterThan(0);
  });
});

describe("pickVertex", () => {
  it("matches a brute-force distance scan on 100 random clicks", () => {
    const rand = mulberry(42);
    const n = 120;
    const positions = new Float32Array(3 * n);
    for (let i = 0; i < positions.length; i++) positions[i] = 0.4 * (rand() - 0.5);
    const { vp } = camera();
    for (let trial = 0; trial < 100; trial++) {
      const x = rand() * 800;
      const y = rand() * 600;
      const ray = rayFromScreen(x, y, 800, 600, vp)!;
      const picked = pickVertex(ray, positions, null, 0.08);
      // independent oracle: Pythagorean point-ray distance over all vertices
      let best = -1;
      let bestD = 0.08;
      for (let v = 0; v < n; v++) {
        const w: Vec3 = [
          positions[3 * v] - ray.origin[0],
          positions[3 * v + 1] - ray.origin[1],
          positions[3 * v + 2] - ray.origin[2],
        ];
        const t = dot(w, ray.dir);
        const d = t > 0 ? Math.sqrt(Math.max(dot(w, w) - t * t, 0)) : Math.sqrt(dot(w, w));
        if (d < bestD) {
          bestD = d;
          best = v;
        }
      }
      expect(picked).toBe(best);
    }
  });

  it("restricts candidates to the given surface set", () => {
    const positions = new Float32Array([0, 0, 0, 0.001, 0, 0, 5, 5, 5]);
    const ray = { origin: [-1, 0, 0] as Vec3, dir: [1, 0, 0] as Vec3 };
    expect(pickVertex(ray, positions, [1, 2], 0.1)).toBe(1);
    expect(pickVertex(ray, positions, [2], 0.1)).toBe(-1); // far vertex only: miss
  });

  it("returns -1 on a miss", () => {
    const positions = new Float32Array([10, 10, 10]);
    const ray = { origin: [0, 0, 0] as Vec3, dir: [1, 0, 0] as Vec3 };
    expect(pickVertex(ray, positions, null, 0.05)).toBe(-1);
  });
});

describe("dragPlanePoint", () => {
  it("lands on the camera-parallel plane through the grab point", () => {
    const rand = mulberry(7);
    const { vp, viewDir } = camera();
    for (let i = 0; i < 50; i++) {
      const grab: Vec3 = [0.3 * (rand() - 0.5), 0.3 * (rand() - 0.5), 0.3 * (rand() - 0.5)];
      const ray = rayFromScreen(rand() * 800, rand() * 600, 800, 600, vp)!;
      const p = dragPlanePoint(ray, grab, viewDir);
      expect(p).not.toBeNull();
      // on the plane: (p - grab) . viewDir = 0
      expect(Math.abs(dot(sub(p!, grab), viewDir))).toBeLessThan(1e-5);
      // on the ray: (p - origin) x dir = 0
      const w = sub(p!, ray.origin);
      const t = dot(w, ray.dir);
      expect(Math.sqrt(Math.max(dot(w, w) - t * t, 0))).toBeLessThan(1e-5);
    }
  });

  it("returns null for a ray parallel to the plane", () => {
    const ray = { origin: [0, 0, 1] as Vec3, dir: [1, 0, 0] as Vec3 };
    expect(dragPlanePoint(ray, [0, 0, 0], [0, 0, 1])).toBeNull();
  });
});

describe("surfaceVertices", () => {
  it("collects the vertices used by faces", () => {
    expect(surfaceVertices([[0, 1, 2], [2, 3, 4]])).toEqual(new Set([0, 1, 2, 3, 4]));
  });
});
