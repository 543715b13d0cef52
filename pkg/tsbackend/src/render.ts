/**
 * Deterministic procedural RGB-D renderer.
 *
 * The floorplan is extruded into 3D (wall/door/window segments become
 * full-height vertical quads, furniture boxes become upright boxes, plus
 * one floor quad) and ray-cast per pixel. Depth is z-depth along the
 * optical axis with 0 marking misses; colors come from a fixed per-category
 * palette with Lambertian shading from a fixed light; labels carry the
 * component index + 1 (0 = floor/background).
 */

import {
  DEFAULT_OBJECT_HEIGHT,
  Floorplan,
  deriveObject3dBox,
} from "./floorplan.js";
import { Intrinsics, Pose, pixelRayWorld, poseOrigin } from "./camera.js";

export const DEFAULT_WALL_HEIGHT = 2.8;

const LIGHT_NORM = Math.sqrt(0.35 * 0.35 + 0.25 * 0.25 + 0.9 * 0.9);
const LIGHT: [number, number, number] = [
  0.35 / LIGHT_NORM,
  0.25 / LIGHT_NORM,
  0.9 / LIGHT_NORM,
];
const FLOOR_COLOR: [number, number, number] = [128, 124, 118];
const BG_COLOR: [number, number, number] = [16, 16, 24];

export interface QuadPrimitive {
  kind: "quad";
  componentIndex: number;
  categoryId: number;
  p0: [number, number, number];
  e1: [number, number, number];
  e2: [number, number, number];
  /** unit plane normal, precomputed from e1 x e2 */
  n: [number, number, number];
}

export interface BoxPrimitive {
  kind: "box";
  componentIndex: number;
  categoryId: number;
  center: [number, number];
  extents: [number, number];
  yaw: number;
  height: number;
}

export type Primitive = QuadPrimitive | BoxPrimitive;

function makeQuad(
  componentIndex: number,
  categoryId: number,
  p0: [number, number, number],
  e1: [number, number, number],
  e2: [number, number, number],
): QuadPrimitive {
  const cx = e1[1] * e2[2] - e1[2] * e2[1];
  const cy = e1[2] * e2[0] - e1[0] * e2[2];
  const cz = e1[0] * e2[1] - e1[1] * e2[0];
  const norm = Math.sqrt(cx * cx + cy * cy + cz * cz);
  return {
    kind: "quad",
    componentIndex,
    categoryId,
    p0,
    e1,
    e2,
    n: [cx / norm, cy / norm, cz / norm],
  };
}

/** Lift the 2D plan into renderable 3D primitives. */
export function extrudeScene(
  plan: Floorplan,
  wallHeight = DEFAULT_WALL_HEIGHT,
  heightTable?: Map<string, number>,
): Primitive[] {
  const prims: Primitive[] = [];
  plan.components.forEach((comp, i) => {
    const categoryId = plan.registry.get(comp.category)!;
    if (comp.kind === "segment") {
      const [x0, y0, x1, y1] = comp.data;
      prims.push(
        makeQuad(
          i,
          categoryId,
          [x0, y0, 0],
          [x1 - x0, y1 - y0, 0],
          [0, 0, wallHeight],
        ),
      );
    } else {
      const { hi } = deriveObject3dBox(plan, i, heightTable);
      const [cx, cy, ex, ey, yaw] = comp.data;
      prims.push({
        kind: "box",
        componentIndex: i,
        categoryId,
        center: [cx, cy],
        extents: [ex, ey],
        yaw,
        height: hi[2],
      });
    }
  });
  const [w, h] = plan.bounds;
  prims.push(makeQuad(-1, 0, [0, 0, 0], [w, 0, 0], [0, h, 0]));
  return prims;
}

const MASK64 = (1n << 64n) - 1n;

/** One round of the splitmix64 integer mixer (portable across languages). */
function splitmix64(x: bigint): bigint {
  x = (x + 0x9e3779b97f4a7c15n) & MASK64;
  x = ((x ^ (x >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  x = ((x ^ (x >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return x ^ (x >> 31n);
}

/**
 * Deterministic display color for a category id: channel c is
 * 72 + (splitmix64(cid*3 + c) mod 178). Category 0 is the floor.
 */
export function categoryPalette(cid: number): [number, number, number] {
  if (cid === 0) {
    return FLOOR_COLOR;
  }
  const ch = (c: number): number =>
    72 + Number(splitmix64(BigInt(cid * 3 + c)) % 178n);
  return [ch(0), ch(1), ch(2)];
}

interface Hit {
  t: number;
  n: [number, number, number];
}

const MISS: Hit = { t: Infinity, n: [0, 0, 0] };

function intersectQuad(
  prim: QuadPrimitive,
  o: [number, number, number],
  d: [number, number, number],
): Hit {
  const n = prim.n;
  const denom = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
  if (Math.abs(denom) <= 1e-12) {
    return MISS;
  }
  const t =
    ((prim.p0[0] - o[0]) * n[0] +
      (prim.p0[1] - o[1]) * n[1] +
      (prim.p0[2] - o[2]) * n[2]) /
    denom;
  if (t <= 1e-6) {
    return MISS;
  }
  const rx = o[0] + t * d[0] - prim.p0[0];
  const ry = o[1] + t * d[1] - prim.p0[1];
  const rz = o[2] + t * d[2] - prim.p0[2];
  const e1 = prim.e1;
  const e2 = prim.e2;
  const u =
    (rx * e1[0] + ry * e1[1] + rz * e1[2]) /
    (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
  const v =
    (rx * e2[0] + ry * e2[1] + rz * e2[2]) /
    (e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]);
  if (u < 0 || u > 1 || v < 0 || v > 1) {
    return MISS;
  }
  return { t, n };
}

function intersectBox(
  prim: BoxPrimitive,
  origin: [number, number, number],
  dir: [number, number, number],
): Hit {
  // slab test in the box's yaw-aligned local frame
  const c = Math.cos(prim.yaw);
  const s = Math.sin(prim.yaw);
  const wx = origin[0] - prim.center[0];
  const wy = origin[1] - prim.center[1];
  const o: [number, number, number] = [
    c * wx + s * wy,
    -s * wx + c * wy,
    origin[2],
  ];
  const d: [number, number, number] = [
    c * dir[0] + s * dir[1],
    -s * dir[0] + c * dir[1],
    dir[2],
  ];
  const lo = [-prim.extents[0], -prim.extents[1], 0];
  const hi = [prim.extents[0], prim.extents[1], prim.height];

  let tmin = -Infinity;
  let tmax = Infinity;
  let axis = 0;
  for (let a = 0; a < 3; a++) {
    let t1: number;
    let t2: number;
    if (Math.abs(d[a]) < 1e-12) {
      // parallel to this slab: inside -> unbounded, outside -> miss
      const inside = o[a] >= lo[a] && o[a] <= hi[a];
      t1 = inside ? -Infinity : Infinity;
      t2 = inside ? Infinity : -Infinity;
    } else {
      const ta = (lo[a] - o[a]) / d[a];
      const tb = (hi[a] - o[a]) / d[a];
      t1 = Math.min(ta, tb);
      t2 = Math.max(ta, tb);
    }
    if (t1 > tmin) {
      tmin = t1;
      axis = a; // entry face: the axis realizing the latest entry time
    }
    tmax = Math.min(tmax, t2);
  }
  if (!(tmax >= tmin && tmax > 1e-6 && tmin > 1e-6)) {
    return MISS;
  }
  const sign = Math.sign(d[axis]);
  const nl: [number, number, number] = [0, 0, 0];
  nl[axis] = -sign;
  // local normal back to the world frame
  return {
    t: tmin,
    n: [c * nl[0] - s * nl[1], s * nl[0] + c * nl[1], nl[2]],
  };
}

/** Round half-to-even (matches IEEE-style array rounding elsewhere). */
export function roundHalfEven(x: number): number {
  const f = Math.floor(x);
  const frac = x - f;
  if (frac > 0.5) {
    return f + 1;
  }
  if (frac < 0.5) {
    return f;
  }
  return f % 2 === 0 ? f : f + 1;
}

export interface RenderedView {
  /** H*W*3 interleaved 8-bit RGB */
  color: Uint8Array;
  /** H*W depth in millimeters, 0 = invalid */
  depthMm: Uint16Array;
  /** H*W instance labels (component index + 1, 0 = floor/background) */
  labels: Uint16Array;
}

/** Ray-cast one posed view of the extruded scene. */
export function renderView(
  scene: Primitive[],
  pose: Pose,
  intr: Intrinsics,
): RenderedView {
  const { width, height } = intr;
  const color = new Uint8Array(width * height * 3);
  const depthMm = new Uint16Array(width * height);
  const labels = new Uint16Array(width * height);
  const origin = poseOrigin(pose);

  for (let v = 0; v < height; v++) {
    for (let u = 0; u < width; u++) {
      const dir = pixelRayWorld(intr, pose, u, v);
      let best = MISS;
      let bestPrim: Primitive | null = null;
      for (const prim of scene) {
        const hit =
          prim.kind === "quad"
            ? intersectQuad(prim, origin, dir)
            : intersectBox(prim, origin, dir);
        if (hit.t < best.t) {
          best = hit;
          bestPrim = prim;
        }
      }
      const px = v * width + u;
      if (bestPrim === null) {
        color.set(BG_COLOR, px * 3);
        continue;
      }
      const ndl = Math.abs(
        best.n[0] * LIGHT[0] + best.n[1] * LIGHT[1] + best.n[2] * LIGHT[2],
      );
      const shade = 0.55 + 0.45 * ndl;
      const base = categoryPalette(bestPrim.categoryId);
      for (let ch = 0; ch < 3; ch++) {
        color[px * 3 + ch] = Math.min(
          255,
          Math.max(0, roundHalfEven(base[ch] * shade)),
        );
      }
      depthMm[px] = Math.min(
        65535,
        Math.max(0, roundHalfEven(best.t * 1000)),
      );
      labels[px] = bestPrim.componentIndex + 1;
    }
  }
  return { color, depthMm, labels };
}
