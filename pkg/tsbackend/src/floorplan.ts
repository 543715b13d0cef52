/**
 * Vectorized 2D floorplan ("fp/1" JSON documents): parsing, validation,
 * and derivation of world-aligned 3D furniture boxes.
 *
 * Conventions: lengths in meters, floor plane z=0, height axis +z.
 * Category id 0 is reserved for padding; real categories get ids 1..N
 * in file order.
 */

export const STRUCTURAL_CATEGORIES = ["wall", "door", "window"];
export const DEFAULT_OBJECT_HEIGHT = 2.0;
const MIN_SEGMENT_LENGTH = 1e-6;

export interface Component {
  category: string;
  kind: "segment" | "box";
  /** segment: [x0, y0, x1, y1]; box: [cx, cy, ex, ey, yaw] */
  data: number[];
}

export interface Floorplan {
  components: Component[];
  bounds: [number, number];
  /** category name -> id (1-based, file order) */
  registry: Map<string, number>;
}

export class FloorplanError extends Error {}

function asFiniteNumbers(values: unknown, n: number, what: string): number[] {
  if (!Array.isArray(values) || values.length !== n) {
    throw new FloorplanError(`${what} needs ${n} numeric values`);
  }
  const out = values.map(Number);
  if (out.some((v) => !Number.isFinite(v))) {
    throw new FloorplanError(`${what} contains a non-finite value`);
  }
  return out;
}

/** World-frame corners of a box component, 4 x [x, y]. */
export function boxCorners(comp: Component): number[][] {
  const [cx, cy, ex, ey, yaw] = comp.data;
  const c = Math.cos(yaw);
  const s = Math.sin(yaw);
  const local = [
    [-ex, -ey],
    [ex, -ey],
    [ex, ey],
    [-ex, ey],
  ];
  return local.map(([lx, ly]) => [cx + c * lx - s * ly, cy + s * lx + c * ly]);
}

function validateComponent(
  comp: Component,
  bounds: [number, number],
  registry: Map<string, number>,
  index: number,
): void {
  const where = `component ${index}`;
  if (!registry.has(comp.category)) {
    throw new FloorplanError(`${where}: unknown category '${comp.category}'`);
  }
  let pts: number[][];
  if (comp.kind === "segment") {
    if (!STRUCTURAL_CATEGORIES.includes(comp.category)) {
      throw new FloorplanError(
        `${where}: category '${comp.category}' cannot be a segment`,
      );
    }
    const [x0, y0, x1, y1] = comp.data;
    if (Math.hypot(x1 - x0, y1 - y0) <= MIN_SEGMENT_LENGTH) {
      throw new FloorplanError(`${where}: zero-length segment`);
    }
    pts = [
      [x0, y0],
      [x1, y1],
    ];
  } else if (comp.kind === "box") {
    if (STRUCTURAL_CATEGORIES.includes(comp.category)) {
      throw new FloorplanError(
        `${where}: category '${comp.category}' must be a segment`,
      );
    }
    const [, , ex, ey] = comp.data;
    if (ex <= 0 || ey <= 0) {
      throw new FloorplanError(`${where}: box extents must be positive`);
    }
    pts = boxCorners(comp);
  } else {
    throw new FloorplanError(`${where}: unknown kind '${comp.kind}'`);
  }
  const [w, h] = bounds;
  const eps = 1e-9;
  for (const [x, y] of pts) {
    if (x < -eps || x > w + eps || y < -eps || y > h + eps) {
      throw new FloorplanError(`${where}: geometry outside plan bounds`);
    }
  }
}

/** Parse and validate an inline fp/1 document (already JSON-decoded). */
export function parseFloorplan(doc: unknown): Floorplan {
  if (typeof doc !== "object" || doc === null) {
    throw new FloorplanError("floorplan must be a JSON object");
  }
  const d = doc as Record<string, unknown>;
  if (d.version !== "fp/1") {
    throw new FloorplanError("expected a floorplan with version 'fp/1'");
  }
  for (const key of ["bounds", "categories", "components"]) {
    if (!(key in d)) {
      throw new FloorplanError(`missing required key '${key}'`);
    }
  }
  const bounds = asFiniteNumbers(d.bounds, 2, "bounds") as [number, number];
  if (bounds[0] <= 0 || bounds[1] <= 0) {
    throw new FloorplanError("bounds must be positive");
  }
  const categories = d.categories;
  if (
    !Array.isArray(categories) ||
    categories.some((c) => typeof c !== "string")
  ) {
    throw new FloorplanError("categories must be an array of strings");
  }
  const registry = new Map<string, number>();
  categories.forEach((name: string, i: number) => registry.set(name, i + 1));
  if (registry.size !== categories.length) {
    throw new FloorplanError("duplicate category in registry");
  }
  if (!Array.isArray(d.components)) {
    throw new FloorplanError("components must be an array");
  }
  const components: Component[] = d.components.map((c: unknown, i: number) => {
    const comp = c as Record<string, unknown>;
    const kind = comp.kind;
    if (kind !== "segment" && kind !== "box") {
      throw new FloorplanError(`component ${i}: unknown kind '${kind}'`);
    }
    const n = kind === "segment" ? 4 : 5;
    return {
      category: String(comp.category),
      kind,
      data: asFiniteNumbers(comp.data, n, `component ${i}: kind '${kind}'`),
    };
  });
  components.forEach((comp, i) => validateComponent(comp, bounds, registry, i));
  return { components, bounds, registry };
}

/**
 * World-aligned 3D AABB of a furniture component: base on the floor,
 * top at the category's height (default 2.0 m when not tabulated).
 */
export function deriveObject3dBox(
  plan: Floorplan,
  index: number,
  heightTable?: Map<string, number>,
): { lo: [number, number, number]; hi: [number, number, number] } {
  const comp = plan.components[index];
  if (comp === undefined || comp.kind !== "box") {
    throw new FloorplanError(`component ${index} is not furniture`);
  }
  const height = heightTable?.get(comp.category) ?? DEFAULT_OBJECT_HEIGHT;
  const corners = boxCorners(comp);
  const xs = corners.map((p) => p[0]);
  const ys = corners.map((p) => p[1]);
  return {
    lo: [Math.min(...xs), Math.min(...ys), 0],
    hi: [Math.max(...xs), Math.max(...ys), height],
  };
}
