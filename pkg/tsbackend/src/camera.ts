/**
 * Pinhole camera intrinsics and SE(3) pose handling.
 *
 * Conventions: world frame is z-up with the floor at z=0; camera frame is
 * x-right, y-down, z-forward; poses are 4x4 camera-to-world matrices sent
 * on the wire as 16 row-major floats; depth maps store z-depth (distance
 * along the optical axis), 0 = invalid.
 */

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export class CameraError extends Error {}

export function parseIntrinsics(raw: unknown): Intrinsics {
  if (typeof raw !== "object" || raw === null) {
    throw new CameraError("intrinsics must be an object");
  }
  const d = raw as Record<string, unknown>;
  const take = (key: string): number => {
    const v = Number(d[key]);
    if (!Number.isFinite(v)) {
      throw new CameraError(`intrinsics field '${key}' missing or non-finite`);
    }
    return v;
  };
  const intr: Intrinsics = {
    fx: take("fx"),
    fy: take("fy"),
    cx: take("cx"),
    cy: take("cy"),
    width: take("width"),
    height: take("height"),
  };
  if (intr.fx <= 0 || intr.fy <= 0) {
    throw new CameraError("focal lengths must be positive");
  }
  if (
    !(intr.cx > 0 && intr.cx < intr.width) ||
    !(intr.cy > 0 && intr.cy < intr.height)
  ) {
    throw new CameraError("principal point must lie inside the image");
  }
  if (!Number.isInteger(intr.width) || !Number.isInteger(intr.height)) {
    throw new CameraError("image dimensions must be integers");
  }
  return intr;
}

/** 4x4 row-major pose; rows[i][j] addressed as m[i * 4 + j]. */
export type Pose = Float64Array;

export function parsePose(raw: unknown, tol = 1e-6): Pose {
  if (!Array.isArray(raw) || raw.length !== 16) {
    throw new CameraError("pose must be 16 row-major floats");
  }
  const m = Float64Array.from(raw.map(Number));
  if (Array.from(m).some((v) => !Number.isFinite(v))) {
    throw new CameraError("pose contains a non-finite value");
  }
  // rotation block must be orthonormal with determinant +1
  for (let a = 0; a < 3; a++) {
    for (let b = 0; b < 3; b++) {
      let dot = 0;
      for (let k = 0; k < 3; k++) dot += m[k * 4 + a] * m[k * 4 + b];
      if (Math.abs(dot - (a === b ? 1 : 0)) > tol) {
        throw new CameraError("pose rotation block is not orthonormal");
      }
    }
  }
  const det =
    m[0] * (m[5] * m[10] - m[6] * m[9]) -
    m[1] * (m[4] * m[10] - m[6] * m[8]) +
    m[2] * (m[4] * m[9] - m[5] * m[8]);
  if (det < 0) {
    throw new CameraError("pose rotation block has negative determinant");
  }
  if (m[12] !== 0 || m[13] !== 0 || m[14] !== 0 || m[15] !== 1) {
    throw new CameraError("pose last row must be [0,0,0,1]");
  }
  return m;
}

/**
 * World-frame ray direction for pixel (u, v): the camera-frame direction
 * ((u-cx)/fx, (v-cy)/fy, 1) rotated into the world, so the ray parameter
 * equals z-depth.
 */
export function pixelRayWorld(
  intr: Intrinsics,
  pose: Pose,
  u: number,
  v: number,
): [number, number, number] {
  const dx = (u - intr.cx) / intr.fx;
  const dy = (v - intr.cy) / intr.fy;
  const dz = 1.0;
  return [
    dx * pose[0] + dy * pose[1] + dz * pose[2],
    dx * pose[4] + dy * pose[5] + dz * pose[6],
    dx * pose[8] + dy * pose[9] + dz * pose[10],
  ];
}

export function poseOrigin(pose: Pose): [number, number, number] {
  return [pose[3], pose[7], pose[11]];
}
