/**
 * gen/1 wire protocol: newline-delimited JSON requests over a byte stream.
 *
 * Request: {version:"gen/1", seed, resolution:[H,W], intrinsics,
 *           floorplan (inline fp/1 document), references:[...],
 *           novel_poses:[[16 row-major floats]...]}.
 * Reply:   {status:"ok", views:[{color_path, depth_path, label_path}...]}
 *          or {status:"error", message}.
 *
 * Images are written to the scratch directory (FLOORSCENE_SCRATCH) as
 * 8-bit RGB PNG color, 16-bit grayscale PNG depth in millimeters
 * (0 = invalid), and 16-bit grayscale PNG instance labels; all paths in
 * replies are absolute. Reference views are accepted but unused: this
 * backend re-renders the exact procedural scene, so conditioning adds
 * nothing (a learned generator plugging into the same socket would read
 * them).
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { resolve } from "node:path";

import { Intrinsics, Pose, parseIntrinsics, parsePose } from "./camera.js";
import { encodeGray16, encodeRgb8 } from "./png.js";
import { Floorplan, parseFloorplan } from "./floorplan.js";
import { extrudeScene, renderView } from "./render.js";

export const PROTOCOL_VERSION = "gen/1";
export const SCRATCH_ENV_VAR = "FLOORSCENE_SCRATCH";

export class ProtocolError extends Error {}

export interface ViewEntry {
  color_path: string;
  depth_path: string;
  label_path: string;
}

export type Reply =
  | { status: "ok"; views: ViewEntry[] }
  | { status: "error"; message: string };

interface ParsedRequest {
  plan: Floorplan;
  intrinsics: Intrinsics;
  poses: Pose[];
}

function parseRequest(raw: unknown): ParsedRequest {
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new ProtocolError("request must be a JSON object");
  }
  const req = raw as Record<string, unknown>;
  if (req.version !== PROTOCOL_VERSION) {
    throw new ProtocolError(
      `unsupported protocol version ${JSON.stringify(req.version ?? null)}; ` +
        `this backend speaks '${PROTOCOL_VERSION}'`,
    );
  }
  const intrinsics = parseIntrinsics(req.intrinsics);
  const resolution = req.resolution;
  if (
    !Array.isArray(resolution) ||
    resolution.length !== 2 ||
    resolution[0] !== intrinsics.height ||
    resolution[1] !== intrinsics.width
  ) {
    throw new ProtocolError("resolution must be [H, W] matching intrinsics");
  }
  const plan = parseFloorplan(req.floorplan);
  const rawPoses = req.novel_poses;
  if (!Array.isArray(rawPoses) || rawPoses.length === 0) {
    throw new ProtocolError("novel_poses must be a nonempty array");
  }
  return { plan, intrinsics, poses: rawPoses.map(parsePose) };
}

export class BackendSession {
  private readonly scratchDir: string;
  private requestCounter = 0;

  constructor(scratchDir?: string) {
    this.scratchDir = resolve(
      scratchDir ?? process.env[SCRATCH_ENV_VAR] ?? ".",
    );
  }

  /** Handle one request line; never throws — errors become error replies. */
  handleLine(line: string): Reply {
    let raw: unknown;
    try {
      raw = JSON.parse(line);
    } catch (err) {
      return { status: "error", message: `malformed JSON request: ${err}` };
    }
    try {
      return this.handleRequest(raw);
    } catch (err) {
      return { status: "error", message: String((err as Error).message ?? err) };
    }
  }

  handleRequest(raw: unknown): Reply {
    const { plan, intrinsics, poses } = parseRequest(raw);
    const scene = extrudeScene(plan);
    const reqId = this.requestCounter++;
    mkdirSync(this.scratchDir, { recursive: true });

    const views = poses.map((pose, i) => {
      const rendered = renderView(scene, pose, intrinsics);
      const stem = resolve(
        this.scratchDir,
        `gen_${String(reqId).padStart(4, "0")}_${String(i).padStart(4, "0")}`,
      );
      const entry: ViewEntry = {
        color_path: `${stem}_color.png`,
        depth_path: `${stem}_depth.png`,
        label_path: `${stem}_label.png`,
      };
      writeFileSync(
        entry.color_path,
        encodeRgb8(rendered.color, intrinsics.width, intrinsics.height),
      );
      writeFileSync(
        entry.depth_path,
        encodeGray16(rendered.depthMm, intrinsics.width, intrinsics.height),
      );
      writeFileSync(
        entry.label_path,
        encodeGray16(rendered.labels, intrinsics.width, intrinsics.height),
      );
      return entry;
    });
    return { status: "ok", views };
  }
}
