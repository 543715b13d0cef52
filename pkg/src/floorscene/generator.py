"""RGB-D view generation boundary.

Ships a deterministic procedural renderer that extrudes the floorplan into
3D (walls/doors/windows as vertical quads, furniture as boxes, plus the
floor) and ray-casts posed RGB-D views with per-pixel instance labels. It
is the exact, perfectly multi-view-consistent stand-in for a learned
generator; external generators plug in through the "gen/1" newline-
delimited JSON protocol over subprocess stdio or TCP.
"""

from __future__ import annotations

import json
import os
import socket
import subprocess
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, pose_from_list, pose_to_list, validate_pose
from .floorplan import Floorplan, derive_object_3d_box, parse_floorplan, serialize_floorplan

DEFAULT_WALL_HEIGHT = 2.8
SCRATCH_ENV_VAR = "FLOORSCENE_SCRATCH"

_LIGHT_DIR = np.array([0.35, 0.25, 0.9])
_LIGHT_DIR = _LIGHT_DIR / np.linalg.norm(_LIGHT_DIR)
_FLOOR_COLOR = np.array([128, 124, 118], dtype=np.float64)
_BG_COLOR = np.array([16, 16, 24], dtype=np.uint8)


class GeneratorError(Exception):
    pass


@dataclass(frozen=True)
class RGBDView:
    pose: np.ndarray              # 4x4 camera-to-world
    intrinsics: CameraIntrinsics
    color: np.ndarray             # (H, W, 3) uint8
    depth: np.ndarray             # (H, W) float64 meters, 0 = invalid
    instance_labels: np.ndarray | None = None  # (H, W) int32, 0 = background/floor

    def __post_init__(self):
        H, W = self.intrinsics.height, self.intrinsics.width
        if self.color.shape != (H, W, 3) or self.depth.shape != (H, W):
            raise ValueError("image dimensions disagree with intrinsics")
        if self.instance_labels is not None and self.instance_labels.shape != (H, W):
            raise ValueError("label dimensions disagree with intrinsics")


@dataclass(frozen=True)
class GenerationRequest:
    floorplan: Floorplan
    reference_views: tuple        # of RGBDView, may be empty for the first batch
    novel_poses: tuple            # of 4x4 poses, nonempty
    intrinsics: CameraIntrinsics
    seed: int = 0

    def __post_init__(self):
        if not self.novel_poses:
            raise ValueError("novel poses must be nonempty")
        for p in self.novel_poses:
            validate_pose(p)


@dataclass(frozen=True)
class Primitive:
    """One renderable piece: a vertical quad or an upright (yaw-rotated) box."""
    kind: str                 # "quad" | "box"
    component_index: int      # -1 for the floor
    category_id: int          # 0 for the floor
    # quad: p0 + u*e1 + v*e2, u,v in [0,1]
    p0: np.ndarray = None
    e1: np.ndarray = None
    e2: np.ndarray = None
    # box: center (cx,cy), extents (ex,ey), yaw, z range [0, height]
    center: np.ndarray = None
    extents: np.ndarray = None
    yaw: float = 0.0
    height: float = 0.0


def _splitmix64(x):
    """One round of the splitmix64 integer mixer (portable across languages)."""
    mask = (1 << 64) - 1
    x = (x + 0x9E3779B97F4A7C15) & mask
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & mask
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & mask
    return x ^ (x >> 31)


def category_palette(cid):
    """Deterministic display color for a category id.

    Channel c (0..2) is 72 + (splitmix64(cid*3 + c) mod 178), giving values
    in [72, 249] that any wire-protocol backend can reproduce exactly.
    """
    if cid == 0:
        return _FLOOR_COLOR
    return np.array([72 + _splitmix64(cid * 3 + c) % 178 for c in range(3)],
                    dtype=np.float64)


def extrude_scene(plan: Floorplan, wall_height=DEFAULT_WALL_HEIGHT, height_table=None):
    """Lift the 2D plan into renderable 3D primitives.

    Segments become full-height vertical quads, furniture boxes become
    upright boxes via their derived 3D bounding box height, and one floor
    quad covers the plan bounds.
    """
    prims = []
    for i, comp in enumerate(plan.components):
        cid = plan.category_id(comp.category)
        if comp.kind == "segment":
            x0, y0, x1, y1 = comp.data
            prims.append(Primitive(
                kind="quad", component_index=i, category_id=cid,
                p0=np.array([x0, y0, 0.0]),
                e1=np.array([x1 - x0, y1 - y0, 0.0]),
                e2=np.array([0.0, 0.0, wall_height])))
        else:
            _, hi = derive_object_3d_box(plan, i, height_table)
            cx, cy, ex, ey, yaw = comp.data
            prims.append(Primitive(
                kind="box", component_index=i, category_id=cid,
                center=np.array([cx, cy]), extents=np.array([ex, ey]),
                yaw=yaw, height=float(hi[2])))
    w, h = plan.bounds
    prims.append(Primitive(
        kind="quad", component_index=-1, category_id=0,
        p0=np.array([0.0, 0.0, 0.0]),
        e1=np.array([w, 0.0, 0.0]),
        e2=np.array([0.0, h, 0.0])))
    return prims


def _intersect_quad(prim, origin, dirs):
    """Ray-quad intersection; returns (t, normal) with t=inf on miss."""
    n = np.cross(prim.e1, prim.e2)
    n = n / np.linalg.norm(n)
    denom = dirs @ n
    ok = np.abs(denom) > 1e-12
    t = np.where(ok, ((prim.p0 - origin) @ n) / np.where(ok, denom, 1.0), np.inf)
    t_finite = np.where(ok, t, 0.0)
    pts = origin + t_finite[:, None] * dirs
    rel = pts - prim.p0
    u = (rel @ prim.e1) / (prim.e1 @ prim.e1)
    v = (rel @ prim.e2) / (prim.e2 @ prim.e2)
    hit = ok & (t > 1e-6) & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    return np.where(hit, t, np.inf), np.broadcast_to(n, dirs.shape)


def _intersect_box(prim, origin, dirs):
    """Slab test in the box's yaw-aligned local frame."""
    c, s = np.cos(prim.yaw), np.sin(prim.yaw)
    R = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> local
    o = R @ (origin - np.array([prim.center[0], prim.center[1], 0.0]))
    d = dirs @ R.T
    lo = np.array([-prim.extents[0], -prim.extents[1], 0.0])
    hi = np.array([prim.extents[0], prim.extents[1], prim.height])

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tmin_ax = np.minimum(t1, t2)
    tmax_ax = np.maximum(t1, t2)
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    parallel = np.abs(d) < 1e-12
    inside = (o >= lo) & (o <= hi)
    tmin_ax = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin_ax)
    tmax_ax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax_ax)
    tmin = tmin_ax.max(axis=1)
    tmax = tmax_ax.min(axis=1)
    hit = (tmax >= tmin) & (tmax > 1e-6) & (tmin > 1e-6)
    t = np.where(hit, tmin, np.inf)

    # entry face normal: the axis realizing tmin, sign opposite the ray
    axis = np.argmax(tmin_ax, axis=1)
    n_local = np.zeros_like(dirs)
    rows = np.arange(len(dirs))
    n_local[rows, axis] = -np.sign(d[rows, axis])
    return t, n_local @ R


def render_oracle(scene, pose, intr: CameraIntrinsics, seed=0, depth_noise=0.0):
    """Ray-cast an RGB-D view of the extruded scene.

    Depth is z-depth along the optical axis; misses get depth 0 and the
    background color. Colors are a fixed per-category palette with
    Lambertian shading from a fixed light. Bit-deterministic given inputs;
    `depth_noise` > 0 adds seeded Gaussian depth noise (meters).
    """
    pose = validate_pose(pose)
    H, W = intr.height, intr.width
    dirs = (intr.pixel_rays().reshape(-1, 3)) @ pose[:3, :3].T
    origin = pose[:3, 3]

    best_t = np.full(H * W, np.inf)
    best_prim = np.full(H * W, -1, dtype=np.int32)
    best_normal = np.zeros((H * W, 3))
    for pi, prim in enumerate(scene):
        if prim.kind == "quad":
            t, nrm = _intersect_quad(prim, origin, dirs)
        else:
            t, nrm = _intersect_box(prim, origin, dirs)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_prim[closer] = pi
        best_normal[closer] = nrm[closer]

    hit = np.isfinite(best_t)
    depth = np.where(hit, best_t, 0.0)

    color = np.tile(_BG_COLOR, (H * W, 1)).astype(np.float64)
    labels = np.zeros(H * W, dtype=np.int32)
    shade = 0.55 + 0.45 * np.abs(best_normal @ _LIGHT_DIR)
    for pi, prim in enumerate(scene):
        sel = hit & (best_prim == pi)
        if not sel.any():
            continue
        color[sel] = category_palette(prim.category_id) * shade[sel, None]
        labels[sel] = prim.component_index + 1

    if depth_noise > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, depth_noise, size=depth.shape)
        depth = np.where(hit, np.maximum(depth + noise, 1e-3), 0.0)

    return RGBDView(
        pose=pose, intrinsics=intr,
        color=np.clip(np.round(color), 0, 255).astype(np.uint8).reshape(H, W, 3),
        depth=depth.reshape(H, W),
        instance_labels=labels.reshape(H, W))


class OracleBackend:
    """In-process exact generator; ignores reference views."""

    def __init__(self, wall_height=DEFAULT_WALL_HEIGHT, height_table=None,
                 depth_noise=0.0):
        self.wall_height = wall_height
        self.height_table = height_table
        self.depth_noise = depth_noise
        self._scene_cache = None

    def _scene(self, plan):
        if self._scene_cache is None or self._scene_cache[0] is not plan:
            self._scene_cache = (plan, extrude_scene(plan, self.wall_height,
                                                     self.height_table))
        return self._scene_cache[1]

    def generate(self, req: GenerationRequest):
        scene = self._scene(req.floorplan)
        return [render_oracle(scene, p, req.intrinsics, seed=req.seed + i,
                              depth_noise=self.depth_noise)
                for i, p in enumerate(req.novel_poses)]


def save_color_png(color, path):
    Image.fromarray(color, mode="RGB").save(path)


def load_color_png(path):
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def save_depth_png(depth_m, path):
    """16-bit single-channel PNG in millimeters; 0 = invalid."""
    mm = np.clip(np.round(depth_m * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def load_depth_png(path):
    mm = np.asarray(Image.open(path), dtype=np.float64)
    return mm / 1000.0


def save_label_png(labels, path):
    Image.fromarray(labels.astype(np.uint16)).save(path)


def load_label_png(path):
    return np.asarray(Image.open(path), dtype=np.int32)


def _request_to_wire(req: GenerationRequest, scratch_dir):
    refs = []
    for i, view in enumerate(req.reference_views):
        cpath = os.path.join(scratch_dir, f"ref_{i:04d}_color.png")
        dpath = os.path.join(scratch_dir, f"ref_{i:04d}_depth.png")
        save_color_png(view.color, cpath)
        save_depth_png(view.depth, dpath)
        refs.append({"pose": pose_to_list(view.pose),
                     "color_path": os.path.abspath(cpath),
                     "depth_path": os.path.abspath(dpath)})
    return {
        "version": "gen/1",
        "seed": req.seed,
        "resolution": [req.intrinsics.height, req.intrinsics.width],
        "intrinsics": req.intrinsics.to_dict(),
        "floorplan": json.loads(serialize_floorplan(req.floorplan)),
        "references": refs,
        "novel_poses": [pose_to_list(p) for p in req.novel_poses],
    }


def _views_from_wire(resp, req: GenerationRequest):
    if resp.get("status") != "ok":
        raise GeneratorError(f"backend error: {resp}")
    views = resp.get("views", [])
    if len(views) != len(req.novel_poses):
        raise GeneratorError(
            f"backend returned {len(views)} views for {len(req.novel_poses)} poses")
    out = []
    H, W = req.intrinsics.height, req.intrinsics.width
    for pose, entry in zip(req.novel_poses, views):
        color = load_color_png(entry["color_path"])
        depth = load_depth_png(entry["depth_path"])
        if color.shape != (H, W, 3) or depth.shape != (H, W):
            raise GeneratorError("backend returned images of wrong resolution")
        labels = None
        if entry.get("label_path"):
            labels = load_label_png(entry["label_path"])
        out.append(RGBDView(pose=np.asarray(pose), intrinsics=req.intrinsics,
                            color=color, depth=depth, instance_labels=labels))
    return out


class SubprocessBackend:
    """gen/1 over a child process's stdio; one request in flight at a time."""

    def __init__(self, command, scratch_dir, timeout=120.0):
        self.command = command
        self.scratch_dir = scratch_dir
        self.timeout = timeout
        self._proc = None

    def _ensure_proc(self):
        if self._proc is None or self._proc.poll() is not None:
            env = dict(os.environ, **{SCRATCH_ENV_VAR: os.path.abspath(self.scratch_dir)})
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                env=env, text=True, bufsize=1)
        return self._proc

    def roundtrip(self, wire):
        """Send one raw request object, return the parsed reply object."""
        os.makedirs(self.scratch_dir, exist_ok=True)
        proc = self._ensure_proc()
        try:
            proc.stdin.write(json.dumps(wire) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as e:
            raise GeneratorError(f"backend process died: {e}") from e
        if not line:
            raise GeneratorError("backend closed the stream without replying")
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise GeneratorError(f"protocol violation, raw response: {line!r}") from e

    def generate(self, req: GenerationRequest):
        resp = self.roundtrip(_request_to_wire(req, self.scratch_dir))
        return _views_from_wire(resp, req)

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None


class TcpBackend:
    """gen/1 over TCP; each request opens its own connection."""

    def __init__(self, host, port, scratch_dir, timeout=120.0):
        self.host = host
        self.port = port
        self.scratch_dir = scratch_dir
        self.timeout = timeout

    def generate(self, req: GenerationRequest):
        os.makedirs(self.scratch_dir, exist_ok=True)
        wire = _request_to_wire(req, self.scratch_dir)
        with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
            f = sock.makefile("rw", encoding="utf-8", newline="\n")
            f.write(json.dumps(wire) + "\n")
            f.flush()
            line = f.readline()
        if not line:
            raise GeneratorError("backend closed the connection without replying")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as e:
            raise GeneratorError(f"protocol violation, raw response: {line!r}") from e
        return _views_from_wire(resp, req)


def generate_batch(backend, req: GenerationRequest):
    """One RGBDView per novel pose, in request order."""
    views = backend.generate(req)
    if len(views) != len(req.novel_poses):
        raise GeneratorError("backend did not return one view per pose")
    return views
