"""TSDF volumetric fusion and colored-mesh extraction.

The volume is a dense voxel grid stored as lazily allocated 16^3 bricks,
which keeps house-scale plans feasible when most of the grid is never
observed. Fusion is the classic weighted running average of truncated
signed distances (z-depth convention); the zero level set is extracted
with marching cubes restricted to observed voxels, and vertex colors are
trilinearly interpolated from the per-voxel color accumulators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from skimage.measure import marching_cubes

from .generator import RGBDView

BRICK = 16
DEFAULT_VOXEL_SIZE = 0.04
DEFAULT_W_MAX = 64.0


class FusionError(Exception):
    pass


@dataclass
class ColoredMesh:
    vertices: np.ndarray   # (N, 3) float64 meters
    colors: np.ndarray     # (N, 3) uint8
    faces: np.ndarray      # (M, 3) int32

    @classmethod
    def empty(cls):
        return cls(vertices=np.zeros((0, 3)),
                   colors=np.zeros((0, 3), dtype=np.uint8),
                   faces=np.zeros((0, 3), dtype=np.int32))

    def boundary_edge_count(self):
        """Edges used by exactly one triangle (hole/border measure)."""
        if len(self.faces) == 0:
            return 0
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                            self.faces[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int((counts == 1).sum())


class TSDFVolume:
    """Brick-chunked truncated signed distance volume.

    Arrays are indexed [ix, iy, iz]; voxel (i,j,k) is centered at
    origin + (i+0.5, j+0.5, k+0.5) * voxel_size.
    """

    def __init__(self, origin, dims, voxel_size=DEFAULT_VOXEL_SIZE,
                 truncation=None, neg_truncation=None, w_max=DEFAULT_W_MAX):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.dims = tuple(int(d) for d in dims)
        self.voxel_size = float(voxel_size)
        self.truncation = float(truncation if truncation is not None
                                else 3.0 * voxel_size)
        if self.truncation < self.voxel_size:
            raise ValueError("truncation must be >= voxel size")
        # Behind-surface band is kept narrower than the front band: a voxel
        # more than ~one layer behind an observed surface says nothing about
        # that voxel (it may belong to a thin occluded gap), and integrating
        # it fabricates zero crossings against genuinely-free neighbors.
        self.neg_truncation = float(
            neg_truncation if neg_truncation is not None
            else min(self.truncation, 1.5 * self.voxel_size))
        self.w_max = float(w_max)
        self.bricks = {}  # (bx,by,bz) -> dict(tsdf, weight, color)
        self._nbricks = tuple(-(-d // BRICK) for d in self.dims)
        # local voxel-center offsets for one brick, shape (BRICK^3, 3)
        idx = np.stack(np.meshgrid(*([np.arange(BRICK)] * 3), indexing="ij"),
                       axis=-1).reshape(-1, 3)
        self._local = (idx + 0.5)

    @classmethod
    def from_floorplan(cls, plan, wall_height, voxel_size=DEFAULT_VOXEL_SIZE,
                       margin=0.2, **kw):
        w, h = plan.bounds
        origin = np.array([-margin, -margin, -margin])
        size = np.array([w + 2 * margin, h + 2 * margin, wall_height + 2 * margin])
        dims = np.ceil(size / voxel_size).astype(int)
        return cls(origin=origin, dims=dims, voxel_size=voxel_size, **kw)

    def _brick(self, key, allocate):
        b = self.bricks.get(key)
        if b is None and allocate:
            b = {"tsdf": np.ones((BRICK,) * 3, dtype=np.float64),
                 "weight": np.zeros((BRICK,) * 3, dtype=np.float64),
                 "color": np.zeros((BRICK,) * 3 + (3,), dtype=np.float64)}
            self.bricks[key] = b
        return b

    def observed_voxel_count(self):
        return int(sum((b["weight"] > 0).sum() for b in self.bricks.values()))

    def integrate(self, view: RGBDView):
        """Fuse one posed RGB-D view (weighted running average per voxel)."""
        intr = view.intrinsics
        H, W = intr.height, intr.width
        if view.depth.shape != (H, W):
            raise FusionError("view resolution disagrees with its intrinsics")
        R = view.pose[:3, :3]
        t = view.pose[:3, 3]
        depth = view.depth
        color = view.color.astype(np.float64)
        max_depth = depth.max(initial=0.0)

        for bx in range(self._nbricks[0]):
            for by in range(self._nbricks[1]):
                for bz in range(self._nbricks[2]):
                    base = np.array([bx, by, bz]) * BRICK
                    centers = self.origin + (base + self._local) * self.voxel_size
                    pts = (centers - t) @ R  # world -> camera
                    z = pts[:, 2]
                    ok = z > 1e-6
                    if not ok.any():
                        continue
                    # cheap cull: brick entirely beyond the view's far depth
                    if z[ok].min() > max_depth + self.truncation:
                        continue
                    z_safe = np.where(ok, z, 1.0)
                    u = np.round(pts[:, 0] / z_safe * intr.fx + intr.cx).astype(int)
                    v = np.round(pts[:, 1] / z_safe * intr.fy + intr.cy).astype(int)
                    ok &= (u >= 0) & (u < W) & (v >= 0) & (v < H)
                    if not ok.any():
                        continue
                    ui = np.where(ok, u, 0)
                    vi = np.where(ok, v, 0)
                    d_pix = depth[vi, ui]
                    ok &= d_pix > 0
                    sdf = d_pix - z
                    ok &= sdf > -self.neg_truncation
                    if not ok.any():
                        continue
                    # also skip voxels out of grid range on the high side
                    in_grid = ((base + self._local) <
                               np.array(self.dims) + 0.5).all(axis=1)
                    ok &= in_grid
                    if not ok.any():
                        continue

                    b = self._brick((bx, by, bz), allocate=True)
                    sel = ok.reshape((BRICK,) * 3)
                    tsdf_obs = np.clip(sdf / self.truncation, -1.0, 1.0)
                    w_old = b["weight"][sel]
                    b["tsdf"][sel] = (b["tsdf"][sel] * w_old + tsdf_obs[ok]) / (w_old + 1.0)
                    b["color"][sel] = ((b["color"][sel] * w_old[:, None]
                                        + color[vi[ok], ui[ok]]) / (w_old + 1.0)[:, None])
                    b["weight"][sel] = np.minimum(w_old + 1.0, self.w_max)

    def dense(self):
        """Materialize (tsdf, weight, color) dense arrays of shape dims."""
        nx, ny, nz = self.dims
        pnx, pny, pnz = (n * BRICK for n in self._nbricks)
        tsdf = np.ones((pnx, pny, pnz))
        weight = np.zeros((pnx, pny, pnz))
        color = np.zeros((pnx, pny, pnz, 3))
        for (bx, by, bz), b in self.bricks.items():
            sl = (slice(bx * BRICK, (bx + 1) * BRICK),
                  slice(by * BRICK, (by + 1) * BRICK),
                  slice(bz * BRICK, (bz + 1) * BRICK))
            tsdf[sl] = b["tsdf"]
            weight[sl] = b["weight"]
            color[sl] = b["color"]
        return tsdf[:nx, :ny, :nz], weight[:nx, :ny, :nz], color[:nx, :ny, :nz]

    def save(self, path):
        """Snapshot: metadata + brick table + brick payload arrays."""
        keys = np.array(sorted(self.bricks), dtype=np.int32).reshape(-1, 3)
        np.savez_compressed(
            path,
            origin=self.origin, voxel_size=np.float64(self.voxel_size),
            dims=np.array(self.dims, dtype=np.int32),
            truncation=np.float64(self.truncation),
            neg_truncation=np.float64(self.neg_truncation),
            w_max=np.float64(self.w_max),
            brick_keys=keys,
            tsdf=np.stack([self.bricks[tuple(k)]["tsdf"] for k in keys]) if len(keys) else np.zeros((0,) + (BRICK,) * 3),
            weight=np.stack([self.bricks[tuple(k)]["weight"] for k in keys]) if len(keys) else np.zeros((0,) + (BRICK,) * 3),
            color=np.stack([self.bricks[tuple(k)]["color"] for k in keys]) if len(keys) else np.zeros((0,) + (BRICK,) * 3 + (3,)),
        )

    @classmethod
    def load(cls, path):
        z = np.load(path)
        vol = cls(origin=z["origin"], dims=z["dims"],
                  voxel_size=float(z["voxel_size"]),
                  truncation=float(z["truncation"]),
                  neg_truncation=(float(z["neg_truncation"])
                                  if "neg_truncation" in z else None),
                  w_max=float(z["w_max"]))
        for i, key in enumerate(z["brick_keys"]):
            vol.bricks[tuple(int(k) for k in key)] = {
                "tsdf": z["tsdf"][i].copy(),
                "weight": z["weight"][i].copy(),
                "color": z["color"][i].copy(),
            }
        return vol


def extract_mesh(vol: TSDFVolume) -> ColoredMesh:
    """Marching cubes over the zero level set, observed voxels only.

    Unobserved voxels read +1, so a voxel observed only from behind a
    surface (negative, e.g. grazing a wall at a view-frustum edge) would
    fabricate a crossing against its unobserved neighbors. Each vertex
    sits on one grid edge; keeping only vertices whose both edge endpoints
    were observed removes exactly those phantom surfaces.
    """
    if not vol.bricks:
        return ColoredMesh.empty()
    tsdf, weight, color = vol.dense()
    try:
        verts, faces, _, _ = marching_cubes(tsdf, level=0.0)
    except (ValueError, RuntimeError):
        return ColoredMesh.empty()  # no zero crossing anywhere
    if len(verts) == 0:
        return ColoredMesh.empty()

    observed = weight > 0
    lo = np.floor(verts + 1e-9).astype(int)
    frac = verts - lo
    axis = frac.argmax(axis=1)
    hi = lo.copy()
    hi[np.arange(len(verts)), axis] += (frac.max(axis=1) > 1e-6)
    hi = np.minimum(hi, np.array(observed.shape) - 1)
    keep_vert = observed[tuple(lo.T)] & observed[tuple(hi.T)]
    keep_face = keep_vert[faces].all(axis=1)
    remap = np.full(len(verts), -1, dtype=np.int64)
    used = np.unique(faces[keep_face])
    remap[used] = np.arange(len(used))
    verts = verts[used]
    faces = remap[faces[keep_face]]
    if len(verts) == 0:
        return ColoredMesh.empty()
    cols = np.stack([map_coordinates(color[..., c], verts.T, order=1,
                                     mode="nearest") for c in range(3)], axis=1)
    # voxel (i,j,k) value sits at its center
    world = vol.origin + (verts + 0.5) * vol.voxel_size
    return ColoredMesh(vertices=world,
                       colors=np.clip(np.round(cols), 0, 255).astype(np.uint8),
                       faces=faces.astype(np.int32))


_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {nv}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
element face {nf}
property list uchar int vertex_indices
end_header
"""


def save_mesh(mesh: ColoredMesh, path):
    """Binary little-endian PLY with per-vertex uchar RGB."""
    with open(path, "wb") as f:
        f.write(_PLY_HEADER.format(nv=len(mesh.vertices),
                                   nf=len(mesh.faces)).encode("ascii"))
        vdata = np.zeros(len(mesh.vertices),
                         dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
        vdata["xyz"] = mesh.vertices
        vdata["rgb"] = mesh.colors
        f.write(vdata.tobytes())
        fdata = np.zeros(len(mesh.faces), dtype=[("n", "u1"), ("idx", "<i4", 3)])
        fdata["n"] = 3
        fdata["idx"] = mesh.faces
        f.write(fdata.tobytes())


def load_mesh(path) -> ColoredMesh:
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FusionError("not a PLY file")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    nv = nf = None
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
        elif parts[:2] == ["format", "ascii"]:
            raise FusionError("only binary little-endian PLY is supported")
    if nv is None or nf is None:
        raise FusionError("PLY header missing vertex/face elements")
    body = data[end + len(b"end_header\n"):]
    vsize = nv * 15  # 3 float32 + 3 uchar
    fsize = nf * 13  # uchar count + 3 int32
    if len(body) < vsize + fsize:
        raise FusionError("truncated PLY payload")
    vdata = np.frombuffer(body[:vsize],
                          dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
    fdata = np.frombuffer(body[vsize:vsize + fsize],
                          dtype=[("n", "u1"), ("idx", "<i4", 3)])
    if nf and not (fdata["n"] == 3).all():
        raise FusionError("non-triangular face in PLY")
    faces = fdata["idx"].astype(np.int32).reshape(nf, 3)
    if nf and (faces.min() < 0 or faces.max() >= max(nv, 1)):
        raise FusionError("face index out of range")
    return ColoredMesh(vertices=vdata["xyz"].astype(np.float64).reshape(nv, 3),
                       colors=vdata["rgb"].reshape(nv, 3).copy(),
                       faces=faces)
