"""Per-pixel ray encodings of a floorplan and their latent embedding.

For every pixel, the 3D viewing ray is projected onto the floor plane and
intersected with all floorplan geometry (wall/door/window segments and the
four edges of every furniture box). Hits are sorted near-to-far, clipped at
the first wall hit, truncated to M entries and zero-padded. Each hit stores
the semantic category id and a 2-vector (depth along the projected ray,
height of the 3D ray above the floor at that point).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, validate_pose

_EPS = 1e-9
_MIN_RAY_DEPTH = 1e-6


@dataclass(frozen=True)
class LayoutRayEncoding:
    categories: np.ndarray   # (M, H, W) int32, 0 = padding
    positions: np.ndarray    # (M, 2, H, W) float64; [depth, height]
    valid_count: np.ndarray  # (H, W) int32

    @property
    def max_hits(self):
        return self.categories.shape[0]


@dataclass(frozen=True)
class LayoutEmbedding:
    features: np.ndarray  # (M, C, H, W)


def _plan_edges(plan):
    """Flatten plan geometry into segment arrays.

    Returns (a, b, cat, is_wall): endpoints (K,2), category ids (K,),
    wall flags (K,). Box components contribute their four edges.
    """
    a, b, cat, wall = [], [], [], []
    for comp in plan.components:
        cid = plan.category_id(comp.category)
        if comp.kind == "segment":
            x0, y0, x1, y1 = comp.data
            a.append((x0, y0))
            b.append((x1, y1))
            cat.append(cid)
            wall.append(comp.category == "wall")
        else:
            corners = comp.box_corners()
            for i in range(4):
                a.append(corners[i])
                b.append(corners[(i + 1) % 4])
                cat.append(cid)
                wall.append(False)
    if not a:
        return (np.zeros((0, 2)), np.zeros((0, 2)),
                np.zeros(0, dtype=np.int32), np.zeros(0, dtype=bool))
    return (np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
            np.asarray(cat, dtype=np.int32), np.asarray(wall, dtype=bool))


def encode_view(pose, intr: CameraIntrinsics, plan, max_hits=8) -> LayoutRayEncoding:
    """Ray-encode `plan` as seen from a camera.

    Depth is planar distance along the floor-projected ray; height is the
    z of the original 3D ray at the matching parameter. Hits after the
    first wall hit are excluded (occlusion); each ray keeps at most
    `max_hits` entries, zero-padded.
    """
    if max_hits < 1:
        raise ValueError("max_hits must be >= 1")
    pose = validate_pose(pose)
    if pose[2, 3] <= 0:
        raise ValueError("camera must be above the floor (z > 0)")
    H, W = intr.height, intr.width
    P = H * W

    dirs_cam = intr.pixel_rays().reshape(P, 3)
    dirs_w = dirs_cam @ pose[:3, :3].T
    origin = pose[:3, 3]

    planar = dirs_w[:, :2]
    n = np.linalg.norm(planar, axis=1)
    degenerate = n < _EPS
    n_safe = np.where(degenerate, 1.0, n)
    U = planar / n_safe[:, None]              # unit planar direction
    slope = dirs_w[:, 2] / n_safe             # dz per meter of planar travel

    a, b, cat, is_wall = _plan_edges(plan)
    K = len(cat)
    cats = np.zeros((max_hits, H, W), dtype=np.int32)
    poss = np.zeros((max_hits, 2, H, W), dtype=np.float64)
    counts = np.zeros((H, W), dtype=np.int32)
    if K == 0:
        return LayoutRayEncoding(cats, poss, counts)

    e = b - a                                  # (K, 2)
    rel = a - origin[:2]                       # (K, 2)
    # solve origin + s*U = a + t*e per (edge, pixel) via 2D cross products
    denom = U[None, :, 0] * e[:, None, 1] - U[None, :, 1] * e[:, None, 0]
    ok = np.abs(denom) > _EPS
    denom_safe = np.where(ok, denom, 1.0)
    s = (rel[:, None, 0] * e[:, None, 1] - rel[:, None, 1] * e[:, None, 0]) / denom_safe
    t = (rel[:, None, 0] * U[None, :, 1] - rel[:, None, 1] * U[None, :, 0]) / denom_safe
    ok &= (s > _MIN_RAY_DEPTH) & (t >= 0.0) & (t <= 1.0) & ~degenerate[None, :]
    s = np.where(ok, s, np.inf)

    order = np.argsort(s, axis=0, kind="stable")
    s_sorted = np.take_along_axis(s, order, axis=0)
    cat_sorted = cat[order]
    wall_sorted = is_wall[order]
    valid = np.isfinite(s_sorted)
    # drop everything after (not including) the first wall hit
    wall_hits = wall_sorted & valid
    behind_wall = np.cumsum(wall_hits, axis=0) - wall_hits > 0
    valid &= ~behind_wall

    slot = np.cumsum(valid, axis=0) - 1        # output index per kept hit
    keep = valid & (slot < max_hits)
    k_idx, p_idx = np.nonzero(keep)
    m_idx = slot[k_idx, p_idx]
    h_idx, w_idx = np.unravel_index(p_idx, (H, W))

    depth = s_sorted[k_idx, p_idx]
    height = origin[2] + depth * slope[p_idx]
    cats[m_idx, h_idx, w_idx] = cat_sorted[k_idx, p_idx]
    poss[m_idx, 0, h_idx, w_idx] = depth
    poss[m_idx, 1, h_idx, w_idx] = height
    counts_flat = np.minimum(valid.sum(axis=0), max_hits).astype(np.int32)
    counts[:] = counts_flat.reshape(H, W)
    return LayoutRayEncoding(cats, poss, counts)


def make_sinusoidal_posenc(channels):
    """Sinusoidal encoder for (depth, height) pairs into `channels` dims.

    Half the channels encode depth, half height, each as interleaved
    sin/cos over a geometric frequency ladder; (0, 0) maps to the
    alternating (0, 1, 0, 1, ...) pattern.
    """
    if channels % 4 != 0:
        raise ValueError("channels must be divisible by 4")
    half = channels // 2
    pairs = half // 2
    freqs = 10000.0 ** (-np.arange(pairs) / max(pairs, 1))

    def posenc(depth, height):
        depth = np.asarray(depth, dtype=np.float64)
        height = np.asarray(height, dtype=np.float64)
        out = np.empty(depth.shape + (channels,))
        for off, val in ((0, depth), (half, height)):
            ang = val[..., None] * freqs
            out[..., off:off + half:2] = np.sin(ang)
            out[..., off + 1:off + half:2] = np.cos(ang)
        return out

    return posenc


def embed_layout(enc: LayoutRayEncoding, embed_table, posenc) -> LayoutEmbedding:
    """features[m,:,h,w] = embed_table[category] + posenc(depth, height).

    Row 0 of `embed_table` is the padding embedding; padded slots carry
    position (0, 0) so they receive posenc(0, 0).
    """
    embed_table = np.asarray(embed_table, dtype=np.float64)
    if enc.categories.max(initial=0) >= embed_table.shape[0]:
        raise ValueError("category id out of embedding table range")
    M, H, W = enc.categories.shape
    sem = embed_table[enc.categories]                         # (M, H, W, C)
    pos = posenc(enc.positions[:, 0], enc.positions[:, 1])    # (M, H, W, C)
    feats = np.transpose(sem + pos, (0, 3, 1, 2))
    return LayoutEmbedding(features=np.ascontiguousarray(feats))


@dataclass(frozen=True)
class AttentionWeights:
    wq: np.ndarray  # (C, C)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    n_heads: int

    @classmethod
    def random(cls, channels, n_heads, seed=0):
        if channels % n_heads != 0:
            raise ValueError("channels must divide evenly into heads")
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(channels)
        mats = rng.normal(0.0, scale, size=(4, channels, channels))
        return cls(wq=mats[0], wk=mats[1], wv=mats[2], wo=mats[3], n_heads=n_heads)


def layout_cross_attention(latent, emb: LayoutEmbedding, weights: AttentionWeights, valid_count):
    """Per-ray multi-head cross attention over a pixel's layout hits.

    latent: (C, H, W) query features. Keys/values are the M embedded hits of
    each pixel's ray; entries at index >= valid_count are masked out. Pixels
    with valid_count 0 pass through unchanged. Returns (C, H, W).
    """
    latent = np.asarray(latent, dtype=np.float64)
    C, H, W = latent.shape
    M = emb.features.shape[0]
    nh = weights.n_heads
    dh = C // nh

    q_in = latent.reshape(C, H * W).T                      # (P, C)
    kv_in = emb.features.reshape(M, C, H * W).transpose(2, 0, 1)  # (P, M, C)

    q = (q_in @ weights.wq).reshape(-1, nh, dh)            # (P, nh, dh)
    k = (kv_in @ weights.wk).reshape(-1, M, nh, dh)
    v = (kv_in @ weights.wv).reshape(-1, M, nh, dh)

    scores = np.einsum("phd,pmhd->phm", q, k) / np.sqrt(dh)
    mask = np.arange(M)[None, :] < valid_count.reshape(-1)[:, None]  # (P, M)
    scores = np.where(mask[:, None, :], scores, -np.inf)

    empty = valid_count.reshape(-1) == 0
    scores[empty] = 0.0  # avoid all -inf softmax; output overwritten below
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)

    out = np.einsum("phm,pmhd->phd", w, v).reshape(-1, C) @ weights.wo
    out[empty] = q_in[empty]
    return out.T.reshape(C, H, W)


_DTYPE_CODES = {np.dtype("int32"): 0, np.dtype("float64"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _write_array(f, arr):
    f.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def _read_array(f):
    code, ndim = struct.unpack("<BB", f.read(2))
    shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
    dtype = _CODE_DTYPES[code]
    n = int(np.prod(shape)) * dtype.itemsize
    return np.frombuffer(f.read(n), dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)


def save_encoding(enc: LayoutRayEncoding, path):
    """Binary container: magic 'LRE1' then the three shape-prefixed LE arrays."""
    with open(path, "wb") as f:
        f.write(b"LRE1")
        _write_array(f, enc.categories)
        _write_array(f, enc.positions)
        _write_array(f, enc.valid_count)


def load_encoding(path) -> LayoutRayEncoding:
    with open(path, "rb") as f:
        if f.read(4) != b"LRE1":
            raise ValueError("not a layout ray encoding file")
        return LayoutRayEncoding(
            categories=_read_array(f),
            positions=_read_array(f),
            valid_count=_read_array(f),
        )
