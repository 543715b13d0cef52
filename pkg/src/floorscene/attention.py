"""Pose-conditioned attention-score kernels.

Tokens live in a d-dimensional space with d divisible by 4; an SE(3) pose
is lifted to a d x d block-diagonal matrix (d/4 copies of the 4x4 pose)
so tokens transform under camera motion the way homogeneous points do.
Scores computed from the lifted relative pose are invariant to the choice
of world frame. The depth-enhanced variant additionally augments the key
token with a positional encoding of its camera-frame 3D position.
"""

from __future__ import annotations

import numpy as np

from .camera import CameraIntrinsics


def phi(P, d):
    """Block-diagonal lift of a 4x4 pose to a d x d matrix (d/4 blocks).

    Satisfies phi(A) @ phi(B) == phi(A @ B) and phi(inv(A)) == inv(phi(A)).
    """
    if d % 4 != 0:
        raise ValueError("feature dimension must be divisible by 4")
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (4, 4):
        raise ValueError("pose must be 4x4")
    out = np.zeros((d, d))
    for i in range(0, d, 4):
        out[i:i + 4, i:i + 4] = P
    return out


def apply_pose_lift(P, v):
    """phi(P) @ v without materializing the d x d matrix."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] % 4 != 0:
        raise ValueError("feature dimension must be divisible by 4")
    blocks = v.reshape(*v.shape[:-1], -1, 4)
    return (blocks @ np.asarray(P, dtype=np.float64).T).reshape(v.shape)


def cape_similarity(vQ, vK, PQ, PK):
    """Pose-aware score <phi(PQ^-T) vQ, phi(PK) vK> = vQ^T phi(PQ^-1 PK) vK."""
    vQ = np.asarray(vQ, dtype=np.float64)
    vK = np.asarray(vK, dtype=np.float64)
    if vQ.shape != vK.shape:
        raise ValueError("query/key tokens must have the same dimension")
    rel = np.linalg.inv(np.asarray(PQ, dtype=np.float64)) @ np.asarray(PK, dtype=np.float64)
    return float(vQ @ apply_pose_lift(rel, vK))


def decape_similarity(vQ, vK, PQ, PK, pK, posenc):
    """Depth-enhanced score: vQ^T phi(PQ^-1 PK) (vK + posenc(pK)).

    pK is the key token's 3D position in the key camera frame; pass None
    (or let posenc map the origin) when the depth is invalid.
    """
    vK = np.asarray(vK, dtype=np.float64)
    aug = posenc(np.zeros(3) if pK is None else np.asarray(pK, dtype=np.float64))
    return cape_similarity(vQ, vK + np.asarray(aug, dtype=np.float64), PQ, PK)


def unproject_token_position(pixel, depth, intr: CameraIntrinsics):
    """Camera-frame 3D point of a pixel at a given z-depth.

    Returns None for non-positive depth (invalid); callers substitute the
    origin encoding.
    """
    if depth <= 0:
        return None
    u, v = pixel
    return np.array([(u - intr.cx) * depth / intr.fx,
                     (v - intr.cy) * depth / intr.fy,
                     depth])


def make_point_posenc(d, scale=1.0):
    """Fixed sinusoidal encoding of a 3D point into d dims (d divisible by 4).

    Stand-in for a learned encoding; swap in a table-backed callable with
    the same signature to load trained weights.
    """
    if d % 4 != 0:
        raise ValueError("feature dimension must be divisible by 4")
    per_axis = d // 3
    rem = d - 3 * per_axis

    def posenc(p):
        p = np.asarray(p, dtype=np.float64) * scale
        parts = []
        for axis in range(3):
            n = per_axis + (rem if axis == 2 else 0)
            pairs = (n + 1) // 2
            freqs = 10000.0 ** (-np.arange(pairs) / max(pairs, 1))
            ang = p[axis] * freqs
            block = np.empty(2 * pairs)
            block[0::2] = np.sin(ang)
            block[1::2] = np.cos(ang)
            parts.append(block[:n])
        return np.concatenate(parts)

    return posenc
