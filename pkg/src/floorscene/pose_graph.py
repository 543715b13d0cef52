"""Camera pose sampling, pose-graph construction, and batch traversal.

The graph links poses whose relative distance and rotation fall within
thresholds; a deterministic depth-first traversal schedules autoregressive
generation batches (reference views = already generated within delta_r
hops, novel views = not yet generated within delta_n hops). Object-centric
refinement poses are sampled around each furniture piece.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .camera import look_at_pose, pose_from_yaw, pose_from_list, pose_to_list, rotation_angle_deg
from .floorplan import Floorplan, derive_object_3d_box, free_space_mask

DEFAULT_SPACING = 1.5
DEFAULT_CAMERA_HEIGHT = 1.5
DEFAULT_DIST_THRESH = 2.5
DEFAULT_ROT_THRESH = 60.0
DEFAULT_HOPS = 4
DEFAULT_VIEW_CAP = 60


class PoseGraphError(Exception):
    pass


@dataclass(frozen=True)
class PoseGraph:
    vertices: tuple          # of 4x4 pose arrays
    edges: frozenset         # of (a, b) pairs with a < b
    dist_thresh: float
    rot_thresh: float        # threshold actually used (after any relaxation)

    def neighbors(self, v):
        out = []
        for a, b in self.edges:
            if a == v:
                out.append(b)
            elif b == v:
                out.append(a)
        return sorted(out)

    def adjacency(self):
        adj = {i: [] for i in range(len(self.vertices))}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        for v in adj:
            adj[v].sort()
        return adj


@dataclass(frozen=True)
class GenerationBatch:
    reference_ids: tuple[int, ...]
    novel_ids: tuple[int, ...]


def sample_poses(plan: Floorplan, spacing=DEFAULT_SPACING,
                 camera_height=DEFAULT_CAMERA_HEIGHT, seed=0,
                 mask_resolution=0.1, clearance=0.3):
    """Grid-sample camera poses over the plan's free space.

    Positions lie on a `spacing`-pitch grid restricted to free cells, at
    `camera_height`, with yaw drawn uniformly from a seeded generator and
    zero pitch. Deterministic given the seed.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    free = free_space_mask(plan, mask_resolution, clearance=clearance)
    rng = np.random.default_rng(seed)
    poses = []
    w, h = plan.bounds
    nx = int(np.floor(w / spacing))
    ny = int(np.floor(h / spacing))
    for j in range(1, ny + 1):
        for i in range(1, nx + 1):
            x, y = i * spacing, j * spacing
            ix = min(int(x / mask_resolution), free.shape[1] - 1)
            iy = min(int(y / mask_resolution), free.shape[0] - 1)
            if free[iy, ix]:
                yaw = rng.uniform(0.0, 2.0 * np.pi)
                poses.append(pose_from_yaw(x, y, camera_height, yaw))
    if not poses:
        raise PoseGraphError("free space is empty: no poses sampled")
    return poses


def _connected(n, edges):
    if n == 0:
        return True
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for u in adj[v]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return len(seen) == n


def _components(n, edges):
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = set()
    comps = []
    for s in range(n):
        if s in seen:
            continue
        comp = {s}
        stack = [s]
        seen.add(s)
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    comp.add(u)
                    stack.append(u)
        comps.append(sorted(comp))
    return comps


def build_graph(poses, dist_thresh=DEFAULT_DIST_THRESH,
                rot_thresh=DEFAULT_ROT_THRESH) -> PoseGraph:
    """Link pose pairs within distance and rotation thresholds.

    If the result is disconnected, the rotation threshold is relaxed in
    +30 degree steps (up to 180) until connected; still-disconnected graphs
    raise with the component list.
    """
    if not poses:
        raise ValueError("at least one pose required")
    n = len(poses)
    ts = np.array([np.asarray(p)[:3, 3] for p in poses])
    dist_ok = np.linalg.norm(ts[:, None] - ts[None, :], axis=-1) <= dist_thresh
    angles = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            angles[i, j] = angles[j, i] = rotation_angle_deg(poses[i], poses[j])

    rt = rot_thresh
    while True:
        edges = frozenset((i, j) for i in range(n) for j in range(i + 1, n)
                          if dist_ok[i, j] and angles[i, j] <= rt)
        if _connected(n, edges):
            return PoseGraph(vertices=tuple(np.asarray(p) for p in poses),
                             edges=edges, dist_thresh=dist_thresh, rot_thresh=rt)
        if rt >= 180.0:
            comps = _components(n, edges)
            raise PoseGraphError(
                f"pose graph disconnected at rotation threshold 180: components {comps}")
        rt = min(rt + 30.0, 180.0)


def _hop_neighborhood(adj, v, hops):
    """Vertices within `hops` of v (inclusive of v), with hop distances."""
    dist = {v: 0}
    q = deque([v])
    while q:
        u = q.popleft()
        if dist[u] == hops:
            continue
        for nb in adj[u]:
            if nb not in dist:
                dist[nb] = dist[u] + 1
                q.append(nb)
    return dist


def _cap_nearest(ids, hop_dist, positions, v, cap):
    """Keep the `cap` ids nearest to v, ordered by (hops, Euclidean, id)."""
    if len(ids) <= cap:
        return sorted(ids)
    pv = positions[v]
    ranked = sorted(ids, key=lambda i: (hop_dist[i],
                                        float(np.linalg.norm(positions[i] - pv)),
                                        i))
    return sorted(ranked[:cap])


def traverse_plan(G: PoseGraph, delta_r=DEFAULT_HOPS, delta_n=DEFAULT_HOPS,
                  cap=DEFAULT_VIEW_CAP):
    """Depth-first batch schedule over the pose graph.

    Visits vertices in DFS order from vertex 0 (neighbor ties broken by
    ascending id). At each not-yet-generated vertex v, references are the
    generated vertices within delta_r hops and novels the ungenerated ones
    within delta_n hops (v included). Oversized sets keep the `cap` views
    nearest to v by hop count then Euclidean distance. The first batch has
    no references.
    """
    if delta_r < 1 or delta_n < 1:
        raise ValueError("hop distances must be >= 1")
    n = len(G.vertices)
    adj = G.adjacency()
    positions = [p[:3, 3] for p in G.vertices]

    # iterative DFS, neighbors ascending
    order = []
    seen = [False] * n
    stack = [0]
    while stack:
        v = stack.pop()
        if seen[v]:
            continue
        seen[v] = True
        order.append(v)
        for nb in reversed(adj[v]):
            if not seen[nb]:
                stack.append(nb)
    if len(order) != n:
        raise PoseGraphError("graph is not connected")

    generated = set()
    batches = []
    for v in order:
        if v in generated:
            continue
        hop_r = _hop_neighborhood(adj, v, delta_r)
        hop_n = _hop_neighborhood(adj, v, delta_n)
        refs = [u for u in hop_r if u in generated]
        novel = [u for u in hop_n if u not in generated]
        if not novel:
            continue
        refs = _cap_nearest(refs, hop_r, positions, v, cap)
        novel = _cap_nearest(novel, hop_n, positions, v, cap)
        batches.append(GenerationBatch(reference_ids=tuple(refs),
                                       novel_ids=tuple(novel)))
        generated.update(novel)
    return batches


def refinement_poses(plan: Floorplan, object_index, height_table=None, n=20,
                     radius=2.0, seed=0, mask_resolution=0.1,
                     max_attempts_per_pose=200):
    """Object-centric poses: up to `n` cameras within `radius` of the
    object's 3D box center, looking at the center, outside every derived
    object box and inside the room's free space.

    Returns (poses, complete) where complete=False flags that fewer than n
    valid positions were found within the rejection budget.
    """
    lo, hi = derive_object_3d_box(plan, object_index, height_table)
    center = (lo + hi) / 2.0
    boxes = [derive_object_3d_box(plan, i, height_table)
             for i in plan.furniture_indices()]
    # clearance 0: the 3D-box rejection handles object interiors, and
    # refinement cameras must be allowed close to the target object
    free = free_space_mask(plan, mask_resolution, clearance=0.0)
    rng = np.random.default_rng(seed)
    w, h = plan.bounds

    poses = []
    budget = n * max_attempts_per_pose
    while len(poses) < n and budget > 0:
        budget -= 1
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        r = radius * rng.uniform() ** (1.0 / 3.0)
        pos = center + r * d
        if pos[2] < 0.2:
            continue
        if not (0 <= pos[0] < w and 0 <= pos[1] < h):
            continue
        inside = any((pos >= blo).all() and (pos <= bhi).all()
                     for blo, bhi in boxes)
        if inside:
            continue
        ix = min(int(pos[0] / mask_resolution), free.shape[1] - 1)
        iy = min(int(pos[1] / mask_resolution), free.shape[0] - 1)
        if not free[iy, ix]:
            continue
        poses.append(look_at_pose(pos, center))
    return poses, len(poses) == n


def poses_to_json(poses):
    return json.dumps({"poses": [pose_to_list(p) for p in poses]}, indent=2)


def poses_from_json(text):
    return [pose_from_list(v) for v in json.loads(text)["poses"]]


def batches_to_json(batches):
    return json.dumps({"batches": [
        {"reference_ids": list(b.reference_ids), "novel_ids": list(b.novel_ids)}
        for b in batches]}, indent=2)


def batches_from_json(text):
    return [GenerationBatch(reference_ids=tuple(b["reference_ids"]),
                            novel_ids=tuple(b["novel_ids"]))
            for b in json.loads(text)["batches"]]
