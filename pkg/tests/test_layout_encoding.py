import numpy as np
import pytest

from floorscene.camera import CameraIntrinsics, pose_from_yaw
from floorscene.floorplan import Component, make_floorplan
from floorscene.layout_encoding import (
    AttentionWeights, LayoutRayEncoding, embed_layout, encode_view,
    layout_cross_attention, load_encoding, make_sinusoidal_posenc,
    save_encoding,
)

from conftest import CATEGORIES, random_plan


def plan_with(components, bounds=(12.0, 12.0)):
    return make_floorplan(components, bounds, CATEGORIES)


def center_ray_intr():
    # 3x3 camera whose center pixel (1,1) looks exactly along the optical axis
    return CameraIntrinsics(fx=1.0, fy=1.0, cx=1.0, cy=1.0, width=3, height=3)


def shifted_origin_pose(yaw=0.0, x=1.0, y=6.0, z=1.5):
    return pose_from_yaw(x, y, z, yaw)


def test_single_wall_hit():
    plan = plan_with([Component("wall", "segment", (6.0, 5.0, 6.0, 7.0))])
    pose = shifted_origin_pose()
    # center pixel with cx=cy=0.5 looks slightly off axis; use a 1-pixel cam
    # whose only ray passes through (cx, cy) exactly
    intr = center_ray_intr()
    enc = encode_view(pose, intr, plan, max_hits=4)
    assert enc.valid_count[1, 1] == 1
    assert enc.categories[0, 1, 1] == plan.category_id("wall")
    assert np.isclose(enc.positions[0, 0, 1, 1], 5.0)
    assert np.isclose(enc.positions[0, 1, 1, 1], 1.5)  # level ray keeps height


def test_box_then_wall_hits():
    plan = plan_with([
        Component("wall", "segment", (6.0, 5.0, 6.0, 7.0)),
        Component("table", "box", (3.5, 6.0, 0.5, 0.5, 0.0)),
    ])
    enc = encode_view(shifted_origin_pose(), center_ray_intr(), plan, max_hits=4)
    assert enc.valid_count[1, 1] == 3
    assert np.allclose(enc.positions[:3, 0, 1, 1], [2.0, 3.0, 5.0])
    tid = plan.category_id("table")
    wid = plan.category_id("wall")
    assert list(enc.categories[:3, 1, 1]) == [tid, tid, wid]
    # padding entries are zero
    assert enc.categories[3, 1, 1] == 0
    assert np.all(enc.positions[3, :, 1, 1] == 0)


def test_wall_occludes_box():
    plan = plan_with([
        Component("wall", "segment", (3.0, 5.0, 3.0, 7.0)),
        Component("table", "box", (4.5, 6.0, 0.5, 0.5, 0.0)),
    ])
    enc = encode_view(shifted_origin_pose(), center_ray_intr(), plan, max_hits=4)
    assert enc.valid_count[1, 1] == 1
    assert np.isclose(enc.positions[0, 0, 1, 1], 2.0)
    assert enc.categories[0, 1, 1] == plan.category_id("wall")


def test_door_does_not_occlude():
    plan = plan_with([
        Component("door", "segment", (3.0, 5.0, 3.0, 7.0)),
        Component("wall", "segment", (6.0, 5.0, 6.0, 7.0)),
    ])
    enc = encode_view(shifted_origin_pose(), center_ray_intr(), plan, max_hits=4)
    assert enc.valid_count[1, 1] == 2


def test_height_channel_tracks_ray_slope():
    plan = plan_with([Component("wall", "segment", (6.0, 0.0, 6.0, 12.0))])
    intr = CameraIntrinsics(fx=2.0, fy=2.0, cx=1.0, cy=1.0, width=3, height=3)
    pose = shifted_origin_pose()
    enc = encode_view(pose, intr, plan, max_hits=2)
    # ray of pixel (0,0): direction ((0-1)/2, (0-1)/2, 1) in camera frame
    d_cam = np.array([-0.5, -0.5, 1.0])
    R = pose[:3, :3]
    w = R @ d_cam
    n = np.hypot(w[0], w[1])
    depth = enc.positions[0, 0, 0, 0]
    expected_height = 1.5 + depth * w[2] / n
    assert np.isclose(enc.positions[0, 1, 0, 0], expected_height)


def test_straight_down_pixel_has_no_hits():
    plan = plan_with([Component("wall", "segment", (6.0, 5.0, 6.0, 7.0))])
    # camera pitched straight down: optical axis = -z
    P = np.eye(4)
    P[:3, 0] = [0, 1, 0]
    P[:3, 1] = [1, 0, 0]
    P[:3, 2] = [0, 0, -1]
    P[:3, 3] = [1, 6, 1.5]
    enc = encode_view(P, center_ray_intr(), plan, max_hits=4)
    assert enc.valid_count[1, 1] == 0


def brute_force_encode(pose, intr, plan, max_hits):
    """Scalar reference: per-pixel loop over every edge with explicit
    2D segment intersection."""
    H, W = intr.height, intr.width
    R, t = pose[:3, :3], pose[:3, 3]
    edges = []
    for comp in plan.components:
        cid = plan.category_id(comp.category)
        wall = comp.category == "wall"
        if comp.kind == "segment":
            x0, y0, x1, y1 = comp.data
            edges.append(((x0, y0), (x1, y1), cid, wall))
        else:
            corners = comp.box_corners()
            for k in range(4):
                edges.append((tuple(corners[k]), tuple(corners[(k + 1) % 4]),
                              cid, False))
    cats = np.zeros((max_hits, H, W), dtype=np.int32)
    poss = np.zeros((max_hits, 2, H, W))
    counts = np.zeros((H, W), dtype=np.int32)
    for iy in range(H):
        for ix in range(W):
            d_cam = np.array([(ix - intr.cx) / intr.fx,
                              (iy - intr.cy) / intr.fy, 1.0])
            w = R @ d_cam
            n = np.hypot(w[0], w[1])
            if n < 1e-9:
                continue
            ux, uy = w[0] / n, w[1] / n
            hits = []
            for (a, b, cid, wall) in edges:
                ex, ey = b[0] - a[0], b[1] - a[1]
                denom = ux * ey - uy * ex
                if abs(denom) <= 1e-9:
                    continue
                rx, ry = a[0] - t[0], a[1] - t[1]
                s = (rx * ey - ry * ex) / denom
                tt = (rx * uy - ry * ux) / denom
                if s > 1e-6 and 0.0 <= tt <= 1.0:
                    hits.append((s, cid, wall))
            hits.sort(key=lambda hh: hh[0])
            kept = []
            for s, cid, wall in hits:
                kept.append((s, cid))
                if wall:
                    break
            kept = kept[:max_hits]
            counts[iy, ix] = len(kept)
            for m, (s, cid) in enumerate(kept):
                cats[m, iy, ix] = cid
                poss[m, 0, iy, ix] = s
                poss[m, 1, iy, ix] = t[2] + s * w[2] / n
    return LayoutRayEncoding(cats, poss, counts)


def assert_encodings_equal(a, b, atol=1e-9):
    assert np.array_equal(a.valid_count, b.valid_count)
    assert np.array_equal(a.categories, b.categories)
    assert np.allclose(a.positions, b.positions, atol=atol)


def test_encode_matches_brute_force_random_plans():
    rng = np.random.default_rng(42)
    intr = CameraIntrinsics.from_fov(16, 16, 90.0)
    for _ in range(4):
        plan = random_plan(rng)
        pose = pose_from_yaw(rng.uniform(1.5, 4.5), rng.uniform(1.5, 4.5),
                             1.5, rng.uniform(0, 2 * np.pi))
        enc = encode_view(pose, intr, plan, max_hits=8)
        ref = brute_force_encode(pose, intr, plan, max_hits=8)
        assert_encodings_equal(enc, ref)


def test_depths_strictly_increasing(furnished_room):
    intr = CameraIntrinsics.from_fov(12, 12, 100.0)
    enc = encode_view(pose_from_yaw(2.0, 2.0, 1.5, 0.7), intr, furnished_room)
    M = enc.max_hits
    for iy in range(12):
        for ix in range(12):
            c = enc.valid_count[iy, ix]
            d = enc.positions[:c, 0, iy, ix]
            assert (np.diff(d) > 0).all()


def test_occlusion_monotonic(furnished_room):
    intr = CameraIntrinsics.from_fov(12, 12, 100.0)
    pose = pose_from_yaw(2.0, 0.8, 1.5, np.pi / 2)
    base = encode_view(pose, intr, furnished_room)
    comps = list(furnished_room.components) + [
        Component("wall", "segment", (0.5, 1.6, 3.5, 1.6))]
    blocked_plan = make_floorplan(comps, furnished_room.bounds, CATEGORIES)
    blocked = encode_view(pose, intr, blocked_plan)
    assert (blocked.valid_count <= base.valid_count + 1).all()
    # rays that now hit the near wall lose everything behind it
    assert blocked.valid_count.sum() <= base.valid_count.sum() + (12 * 12)


def test_world_frame_equivariance(furnished_room):
    # rotating plan and camera together by 90 degrees about the plan center
    # leaves depths/heights unchanged
    intr = CameraIntrinsics.from_fov(8, 8, 90.0)
    pose = pose_from_yaw(1.0, 1.0, 1.4, 0.3)
    enc = encode_view(pose, intr, furnished_room, max_hits=6)

    def rot90(x, y):
        return (4.0 - y, x)

    comps = []
    for c in furnished_room.components:
        if c.kind == "segment":
            x0, y0, x1, y1 = c.data
            comps.append(Component(c.category, "segment",
                                   (*rot90(x0, y0), *rot90(x1, y1))))
        else:
            cx, cy, ex, ey, yaw = c.data
            comps.append(Component(c.category, "box",
                                   (*rot90(cx, cy), ex, ey, yaw + np.pi / 2)))
    plan2 = make_floorplan(comps, (4.0, 4.0), CATEGORIES)
    W = np.eye(4)
    W[:3, :3] = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    W[:3, 3] = [4.0, 0.0, 0.0]
    enc2 = encode_view(W @ pose, intr, plan2, max_hits=6)
    assert np.array_equal(enc.valid_count, enc2.valid_count)
    assert np.array_equal(enc.categories, enc2.categories)
    assert np.allclose(enc.positions, enc2.positions, atol=1e-9)


def test_posenc_zero_pattern():
    posenc = make_sinusoidal_posenc(16)
    v = posenc(np.array(0.0), np.array(0.0))
    assert np.allclose(v, np.tile([0.0, 1.0], 8))


def test_embed_layout_is_sum(furnished_room):
    intr = CameraIntrinsics.from_fov(6, 6, 90.0)
    enc = encode_view(pose_from_yaw(2.0, 2.0, 1.5, 1.0), intr, furnished_room,
                      max_hits=4)
    C = 8
    rng = np.random.default_rng(3)
    table = rng.normal(size=(len(CATEGORIES) + 1, C))
    posenc = make_sinusoidal_posenc(C)
    emb = embed_layout(enc, table, posenc)
    # brute-force scalar loop
    for m in range(4):
        for iy in range(6):
            for ix in range(6):
                cid = enc.categories[m, iy, ix]
                p = enc.positions[m, :, iy, ix]
                expected = table[cid] + posenc(p[0], p[1])
                assert np.allclose(emb.features[m, :, iy, ix], expected)


def test_embed_layout_range_check(empty_room):
    intr = CameraIntrinsics.from_fov(4, 4, 90.0)
    enc = encode_view(pose_from_yaw(2.0, 2.0, 1.5, 0.0), intr, empty_room)
    with pytest.raises(ValueError, match="range"):
        embed_layout(enc, np.zeros((1, 8)), make_sinusoidal_posenc(8))


def naive_attention(latent, emb, weights, valid_count):
    C, H, W = latent.shape
    M = emb.features.shape[0]
    nh, dh = weights.n_heads, C // weights.n_heads
    out = np.empty_like(latent)
    for iy in range(H):
        for ix in range(W):
            q_in = latent[:, iy, ix]
            n = valid_count[iy, ix]
            if n == 0:
                out[:, iy, ix] = q_in
                continue
            keys = emb.features[:n, :, iy, ix]          # (n, C)
            q = (q_in @ weights.wq).reshape(nh, dh)
            k = (keys @ weights.wk).reshape(n, nh, dh)
            v = (keys @ weights.wv).reshape(n, nh, dh)
            heads = []
            for hh in range(nh):
                sc = k[:, hh] @ q[hh] / np.sqrt(dh)
                sc = np.exp(sc - sc.max())
                sc /= sc.sum()
                heads.append(sc @ v[:, hh])
            out[:, iy, ix] = np.concatenate(heads) @ weights.wo
    return out


def test_attention_matches_naive(furnished_room):
    rng = np.random.default_rng(11)
    intr = CameraIntrinsics.from_fov(6, 6, 100.0)
    enc = encode_view(pose_from_yaw(2.0, 1.0, 1.5, 1.3), intr, furnished_room,
                      max_hits=4)
    C = 8
    table = rng.normal(size=(len(CATEGORIES) + 1, C))
    emb = embed_layout(enc, table, make_sinusoidal_posenc(C))
    weights = AttentionWeights.random(C, 2, seed=5)
    latent = rng.normal(size=(C, 6, 6))
    got = layout_cross_attention(latent, emb, weights, enc.valid_count)
    ref = naive_attention(latent, emb, weights, enc.valid_count)
    assert np.allclose(got, ref, rtol=1e-5, atol=1e-10)


def test_attention_singleton_softmax():
    C = 8
    rng = np.random.default_rng(2)
    feats = np.zeros((1, C, 1, 1))
    feats[0, :, 0, 0] = rng.normal(size=C)
    from floorscene.layout_encoding import LayoutEmbedding
    emb = LayoutEmbedding(features=feats)
    weights = AttentionWeights.random(C, 2, seed=1)
    latent = rng.normal(size=(C, 1, 1))
    out = layout_cross_attention(latent, emb, weights,
                                 np.ones((1, 1), dtype=np.int32))
    expected = (feats[0, :, 0, 0] @ weights.wv) @ weights.wo
    assert np.allclose(out[:, 0, 0], expected)


def test_attention_passthrough_on_empty():
    C = 8
    rng = np.random.default_rng(2)
    from floorscene.layout_encoding import LayoutEmbedding
    emb = LayoutEmbedding(features=rng.normal(size=(3, C, 2, 2)))
    weights = AttentionWeights.random(C, 2, seed=1)
    latent = rng.normal(size=(C, 2, 2))
    out = layout_cross_attention(latent, emb, weights,
                                 np.zeros((2, 2), dtype=np.int32))
    assert np.array_equal(out, latent)


def test_attention_padding_invariance(furnished_room):
    rng = np.random.default_rng(4)
    intr = CameraIntrinsics.from_fov(5, 5, 100.0)
    pose = pose_from_yaw(2.0, 1.0, 1.5, 2.0)
    C = 8
    table = rng.normal(size=(len(CATEGORIES) + 1, C))
    posenc = make_sinusoidal_posenc(C)
    weights = AttentionWeights.random(C, 2, seed=9)
    latent = rng.normal(size=(C, 5, 5))
    enc4 = encode_view(pose, intr, furnished_room, max_hits=4)
    enc8 = encode_view(pose, intr, furnished_room, max_hits=8)
    assert (enc4.valid_count == enc8.valid_count).all()  # nothing truncated here
    out4 = layout_cross_attention(latent, embed_layout(enc4, table, posenc),
                                  weights, enc4.valid_count)
    out8 = layout_cross_attention(latent, embed_layout(enc8, table, posenc),
                                  weights, enc8.valid_count)
    assert np.allclose(out4, out8, atol=1e-6)


def test_encoding_serialization_roundtrip(tmp_path, furnished_room):
    intr = CameraIntrinsics.from_fov(6, 6, 90.0)
    enc = encode_view(pose_from_yaw(2.0, 2.0, 1.5, 0.5), intr, furnished_room)
    path = tmp_path / "enc.bin"
    save_encoding(enc, path)
    again = load_encoding(path)
    assert np.array_equal(enc.categories, again.categories)
    assert np.array_equal(enc.positions, again.positions)
    assert np.array_equal(enc.valid_count, again.valid_count)
