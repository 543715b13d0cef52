"""Multi-view consistency metrics and top-down layout evaluation.

Consistency: a source view is forward-warped (z-buffered splat) into a
target view; pixels whose warped and target depths agree within a
tolerance form the correspondence mask, over which masked PSNR, AbsRel
and inlier fractions are computed. Layout: instance-labeled pixels are
unprojected to world points, reduced to per-instance top-down 2D boxes,
and scored against the floorplan's boxes with mAP at an IoU threshold.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

from .camera import CameraIntrinsics
from .floorplan import Floorplan
from .generator import RGBDView

DEFAULT_TOLERANCE = 0.05  # meters, ~1 fusion voxel
PSNR_SENTINEL = 99.0      # reported for zero MSE
FLOOR_CLEARANCE = 0.02    # points this close to the floor are dropped


@dataclass(frozen=True)
class CorrespondenceMask:
    mask: np.ndarray     # (H, W) bool
    tolerance: float
    valid_pixels: int


@dataclass
class ConsistencyReport:
    pair: str            # "R-N" | "N-N"
    src_id: int
    dst_id: int
    psnr: float | None
    absrel: float | None
    delta: dict          # str(i) -> fraction
    overlap: float


def unproject(depth, intr: CameraIntrinsics):
    """Camera-frame points (H, W, 3) from a z-depth map; invalid pixels give zeros."""
    return intr.pixel_rays() * depth[..., None]


def warp_view(src: RGBDView, dst_pose, dst_intr: CameraIntrinsics):
    """Forward-warp src color/depth into the destination view.

    Valid src pixels are unprojected with src depth, moved into the
    destination camera, projected, and splatted to the nearest pixel
    keeping the smallest depth. Returns (color, depth, valid) where depth
    is the warped z-depth in the destination frame.
    """
    H, W = dst_intr.height, dst_intr.width
    valid_src = src.depth > 0
    pts_cam = unproject(src.depth, src.intrinsics)[valid_src]
    colors = src.color[valid_src]
    rel = np.linalg.inv(np.asarray(dst_pose)) @ src.pose
    pts_dst = pts_cam @ rel[:3, :3].T + rel[:3, 3]
    z = pts_dst[:, 2]
    front = z > 1e-6
    pts_dst, colors, z = pts_dst[front], colors[front], z[front]

    u = np.round(pts_dst[:, 0] / z * dst_intr.fx + dst_intr.cx).astype(int)
    v = np.round(pts_dst[:, 1] / z * dst_intr.fy + dst_intr.cy).astype(int)
    inb = (u >= 0) & (u < W) & (v >= 0) & (v < H)
    u, v, z, colors = u[inb], v[inb], z[inb], colors[inb]

    depth_out = np.full((H, W), np.inf)
    flat = v * W + u
    np.minimum.at(depth_out.reshape(-1), flat, z)
    valid = np.isfinite(depth_out)

    color_out = np.zeros((H, W, 3), dtype=np.uint8)
    # keep only the splat that won the z-buffer
    winner = z <= depth_out[v, u] + 1e-12
    color_out[v[winner], u[winner]] = colors[winner]
    depth_out[~valid] = 0.0
    return color_out, depth_out, valid


def correspondence_mask(d_warped, d_dst, tolerance=DEFAULT_TOLERANCE):
    """Pixels where both depths are valid and agree within the tolerance."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if d_warped.shape != d_dst.shape:
        raise ValueError("depth shapes disagree")
    m = (d_warped > 0) & (d_dst > 0) & (np.abs(d_warped - d_dst) < tolerance)
    return CorrespondenceMask(mask=m, tolerance=tolerance,
                              valid_pixels=int(m.sum()))


def psnr_masked(i_warped, i_dst, mask):
    """Masked PSNR in dB over 8-bit images; None on empty mask, 99 dB at MSE 0."""
    m = mask.mask if isinstance(mask, CorrespondenceMask) else mask
    if not m.any():
        return None
    a = i_warped[m].astype(np.float64)
    b = i_dst[m].astype(np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return 20.0 * np.log10(255.0) - 10.0 * np.log10(mse)


def absrel_masked(d_warped, d_dst, mask):
    """Mean |warped - target| / target over the mask; None on empty mask."""
    m = mask.mask if isinstance(mask, CorrespondenceMask) else mask
    if not m.any():
        return None
    return float(np.mean(np.abs(d_warped[m] - d_dst[m]) / d_dst[m]))


def delta_inlier(d_warped, d_dst, mask, i=0.5):
    """Fraction of masked pixels with depth ratio below 1.25**i."""
    m = mask.mask if isinstance(mask, CorrespondenceMask) else mask
    if not m.any():
        return None
    a, b = d_warped[m], d_dst[m]
    ratio = np.maximum(a / b, b / a)
    return float(np.mean(ratio < 1.25 ** i))


def consistency_pair(src: RGBDView, dst: RGBDView, pair_label, src_id, dst_id,
                     tolerance=DEFAULT_TOLERANCE, delta_exponents=(0.5,)):
    """All consistency metrics for one ordered view pair."""
    i_w, d_w, _ = warp_view(src, dst.pose, dst.intrinsics)
    cm = correspondence_mask(d_w, dst.depth, tolerance)
    return ConsistencyReport(
        pair=pair_label, src_id=src_id, dst_id=dst_id,
        psnr=psnr_masked(i_w, dst.color, cm),
        absrel=absrel_masked(d_w, dst.depth, cm),
        delta={str(i): delta_inlier(d_w, dst.depth, cm, i)
               for i in delta_exponents},
        overlap=cm.valid_pixels / cm.mask.size)


def group_consistency(reference_views, novel_views, ref_ids=None, novel_ids=None,
                      tolerance=DEFAULT_TOLERANCE, delta_exponents=(0.5,)):
    """R-N pairs: each novel against every reference; N-N: novel pairs."""
    ref_ids = ref_ids or list(range(len(reference_views)))
    novel_ids = novel_ids or list(range(len(novel_views)))
    reports = []
    for ri, rv in zip(ref_ids, reference_views):
        for ni, nv in zip(novel_ids, novel_views):
            reports.append(consistency_pair(rv, nv, "R-N", ri, ni,
                                            tolerance, delta_exponents))
    for a in range(len(novel_views)):
        for b in range(a + 1, len(novel_views)):
            reports.append(consistency_pair(novel_views[a], novel_views[b],
                                            "N-N", novel_ids[a], novel_ids[b],
                                            tolerance, delta_exponents))
    return reports


@dataclass(frozen=True)
class TopDownBox:
    category: str
    x0: float
    y0: float
    x1: float
    y1: float
    score: float = 1.0

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError("top-down box must have positive area")

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def box_iou(a: TopDownBox, b: TopDownBox):
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    return inter / (a.area + b.area - inter) if inter > 0 else 0.0


def extract_topdown_boxes(views, plan: Floorplan):
    """Per-instance top-down boxes from labeled RGB-D views.

    Label convention: 0 = background/floor, i+1 = plan component i. Only
    furniture components produce boxes; labeled points are unprojected to
    world, points at floor level are dropped, and the xy extent of the
    rest forms the box.
    """
    pts_by_instance = {}
    for view in views:
        if view.instance_labels is None:
            continue
        valid = (view.depth > 0) & (view.instance_labels > 0)
        if not valid.any():
            continue
        cam_pts = unproject(view.depth, view.intrinsics)[valid]
        world = cam_pts @ view.pose[:3, :3].T + view.pose[:3, 3]
        labels = view.instance_labels[valid]
        above = world[:, 2] > FLOOR_CLEARANCE
        for lab in np.unique(labels[above]):
            sel = above & (labels == lab)
            pts_by_instance.setdefault(int(lab), []).append(world[sel, :2])

    boxes = []
    for lab in sorted(pts_by_instance):
        comp_idx = lab - 1
        if comp_idx >= len(plan.components):
            continue
        comp = plan.components[comp_idx]
        if comp.kind != "box":
            continue
        pts = np.concatenate(pts_by_instance[lab])
        boxes.append(TopDownBox(category=comp.category,
                                x0=float(pts[:, 0].min()), y0=float(pts[:, 1].min()),
                                x1=float(pts[:, 0].max()), y1=float(pts[:, 1].max())))
    return boxes


def floorplan_gt_boxes(plan: Floorplan):
    """Ground-truth top-down boxes: world-aligned hulls of furniture boxes."""
    out = []
    for i in plan.furniture_indices():
        corners = plan.components[i].box_corners()
        out.append(TopDownBox(category=plan.components[i].category,
                              x0=float(corners[:, 0].min()),
                              y0=float(corners[:, 1].min()),
                              x1=float(corners[:, 0].max()),
                              y1=float(corners[:, 1].max())))
    return out


def _average_precision(preds, gts, iou_thresh):
    """AP for one category; preds sorted by (-score, index), greedy matching."""
    if not gts:
        return None
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    matched = [False] * len(gts)
    tp = np.zeros(len(order))
    fp = np.zeros(len(order))
    for rank, pi in enumerate(order):
        best_iou, best_gt = 0.0, -1
        for gi, gt in enumerate(gts):
            if matched[gi]:
                continue
            iou = box_iou(preds[pi], gt)
            if iou > best_iou:
                best_iou, best_gt = iou, gi
        if best_iou >= iou_thresh:
            matched[best_gt] = True
            tp[rank] = 1
        else:
            fp[rank] = 1
    if len(order) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    recall = ctp / len(gts)
    precision = ctp / np.maximum(ctp + cfp, 1e-12)
    # all-point interpolation: area under the PR envelope
    r = np.concatenate([[0.0], recall, [recall[-1]]])
    p = np.concatenate([[1.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    return float(np.sum((r[1:] - r[:-1]) * p[1:]))


def map_at_iou(predictions, ground_truth, iou_thresh=0.25):
    """Mean AP over the categories present in the ground truth; None if empty."""
    if not ground_truth:
        return None
    categories = sorted({b.category for b in ground_truth})
    aps = []
    for cat in categories:
        ap = _average_precision([b for b in predictions if b.category == cat],
                                [b for b in ground_truth if b.category == cat],
                                iou_thresh)
        aps.append(ap if ap is not None else 0.0)
    return float(np.mean(aps))


def aggregate_reports(reports):
    """Mean of each metric per pair kind; AbsRel also at the x100 display scale."""
    agg = {}
    for kind in ("R-N", "N-N"):
        rs = [r for r in reports if r.pair == kind]
        if not rs:
            continue
        psnrs = [r.psnr for r in rs if r.psnr is not None]
        absrels = [r.absrel for r in rs if r.absrel is not None]
        entry = {
            "pairs": len(rs),
            "psnr": float(np.mean(psnrs)) if psnrs else None,
            "absrel": float(np.mean(absrels)) if absrels else None,
            "absrel_x100": float(np.mean(absrels)) * 100.0 if absrels else None,
            "overlap": float(np.mean([r.overlap for r in rs])),
        }
        exps = rs[0].delta.keys()
        entry["delta"] = {}
        for e in exps:
            vals = [r.delta[e] for r in rs if r.delta[e] is not None]
            entry["delta"][e] = float(np.mean(vals)) if vals else None
        agg[kind] = entry
    return agg


def write_report(reports, map_value, json_path, csv_path):
    doc = {
        "pairs": [asdict(r) for r in reports],
        "aggregate": aggregate_reports(reports),
        "map_at_25": map_value,
    }
    with open(json_path, "w") as f:
        json.dump(doc, f, indent=2)
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair", "src_id", "dst_id", "psnr", "absrel",
                         "delta", "overlap"])
        for r in reports:
            writer.writerow([r.pair, r.src_id, r.dst_id, r.psnr, r.absrel,
                             json.dumps(r.delta), r.overlap])
    return doc
