"""Vectorized 2D floorplan: data model, JSON I/O, and free-space extraction.

File format is the versioned JSON document "fp/1":

    {"version": "fp/1",
     "bounds": [w, h],
     "categories": ["wall", "door", "window", "bed", ...],
     "components": [
        {"category": "wall", "kind": "segment", "data": [x0, y0, x1, y1]},
        {"category": "bed",  "kind": "box",     "data": [cx, cy, ex, ey, yaw]},
        ...]}

All lengths in meters; floor plane is z=0 and the height axis is +z.
Category id 0 is reserved for padding; real categories get ids 1..N in
file order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

STRUCTURAL_CATEGORIES = ("wall", "door", "window")
DEFAULT_OBJECT_HEIGHT = 2.0  # fallback when a category is missing from the height table
MIN_SEGMENT_LENGTH = 1e-6


class FloorplanError(Exception):
    pass


class FloorplanParseError(FloorplanError):
    pass


class FloorplanValidationError(FloorplanError):
    def __init__(self, message, component_index=None):
        if component_index is not None:
            message = f"component {component_index}: {message}"
        super().__init__(message)
        self.component_index = component_index


@dataclass(frozen=True)
class Component:
    category: str
    kind: str  # "segment" | "box"
    data: tuple  # segment: (x0,y0,x1,y1); box: (cx,cy,ex,ey,yaw)

    @property
    def is_structural(self):
        return self.category in STRUCTURAL_CATEGORIES

    def box_corners(self):
        """World-frame corners of a box component, shape (4, 2)."""
        cx, cy, ex, ey, yaw = self.data
        c, s = np.cos(yaw), np.sin(yaw)
        local = np.array([[-ex, -ey], [ex, -ey], [ex, ey], [-ex, ey]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([cx, cy])


@dataclass(frozen=True)
class Floorplan:
    components: tuple[Component, ...]
    bounds: tuple[float, float]
    category_registry: dict[str, int] = field(compare=True)

    def category_id(self, name):
        return self.category_registry[name]

    def category_name(self, cid):
        for name, i in self.category_registry.items():
            if i == cid:
                return name
        raise KeyError(cid)

    def furniture_indices(self):
        return [i for i, c in enumerate(self.components) if c.kind == "box"]


def _validate_component(comp: Component, bounds, registry, index):
    if comp.category not in registry:
        raise FloorplanValidationError(
            f"unknown category {comp.category!r}", index)
    if comp.kind == "segment":
        if comp.category not in STRUCTURAL_CATEGORIES:
            raise FloorplanValidationError(
                f"category {comp.category!r} cannot be a segment", index)
        x0, y0, x1, y1 = comp.data
        if np.hypot(x1 - x0, y1 - y0) <= MIN_SEGMENT_LENGTH:
            raise FloorplanValidationError("zero-length segment", index)
        pts = np.array([[x0, y0], [x1, y1]])
    elif comp.kind == "box":
        if comp.category in STRUCTURAL_CATEGORIES:
            raise FloorplanValidationError(
                f"category {comp.category!r} must be a segment", index)
        cx, cy, ex, ey, yaw = comp.data
        if ex <= 0 or ey <= 0:
            raise FloorplanValidationError("box extents must be positive", index)
        pts = comp.box_corners()
    else:
        raise FloorplanValidationError(f"unknown kind {comp.kind!r}", index)
    w, h = bounds
    eps = 1e-9
    if (pts[:, 0] < -eps).any() or (pts[:, 0] > w + eps).any() \
            or (pts[:, 1] < -eps).any() or (pts[:, 1] > h + eps).any():
        raise FloorplanValidationError("geometry outside plan bounds", index)


def make_floorplan(components, bounds, categories):
    """Build and validate a Floorplan from parsed pieces."""
    registry = {name: i + 1 for i, name in enumerate(categories)}
    if len(registry) != len(categories):
        raise FloorplanValidationError("duplicate category in registry")
    bounds = (float(bounds[0]), float(bounds[1]))
    if bounds[0] <= 0 or bounds[1] <= 0:
        raise FloorplanValidationError("bounds must be positive")
    comps = tuple(components)
    for i, comp in enumerate(comps):
        _validate_component(comp, bounds, registry, i)
    return Floorplan(components=comps, bounds=bounds, category_registry=registry)


def parse_floorplan(source) -> Floorplan:
    """Parse an fp/1 document from bytes, text, or a readable stream."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as e:
        raise FloorplanParseError(
            f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict) or doc.get("version") != "fp/1":
        raise FloorplanParseError("expected a JSON object with version 'fp/1'")
    for key in ("bounds", "categories", "components"):
        if key not in doc:
            raise FloorplanParseError(f"missing required key {key!r}")
    comps = []
    for i, c in enumerate(doc["components"]):
        try:
            kind = c["kind"]
            n = 4 if kind == "segment" else 5
            data = tuple(float(v) for v in c["data"])
            if len(data) != n:
                raise FloorplanParseError(
                    f"component {i}: kind {kind!r} needs {n} data values")
            comps.append(Component(category=c["category"], kind=kind, data=data))
        except (KeyError, TypeError, ValueError) as e:
            raise FloorplanParseError(f"component {i}: {e}") from e
    return make_floorplan(comps, doc["bounds"], doc["categories"])


def serialize_floorplan(plan: Floorplan) -> str:
    categories = [None] * len(plan.category_registry)
    for name, cid in plan.category_registry.items():
        categories[cid - 1] = name
    doc = {
        "version": "fp/1",
        "bounds": list(plan.bounds),
        "categories": categories,
        "components": [
            {"category": c.category, "kind": c.kind, "data": list(c.data)}
            for c in plan.components
        ],
    }
    return json.dumps(doc, indent=2)


def load_floorplan(path) -> Floorplan:
    with open(path, "rb") as f:
        return parse_floorplan(f)


def _rasterize_segment(mask, x0, y0, x1, y1, res):
    """Mark every cell the segment passes through (dense sampling supercover)."""
    length = np.hypot(x1 - x0, y1 - y0)
    n = max(2, int(np.ceil(length / (res * 0.25))) + 1)
    t = np.linspace(0.0, 1.0, n)
    xs = x0 + t * (x1 - x0)
    ys = y0 + t * (y1 - y0)
    ix = np.clip((xs / res).astype(int), 0, mask.shape[1] - 1)
    iy = np.clip((ys / res).astype(int), 0, mask.shape[0] - 1)
    mask[iy, ix] = True


def _cells_in_box(shape, comp: Component, res, inflate):
    """Boolean grid of cells whose centers fall inside the inflated box."""
    cx, cy, ex, ey, yaw = comp.data
    ny, nx = shape
    xs = (np.arange(nx) + 0.5) * res - cx
    ys = (np.arange(ny) + 0.5) * res - cy
    gx, gy = np.meshgrid(xs, ys)
    c, s = np.cos(yaw), np.sin(yaw)
    lx = c * gx + s * gy
    ly = -s * gx + c * gy
    return (np.abs(lx) <= ex + inflate) & (np.abs(ly) <= ey + inflate)


def free_space_mask(plan: Floorplan, resolution, clearance=0.3) -> np.ndarray:
    """Boolean grid (ny, nx); True = navigable free space.

    A cell is free iff it lies inside the wall-enclosed region and outside
    every furniture box inflated by `clearance`. Cell (iy, ix) covers
    [ix*res, (ix+1)*res) x [iy*res, (iy+1)*res).
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    w, h = plan.bounds
    nx = int(np.ceil(w / resolution))
    ny = int(np.ceil(h / resolution))
    walls = np.zeros((ny, nx), dtype=bool)
    for comp in plan.components:
        if comp.kind == "segment" and comp.category == "wall":
            _rasterize_segment(walls, *comp.data, resolution)

    # flood fill from the border: anything reachable without crossing a wall
    # is outside; what remains is the enclosed interior
    outside = np.zeros_like(walls)
    stack = [(iy, ix) for ix in range(nx) for iy in (0, ny - 1)]
    stack += [(iy, ix) for iy in range(ny) for ix in (0, nx - 1)]
    for iy, ix in stack:
        if not walls[iy, ix]:
            outside[iy, ix] = True
    # iterative dilation-based flood fill
    while True:
        grow = np.zeros_like(outside)
        grow[1:, :] |= outside[:-1, :]
        grow[:-1, :] |= outside[1:, :]
        grow[:, 1:] |= outside[:, :-1]
        grow[:, :-1] |= outside[:, 1:]
        grow &= ~walls & ~outside
        if not grow.any():
            break
        outside |= grow

    interior = ~walls & ~outside
    if not interior.any():
        raise FloorplanError("unbounded free space: no enclosing wall loop")

    free = interior.copy()
    for comp in plan.components:
        if comp.kind == "box":
            free &= ~_cells_in_box(free.shape, comp, resolution, clearance)
    return free


def derive_object_3d_box(plan: Floorplan, component_index, height_table=None):
    """World-aligned 3D AABB of a furniture component.

    Returns (min_xyz, max_xyz) arrays; base on the floor plane, top at the
    category's height from `height_table` (default 2.0 m when absent).
    """
    if not (0 <= component_index < len(plan.components)):
        raise IndexError(f"component index {component_index} out of range")
    comp = plan.components[component_index]
    if comp.kind != "box":
        raise ValueError(f"component {component_index} is not furniture")
    height_table = height_table or {}
    height = float(height_table.get(comp.category, DEFAULT_OBJECT_HEIGHT))
    corners = comp.box_corners()
    lo = np.array([corners[:, 0].min(), corners[:, 1].min(), 0.0])
    hi = np.array([corners[:, 0].max(), corners[:, 1].max(), height])
    return lo, hi
