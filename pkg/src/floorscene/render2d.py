"""Top-down SVG rendering of a floorplan for fixture inspection."""

from __future__ import annotations

from .floorplan import Floorplan
from .generator import category_palette

MARGIN = 0.5     # meters of padding around the plan bounds
SCALE = 80.0     # SVG pixels per meter


def _color_hex(cid):
    r, g, b = (int(v) for v in category_palette(cid))
    return f"#{r:02x}{g:02x}{b:02x}"


def render_floorplan_svg(plan: Floorplan) -> str:
    """Deterministic SVG string: all components plus a category legend."""
    w, h = plan.bounds
    width = (w + 2 * MARGIN) * SCALE
    height = (h + 2 * MARGIN) * SCALE + 24 * len(plan.category_registry)

    def sx(x):
        return (x + MARGIN) * SCALE

    def sy(y):
        # flip so +y is up in the drawing
        return (h - y + MARGIN) * SCALE

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="white"/>',
    ]
    for comp in plan.components:
        cid = plan.category_id(comp.category)
        col = _color_hex(cid)
        if comp.kind == "segment":
            x0, y0, x1, y1 = comp.data
            parts.append(
                f'<line x1="{sx(x0):.1f}" y1="{sy(y0):.1f}" x2="{sx(x1):.1f}" '
                f'y2="{sy(y1):.1f}" stroke="{col}" stroke-width="4"/>')
        else:
            pts = " ".join(f"{sx(px):.1f},{sy(py):.1f}"
                           for px, py in comp.box_corners())
            parts.append(f'<polygon points="{pts}" fill="{col}" '
                         f'fill-opacity="0.6" stroke="{col}"/>')
    y = (h + 2 * MARGIN) * SCALE + 16
    for name, cid in sorted(plan.category_registry.items(), key=lambda kv: kv[1]):
        parts.append(f'<rect x="8" y="{y - 12:.0f}" width="14" height="14" '
                     f'fill="{_color_hex(cid)}"/>')
        parts.append(f'<text x="28" y="{y:.0f}" font-size="13" '
                     f'font-family="monospace">{name}</text>')
        y += 24
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
