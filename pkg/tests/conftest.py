import json

import numpy as np
import pytest

from floorscene.floorplan import Component, make_floorplan

CATEGORIES = ["wall", "door", "window", "bed", "table", "sofa"]


def room_walls(w=4.0, h=4.0):
    return [
        Component("wall", "segment", (0.0, 0.0, w, 0.0)),
        Component("wall", "segment", (w, 0.0, w, h)),
        Component("wall", "segment", (w, h, 0.0, h)),
        Component("wall", "segment", (0.0, h, 0.0, 0.0)),
    ]


@pytest.fixture
def empty_room():
    return make_floorplan(room_walls(), (4.0, 4.0), CATEGORIES)


@pytest.fixture
def furnished_room():
    comps = room_walls() + [
        Component("bed", "box", (1.2, 3.0, 1.0, 0.75, 0.0)),
        Component("table", "box", (3.2, 1.0, 0.4, 0.4, 0.0)),
    ]
    return make_floorplan(comps, (4.0, 4.0), CATEGORIES)


@pytest.fixture
def fixture_doc():
    return {
        "version": "fp/1",
        "bounds": [4.0, 4.0],
        "categories": CATEGORIES,
        "components": [
            {"category": "wall", "kind": "segment", "data": [0, 0, 4, 0]},
            {"category": "wall", "kind": "segment", "data": [4, 0, 4, 4]},
            {"category": "wall", "kind": "segment", "data": [4, 4, 0, 4]},
            {"category": "wall", "kind": "segment", "data": [0, 4, 0, 0]},
            {"category": "bed", "kind": "box", "data": [1.2, 3.0, 1.0, 0.75, 0.0]},
        ],
    }


@pytest.fixture
def fixture_path(tmp_path, fixture_doc):
    p = tmp_path / "room.json"
    p.write_text(json.dumps(fixture_doc))
    return p


def random_plan(rng, n_furniture=2, w=6.0, h=6.0):
    """Random valid plan: rectangular shell plus interior furniture boxes."""
    comps = room_walls(w, h)
    # an interior partition wall to make occlusion interesting
    x = rng.uniform(1.5, w - 1.5)
    comps.append(Component("wall", "segment",
                           (x, 0.0, x, rng.uniform(1.0, h - 1.5))))
    for _ in range(n_furniture):
        cat = str(rng.choice(["bed", "table", "sofa"]))
        ex = rng.uniform(0.3, 0.9)
        ey = rng.uniform(0.3, 0.9)
        cx = rng.uniform(ex + 1.0, w - ex - 1.0)
        cy = rng.uniform(ey + 1.0, h - ey - 1.0)
        yaw = rng.uniform(0, 2 * np.pi)
        # keep rotated corners inside bounds
        r = float(np.hypot(ex, ey))
        cx = float(np.clip(cx, r + 0.05, w - r - 0.05))
        cy = float(np.clip(cy, r + 0.05, h - r - 0.05))
        comps.append(Component(cat, "box", (cx, cy, ex, ey, float(yaw))))
    return make_floorplan(comps, (w, h), CATEGORIES)
