#!/usr/bin/env python3
"""Regenerate the stroke-rasterization parity fixtures consumed by the UI tests.

The server rasterizer is the authority; these fixtures freeze its output for
five scripted stroke payloads so the browser preview can be checked against
it exactly. Run from the repository root:

    python3 scripts/gen_raster_fixtures.py
"""

import json
import os

from flim.markers import rasterize_strokes

FIXTURES = [
    {
        "name": "single point radius 0",
        "width": 16, "height": 16,
        "strokes": [{"id": "a", "points": [[5, 5]], "radius": 0, "label": 1}],
    },
    {
        "name": "diagonal line radius 1",
        "width": 20, "height": 20,
        "strokes": [{"id": "a", "points": [[2, 3], [14, 11]], "radius": 1, "label": 2}],
    },
    {
        "name": "cross with overwrite",
        "width": 24, "height": 24,
        "strokes": [
            {"id": "h", "points": [[3, 12], [20, 12]], "radius": 2, "label": 1},
            {"id": "v", "points": [[12, 3], [12, 20]], "radius": 2, "label": 2},
        ],
    },
    {
        "name": "fractional coords near border",
        "width": 10, "height": 10,
        "strokes": [
            {"id": "a", "points": [[0.4, 0.6], [8.5, 1.49]], "radius": 1.5, "label": 1},
            {"id": "b", "points": [[-2.0, 9.7], [11.2, 9.2]], "radius": 2, "label": 2},
        ],
    },
    {
        "name": "polyline multi segment radius 3",
        "width": 32, "height": 32,
        "strokes": [
            {"id": "a", "points": [[4, 4], [16, 6], [10, 20], [27, 27]],
             "radius": 3, "label": 1},
        ],
    },
]


def main():
    out = []
    for fixture in FIXTURES:
        strokes = [
            ([(p[0], p[1]) for p in s["points"]], s["radius"], s["label"], s["id"])
            for s in fixture["strokes"]
        ]
        ms = rasterize_strokes(strokes, fixture["width"], fixture["height"])
        out.append({
            "name": fixture["name"],
            "width": fixture["width"],
            "height": fixture["height"],
            "strokes": fixture["strokes"],
            "pixels": [[x, y, label] for x, y, label in ms.pixels],
        })
    path = os.path.join(os.path.dirname(__file__), "..", "frontend", "tests",
                        "fixtures", "raster_fixtures.json")
    path = os.path.normpath(path)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"v": 1, "fixtures": out}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(out)} fixtures -> {path}")


if __name__ == "__main__":
    main()
