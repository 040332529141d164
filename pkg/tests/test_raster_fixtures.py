"""Guards the committed UI parity fixtures against rasterizer drift."""

import json
import os

from flim.markers import rasterize_strokes

FIXTURES_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                             "frontend", "tests", "fixtures", "raster_fixtures.json")


def test_fixtures_match_current_rasterizer():
    with open(FIXTURES_PATH, encoding="utf-8") as fh:
        doc = json.load(fh)
    assert doc["v"] == 1 and len(doc["fixtures"]) == 5
    for fixture in doc["fixtures"]:
        strokes = [
            ([(p[0], p[1]) for p in s["points"]], s["radius"], s["label"], s["id"])
            for s in fixture["strokes"]
        ]
        ms = rasterize_strokes(strokes, fixture["width"], fixture["height"])
        assert [[x, y, l] for x, y, l in ms.pixels] == fixture["pixels"], fixture["name"]
