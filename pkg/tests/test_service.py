import json
import os
import time

import pytest
from fastapi.testclient import TestClient

from flim.image_io import load_dataset
from flim.project import Project
from flim.service import create_app
from flim.synthetic import generate_texture_dataset

CONFIG = {"v": 1, "input_bands": 3,
          "layers": [{"patch_size": 3, "total_filters": 4,
                      "pool_window": 3, "pool_stride": 2, "batch_norm": True}]}


def _wait(client, job_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/api/jobs/{job_id}").json()
        if job["status"] in ("done", "error"):
            return job
        time.sleep(0.05)
    raise TimeoutError(job_id)


def _stroke_payload(image_id, label, size=32):
    margin, mid = size // 8, size // 2
    return json.dumps({
        "v": 1,
        "image_id": image_id,
        "strokes": [
            {"id": "h", "points": [[margin, mid], [size - margin, mid]],
             "radius": 2, "label": label},
            {"id": "v", "points": [[mid, margin], [mid, size - margin]],
             "radius": 2, "label": label},
        ],
    }).encode()


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    data = str(root / "data")
    generate_texture_dataset(data, tiles_per_class=12, size=32, seed=1)
    app = create_app(str(root / "proj"), dataset_root=data, train=14, val=6, seed=2)
    client = TestClient(app)
    index = load_dataset(data)
    return {"client": client, "index": index, "root": root, "data": data}


@pytest.fixture(scope="module")
def trained(env):
    """Marks 2 images per class, learns, and trains an MLP once."""
    client = env["client"]
    splits = client.get("/api/project").json()
    train_ids = json.load(open(env["root"] / "proj" / "project.json"))["splits"]["train"]
    by_class = {1: [], 2: []}
    for image_id in train_ids:
        by_class[env["index"].label_of(image_id)].append(image_id)
    marked = []
    for label in (1, 2):
        for image_id in by_class[label][:2]:
            r = client.put(f"/api/markers/{image_id}",
                           content=_stroke_payload(image_id, label))
            assert r.status_code == 200
            marked.append(image_id)
    r = client.post("/api/selection", json={"ids": marked})
    assert r.status_code == 200
    r = client.post("/api/learn", json={"config": CONFIG, "seed": 3})
    assert r.status_code == 200
    job = _wait(client, r.json()["job_id"])
    assert job["status"] == "done", job
    r = client.post("/api/classifier", json={"kind": "mlp", "seed": 0,
                                             "hidden_sizes": [8],
                                             "train_config": {"epochs": 30,
                                                              "batch_size": 8,
                                                              "learning_rate": 0.05,
                                                              "weight_decay": 0.0}})
    assert r.status_code == 200
    job = _wait(client, r.json()["job_id"])
    assert job["status"] == "done", job
    return marked


def test_project_summary(env):
    r = env["client"].get("/api/project")
    assert r.status_code == 200
    doc = r.json()
    assert doc["v"] == 1
    assert doc["classes"] == [1, 2]
    assert doc["splits"] == {"train": 14, "val": 6, "test": 4}


def test_images_listing_and_raw(env):
    client = env["client"]
    r = client.get("/api/images?split=train")
    assert r.status_code == 200
    images = r.json()["images"]
    assert len(images) == 14
    first = images[0]
    assert set(first) == {"id", "label", "thumbnail", "raw"}
    raw = client.get(first["raw"])
    assert raw.status_code == 200
    assert raw.headers["content-type"] == "image/png"
    thumb = client.get(first["thumbnail"])
    assert thumb.status_code == 200 and thumb.content[:4] == b"\x89PNG"


def test_unknown_image_is_404(env):
    r = env["client"].get("/api/images/nope/raw")
    assert r.status_code == 404
    assert r.json()["error"] == "not_found"


def test_marker_round_trip_byte_identical(env):
    client = env["client"]
    image_id = env["index"].ids()[0]
    payload = _stroke_payload(image_id, 1)
    r = client.put(f"/api/markers/{image_id}", content=payload)
    assert r.status_code == 200
    assert r.json()["pixels"] > 0
    back = client.get(f"/api/markers/{image_id}")
    assert back.status_code == 200
    assert back.content == payload


def test_marker_schema_violation_400(env):
    client = env["client"]
    image_id = env["index"].ids()[0]
    r = client.put(f"/api/markers/{image_id}", content=b"not json")
    assert r.status_code == 400
    r = client.put(f"/api/markers/{image_id}",
                   content=json.dumps({"strokes": [{"points": "oops"}]}).encode())
    assert r.status_code == 400


def test_rasterize_echo_matches_local(env):
    client = env["client"]
    image_id = env["index"].ids()[0]
    payload = _stroke_payload(image_id, 2)
    r = client.post(f"/api/markers/{image_id}/rasterize", content=payload)
    assert r.status_code == 200
    pixels = r.json()["pixels"]
    from flim.markers import rasterize_strokes
    doc = json.loads(payload)
    strokes = [([(p[0], p[1]) for p in s["points"]], s["radius"], s["label"], s["id"])
               for s in doc["strokes"]]
    ms = rasterize_strokes(strokes, 32, 32, image_id=image_id)
    assert [[x, y, l] for x, y, l in ms.pixels] == pixels


def test_selection_outside_train_rejected(env):
    client = env["client"]
    project_doc = json.load(open(env["root"] / "proj" / "project.json"))
    test_id = project_doc["splits"]["test"][0]
    r = client.post("/api/selection", json={"ids": [test_id]})
    assert r.status_code == 400


def test_learn_and_model_reports_filters(env, trained):
    doc = env["client"].get("/api/project").json()
    assert doc["has_model"]
    model_json = json.load(open(env["root"] / "proj" / "model" / "network.json"))
    assert model_json["layers"][0]["num_filters"] == 4


def test_metrics_endpoint(env, trained):
    r = env["client"].get("/api/metrics")
    assert r.status_code == 200
    doc = r.json()
    assert {"precision", "recall", "f_score"} <= set(doc["latest"])
    assert len(doc["history"]) >= 1


def test_misclassified_endpoint(env, trained):
    r = env["client"].get("/api/misclassified?split=val")
    assert r.status_code == 200
    doc = r.json()
    assert doc["split"] == "val"
    for item in doc["items"]:
        assert set(item) == {"id", "predicted", "truth"}
        assert item["predicted"] != item["truth"]


def test_activations_png(env, trained):
    client = env["client"]
    marked_id = trained[0]
    r = client.get(f"/api/activations/{marked_id}/layer/1?channel=2")
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    from PIL import Image as PILImage
    import io
    img = PILImage.open(io.BytesIO(r.content))
    assert img.size == (32, 32)
    r = client.get(f"/api/activations/{marked_id}/layer/9?channel=0")
    assert r.status_code == 404
    r = client.get(f"/api/activations/{marked_id}/layer/1?channel=99")
    assert r.status_code == 404


def test_projection_404_then_job_then_fetch(env, trained):
    client = env["client"]
    r = client.get("/api/projection?space=input&split=train")
    assert r.status_code == 404
    r = client.post("/api/projection", json={"space": "input", "split": "train",
                                             "iterations": 80})
    job = _wait(client, r.json()["job_id"])
    assert job["status"] == "done", job
    r = client.get("/api/projection?space=input&split=train")
    assert r.status_code == 200
    doc = r.json()
    assert len(doc["points"]) == 14
    assert set(doc["points"][0]) == {"id", "x", "y", "label"}


def test_projection_layer_and_classifier_spaces(env, trained):
    client = env["client"]
    for space in ("layer1", "classifier"):
        r = client.post("/api/projection", json={"space": space, "split": "train",
                                                 "iterations": 60})
        job = _wait(client, r.json()["job_id"])
        assert job["status"] == "done", job
        r = client.get(f"/api/projection?space={space}&split=train")
        assert r.status_code == 200
        assert len(r.json()["points"]) == 14


def test_unknown_job_404(env):
    assert env["client"].get("/api/jobs/zzz").status_code == 404


def test_concurrent_learn_conflict(env, trained):
    client = env["client"]
    r1 = client.post("/api/learn", json={"config": CONFIG, "seed": 4})
    assert r1.status_code == 200
    r2 = client.post("/api/learn", json={"config": CONFIG, "seed": 5})
    try:
        assert r2.status_code in (200, 409)
        if r2.status_code == 409:
            assert r2.json()["error"] == "conflict"
    finally:
        _wait(client, r1.json()["job_id"])
        if r2.status_code == 200:
            _wait(client, r2.json()["job_id"])


def test_project_state_round_trip(env, trained):
    # reloading the directory reproduces the persisted state
    proj_dir = str(env["root"] / "proj")
    original = json.load(open(os.path.join(proj_dir, "project.json")))
    reloaded = Project(proj_dir)
    assert reloaded.state == original
    assert reloaded.marker_ids() != []
    ms = reloaded.marker_sets()[trained[0]]
    assert len(ms.pixels) > 0
