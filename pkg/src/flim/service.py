"""HTTP service exposing the interactive loop to the browser UI.

A thin stateful orchestrator over one Project directory. Reads are served
directly; long-running work (learning, t-SNE, classifier training) runs as
background jobs polled via /api/jobs/{id}. Only one job of a kind runs at a
time; a second learn request while one is active gets 409.
"""

from __future__ import annotations

import io
import json
import os
import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image as PILImage

from .classifiers import TrainConfig
from .errors import FlimError
from .markers import rasterize_strokes
from .pipeline import ValidationError
from .project import Project


class JobRegistry:
    def __init__(self):
        self.lock = threading.Lock()
        self.jobs: dict[str, dict] = {}

    def active(self, kind: str) -> bool:
        with self.lock:
            return any(j["kind"] == kind and j["status"] in ("queued", "running")
                       for j in self.jobs.values())

    def create(self, kind: str) -> dict:
        job = {"v": 1, "id": uuid.uuid4().hex, "kind": kind, "status": "queued",
               "progress": 0.0, "message": "", "error": None}
        with self.lock:
            self.jobs[job["id"]] = job
        return job

    def update(self, job_id: str, **fields) -> None:
        with self.lock:
            self.jobs[job_id].update(fields)

    def get(self, job_id: str) -> dict:
        with self.lock:
            job = self.jobs.get(job_id)
            return dict(job) if job else None


def _error_json(status: int, message: str, code: str = "error") -> HTTPException:
    return HTTPException(status_code=status,
                         detail={"v": 1, "error": code, "message": message})


def create_app(project_dir: str, dataset_root: str | None = None,
               train: int | None = None, val: int | None = None,
               seed: int = 0, static_dir: str | None = None) -> FastAPI:
    project = Project(project_dir, dataset_root=dataset_root)
    project.ensure_splits(train=train, val=val, seed=seed)
    jobs = JobRegistry()
    app = FastAPI(title="flim service")

    @app.exception_handler(RequestValidationError)
    async def _on_validation(request, exc):
        return JSONResponse(status_code=400, content={
            "v": 1, "error": "schema", "message": str(exc)})

    @app.exception_handler(HTTPException)
    async def _on_http_error(request, exc):
        detail = exc.detail
        if not isinstance(detail, dict):
            detail = {"v": 1, "error": "error", "message": str(detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    @app.exception_handler(FlimError)
    async def _on_flim_error(request, exc):
        # package errors reaching the API boundary are client-input problems
        return JSONResponse(status_code=400, content={
            "v": 1, "error": type(exc).__name__, "message": str(exc)})

    def spawn(kind: str, work) -> dict:
        if jobs.active(kind):
            raise _error_json(409, f"a {kind} job is already running", "conflict")
        job = jobs.create(kind)

        def runner():
            jobs.update(job["id"], status="running")

            def progress(fraction: float, message: str = ""):
                jobs.update(job["id"], progress=float(fraction), message=message)

            try:
                work(progress)
                jobs.update(job["id"], status="done", progress=1.0)
            except Exception as e:  # job errors surface via polling
                jobs.update(job["id"], status="error", error=str(e))

        threading.Thread(target=runner, daemon=True).start()
        return {"v": 1, "job_id": job["id"]}

    # --- project and images ---

    @app.get("/api/project")
    def get_project():
        splits = project.state["splits"] or {}
        labels = sorted({label for _, _, label in project.index.entries})
        has_model = os.path.exists(os.path.join(project.root, "model", "network.bin"))
        model_layers = []
        if has_model:
            model_layers = [layer.bank.num_filters for layer in project.model().layers]
        return {
            "v": 1,
            "dataset_root": project.state["dataset_root"],
            "classes": labels,
            "splits": {k: len(v) for k, v in splits.items() if isinstance(v, list)},
            "selected": project.state["selected"],
            "marked": project.marker_ids(),
            "has_model": has_model,
            "model_layers": model_layers,
            "classifier": project.state["classifier"],
            "network_config": project.state["network_config"],
        }

    @app.get("/api/images")
    def list_images(split: str = "train"):
        ids = project.split_ids(split)
        return {
            "v": 1,
            "split": split,
            "images": [
                {"id": i, "label": project.index.label_of(i),
                 "thumbnail": f"/api/images/{i}/thumbnail",
                 "raw": f"/api/images/{i}/raw"}
                for i in ids
            ],
        }

    def _check_image(image_id: str) -> None:
        if image_id not in set(project.index.ids()):
            raise _error_json(404, f"unknown image {image_id!r}", "not_found")

    @app.get("/api/images/{image_id}/raw")
    def image_raw(image_id: str):
        _check_image(image_id)
        return FileResponse(project.index.path_of(image_id), media_type="image/png")

    @app.get("/api/images/{image_id}/thumbnail")
    def image_thumbnail(image_id: str):
        _check_image(image_id)
        return FileResponse(project.thumbnail_path(image_id), media_type="image/png")

    # --- selection ---

    @app.get("/api/selection")
    def get_selection():
        return {"v": 1, "ids": project.state["selected"]}

    @app.post("/api/selection")
    async def post_selection(request: Request):
        doc = await _json_body(request)
        ids = doc.get("ids")
        if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
            raise _error_json(400, "body must be {ids: [string]}", "schema")
        project.set_selected(ids)
        return {"v": 1, "ids": project.state["selected"]}

    # --- markers ---

    async def _json_body(request: Request) -> dict:
        raw = await request.body()
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise _error_json(400, f"invalid JSON body: {e}", "schema")

    def _parse_strokes(doc: dict) -> list:
        if not isinstance(doc.get("strokes"), list):
            raise _error_json(400, "payload must carry a strokes list", "schema")
        strokes = []
        try:
            for s in doc["strokes"]:
                points = [(float(p[0]), float(p[1])) for p in s["points"]]
                strokes.append((points, float(s.get("radius", 0.0)),
                                int(s["label"]), str(s.get("id", ""))))
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise _error_json(400, f"malformed stroke: {e}", "schema")
        return strokes

    @app.put("/api/markers/{image_id}")
    async def put_markers(image_id: str, request: Request):
        _check_image(image_id)
        raw = await request.body()
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise _error_json(400, f"invalid JSON body: {e}", "schema")
        _parse_strokes(doc)
        ms = project.put_markers(image_id, raw)
        return {"v": 1, "image_id": image_id, "pixels": len(ms.pixels)}

    @app.get("/api/markers/{image_id}")
    def get_markers(image_id: str):
        _check_image(image_id)
        try:
            payload = project.get_stroke_payload(image_id)
        except KeyError:
            raise _error_json(404, f"no markers for {image_id!r}", "not_found")
        return Response(content=payload, media_type="application/json")

    @app.post("/api/markers/{image_id}/rasterize")
    async def rasterize_echo(image_id: str, request: Request):
        """Echo the server-side rasterization without persisting anything."""
        _check_image(image_id)
        doc = await _json_body(request)
        strokes = _parse_strokes(doc)
        img = project.load_image(image_id)
        ms = rasterize_strokes(strokes, img.width, img.height, image_id=image_id)
        return {"v": 1, "image_id": image_id,
                "pixels": [[x, y, label] for x, y, label in ms.pixels]}

    # --- projection ---

    @app.get("/api/projection")
    def get_projection(space: str = "input", split: str = "train"):
        try:
            return project.get_embedding(space, split)
        except KeyError:
            raise _error_json(404, f"no embedding for space={space} split={split}; "
                                   f"POST /api/projection to compute it", "not_found")

    @app.post("/api/projection")
    async def post_projection(request: Request):
        doc = await _json_body(request)
        space = doc.get("space", "input")
        split = doc.get("split", "train")
        seed = int(doc.get("seed", 0))
        iterations = int(doc.get("iterations", 1000))

        def work(progress):
            project.compute_embedding(space, split, seed=seed,
                                      iterations=iterations, progress=progress)

        return spawn("projection", work)

    # --- learning ---

    @app.post("/api/learn")
    async def post_learn(request: Request):
        doc = await _json_body(request)
        config = doc.get("config")
        seed = doc.get("seed")

        def work(progress):
            project.learn(config=config, seed=seed, progress=progress)

        return spawn("learn", work)

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise _error_json(404, f"unknown job {job_id!r}", "not_found")
        return job

    # --- classifier and metrics ---

    @app.post("/api/classifier")
    async def post_classifier(request: Request):
        doc = await _json_body(request)
        kind = doc.get("kind")
        if kind not in ("svm", "mlp"):
            raise _error_json(400, "kind must be 'svm' or 'mlp'", "schema")
        seed = int(doc.get("seed", 0))
        C = float(doc.get("C", 0.01))
        positive_class = int(doc.get("positive_class", 1))
        hidden = tuple(doc["hidden_sizes"]) if "hidden_sizes" in doc else None
        config = None
        if "train_config" in doc:
            config = TrainConfig(seed=seed, **doc["train_config"])

        def work(progress):
            project.train_classifier(kind, seed=seed, C=C, hidden_sizes=hidden,
                                     train_config=config,
                                     positive_class=positive_class,
                                     progress=progress)

        return spawn("classifier", work)

    @app.get("/api/metrics")
    def get_metrics():
        try:
            latest = project.latest_metrics()
        except ValidationError as e:
            raise _error_json(404, str(e), "not_found")
        return {"v": 1, "latest": latest,
                "history": project.state["metrics_history"]}

    @app.get("/api/misclassified")
    def get_misclassified(split: str = "val"):
        return {"v": 1, "split": split, "items": project.misclassified(split)}

    # --- activations ---

    @app.get("/api/activations/{image_id}/layer/{layer}")
    def get_activation(image_id: str, layer: int, channel: int = 0):
        _check_image(image_id)
        try:
            act = project.activation_map(image_id, layer, channel)
        except KeyError as e:
            raise _error_json(404, f"unknown activation target: {e}", "not_found")
        gray = (act * 255.0).round().astype(np.uint8)
        buf = io.BytesIO()
        PILImage.fromarray(gray, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    # --- static UI ---

    if static_dir is None:
        candidate = os.path.join(os.path.dirname(os.path.dirname(
            os.path.dirname(os.path.abspath(__file__)))), "frontend", "dist")
        if os.path.isdir(candidate):
            static_dir = candidate
    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
