"""HTTP/JSON inference service: stylization, interpolation, fine-tune jobs.

Request handling happens over immutable model snapshots; fine-tune jobs run
on a single background worker and publish new snapshots atomically.  w+
codes are stored server-side and referenced by handle (TTL 1 hour), so
float arrays never travel through the browser.
"""

import base64
import io
import itertools
import queue
import threading
import time
import uuid

import torch
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from .config import stage_defaults
from .data import center_crop_resize, image_to_tensor, tensor_to_image
from .guidance import GuidancePrompt
from .model import StylizerModel
from . import training

import numpy as np

WPLUS_TTL_S = 3600.0
DEFAULT_FINETUNE_ITERS = 200


class ApiError(Exception):
    def __init__(self, status, detail):
        super().__init__(detail)
        self.status = status
        self.detail = detail


class WplusStore:
    """Handle -> w+ tensor with expiry."""

    def __init__(self, ttl_s=WPLUS_TTL_S, clock=time.monotonic):
        self._items = {}
        self._ttl = ttl_s
        self._clock = clock
        self._lock = threading.Lock()

    def put(self, wplus):
        handle = uuid.uuid4().hex
        with self._lock:
            self._items[handle] = (wplus.detach().clone(), self._clock() + self._ttl)
        return handle

    def get(self, handle):
        with self._lock:
            item = self._items.get(handle)
            if item is None:
                raise ApiError(404, f"unknown wplus handle {handle!r}")
            wplus, expires = item
            if self._clock() > expires:
                del self._items[handle]
                raise ApiError(404, f"wplus handle {handle!r} expired")
            return wplus


class JobStore:
    """Fine-tune job records + single-flight bookkeeping per base model."""

    def __init__(self):
        self._jobs = {}
        self._active_models = set()
        self._lock = threading.Lock()
        self._counter = itertools.count(1)

    def submit(self, kind, base_model_id):
        with self._lock:
            if base_model_id in self._active_models:
                raise ApiError(409, f"model {base_model_id!r} already has a "
                                    "fine-tune job in flight")
            job_id = f"job-{next(self._counter):04d}"
            self._jobs[job_id] = {
                "job_id": job_id, "kind": kind, "status": "queued",
                "progress": {"step": 0, "total": 0},
                "base_model_id": base_model_id,
                "result_model_id": None, "loss_trace": [], "error": None,
            }
            self._active_models.add(base_model_id)
            return job_id

    def update(self, job_id, **fields):
        with self._lock:
            self._jobs[job_id].update(fields)

    def set_progress(self, job_id, step, total):
        with self._lock:
            self._jobs[job_id]["progress"] = {"step": step, "total": total}

    def finish(self, job_id, **fields):
        with self._lock:
            job = self._jobs[job_id]
            job.update(fields)
            self._active_models.discard(job["base_model_id"])

    def get(self, job_id):
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise ApiError(404, f"unknown job {job_id!r}")
            return dict(job)


class ModelStore:
    """model_id -> immutable StylizerModel snapshot."""

    def __init__(self, base_model):
        self._models = {"base": base_model}
        self._lock = threading.Lock()
        self._counter = itertools.count(1)

    def get(self, model_id):
        with self._lock:
            model = self._models.get(model_id)
        if model is None:
            raise ApiError(404, f"unknown model_id {model_id!r}")
        return model

    def publish(self, model, kind):
        with self._lock:
            model_id = f"{kind}-{next(self._counter):04d}"
            self._models[model_id] = model
            return model_id

    def list_ids(self):
        with self._lock:
            return sorted(self._models)


def _decode_image(b64_payload, resolution):
    try:
        raw = base64.b64decode(b64_payload, validate=True)
    except Exception:
        raise ApiError(422, "image is not valid base64")
    try:
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception:
        raise ApiError(422, "image payload is not a decodable image")
    return image_to_tensor(np.asarray(center_crop_resize(img, resolution)))


def _encode_image(tensor):
    buf = io.BytesIO()
    Image.fromarray(tensor_to_image(tensor)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


_STYLIZE_FIELDS = {
    "random": set(),
    "text": {"prompt"},
    "image": {"reference_image"},
    "wplus": {"wplus_id"},
}
_STYLIZE_BASE = {"image", "mode", "seed", "model_id"}


def _validate_stylize(body):
    if not isinstance(body, dict):
        raise ApiError(400, "body must be a JSON object")
    mode = body.get("mode")
    if mode not in _STYLIZE_FIELDS:
        raise ApiError(400, f"mode must be one of {sorted(_STYLIZE_FIELDS)}")
    allowed = _STYLIZE_BASE | _STYLIZE_FIELDS[mode]
    extra = set(body) - allowed
    if extra:
        raise ApiError(400, f"fields not allowed for mode={mode}: {sorted(extra)}")
    missing = ({"image"} | _STYLIZE_FIELDS[mode]) - set(body)
    if missing:
        raise ApiError(400, f"missing required fields: {sorted(missing)}")
    seed = body.get("seed", 0)
    if not isinstance(seed, int):
        raise ApiError(400, "seed must be an integer")
    return mode, seed


def create_app(model_or_path, seed=0, wplus_ttl_s=WPLUS_TTL_S):
    """Build the service around a model bundle (path) or an in-memory model."""
    if isinstance(model_or_path, StylizerModel):
        base_model = model_or_path
    else:
        base_model = StylizerModel.load(model_or_path)
    base_model.eval()

    app = FastAPI(title="mmfs", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    models = ModelStore(base_model)
    wplus_store = WplusStore(ttl_s=wplus_ttl_s)
    jobs = JobStore()
    work_queue = queue.Queue()

    app.state.models = models
    app.state.wplus = wplus_store
    app.state.jobs = jobs

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"detail": exc.detail})

    stop_event = threading.Event()

    class _Shutdown(Exception):
        pass

    def _worker():
        while True:
            item = work_queue.get()
            if item is None:
                return
            job_id, model_id, config, prompt = item
            jobs.update(job_id, status="running")
            jobs.set_progress(job_id, 0, config.iterations)
            try:
                base = models.get(model_id)
                def on_step(step, total):
                    if stop_event.is_set():
                        raise _Shutdown
                    jobs.set_progress(job_id, step + 1, total)
                tuned, report = training.finetune(base, config, prompt,
                                                  progress_cb=on_step)
                new_id = models.publish(tuned, kind=config.stage)
                jobs.finish(job_id, status="done", result_model_id=new_id,
                            loss_trace=[row["loss"] for row in report.history])
            except _Shutdown:
                jobs.finish(job_id, status="failed", error="service shut down")
                return
            except Exception as exc:
                jobs.finish(job_id, status="failed",
                            error=f"{type(exc).__name__}: {exc}")

    worker = threading.Thread(target=_worker, daemon=True,
                              name="mmfs-finetune-worker")
    worker.start()

    def _shutdown():
        stop_event.set()
        work_queue.put(None)
        worker.join(timeout=30.0)

    app.state.shutdown = _shutdown

    # ---- endpoints ----------------------------------------------------------

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/models")
    def list_models():
        return {"models": models.list_ids()}

    @app.post("/stylize")
    async def stylize(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "body is not valid JSON")
        mode, req_seed = _validate_stylize(body)
        model = models.get(body.get("model_id", "base"))
        image = _decode_image(body["image"], model.profile.resolution)
        image = image.unsqueeze(0)
        with torch.no_grad():
            if mode == "random":
                gen = torch.Generator().manual_seed(req_seed)
                from .generator import sample_z
                z = sample_z(1, model.profile.d_z, gen)
                wplus = model.wplus_from_z(z)
            elif mode == "text":
                wplus = model.wplus_from_text(body["prompt"])
            elif mode == "image":
                ref = _decode_image(body["reference_image"],
                                    model.profile.resolution)
                wplus = model.wplus_from_image(ref)
            else:  # wplus
                wplus = wplus_store.get(body["wplus_id"]).unsqueeze(0)
            out = model.stylize(image, wplus)
        if mode == "wplus":
            handle = body["wplus_id"]
        else:
            handle = wplus_store.put(wplus[0])
        return {"image": _encode_image(out[0]), "wplus_id": handle}

    @app.post("/interpolate")
    async def interpolate(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "body is not valid JSON")
        required = {"image", "wplus_a", "wplus_b", "alphas"}
        if not isinstance(body, dict) or not required <= set(body):
            raise ApiError(400, f"required fields: {sorted(required)}")
        extra = set(body) - required - {"model_id"}
        if extra:
            raise ApiError(400, f"unknown fields: {sorted(extra)}")
        alphas = body["alphas"]
        if not isinstance(alphas, list) or not alphas:
            raise ApiError(400, "alphas must be a non-empty list")
        for a in alphas:
            if not isinstance(a, (int, float)) or not 0.0 <= float(a) <= 1.0:
                raise ApiError(400, f"alpha {a!r} outside [0, 1]")
        model = models.get(body.get("model_id", "base"))
        w_a = wplus_store.get(body["wplus_a"])
        w_b = wplus_store.get(body["wplus_b"])
        image = _decode_image(body["image"], model.profile.resolution).unsqueeze(0)
        from .generator import interpolate_styles
        frames = []
        with torch.no_grad():
            grid = model.encode(image)
            for alpha in alphas:
                blend = interpolate_styles(w_a, w_b, float(alpha)).unsqueeze(0)
                frames.append(_encode_image(model.decoder.decode(grid, blend)[0]))
        return {"images": frames}

    @app.post("/finetune")
    async def finetune_submit(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "body is not valid JSON")
        mode = body.get("mode")
        if mode not in ("zero", "one"):
            raise ApiError(400, "mode must be 'zero' or 'one'")
        base_id = body.get("base_model_id", "base")
        model = models.get(base_id)
        iterations = body.get("iterations", DEFAULT_FINETUNE_ITERS)
        if not isinstance(iterations, int) or iterations < 1:
            raise ApiError(400, "iterations must be a positive integer")
        stage = "finetune_zero" if mode == "zero" else "finetune_one"
        overrides = {"iterations": iterations, "seed": body.get("seed", 0)}
        if "projection_token_subsample" in body:
            overrides["projection_token_subsample"] = \
                body["projection_token_subsample"]
        config = stage_defaults(stage, **overrides)
        if mode == "zero":
            if not body.get("prompt"):
                raise ApiError(400, "zero-shot fine-tune requires 'prompt'")
            prompt = GuidancePrompt(kind="text", text=body["prompt"])
        else:
            if not body.get("reference_image"):
                raise ApiError(400, "one-shot fine-tune requires "
                                    "'reference_image'")
            ref = _decode_image(body["reference_image"],
                                model.profile.resolution)
            prompt = GuidancePrompt(kind="image", image=ref)
        job_id = jobs.submit(stage, base_id)
        work_queue.put((job_id, base_id, config, prompt))
        return {"job_id": job_id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        return jobs.get(job_id)

    return app
