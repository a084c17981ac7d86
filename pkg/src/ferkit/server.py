"""HTTP inference and sample-collection service.

POST /predict takes a 48x48 8-bit grayscale PNG (image/png) or 2304 raw
bytes (application/octet-stream) and returns class probabilities with the
model-compute latency. POST /samples stores a labeled PNG into the
7-directory dataset tree. GET /health reports readiness. Every non-2xx
response body is ``{"code": ..., "message": ...}``.

The loaded model is immutable here (inference only), so one instance
serves concurrent requests; sample writes serialize on a process-wide
lock to keep filenames unique.
"""

from __future__ import annotations

import base64
import binascii
import io
import os
import threading
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from .augment import AugmentPolicy
from .data import IMAGE_SIZE, _NAME_TO_INDEX, EMOTION_NAMES, emotion_name
from .evaluate import predict_tta

MAX_BODY_BYTES = 1 << 20
RAW_BYTES = IMAGE_SIZE * IMAGE_SIZE

_collect_lock = threading.Lock()
_collect_seq = 0


def _error(status, code, message):
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def _decode_png_48(body):
    """Strict decode: 8-bit grayscale, exactly 48x48. Returns (48,48)
    float32 in [0,1] or raises ValueError with the reason."""
    try:
        img = Image.open(io.BytesIO(body))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError):
        raise ValueError("undecodable image body") from None
    if img.mode != "L":
        raise ValueError(f"expected 8-bit grayscale (mode L), got mode {img.mode}")
    if img.size != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(
            f"expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {img.size[0]}x{img.size[1]}")
    return np.asarray(img, dtype=np.float32) / 255.0


def create_app(weights_path=None, model=None, model_id=None, data_root=None,
               allow_collect=True, cors_origins=(), tta_seed=1234):
    """Builds the service. Pass a loaded model for immediate readiness or
    a weights path to load during startup; /health is 503 until then."""
    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(app):
        if app.state.model is None and weights_path is not None:
            from .model import load_weights
            app.state.model = load_weights(weights_path)
            if app.state.model_id is None:
                app.state.model_id = app.state.model.arch_id
        yield

    app = FastAPI(lifespan=lifespan)
    app.state.model = model
    app.state.model_id = model_id or (model.arch_id if model is not None else None)
    app.state.data_root = data_root
    app.state.allow_collect = allow_collect
    app.state.tta_seed = tta_seed
    app.state.tta_policy = AugmentPolicy()

    if cors_origins:
        from fastapi.middleware.cors import CORSMiddleware
        app.add_middleware(CORSMiddleware, allow_origins=list(cors_origins),
                           allow_methods=["*"], allow_headers=["*"])

    @app.get("/health")
    async def health():
        if app.state.model is None:
            return _error(503, "not_ready", "model weights are not loaded yet")
        return {"status": "ok", "model_id": app.state.model_id,
                "param_count": app.state.model.param_count()}

    @app.post("/predict")
    async def predict(request: Request, tta: int = 0):
        if app.state.model is None:
            return _error(503, "not_ready", "model weights are not loaded yet")
        body = await request.body()
        if len(body) > MAX_BODY_BYTES:
            return _error(413, "body_too_large",
                          f"body exceeds {MAX_BODY_BYTES} bytes")
        content_type = request.headers.get("content-type", "").split(";")[0].strip()
        if content_type == "image/png":
            try:
                image = _decode_png_48(body)
            except ValueError as exc:
                return _error(400, "bad_image", str(exc))
        elif content_type == "application/octet-stream":
            if len(body) != RAW_BYTES:
                return _error(400, "bad_image",
                              f"raw grayscale body must be exactly {RAW_BYTES} bytes")
            image = (np.frombuffer(body, dtype=np.uint8)
                     .reshape(IMAGE_SIZE, IMAGE_SIZE).astype(np.float32) / 255.0)
        else:
            return _error(400, "bad_content_type",
                          "send image/png or application/octet-stream")

        mdl = app.state.model
        start = time.perf_counter()
        if tta:
            probs = predict_tta(mdl, image, app.state.tta_policy, app.state.tta_seed)
        else:
            probs = mdl.forward_probs(image[None, None, :, :], mode="infer")[0]
        latency_ms = (time.perf_counter() - start) * 1000.0
        return {
            "probabilities": [float(p) for p in probs],
            "label": emotion_name(int(np.argmax(probs))),
            "latency_ms": latency_ms,
            "model_id": app.state.model_id,
        }

    @app.post("/samples")
    async def collect(request: Request):
        global _collect_seq
        if not app.state.allow_collect:
            return _error(403, "collection_disabled",
                          "sample collection is disabled on this server")
        root = app.state.data_root or os.environ.get("FER_DATA_ROOT")
        if not root:
            return _error(500, "no_data_root",
                          "no class-directory root configured (set FER_DATA_ROOT)")
        try:
            payload = await request.json()
        except Exception:
            return _error(400, "bad_json", "body must be JSON with label and image_base64")
        label = str(payload.get("label", ""))
        if label.lower() not in _NAME_TO_INDEX:
            return _error(400, "bad_label",
                          f"unknown label {label!r}; valid labels: "
                          + ", ".join(EMOTION_NAMES))
        try:
            body = base64.b64decode(payload.get("image_base64", ""), validate=True)
        except (binascii.Error, TypeError):
            return _error(400, "bad_image", "image_base64 is not valid base64")
        try:
            image = _decode_png_48(body)
        except ValueError as exc:
            return _error(400, "bad_image", str(exc))

        class_dir = os.path.join(root, label.lower())
        with _collect_lock:
            _collect_seq += 1
            seq = _collect_seq
            stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
            filename = f"{stamp}_{seq:06d}.png"
            try:
                os.makedirs(class_dir, exist_ok=True)
                out = Image.fromarray(
                    np.round(image * 255.0).astype(np.uint8), mode="L")
                out.save(os.path.join(class_dir, filename), format="PNG")
            except OSError as exc:
                return _error(500, "write_failed", f"could not store sample: {exc}")
        rel = f"{label.lower()}/{filename}"
        return JSONResponse(status_code=201, content={"path": rel})

    return app
