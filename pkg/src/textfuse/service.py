"""Stateless HTTP/JSON facade over associate / fuse / assess.

Every request runs the pure pipeline on its own inputs; no request mutates
server state, so identical payloads produce identical responses and the
endpoints are safe under concurrency. Images travel as base64 PNG. The
explorer UI is served statically from the bundled frontend build when one
exists.
"""

from __future__ import annotations

import base64
import binascii
import io
import os
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field, model_validator

from .assessment import METRIC_NAMES, confidence
from .association import AssociationConfig
from .dataset import load_annotations, load_pair_images
from .imagery import GrayImage, InstanceMap, InterestMask
from . import imgio
from .pipeline import run_assessment, run_fusion

__all__ = ["create_app", "app_factory", "MAX_INLINE_BYTES", "MAX_TEXT_LENGTH"]

MAX_INLINE_BYTES = 8 * 1024 * 1024
MAX_TEXT_LENGTH = 2048
FRONTEND_DIST = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"


class SessionPayload(BaseModel):
    """Either a dataset pair id or both inline images, plus the description."""

    pair_id: str | None = None
    ir_image: str | None = None
    vis_image: str | None = None
    instances_image: str | None = None
    instance_classes: dict[str, str] | None = None
    text: str = Field(default="", max_length=MAX_TEXT_LENGTH)
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    tau_b: float = Field(default=0.35, gt=0.0, lt=1.0)
    lexicon: list[str] = Field(default_factory=list)
    metrics: list[str] = Field(default_factory=lambda: list(METRIC_NAMES))

    @model_validator(mode="after")
    def _pair_or_inline(self):
        if self.pair_id is None and (self.ir_image is None or self.vis_image is None):
            raise ValueError("payload needs a pair_id or both inline images")
        return self


class AssessPayload(SessionPayload):
    fused_image: str | None = None


def _decode_image_bytes(b64: str, what: str) -> bytes:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise HTTPException(status_code=422, detail=f"{what}: undecodable base64") from exc
    if len(raw) > MAX_INLINE_BYTES:
        raise HTTPException(
            status_code=422, detail=f"{what}: exceeds inline cap of {MAX_INLINE_BYTES} bytes"
        )
    return raw


def _decode_gray(b64: str, what: str) -> GrayImage:
    raw = _decode_image_bytes(b64, what)
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise HTTPException(status_code=422, detail=f"{what}: unreadable image") from exc
    if img.mode in ("RGB", "RGBA", "P"):
        img = img.convert("L")
    arr = np.asarray(img)
    scale = 65535.0 if arr.dtype != np.uint8 else 255.0
    return GrayImage(np.clip(arr.astype(np.float64) / scale, 0.0, 1.0))


def _decode_instances(payload: SessionPayload) -> InstanceMap | None:
    if payload.instances_image is None:
        return None
    raw = _decode_image_bytes(payload.instances_image, "instances_image")
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise HTTPException(status_code=422, detail="instances_image: unreadable image") from exc
    labels = np.asarray(img)
    if labels.ndim != 2:
        raise HTTPException(status_code=422, detail="instances_image: must be single channel")
    classes = {int(k): v for k, v in (payload.instance_classes or {}).items()}
    try:
        return InstanceMap(labels.astype(np.int32), classes)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=f"instances_image: {exc}") from exc


def _encode_gray(img: GrayImage) -> str:
    buf = io.BytesIO()
    data = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _encode_mask(mask: InterestMask) -> str:
    return _encode_gray(GrayImage(mask.data.astype(np.float64)))


def _encode_heat(data: np.ndarray) -> str:
    return _encode_gray(GrayImage(np.clip(data, 0.0, 1.0)))


def create_app(dataset_root: str | Path | None = None) -> FastAPI:
    """Build the service; ``dataset_root`` holds annotations.json for pair ids."""
    app = FastAPI(title="textfuse", version="0.1.0")
    root = Path(dataset_root) if dataset_root else None

    @app.exception_handler(RequestValidationError)
    async def _schema_violation(_req: Request, exc: RequestValidationError):
        # schema violations are client errors, not unprocessable entities
        return JSONResponse(status_code=400, content={"detail": jsonable_encoder(exc.errors())})

    def _dataset_records():
        if root is None:
            raise HTTPException(status_code=404, detail="no dataset root configured")
        index = root / "annotations.json"
        if not index.exists():
            raise HTTPException(status_code=404, detail=f"annotation index missing in {root}")
        return load_annotations(index)

    def _resolve_inputs(payload: SessionPayload):
        if payload.pair_id is not None:
            records = {r.pair_id: r for r in _dataset_records()}
            record = records.get(payload.pair_id)
            if record is None:
                raise HTTPException(status_code=404, detail=f"unknown pair id {payload.pair_id!r}")
            try:
                ir, vis = load_pair_images(record)
            except (imgio.ImageFormatError, FileNotFoundError) as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            instances = None
            if record.instance_path is not None:
                instances = imgio.load_instance_map(record.instance_path)
            heatmaps = None
            if record.heatmap_dir is not None:
                heatmaps = imgio.load_heatmap_dir(record.heatmap_dir) or None
            return ir, vis, instances, heatmaps
        ir = _decode_gray(payload.ir_image, "ir_image")
        vis = _decode_gray(payload.vis_image, "vis_image")
        if ir.shape != vis.shape:
            raise HTTPException(status_code=422, detail="inline image extents differ")
        return ir, vis, _decode_instances(payload), None

    def _fuse(payload: SessionPayload):
        ir, vis, instances, heatmaps = _resolve_inputs(payload)
        cfg = AssociationConfig(
            tau_b=payload.tau_b, alpha=payload.alpha, lexicon=frozenset(payload.lexicon)
        )
        try:
            return ir, vis, run_fusion(
                ir, vis, text=payload.text, instances=instances, cfg=cfg, heatmaps=heatmaps
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/api/v1/pairs")
    def pairs():
        return {
            "pairs": [
                {
                    "id": r.pair_id,
                    "descriptions": [
                        {"annotator_class": d.annotator_class, "sentences": list(d.sentences)}
                        for d in r.descriptions
                    ],
                    "has_instances": r.instance_path is not None,
                    "has_heatmaps": r.heatmap_dir is not None,
                }
                for r in _dataset_records()
            ]
        }

    @app.get("/api/v1/pairs/{pair_id}/image/{modality}")
    def pair_image(pair_id: str, modality: str):
        """Raw pair raster for explorer display (vis drives the B_f overlay)."""
        if modality not in ("ir", "vis"):
            raise HTTPException(status_code=404, detail=f"unknown modality {modality!r}")
        records = {r.pair_id: r for r in _dataset_records()}
        record = records.get(pair_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown pair id {pair_id!r}")
        path = record.ir_path if modality == "ir" else record.vis_path
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/api/v1/associate")
    def associate_endpoint(payload: SessionPayload):
        _ir, _vis, out = _fuse(payload)
        assoc = out.association
        c_t = confidence(assoc.b_f, assoc.b_hat, assoc.m_hat_ir, assoc.m_hat_vis)
        return {
            "b_f": _encode_mask(assoc.b_f),
            "m_hat_ir": _encode_heat(assoc.m_hat_ir.data),
            "m_hat_vis": _encode_heat(assoc.m_hat_vis.data),
            "c_t": c_t,
        }

    @app.post("/api/v1/fuse")
    def fuse_endpoint(payload: SessionPayload):
        _ir, _vis, out = _fuse(payload)
        w = out.weights
        return {
            "fused": _encode_gray(out.fused),
            "b_f": _encode_mask(out.association.b_f),
            "weights": {
                "p_ir": w.p_ir,
                "p_vis": w.p_vis,
                "mean_w_ir": float(np.mean(w.w_ir)),
                "mean_w_vis": float(np.mean(w.w_vis)),
            },
        }

    @app.post("/api/v1/assess")
    def assess_endpoint(payload: AssessPayload):
        if payload.fused_image is None:
            raise HTTPException(status_code=400, detail="fused_image is required")
        ir, vis, out = _fuse(payload)
        fused = _decode_gray(payload.fused_image, "fused_image")
        if fused.shape != ir.shape:
            raise HTTPException(status_code=422, detail="fused image extent differs from pair")
        try:
            results, plain, c_t = run_assessment(
                fused, ir, vis, out.association, metrics=payload.metrics
            )
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {
            "c_t": c_t,
            "reference": [
                {"metric": r.name, "q_o": r.q_o, "q_plus": r.q_plus, "c_t": r.c_t, "w_o": r.w_o}
                for r in results
            ],
            "no_reference": plain,
        }

    if FRONTEND_DIST.is_dir():
        app.mount("/ui", StaticFiles(directory=FRONTEND_DIST, html=True), name="ui")

        @app.get("/")
        def index():
            return FileResponse(FRONTEND_DIST / "index.html")

    return app


def app_factory() -> FastAPI:
    """Uvicorn entry point; the dataset root travels via the environment."""
    return create_app(os.environ.get("TEXTFUSE_DATASET_ROOT") or None)
