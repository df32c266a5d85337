"""HTTP inference service: completion and instance probabilities over a
loaded checkpoint pair.

The model snapshot is immutable after startup and requests share it
read-only, so concurrent calls are independent. Every non-2xx response
carries a JSON body {"code", "message"}. Payload builders live here and are
reused by the command-line entry point, which keeps the two surfaces
byte-identical for identical inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import __version__
from .beam import BeamParams, complete
from .data import ClassCatalog, OutOfVocabularyError, SceneContext, Vocab
from .factorcell import FactorCellParams
from .instances import InstanceHeadParams, instance_probs
from .tensors import Rng

NOISE_ID = "noise"


@dataclass
class ModelBundle:
    """Everything one service process serves: frozen after load."""

    lm: FactorCellParams | None = None
    vocab: Vocab | None = None
    head: InstanceHeadParams | None = None
    catalog: ClassCatalog | None = None
    scenes: dict[str, SceneContext] = field(default_factory=dict)
    seed: int = 0
    threshold: float = 0.5


def bundle_scenes(scenes) -> dict[str, SceneContext]:
    return {sc.id: sc for sc in scenes}


def load_bundle(
    lm_ckpt=None,
    head_ckpt=None,
    data_dir=None,
    seed: int = 0,
    threshold: float = 0.5,
) -> ModelBundle:
    """Assemble a serving bundle from checkpoint files and a dataset dir.

    `data_dir` supplies scenes.jsonl so image ids resolve to contexts; the
    vocabulary/catalog come from the checkpoints themselves.
    """
    from pathlib import Path

    from .checkpoint import load_head, load_lm
    from .data import load_scenes

    bundle = ModelBundle(seed=seed, threshold=threshold)
    if lm_ckpt is not None:
        ck = load_lm(lm_ckpt)
        bundle.lm = ck.params
        bundle.vocab = ck.vocab
        bundle.catalog = ck.catalog
    if head_ckpt is not None:
        hk = load_head(head_ckpt)
        bundle.head = hk.params
        bundle.catalog = hk.catalog or bundle.catalog
        if bundle.vocab is None:
            bundle.vocab = hk.vocab
    if data_dir is not None:
        scenes_path = Path(data_dir) / "scenes.jsonl"
        if scenes_path.exists():
            bundle.scenes = bundle_scenes(load_scenes(scenes_path))
    return bundle


def noise_vector(m: int, seed: int, dtype=np.float32) -> np.ndarray:
    """The seeded noise context; one fixed draw per seed, reused verbatim."""
    return Rng(seed).normal(m).astype(dtype)


def resolve_context(bundle: ModelBundle, image_id: str) -> np.ndarray:
    """Context vector for an image id, or the noise pseudo-image."""
    if image_id == NOISE_ID:
        return noise_vector(bundle.lm.cfg.m, bundle.seed, bundle.lm.dtype)
    scene = bundle.scenes.get(image_id)
    if scene is None:
        raise KeyError(image_id)
    feats = np.asarray(scene.features, dtype=bundle.lm.dtype)
    return feats @ bundle.lm.proj_W + bundle.lm.proj_b


def completion_payload(completions) -> dict:
    return {"completions": [c.to_dict() for c in completions]}


def instances_payload(
    probs: np.ndarray,
    catalog: ClassCatalog,
    top: int | None = None,
    threshold: float = 0.5,
) -> dict:
    entries = sorted(zip(catalog.classes, probs), key=lambda kv: (-kv[1], kv[0]))
    if top is not None:
        entries = entries[:top]
    return {
        "probs": [{"class": name, "p": float(p)} for name, p in entries],
        "threshold_used": threshold,
    }


def images_payload(bundle: ModelBundle) -> dict:
    return {
        "images": [
            {"id": sc.id, "instances": list(sc.classes)}
            for sc in bundle.scenes.values()
        ]
    }


def render_json(payload: dict) -> str:
    """Canonical serialization shared by service responses and CLI output."""
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


class ApiError(Exception):
    def __init__(self, http_status: int, code: str, message: str):
        self.http_status = http_status
        self.code = code
        self.message = message
        super().__init__(message)


class CompleteRequest(BaseModel):
    prefix: str
    image_id: str
    width: int = 10
    k: int = 10


class InstancesRequest(BaseModel):
    query: str
    top: int | None = None


def _json_response(payload: dict, status: int = 200) -> Response:
    return Response(
        content=render_json(payload), status_code=status, media_type="application/json"
    )


def build_app(bundle: ModelBundle) -> FastAPI:
    app = FastAPI(title="ctxcomplete", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"code": exc.code, "message": exc.message},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"code": "bad_request", "message": str(exc.errors()[:1])},
        )

    def require_lm() -> None:
        if bundle.lm is None or bundle.vocab is None:
            raise ApiError(503, "model_not_loaded", "no language model loaded")

    @app.get("/health")
    async def health():
        return _json_response({"status": "ok", "model_version": __version__})

    @app.get("/images")
    async def images():
        return _json_response(images_payload(bundle))

    @app.post("/complete")
    async def complete_endpoint(req: CompleteRequest):
        require_lm()
        try:
            beam = BeamParams(width=req.width, k=req.k)
        except ValueError as exc:
            raise ApiError(400, "bad_beam_params", str(exc))
        try:
            c = resolve_context(bundle, req.image_id)
        except KeyError:
            raise ApiError(404, "unknown_image", f"unknown image id {req.image_id!r}")
        try:
            comps = complete(req.prefix, c, bundle.lm, bundle.vocab, beam)
        except OutOfVocabularyError as exc:
            raise ApiError(400, "bad_prefix", str(exc))
        except ValueError as exc:
            raise ApiError(400, "bad_prefix", str(exc))
        return _json_response(completion_payload(comps))

    @app.post("/instances")
    async def instances_endpoint(req: InstancesRequest):
        if bundle.head is None or bundle.catalog is None or bundle.vocab is None:
            raise ApiError(503, "model_not_loaded", "no instance head loaded")
        if not req.query:
            raise ApiError(400, "empty_query", "query must be non-empty")
        if req.top is not None and req.top < 1:
            raise ApiError(400, "bad_top", "top must be >= 1")
        probs = instance_probs(req.query, bundle.head, bundle.vocab)
        return _json_response(
            instances_payload(probs, bundle.catalog, req.top, bundle.threshold)
        )

    return app
