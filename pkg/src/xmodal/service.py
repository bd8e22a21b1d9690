"""HTTP JSON API over the encoders and indexes.

Readers never block: queries run against whatever index object they grabbed,
and /index/images builds a new index under a writer lock and swaps it in
atomically. Every error path answers {"error", "detail"} JSON.
"""

from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .embeddings import WordSpace, load_alignment, load_table, build_word_space
from .errors import (
    FeatureMapError,
    RetrievalError,
    ServiceError,
    TokenizeError,
    XmodalError,
)
from .image_encoder import FeatureMap, encode_image, heatmap, parse_fmap, read_fmap
from .retrieval import CAPTION, IMAGE, RetrievalIndex, load_index, search
from .text_encoder import encode_sentence, tokenize
from .trainer import Checkpoint, JointModel, load_checkpoint


@dataclass
class ServiceConfig:
    checkpoint: str
    tables: dict[str, str]
    pivot: str
    alignments: dict[str, str] = field(default_factory=dict)
    image_index: str | None = None
    caption_index: str | None = None
    feature_dir: str | None = None
    host: str = "127.0.0.1"
    port: int = 8000
    default_k: int = 10


def load_service_config(path) -> ServiceConfig:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        return ServiceConfig(**obj)
    except TypeError as exc:
        raise ServiceError(f"{path}: bad service config ({exc})") from None


class ServiceState:
    """Everything a request handler touches; index writes are copy-and-swap."""

    def __init__(
        self,
        space: WordSpace,
        model: JointModel,
        image_index: RetrievalIndex | None = None,
        caption_index: RetrievalIndex | None = None,
        features: dict[str, FeatureMap] | None = None,
        feature_dir: str | None = None,
        default_k: int = 10,
    ):
        self.space = space
        self.model = model
        self.image_index = image_index
        self.caption_index = caption_index
        self.features = dict(features or {})
        self.feature_dir = feature_dir
        self.default_k = default_k
        self.write_lock = threading.Lock()

    def lookup_features(self, image_id: str) -> FeatureMap | None:
        fm = self.features.get(image_id)
        if fm is None and self.feature_dir is not None:
            candidate = Path(self.feature_dir) / f"{image_id}.fmap"
            if candidate.exists():
                fm = read_fmap(candidate)
                self.features[image_id] = fm
        return fm


def build_state(config: ServiceConfig) -> ServiceState:
    ckpt: Checkpoint = load_checkpoint(config.checkpoint)
    tables = {lang: load_table(path, lang) for lang, path in config.tables.items()}
    maps = {lang: load_alignment(path) for lang, path in config.alignments.items()}
    space = build_word_space(tables, maps, config.pivot)
    if space.dim != ckpt.model.text.embed_dim:
        raise ServiceError(
            f"word space dim {space.dim} does not match checkpoint embed dim "
            f"{ckpt.model.text.embed_dim}"
        )
    joint = ckpt.model.text.joint_dim
    image_index = load_index(config.image_index) if config.image_index else None
    caption_index = load_index(config.caption_index) if config.caption_index else None
    for name, idx in (("image", image_index), ("caption", caption_index)):
        if idx is not None and idx.dim != joint:
            raise ServiceError(f"{name} index dim {idx.dim} does not match joint dim {joint}")
    return ServiceState(
        space=space,
        model=ckpt.model,
        image_index=image_index,
        caption_index=caption_index,
        feature_dir=config.feature_dir,
        default_k=config.default_k,
    )


class ApiError(Exception):
    def __init__(self, status: int, error: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.error = error
        self.detail = detail


def _bad_request(detail: str, error: str = "bad_request") -> ApiError:
    return ApiError(400, error, detail)


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="xmodal", docs_url=None, redoc_url=None)
    app.state.ctx = state

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": exc.error, "detail": exc.detail})

    @app.exception_handler(Exception)
    async def handle_unexpected(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"error": "internal", "detail": str(exc)})

    def parse_k(value, fallback: int) -> int:
        if value is None:
            return fallback
        try:
            k = int(value)
        except (TypeError, ValueError):
            raise _bad_request(f"k must be an integer, got {value!r}")
        if k < 1:
            raise _bad_request(f"k must be >= 1, got {k}")
        return k

    @app.get("/info")
    async def info():
        return {
            "languages": list(state.space.languages),
            "joint_dim": state.model.text.joint_dim,
            "image_count": len(state.image_index) if state.image_index else 0,
            "caption_count": len(state.caption_index) if state.caption_index else 0,
            "default_k": state.default_k,
        }

    @app.post("/query/text")
    async def query_text(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise _bad_request("request body must be JSON")
        text = body.get("text", "")
        lang = body.get("lang")
        k = parse_k(body.get("k"), state.default_k)
        if not text or not text.strip():
            raise _bad_request("empty text")
        if lang not in state.space.languages:
            raise _bad_request(
                f"unknown language {lang!r}; loaded languages: {', '.join(state.space.languages)}",
                error="unknown_language",
            )
        index = state.image_index
        if index is None or len(index) == 0:
            raise ApiError(503, "index_not_loaded", "no image index is loaded")
        try:
            vector = encode_sentence(tokenize(text, lang), state.space, state.model.text)
        except TokenizeError as exc:
            raise _bad_request(str(exc), error="out_of_vocabulary")
        results = search(index, vector, k, modality=IMAGE)
        heatmap_available = all(state.lookup_features(iid) is not None for iid, _ in results)
        return {
            "results": [{"image_id": iid, "score": score} for iid, score in results],
            "heatmap_available": heatmap_available,
        }

    @app.post("/query/image")
    async def query_image(request: Request, k: str | None = None):
        top_k = parse_k(k, state.default_k)
        payload = await request.body()
        try:
            fm = parse_fmap(payload, name="request body")
        except FeatureMapError as exc:
            raise _bad_request(str(exc), error="malformed_fmap")
        index = state.caption_index
        if index is None or len(index) == 0:
            raise ApiError(503, "index_not_loaded", "no caption index is loaded")
        try:
            vector = encode_image(fm, state.model.image)
        except XmodalError as exc:
            raise _bad_request(str(exc))
        results = search(index, vector, top_k, modality=CAPTION)
        out = []
        for cid, score in results:
            item = index.get(cid)
            out.append({"caption_id": cid, "text": item.text, "lang": item.lang, "score": score})
        return {"results": out}

    @app.post("/index/images")
    async def index_images(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise _bad_request("request body must be JSON")
        image_id = body.get("image_id")
        if not image_id:
            raise _bad_request("missing image_id")
        try:
            if "feature_path" in body:
                fm = read_fmap(body["feature_path"])
            elif "fmap_b64" in body:
                fm = parse_fmap(base64.b64decode(body["fmap_b64"]), name="fmap_b64")
            else:
                raise _bad_request("provide feature_path or fmap_b64")
        except (FeatureMapError, OSError, ValueError) as exc:
            raise _bad_request(str(exc), error="malformed_fmap")
        try:
            vector = encode_image(fm, state.model.image)
        except XmodalError as exc:
            raise _bad_request(str(exc))
        with state.write_lock:
            current = state.image_index
            if current is not None and image_id in current:
                raise ApiError(409, "duplicate_id", f"image {image_id!r} is already indexed")
            fresh = current.copy() if current is not None else RetrievalIndex(vector.shape[0])
            try:
                fresh.add(image_id, vector, IMAGE)
            except RetrievalError as exc:
                raise _bad_request(str(exc))
            state.features[image_id] = fm
            state.image_index = fresh  # atomic swap; readers keep their snapshot
            count = len(fresh)
        return {"indexed": True, "count": count}

    @app.get("/heatmap")
    async def heatmap_endpoint(word: str = "", lang: str = "", image_id: str = ""):
        if lang not in state.space.languages:
            raise _bad_request(
                f"unknown language {lang!r}; loaded languages: {', '.join(state.space.languages)}",
                error="unknown_language",
            )
        if not word:
            raise _bad_request("missing word")
        fm = state.lookup_features(image_id)
        if fm is None:
            raise ApiError(
                404, "unknown_image", f"image {image_id!r} has no retained feature map"
            )
        try:
            hm = heatmap(word, lang, fm, state.space, state.model.text, state.model.image)
        except TokenizeError as exc:
            raise _bad_request(str(exc), error="out_of_vocabulary")
        return JSONResponse(content=[[float(v) for v in row] for row in hm])

    return app
