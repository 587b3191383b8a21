"""JSON-over-HTTP backend clients.

Wire format: JSON bodies with base64-encoded PNG rasters. One service
base URL per capability; clients POST to the conventional paths

    {base}/vqa   {base}/generate/{kind}   {base}/embed   {base}/segment

Endpoints and timeouts can be overridden per kind through environment
variables ``VQADIFF_BACKEND_<KIND>_URL`` and ``VQADIFF_BACKEND_TIMEOUT_S``.

Retries are only attempted for requests carrying an idempotency key
(deterministic requests under seed_policy "caller"); retry count and
backoff are bounded.
"""

from __future__ import annotations

import os
import time
from typing import Optional

import numpy as np
import requests

from ..digests import sha256_json
from ..errors import BackendError, BackendTimeoutError, BackendUnavailableError
from ..images import (
    as_raster,
    raster_digest,
    raster_from_base64,
    raster_to_base64,
)
from .base import (
    BackendDescriptor,
    EmbedBackend,
    EmbeddingVector,
    GenerationBackend,
    GenerationRequest,
    SegmentBackend,
    SegmentationResult,
    VQABackend,
)
from .stub import _record, _request_digest
from .trace import TraceLog

ENV_URL_TEMPLATE = "VQADIFF_BACKEND_{kind}_URL"
ENV_TIMEOUT = "VQADIFF_BACKEND_TIMEOUT_S"

MAX_RETRIES = 2
BACKOFF_S = 0.25


def apply_env_overrides(descriptor: BackendDescriptor) -> BackendDescriptor:
    """Environment variables override endpoint URLs and timeouts only."""
    url = os.environ.get(ENV_URL_TEMPLATE.format(kind=descriptor.kind.upper()))
    timeout = os.environ.get(ENV_TIMEOUT)
    if url is None and timeout is None:
        return descriptor
    return BackendDescriptor(
        kind=descriptor.kind,
        endpoint=url if url is not None else descriptor.endpoint,
        model_id=descriptor.model_id,
        timeout_s=float(timeout) if timeout is not None else descriptor.timeout_s,
        seed_policy=descriptor.seed_policy,
    )


class _HttpClient:
    def __init__(
        self,
        descriptor: BackendDescriptor,
        trace: Optional[TraceLog] = None,
        session: Optional[requests.Session] = None,
        max_retries: int = MAX_RETRIES,
        backoff_s: float = BACKOFF_S,
    ):
        self.descriptor = descriptor
        self.trace = trace
        self.session = session or requests.Session()
        self.max_retries = max_retries
        self.backoff_s = backoff_s

    def _post(self, path: str, payload: dict, idempotent: bool = False) -> dict:
        url = self.descriptor.endpoint.rstrip("/") + path
        attempts = self.max_retries + 1 if idempotent else 1
        last_status = None
        for attempt in range(attempts):
            try:
                resp = self.session.post(
                    url, json=payload, timeout=self.descriptor.timeout_s
                )
            except requests.Timeout as exc:
                raise BackendTimeoutError(
                    f"{self.descriptor.kind} backend timed out after "
                    f"{self.descriptor.timeout_s}s",
                    kind=self.descriptor.kind,
                ) from exc
            except requests.ConnectionError as exc:
                raise BackendUnavailableError(
                    f"{self.descriptor.kind} backend unreachable at {url}: {exc}",
                    kind=self.descriptor.kind,
                ) from exc
            if resp.status_code < 400:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise BackendError(
                        f"{self.descriptor.kind} backend returned non-JSON body",
                        kind=self.descriptor.kind,
                    ) from exc
            last_status = resp.status_code
            if resp.status_code < 500 or attempt == attempts - 1:
                break
            time.sleep(self.backoff_s * (2**attempt))
        raise BackendError(
            f"{self.descriptor.kind} backend error HTTP {last_status} at {url}",
            kind=self.descriptor.kind,
            retry_meta={"attempts": attempts, "last_status": last_status},
        )


class HttpVQABackend(_HttpClient, VQABackend):
    kind = "vqa"

    def answer(self, image: np.ndarray, question: str) -> str:
        if not question:
            raise ValueError("question must be non-empty")
        t0 = time.monotonic()
        payload = {
            "question": question,
            "image": raster_to_base64(image),
            "model_id": self.descriptor.model_id,
            "mode": "answer",
        }
        body = self._post("/vqa", payload, idempotent=True)
        answer = body.get("answer", "")
        req = sha256_json({"image": raster_digest(image), "question": question})
        _record(self.trace, "vqa", "vqa_answer", req,
                sha256_json(answer), t0)
        return answer

    def yes_probability(self, image: np.ndarray, question: str) -> float:
        if not question:
            raise ValueError("question must be non-empty")
        t0 = time.monotonic()
        payload = {
            "question": question,
            "image": raster_to_base64(image),
            "model_id": self.descriptor.model_id,
            "mode": "yes_probability",
        }
        body = self._post("/vqa", payload, idempotent=True)
        p = float(body.get("probability", 0.0))
        req = sha256_json(
            {"image": raster_digest(image), "question": question, "mode": "yes"}
        )
        _record(self.trace, "vqa", "yes_probability", req, sha256_json(p), t0)
        return p


class HttpGenerationBackend(_HttpClient, GenerationBackend):
    def __init__(self, descriptor: BackendDescriptor, **kwargs):
        super().__init__(descriptor, **kwargs)
        self.kind = descriptor.kind

    def generate(self, request: GenerationRequest) -> np.ndarray:
        request.validate_for(self.kind)
        t0 = time.monotonic()
        req_digest = _request_digest(self.kind, request, self.descriptor.model_id)
        payload = {
            "prompt": request.prompt,
            "seed": request.seed,
            "steps": request.steps,
            "guidance": request.guidance,
            "width": request.width,
            "height": request.height,
            "model_id": self.descriptor.model_id,
            "init_image": None
            if request.init_image is None
            else raster_to_base64(request.init_image),
            "condition_image": None
            if request.condition_image is None
            else raster_to_base64(request.condition_image),
            "subject_embedding": None
            if request.subject_embedding is None
            else [float(v) for v in np.asarray(request.subject_embedding).ravel()],
        }
        # deterministic requests are idempotent and safe to retry
        idempotent = self.descriptor.seed_policy == "caller"
        if idempotent:
            payload["idempotency_key"] = req_digest
        body = self._post(f"/generate/{self.kind}", payload, idempotent=idempotent)
        if "image" not in body:
            raise BackendError(
                f"{self.kind} backend response missing 'image'", kind=self.kind
            )
        out = raster_from_base64(body["image"])
        _record(self.trace, self.kind, "generate", req_digest,
                raster_digest(out), t0)
        return out


class HttpEmbedBackend(_HttpClient, EmbedBackend):
    kind = "embed"

    def __init__(self, descriptor: BackendDescriptor, **kwargs):
        super().__init__(descriptor, **kwargs)
        self.dim = 0  # learned from the first response

    def _embed(self, modality, image, text, req_meta) -> EmbeddingVector:
        t0 = time.monotonic()
        payload = {
            "modality": modality,
            "image": None if image is None else raster_to_base64(image),
            "text": text,
            "model_id": self.descriptor.model_id,
        }
        body = self._post("/embed", payload, idempotent=True)
        values = np.asarray(body.get("values", []), dtype=np.float64)
        if values.size == 0:
            raise BackendError("embed backend returned no values", kind="embed")
        norm = np.linalg.norm(values)
        if norm > 0:
            values = values / norm
        self.dim = int(values.shape[0])
        vec = EmbeddingVector(values=values, modality=modality)
        _record(self.trace, "embed", "embed", sha256_json(req_meta),
                sha256_json([float(v) for v in values[:8]]), t0)
        return vec

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        return self._embed(
            "image", image, None, {"modality": "image", "content": raster_digest(image)}
        )

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("text must be non-empty")
        return self._embed(
            "text", None, text, {"modality": "text", "content": text}
        )

    def embed_multimodal(self, image: np.ndarray, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("text must be non-empty")
        return self._embed(
            "multimodal",
            image,
            text,
            {"modality": "multimodal", "content": [raster_digest(image), text]},
        )


class HttpSegmentBackend(_HttpClient, SegmentBackend):
    kind = "segment"

    def segment_foreground(self, image: np.ndarray) -> SegmentationResult:
        t0 = time.monotonic()
        payload = {
            "image": raster_to_base64(image),
            "model_id": self.descriptor.model_id,
        }
        body = self._post("/segment", payload, idempotent=True)
        if "mask" not in body:
            raise BackendError("segment backend response missing 'mask'",
                               kind="segment")
        mask_img = raster_from_base64(body["mask"])
        if mask_img.ndim == 3:
            mask_img = mask_img[:, :, 0]
        mask = (mask_img > 127).astype(np.uint8)
        is_empty = bool(body.get("empty", not mask.any()))
        _record(self.trace, "segment", "segment_foreground",
                sha256_json({"image": raster_digest(as_raster(image))}),
                sha256_json(int(mask.sum())), t0)
        return SegmentationResult(mask=mask, is_empty=is_empty)


def make_http_backend(descriptor: BackendDescriptor, trace: Optional[TraceLog] = None):
    if descriptor.kind == "vqa":
        return HttpVQABackend(descriptor, trace=trace)
    if descriptor.kind in ("text2image", "image2image", "edge2image"):
        return HttpGenerationBackend(descriptor, trace=trace)
    if descriptor.kind == "embed":
        return HttpEmbedBackend(descriptor, trace=trace)
    if descriptor.kind == "segment":
        return HttpSegmentBackend(descriptor, trace=trace)
    raise ValueError(f"no HTTP client for backend kind {descriptor.kind!r}")
