"""Deterministic stub backends.

Every stub is a pure function of its declared inputs, so a pipeline run
against stubs is replayable bit-for-bit: same seed, same prompt, same
images in, same bytes out. All desk-scale tests and the end-to-end
determinism checks run on these.

The stub image generator draws seeded value-noise plus a silhouette
colored from the prompt hash, overlays the condition edges when present,
and echoes an init image into the top-left quadrant, which keeps the
anchor-regeneration convention of the neighbor experts visible in stub
output.
"""

from __future__ import annotations

import time
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..digests import sha256_array, sha256_bytes, sha256_json, seed_from_digest
from ..images import as_raster, raster_digest
from .base import (
    BackendDescriptor,
    EmbedBackend,
    EmbeddingVector,
    GenerationBackend,
    GenerationRequest,
    SegmentBackend,
    SegmentationResult,
    STUB_ENDPOINT,
    VQABackend,
)
from .trace import TraceLog

DEFAULT_EMBED_DIM = 256

# Fixture answers keyed by content hash when nothing is registered; real
# answers for specific test images are registered per test.
DEFAULT_ANSWERS = (
    "2014 Dodge Ram 1500, a full-size pick-up truck with a crew cab and "
    "chrome grille",
    "2020 Tesla Model 3, a compact electric sedan with a panoramic glass roof",
    "2018 BMW X5, a mid-size luxury SUV with a twin-kidney grille",
    "2016 Toyota Corolla, a compact sedan with sweeping LED headlights",
    "2019 Range Rover Evoque, a subcompact luxury SUV with a coupe-like "
    "roofline",
    "2015 Ford Mustang GT, a muscle car with a long hood and fastback "
    "profile",
    "2021 Honda Civic, a compact car with a wide lower grille",
    "2017 Jeep Wrangler, an off-road SUV with a seven-slot grille and "
    "round headlights",
)


def _record(trace: Optional[TraceLog], kind, operation, req_digest, resp_digest, t0):
    if trace is not None:
        trace.record(kind, operation, req_digest, resp_digest, time.monotonic() - t0)


class StubVQABackend(VQABackend):
    """Answer lookup by (image digest, question); deterministic fallback."""

    kind = "vqa"

    def __init__(
        self,
        descriptor: Optional[BackendDescriptor] = None,
        trace: Optional[TraceLog] = None,
    ):
        self.descriptor = descriptor or BackendDescriptor(kind="vqa")
        self.trace = trace
        self._fixtures: Dict[Tuple[str, str], str] = {}
        self._yes_fixture: Optional[float] = None

    def register(self, image: np.ndarray, question: str, answer: str) -> None:
        """Pin the answer for one (image, question) pair."""
        self._fixtures[(raster_digest(image), question)] = answer

    def set_yes_probability(self, value: float) -> None:
        """Pin yes_probability to a constant for all inputs."""
        self._yes_fixture = float(value)

    def answer(self, image: np.ndarray, question: str) -> str:
        if not question:
            raise ValueError("question must be non-empty")
        t0 = time.monotonic()
        digest = raster_digest(image)
        key = (digest, question)
        if key in self._fixtures:
            result = self._fixtures[key]
        else:
            pick = seed_from_digest(sha256_bytes(digest.encode(), question.encode()))
            result = DEFAULT_ANSWERS[pick % len(DEFAULT_ANSWERS)]
        req = sha256_json({"image": digest, "question": question})
        _record(self.trace, "vqa", "vqa_answer", req, sha256_bytes(result.encode()), t0)
        return result

    def yes_probability(self, image: np.ndarray, question: str) -> float:
        if not question:
            raise ValueError("question must be non-empty")
        t0 = time.monotonic()
        digest = raster_digest(image)
        if self._yes_fixture is not None:
            p = self._yes_fixture
        else:
            pick = seed_from_digest(
                sha256_bytes(b"yes", digest.encode(), question.encode())
            )
            p = (pick % 10_000) / 9_999.0
        req = sha256_json({"image": digest, "question": question, "mode": "yes"})
        _record(self.trace, "vqa", "yes_probability", req, sha256_json(p), t0)
        return p


def _request_digest(kind: str, request: GenerationRequest, model_id: str) -> str:
    parts = {
        "kind": kind,
        "model_id": model_id,
        "prompt": request.prompt,
        "seed": request.seed,
        "steps": request.steps,
        "guidance": request.guidance,
        "width": request.width,
        "height": request.height,
        "init": None if request.init_image is None else sha256_array(
            as_raster(request.init_image)
        ),
        "condition": None if request.condition_image is None else sha256_array(
            as_raster(request.condition_image)
        ),
        "subject": None if request.subject_embedding is None else sha256_array(
            np.asarray(request.subject_embedding, dtype=np.float64)
        ),
    }
    return sha256_json(parts)


class StubGenerationBackend(GenerationBackend):
    """Procedural image generator, a pure function of the request digest."""

    def __init__(
        self,
        kind: str,
        descriptor: Optional[BackendDescriptor] = None,
        trace: Optional[TraceLog] = None,
    ):
        self.kind = kind
        self.descriptor = descriptor or BackendDescriptor(kind=kind)
        self.trace = trace

    def generate(self, request: GenerationRequest) -> np.ndarray:
        request.validate_for(self.kind)
        t0 = time.monotonic()
        req_digest = _request_digest(self.kind, request, self.descriptor.model_id)
        h, w = request.height, request.width

        rng = np.random.default_rng(seed_from_digest(req_digest))
        img = rng.random((h, w, 3)) * 255.0
        img = ndimage.uniform_filter(img, size=(9, 9, 1), mode="wrap")

        # prompt-colored silhouette so different prompts are tellable apart
        color = np.frombuffer(
            bytes.fromhex(sha256_bytes(request.prompt.encode())[:6]), dtype=np.uint8
        ).astype(float)
        yy, xx = np.mgrid[0:h, 0:w]
        cx, cy = w / 2.0, h * 0.55
        blob = ((xx - cx) / (0.38 * w)) ** 2 + ((yy - cy) / (0.22 * h)) ** 2 < 1.0
        img[blob] = 0.65 * color + 0.35 * img[blob]

        if request.condition_image is not None:
            cond = as_raster(request.condition_image)
            if cond.ndim == 3:
                cond = cond[:, :, 0]
            if cond.shape != (h, w):
                scaled = np.zeros((h, w), dtype=bool)
                ch, cw = cond.shape
                scaled[:min(h, ch), :min(w, cw)] = cond[:min(h, ch), :min(w, cw)] > 127
                edge_mask = scaled
            else:
                edge_mask = cond > 127
            img[edge_mask] *= 0.25

        if request.init_image is not None:
            init = as_raster(request.init_image)
            if init.ndim == 2:
                init = np.stack([init] * 3, axis=-1)
            qh, qw = h // 2, w // 2
            if init.shape[:2] == (qh, qw):
                img[:qh, :qw] = init
            else:
                img[:min(qh, init.shape[0]), :min(qw, init.shape[1])] = init[
                    :min(qh, init.shape[0]), :min(qw, init.shape[1])
                ]

        out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        _record(
            self.trace, self.kind, "generate", req_digest, sha256_array(out), t0
        )
        return out


class StubEmbedBackend(EmbedBackend):
    """Seeded pseudorandom projection of the content bytes; unit norm."""

    kind = "embed"

    def __init__(
        self,
        descriptor: Optional[BackendDescriptor] = None,
        dim: int = DEFAULT_EMBED_DIM,
        trace: Optional[TraceLog] = None,
    ):
        self.descriptor = descriptor or BackendDescriptor(kind="embed")
        self.dim = dim
        self.trace = trace

    def _vector(self, tag: str, digest: str, modality: str) -> EmbeddingVector:
        rng = np.random.default_rng(
            seed_from_digest(sha256_bytes(tag.encode(), digest.encode()))
        )
        values = rng.standard_normal(self.dim)
        values /= np.linalg.norm(values)
        return EmbeddingVector(values=values, modality=modality)

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        t0 = time.monotonic()
        digest = raster_digest(image)
        vec = self._vector("image", digest, "image")
        _record(
            self.trace, "embed", "embed",
            sha256_json({"modality": "image", "content": digest}),
            sha256_array(vec.values), t0,
        )
        return vec

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("text must be non-empty")
        t0 = time.monotonic()
        digest = sha256_bytes(text.encode("utf-8"))
        vec = self._vector("text", digest, "text")
        _record(
            self.trace, "embed", "embed",
            sha256_json({"modality": "text", "content": digest}),
            sha256_array(vec.values), t0,
        )
        return vec

    def embed_multimodal(self, image: np.ndarray, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("text must be non-empty")
        t0 = time.monotonic()
        digest = sha256_bytes(raster_digest(image).encode(), text.encode("utf-8"))
        vec = self._vector("multimodal", digest, "multimodal")
        _record(
            self.trace, "embed", "embed",
            sha256_json({"modality": "multimodal", "content": digest}),
            sha256_array(vec.values), t0,
        )
        return vec


class StubSegmentBackend(SegmentBackend):
    """Largest connected component of non-background color.

    Background is estimated as the most common color on the image border,
    which matches how the synthetic fixtures are drawn.
    """

    kind = "segment"

    def __init__(
        self,
        descriptor: Optional[BackendDescriptor] = None,
        trace: Optional[TraceLog] = None,
    ):
        self.descriptor = descriptor or BackendDescriptor(kind="segment")
        self.trace = trace

    def segment_foreground(self, image: np.ndarray) -> SegmentationResult:
        t0 = time.monotonic()
        arr = as_raster(image)
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        border = np.concatenate(
            [arr[0, :], arr[-1, :], arr[:, 0], arr[:, -1]], axis=0
        )
        colors, counts = np.unique(border.reshape(-1, 3), axis=0, return_counts=True)
        background = colors[np.argmax(counts)]

        foreground = np.any(arr != background[None, None, :], axis=2)
        mask = np.zeros(arr.shape[:2], dtype=np.uint8)
        is_empty = True
        if foreground.any():
            labels, n_labels = ndimage.label(foreground)
            sizes = ndimage.sum_labels(foreground, labels, index=range(1, n_labels + 1))
            largest = 1 + int(np.argmax(sizes))
            mask[labels == largest] = 1
            is_empty = False

        _record(
            self.trace, "segment", "segment_foreground",
            sha256_json({"image": raster_digest(arr)}), sha256_array(mask), t0,
        )
        return SegmentationResult(mask=mask, is_empty=is_empty)


def make_stub_backend(
    descriptor: BackendDescriptor, trace: Optional[TraceLog] = None
):
    """Instantiate the stub implementation for a descriptor."""
    if descriptor.endpoint != STUB_ENDPOINT:
        raise ValueError(f"descriptor endpoint is not {STUB_ENDPOINT!r}")
    if descriptor.kind == "vqa":
        return StubVQABackend(descriptor, trace=trace)
    if descriptor.kind in ("text2image", "image2image", "edge2image"):
        return StubGenerationBackend(descriptor.kind, descriptor, trace=trace)
    if descriptor.kind == "embed":
        return StubEmbedBackend(descriptor, trace=trace)
    if descriptor.kind == "segment":
        return StubSegmentBackend(descriptor, trace=trace)
    raise ValueError(f"no stub for backend kind {descriptor.kind!r}")
