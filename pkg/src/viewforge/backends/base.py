"""Capability interfaces for external model backends.

Every heavy model (VQA, the generation models, segmentation, embedding)
sits behind one of these interfaces. Pipeline code only ever sees the
interfaces, so the whole pipeline runs against the deterministic stubs in
:mod:`viewforge.backends.stub` or against HTTP services via
:mod:`viewforge.backends.http`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = ("vqa", "text2image", "image2image", "edge2image", "segment", "embed")
GENERATION_KINDS = ("text2image", "image2image", "edge2image")
SEED_POLICIES = ("caller", "fixed", "random")

STUB_ENDPOINT = "stub"

DEFAULT_STEPS = 50
DEFAULT_GUIDANCE = 7.5
DEFAULT_TIMEOUT_S = 60.0


@dataclass(frozen=True)
class BackendDescriptor:
    """Where a capability lives and how to call it.

    ``endpoint`` is either the literal "stub" or a service base URL. Stubs
    must be reproducible, so they require seed_policy "caller".
    """

    kind: str
    endpoint: str = STUB_ENDPOINT
    model_id: str = "stub"
    timeout_s: float = DEFAULT_TIMEOUT_S
    seed_policy: str = "caller"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.seed_policy not in SEED_POLICIES:
            raise ValueError(f"unknown seed policy {self.seed_policy!r}")
        if self.endpoint == STUB_ENDPOINT and self.seed_policy != "caller":
            raise ValueError("stub backends require seed_policy='caller'")

    @property
    def is_stub(self) -> bool:
        return self.endpoint == STUB_ENDPOINT

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model_id": self.model_id,
            "timeout_s": self.timeout_s,
            "seed_policy": self.seed_policy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BackendDescriptor":
        return cls(
            kind=data["kind"],
            endpoint=data.get("endpoint", STUB_ENDPOINT),
            model_id=data.get("model_id", "stub"),
            timeout_s=float(data.get("timeout_s", DEFAULT_TIMEOUT_S)),
            seed_policy=data.get("seed_policy", "caller"),
        )


@dataclass(frozen=True)
class GenerationRequest:
    """One generation call. Field requirements depend on the backend kind:
    image2image needs ``init_image``, edge2image needs ``condition_image``.
    """

    prompt: str
    seed: int
    init_image: Optional[np.ndarray] = None
    condition_image: Optional[np.ndarray] = None
    subject_embedding: Optional[np.ndarray] = None
    steps: int = DEFAULT_STEPS
    guidance: float = DEFAULT_GUIDANCE
    width: int = 512
    height: int = 512

    def validate_for(self, kind: str) -> None:
        if kind not in GENERATION_KINDS:
            raise ValueError(f"{kind!r} is not a generation kind")
        if kind == "image2image" and self.init_image is None:
            raise ValueError("image2image requests require init_image")
        if kind == "edge2image" and self.condition_image is None:
            raise ValueError("edge2image requests require condition_image")


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-normalized embedding with its modality and dimension."""

    values: np.ndarray
    modality: str  # image | text | multimodal
    dim: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dim", int(values.shape[0]))
        if values.ndim != 1:
            raise ValueError("embedding must be a flat vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains non-finite entries")
        if self.modality not in ("image", "text", "multimodal"):
            raise ValueError(f"unknown modality {self.modality!r}")

    def cosine(self, other: "EmbeddingVector") -> float:
        denom = np.linalg.norm(self.values) * np.linalg.norm(other.values)
        if denom == 0:
            return 0.0
        return float(np.dot(self.values, other.values) / denom)


@dataclass(frozen=True)
class SegmentationResult:
    """Foreground mask with values in {0, 1}; ``is_empty`` is the
    empty-mask warning flag for all-background inputs."""

    mask: np.ndarray
    is_empty: bool = field(default=False)


class VQABackend:
    """Answers free-form questions about an image."""

    def answer(self, image: np.ndarray, question: str) -> str:
        raise NotImplementedError

    def yes_probability(self, image: np.ndarray, question: str) -> float:
        """Probability in [0, 1] that the answer to a yes/no question is yes."""
        raise NotImplementedError


class GenerationBackend:
    """Produces a raster from a GenerationRequest; ``kind`` is one of the
    generation kinds."""

    kind: str

    def generate(self, request: GenerationRequest) -> np.ndarray:
        raise NotImplementedError


class EmbedBackend:
    """Maps images, texts, or (image, text) pairs into one embedding space."""

    dim: int

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        raise NotImplementedError

    def embed_text(self, text: str) -> EmbeddingVector:
        raise NotImplementedError

    def embed_multimodal(self, image: np.ndarray, text: str) -> EmbeddingVector:
        raise NotImplementedError


class SegmentBackend:
    """Extracts the foreground object mask from an image."""

    def segment_foreground(self, image: np.ndarray) -> SegmentationResult:
        raise NotImplementedError
