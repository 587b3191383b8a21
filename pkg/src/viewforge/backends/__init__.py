"""Pluggable model backends: deterministic stubs and HTTP service clients."""

from .base import (
    DEFAULT_GUIDANCE,
    DEFAULT_STEPS,
    DEFAULT_TIMEOUT_S,
    GENERATION_KINDS,
    KINDS,
    SEED_POLICIES,
    STUB_ENDPOINT,
    BackendDescriptor,
    EmbedBackend,
    EmbeddingVector,
    GenerationBackend,
    GenerationRequest,
    SegmentBackend,
    SegmentationResult,
    VQABackend,
)
from .http import apply_env_overrides, make_http_backend
from .stub import (
    DEFAULT_EMBED_DIM,
    StubEmbedBackend,
    StubGenerationBackend,
    StubSegmentBackend,
    StubVQABackend,
    make_stub_backend,
)
from .trace import TraceLog


def resolve_backend(descriptor: BackendDescriptor, trace: TraceLog | None = None):
    """Instantiate the backend a descriptor names.

    Environment overrides are applied first, so a config that says "stub"
    can be pointed at a live service without editing files (and vice versa).
    """
    descriptor = apply_env_overrides(descriptor)
    if descriptor.is_stub:
        return make_stub_backend(descriptor, trace=trace)
    return make_http_backend(descriptor, trace=trace)


__all__ = [
    "KINDS",
    "GENERATION_KINDS",
    "SEED_POLICIES",
    "STUB_ENDPOINT",
    "DEFAULT_STEPS",
    "DEFAULT_GUIDANCE",
    "DEFAULT_TIMEOUT_S",
    "DEFAULT_EMBED_DIM",
    "BackendDescriptor",
    "GenerationRequest",
    "EmbeddingVector",
    "SegmentationResult",
    "VQABackend",
    "GenerationBackend",
    "EmbedBackend",
    "SegmentBackend",
    "TraceLog",
    "StubVQABackend",
    "StubGenerationBackend",
    "StubEmbedBackend",
    "StubSegmentBackend",
    "make_stub_backend",
    "make_http_backend",
    "apply_env_overrides",
    "resolve_backend",
]
