"""viewforge: single vehicle photograph -> pose-controlled multi-view asset.

The pipeline extracts a vehicle description from the photo (VQA), turns
it into 16 structure views around a camera ring (one anchor expert plus
four neighbor experts emitting 2x2 view grids), then renders photoreal
appearance per view via Canny-edge-conditioned generation steered by a
subject embedding. Heavy model inference sits behind pluggable backends;
the packaged stubs are deterministic, so the whole pipeline replays
bit-for-bit without a GPU.
"""

from .appearance import (
    AssetBundle,
    bundle_digest,
    export_bundle,
    load_bundle,
    render_appearance,
)
from .backends import (
    BackendDescriptor,
    EmbeddingVector,
    GenerationRequest,
    SegmentationResult,
    TraceLog,
    resolve_backend,
)
from .cache import CacheEntry, CacheIndex
from .config import PipelineConfig, stub_config
from .edges import EdgeMap, canny
from .errors import (
    BackendError,
    BackendTimeoutError,
    BackendUnavailableError,
    ConfigError,
    DegenerateGeometryError,
    EmptyAnswerError,
    ExportError,
    GenerationError,
    IncompleteInstanceError,
    NumericalFailureError,
    PipelineError,
    TrainingFailedError,
    ValidationError,
)
from .evalsuite import (
    EvalReport,
    FeatureSet,
    clip_similarity,
    evaluate_bundle,
    fid,
    itc_score,
    load_fixtures,
    txt2txt_score,
    vqa_score,
)
from .geometry import (
    CameraPose,
    CameraRing,
    NormalizationTransform,
    RenderManifest,
    build_manifest,
    camera_ring,
    load_manifest,
    look_at_extrinsic,
    normalize_to_cube,
)
from .gridcodec import (
    ExpertAssignment,
    ViewGrid,
    expert_assignment,
    split,
    split_quadrants,
    tile,
)
from .pipeline import (
    run_audit,
    run_build_dataset,
    run_evaluate,
    run_generate,
    run_train_experts,
)
from .structure import (
    ExpertSet,
    StructureViews,
    TrainingConfig,
    build_training_pairs,
    generate_structures,
    generate_structures_single,
    load_expert_set,
    save_expert_set,
    stub_expert_set,
    train_experts,
)
from .vqa import (
    CANONICAL_QUESTION,
    QuestionTemplateBank,
    VehiclePrompt,
    extract_description,
    make_scorer,
    refine_question,
    subject_embedding,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # geometry
    "CameraPose", "CameraRing", "NormalizationTransform", "RenderManifest",
    "camera_ring", "look_at_extrinsic", "normalize_to_cube",
    "build_manifest", "load_manifest",
    # grid codec
    "ViewGrid", "ExpertAssignment", "tile", "split", "split_quadrants",
    "expert_assignment",
    # backends
    "BackendDescriptor", "GenerationRequest", "EmbeddingVector",
    "SegmentationResult", "TraceLog", "resolve_backend",
    # vqa
    "CANONICAL_QUESTION", "VehiclePrompt", "QuestionTemplateBank",
    "extract_description", "refine_question", "make_scorer",
    "subject_embedding",
    # structure
    "TrainingConfig", "ExpertSet", "StructureViews", "build_training_pairs",
    "train_experts", "generate_structures", "generate_structures_single",
    "stub_expert_set", "save_expert_set", "load_expert_set",
    # appearance
    "EdgeMap", "canny", "AssetBundle", "render_appearance", "export_bundle",
    "load_bundle", "bundle_digest",
    # evaluation
    "FeatureSet", "EvalReport", "fid", "clip_similarity", "itc_score",
    "vqa_score", "txt2txt_score", "evaluate_bundle", "load_fixtures",
    # pipeline
    "PipelineConfig", "stub_config", "CacheIndex", "CacheEntry",
    "run_generate", "run_evaluate", "run_build_dataset", "run_train_experts",
    "run_audit",
    # errors
    "PipelineError", "ConfigError", "BackendError", "BackendUnavailableError",
    "BackendTimeoutError", "ValidationError", "DegenerateGeometryError",
    "EmptyAnswerError", "IncompleteInstanceError", "TrainingFailedError",
    "GenerationError", "ExportError", "NumericalFailureError",
]
