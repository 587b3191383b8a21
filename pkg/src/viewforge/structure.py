"""Multi-expert structure generation.

One text-to-grid anchor expert produces the 4 anchor views in a single
2x2 grid; four image-to-grid neighbor experts each expand one anchor into
its 4-view azimuth block. The module also builds the training-pair
datasets those experts are fine-tuned on and the job plumbing that
submits the 5 fine-tunes.
"""

from __future__ import annotations

import json
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import requests

from .backends import resolve_backend
from .backends.base import (
    STUB_ENDPOINT,
    BackendDescriptor,
    EmbedBackend,
    GenerationRequest,
)
from .backends.trace import TraceLog
from .digests import sha256_file, sha256_json
from .errors import (
    BackendError,
    BackendUnavailableError,
    GenerationError,
    IncompleteInstanceError,
    TrainingFailedError,
)
from .geometry import CameraRing, camera_ring, load_manifest
from .gridcodec import (
    ExpertAssignment,
    anchor_grid_name,
    expert_assignment,
    expert_grid_name,
    split_quadrants,
    split_square,
    tile,
)
from .images import load_png, save_png
from .vqa import VehiclePrompt, load_prompt, prompt_file_name

DEFAULT_CONSISTENCY_THRESHOLD = 0.85
DEFAULT_ELEVATION_DEG = 5.0
DEFAULT_RADIUS = 1.5

ANCHOR_EXPERT_ID = "anchor"


def neighbor_expert_id(ordinal: int) -> str:
    return f"neighbor{ordinal}"


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters recorded into every expert's provenance."""

    epochs: int = 50
    learning_rate: float = 1e-5
    batch_size: int = 1
    optimizer_name: str = "adam"
    base_model_id: str = "sd-2.1-base"

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.optimizer_name:
            raise ValueError("optimizer_name must be non-empty")
        if not self.base_model_id:
            raise ValueError("base_model_id must be non-empty")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "optimizer_name": self.optimizer_name,
            "base_model_id": self.base_model_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(
            epochs=int(d["epochs"]),
            learning_rate=float(d["learning_rate"]),
            batch_size=int(d["batch_size"]),
            optimizer_name=d["optimizer_name"],
            base_model_id=d["base_model_id"],
        )


@dataclass(frozen=True)
class ExpertSet:
    """The 1 + 4 trained experts with their provenance.

    ``neighbor_experts[k]`` is bound to ``assignment.anchor_indices[k]``.
    """

    anchor_expert: BackendDescriptor
    neighbor_experts: Tuple[BackendDescriptor, ...]
    assignment: ExpertAssignment
    training_config: TrainingConfig
    dataset_digests: Dict[str, str] = field(default_factory=dict)
    job_records: Tuple[dict, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "neighbor_experts", tuple(self.neighbor_experts))
        object.__setattr__(self, "job_records", tuple(self.job_records))
        n_anchors = len(self.assignment.anchor_indices)
        if len(self.neighbor_experts) != n_anchors:
            raise ValueError(
                f"{len(self.neighbor_experts)} neighbor experts for "
                f"{n_anchors} anchors"
            )

    def to_dict(self) -> dict:
        return {
            "anchor_expert": self.anchor_expert.to_dict(),
            "neighbor_experts": [d.to_dict() for d in self.neighbor_experts],
            "assignment": self.assignment.to_dict(),
            "training_config": self.training_config.to_dict(),
            "dataset_digests": dict(self.dataset_digests),
            "job_records": [dict(r) for r in self.job_records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertSet":
        return cls(
            anchor_expert=BackendDescriptor.from_dict(d["anchor_expert"]),
            neighbor_experts=tuple(
                BackendDescriptor.from_dict(x) for x in d["neighbor_experts"]
            ),
            assignment=ExpertAssignment.from_dict(d["assignment"]),
            training_config=TrainingConfig.from_dict(d["training_config"]),
            dataset_digests=dict(d.get("dataset_digests", {})),
            job_records=tuple(d.get("job_records", ())),
        )


def save_expert_set(experts: ExpertSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(experts.to_dict(), fh, indent=2, sort_keys=True,
                  ensure_ascii=False)
        fh.write("\n")
    return path


def load_expert_set(path) -> ExpertSet:
    with open(path, "r", encoding="utf-8") as fh:
        return ExpertSet.from_dict(json.load(fh))


def stub_expert_set(
    assignment: Optional[ExpertAssignment] = None,
    training_config: Optional[TrainingConfig] = None,
) -> ExpertSet:
    """Untrained all-stub expert set, for desk-scale runs and tests."""
    assignment = assignment or expert_assignment(16, 4)
    training_config = training_config or TrainingConfig()
    anchor = BackendDescriptor(
        kind="text2image", endpoint=STUB_ENDPOINT, model_id="stub-anchor"
    )
    neighbors = tuple(
        BackendDescriptor(
            kind="image2image",
            endpoint=STUB_ENDPOINT,
            model_id=f"stub-{neighbor_expert_id(k)}",
        )
        for k in range(len(assignment.anchor_indices))
    )
    return ExpertSet(
        anchor_expert=anchor,
        neighbor_experts=neighbors,
        assignment=assignment,
        training_config=training_config,
    )


@dataclass(frozen=True)
class StructureViews:
    """Ordered structure renders for one asset, with per-view provenance."""

    views: Tuple[np.ndarray, ...]
    ring: CameraRing
    prompt: VehiclePrompt
    anchor_consistency: Tuple[float, ...]
    provenance: Tuple[dict, ...]
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "anchor_consistency",
                           tuple(float(c) for c in self.anchor_consistency))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        if len(self.views) != self.ring.n_views:
            raise ValueError(
                f"{len(self.views)} views for a {self.ring.n_views}-view ring"
            )
        if len(self.provenance) != len(self.views):
            raise ValueError("provenance must cover every view")


@dataclass(frozen=True)
class DatasetManifests:
    """Paths of the emitted training-pair manifests (JSON-lines)."""

    root: Path
    anchor_manifest: Path
    neighbor_manifests: Tuple[Path, ...]
    assignment: ExpertAssignment
    n_instances: int

    @property
    def expert_ids(self) -> Tuple[str, ...]:
        return (ANCHOR_EXPERT_ID,) + tuple(
            neighbor_expert_id(k) for k in range(len(self.neighbor_manifests))
        )

    def manifest_for(self, expert_id: str) -> Path:
        if expert_id == ANCHOR_EXPERT_ID:
            return self.anchor_manifest
        k = int(expert_id[len("neighbor"):])
        return self.neighbor_manifests[k]


def _load_instance_views(instance_dir: Path, instance_id: str) -> List[np.ndarray]:
    manifest = load_manifest(instance_dir / "manifest.json")
    missing = [n for n in manifest.outputs if not (instance_dir / n).exists()]
    prompt_name = prompt_file_name(instance_id)
    if not (instance_dir / prompt_name).exists():
        missing.append(prompt_name)
    if missing:
        raise IncompleteInstanceError(instance_id, missing)
    views = []
    for name in manifest.outputs:
        try:
            views.append(load_png(instance_dir / name))
        except Exception as exc:
            raise IncompleteInstanceError(
                instance_id, [f"{name} (unreadable: {exc})"]
            ) from exc
    return views


def build_training_pairs(
    render_root,
    assignment: ExpertAssignment,
    out_dir,
) -> DatasetManifests:
    """Turn rendered instances into the 5 expert training datasets.

    Every instance directory under ``render_root`` (identified by its
    manifest.json) contributes one (prompt, anchor-grid) pair and one
    (anchor view, neighbor-grid) pair per anchor. Grid PNGs land in
    ``out_dir/grids``; manifests are JSON-lines files in ``out_dir``.
    """
    render_root = Path(render_root)
    out_dir = Path(out_dir)
    grids_dir = out_dir / "grids"
    grids_dir.mkdir(parents=True, exist_ok=True)

    instance_dirs = sorted(
        d for d in render_root.iterdir()
        if d.is_dir() and (d / "manifest.json").exists()
    )
    if not instance_dirs:
        raise IncompleteInstanceError("<corpus>", ["no instances in render root"])

    n_anchors = len(assignment.anchor_indices)
    anchor_records = []
    neighbor_records: List[list] = [[] for _ in range(n_anchors)]

    for instance_dir in instance_dirs:
        instance_id = instance_dir.name
        views = _load_instance_views(instance_dir, instance_id)
        prompt = load_prompt(instance_dir / prompt_file_name(instance_id))

        grid = tile([views[i] for i in assignment.anchor_indices],
                    assignment.anchor_indices)
        anchor_path = grids_dir / anchor_grid_name(instance_id)
        save_png(anchor_path, grid.image)
        anchor_records.append({
            "prompt": prompt.answer,
            "target_grid_path": str(anchor_path.relative_to(out_dir)),
            "expert_id": ANCHOR_EXPERT_ID,
        })

        for k, anchor_idx in enumerate(assignment.anchor_indices):
            block = assignment.neighbor_map[anchor_idx]
            grid = tile([views[i] for i in block], block)
            grid_path = grids_dir / expert_grid_name(instance_id, k)
            save_png(grid_path, grid.image)
            neighbor_records[k].append({
                "anchor_path": str(
                    (instance_dir / f"view_{anchor_idx:02d}.png").resolve()
                ),
                "target_grid_path": str(grid_path.relative_to(out_dir)),
                "expert_id": neighbor_expert_id(k),
            })

    def write_jsonl(path: Path, records: list) -> Path:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False))
                fh.write("\n")
        return path

    anchor_manifest = write_jsonl(out_dir / "anchor_pairs.jsonl", anchor_records)
    neighbor_manifests = tuple(
        write_jsonl(out_dir / f"{neighbor_expert_id(k)}_pairs.jsonl",
                    neighbor_records[k])
        for k in range(n_anchors)
    )
    return DatasetManifests(
        root=out_dir,
        anchor_manifest=anchor_manifest,
        neighbor_manifests=neighbor_manifests,
        assignment=assignment,
        n_instances=len(instance_dirs),
    )


def dataset_digest(manifests: DatasetManifests, expert_id: str) -> str:
    """Content digest of one expert's dataset.

    Path fields are replaced by digests of the referenced files, so the
    digest tracks content, not directory layout.
    """
    manifest_path = manifests.manifest_for(expert_id)
    entries = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = dict(json.loads(line))
            for key in ("target_grid_path", "anchor_path"):
                if key in rec:
                    p = Path(rec[key])
                    if not p.is_absolute():
                        p = manifests.root / p
                    rec[key] = sha256_file(p)
            entries.append(rec)
    return sha256_json(entries)


def _expert_kind(expert_id: str) -> str:
    return "text2image" if expert_id == ANCHOR_EXPERT_ID else "image2image"


def train_experts(
    manifests: DatasetManifests,
    config: Optional[TrainingConfig] = None,
    endpoint: str = STUB_ENDPOINT,
    timeout_s: float = 600.0,
) -> ExpertSet:
    """Submit the 5 fine-tune jobs and return the trained expert set.

    Stub mode records the jobs and mints deterministic descriptors whose
    model ids embed the dataset digest; a real endpoint receives one
    blocking POST ``{endpoint}/train`` per job.
    """
    config = config or TrainingConfig()
    digests = {eid: dataset_digest(manifests, eid) for eid in manifests.expert_ids}

    descriptors = {}
    job_records = []
    for expert_id in manifests.expert_ids:
        job = {
            "expert_id": expert_id,
            "dataset_digest": digests[expert_id],
            "training_config": config.to_dict(),
        }
        if endpoint == STUB_ENDPOINT:
            model_id = f"{expert_id}-{digests[expert_id][:12]}"
            job["status"] = "succeeded"
            descriptors[expert_id] = BackendDescriptor(
                kind=_expert_kind(expert_id),
                endpoint=STUB_ENDPOINT,
                model_id=model_id,
            )
        else:
            try:
                resp = requests.post(
                    endpoint.rstrip("/") + "/train", json=job, timeout=timeout_s
                )
            except requests.ConnectionError as exc:
                raise BackendUnavailableError(
                    f"training service unreachable at {endpoint}: {exc}",
                    kind="training",
                ) from exc
            if resp.status_code >= 400:
                raise BackendError(
                    f"training service HTTP {resp.status_code}", kind="training"
                )
            body = resp.json()
            job["status"] = body.get("status", "failed")
            if job["status"] != "succeeded":
                raise TrainingFailedError(
                    f"fine-tune job {expert_id!r} failed",
                    job_log=body.get("log"),
                )
            descriptors[expert_id] = BackendDescriptor(
                kind=_expert_kind(expert_id),
                endpoint=body.get("endpoint", endpoint),
                model_id=body["model_id"],
            )
        job_records.append(job)

    n_anchors = len(manifests.assignment.anchor_indices)
    return ExpertSet(
        anchor_expert=descriptors[ANCHOR_EXPERT_ID],
        neighbor_experts=tuple(
            descriptors[neighbor_expert_id(k)] for k in range(n_anchors)
        ),
        assignment=manifests.assignment,
        training_config=config,
        dataset_digests=digests,
        job_records=tuple(job_records),
    )


def generate_structures(
    prompt: VehiclePrompt,
    experts: ExpertSet,
    seed: int,
    embed: EmbedBackend,
    ring: Optional[CameraRing] = None,
    consistency_threshold: float = DEFAULT_CONSISTENCY_THRESHOLD,
    trace: Optional[TraceLog] = None,
    backend_for: Optional[Callable[[BackendDescriptor], object]] = None,
) -> StructureViews:
    """Run the 1 + 4 expert scheme for one asset.

    Anchors in the final view list are the neighbor experts' quadrant-0
    regenerations, not the anchor-grid quadrants; the anchor grid only
    conditions the neighbor calls. Per-call seeds are seed + expert
    ordinal, so each of the 5 calls is replayable in isolation. The four
    neighbor calls are independent of each other and could fan out.
    """
    if not prompt.answer.strip():
        raise ValueError("prompt answer is empty")
    assignment = experts.assignment
    ring = ring or camera_ring(assignment.n_views, DEFAULT_ELEVATION_DEG,
                               DEFAULT_RADIUS)
    if ring.n_views != assignment.n_views:
        raise ValueError(
            f"ring has {ring.n_views} views, assignment expects "
            f"{assignment.n_views}"
        )
    if backend_for is None:
        backend_for = lambda d: resolve_backend(d, trace=trace)

    ctx = trace.stage("structure") if trace is not None else nullcontext()
    with ctx:
        anchor_backend = backend_for(experts.anchor_expert)
        try:
            anchor_grid = anchor_backend.generate(
                GenerationRequest(prompt=prompt.answer, seed=seed)
            )
        except BackendError as exc:
            raise GenerationError(
                f"anchor grid generation failed: {exc}", stage="structure.anchor"
            ) from exc
        anchor_views = split_quadrants(anchor_grid)

        n = assignment.n_views
        views: List[Optional[np.ndarray]] = [None] * n
        provenance: List[Optional[dict]] = [None] * n
        consistency = []
        for k, anchor_idx in enumerate(assignment.anchor_indices):
            neighbor = backend_for(experts.neighbor_experts[k])
            call_seed = seed + 1 + k
            try:
                block_grid = neighbor.generate(
                    GenerationRequest(
                        prompt=prompt.answer,
                        seed=call_seed,
                        init_image=anchor_views[k],
                    )
                )
            except BackendError as exc:
                raise GenerationError(
                    f"neighbor expert {k} failed: {exc}",
                    stage=f"structure.neighbor{k}",
                    failed_indices=list(assignment.neighbor_map[anchor_idx]),
                ) from exc
            quads = split_quadrants(block_grid)
            for q, view_idx in enumerate(assignment.neighbor_map[anchor_idx]):
                views[view_idx] = quads[q]
                provenance[view_idx] = {
                    "view": view_idx,
                    "expert": k,
                    "quadrant": q,
                    "seed": call_seed,
                }
            consistency.append(
                embed.embed_image(anchor_views[k]).cosine(
                    embed.embed_image(quads[0])
                )
            )

    warnings = tuple(
        f"anchor-consistency: expert {k} scored {c:.4f}, "
        f"below threshold {consistency_threshold}"
        for k, c in enumerate(consistency)
        if c < consistency_threshold
    )
    return StructureViews(
        views=tuple(views),
        ring=ring,
        prompt=prompt,
        anchor_consistency=tuple(consistency),
        provenance=tuple(provenance),
        warnings=warnings,
    )


def generate_structures_single(
    prompt: VehiclePrompt,
    descriptor: BackendDescriptor,
    seed: int,
    grid_size: int = 4,
    sub_size: int = 256,
    ring: Optional[CameraRing] = None,
    trace: Optional[TraceLog] = None,
    backend_for: Optional[Callable[[BackendDescriptor], object]] = None,
) -> StructureViews:
    """Single-DM ablation: all views from one text-to-grid call.

    A grid_size x grid_size layout packs grid_size**2 views into one
    image (3 -> 9 views at 768px, 4 -> 16 views at 1024px). No anchors,
    no consistency scores.
    """
    if not prompt.answer.strip():
        raise ValueError("prompt answer is empty")
    n = grid_size * grid_size
    ring = ring or camera_ring(n, DEFAULT_ELEVATION_DEG, DEFAULT_RADIUS)
    if ring.n_views != n:
        raise ValueError(f"ring has {ring.n_views} views, grid packs {n}")
    if backend_for is None:
        backend_for = lambda d: resolve_backend(d, trace=trace)

    ctx = trace.stage("structure") if trace is not None else nullcontext()
    with ctx:
        backend = backend_for(descriptor)
        side = grid_size * sub_size
        try:
            grid_img = backend.generate(
                GenerationRequest(prompt=prompt.answer, seed=seed,
                                  width=side, height=side)
            )
        except BackendError as exc:
            raise GenerationError(
                f"single-DM grid generation failed: {exc}",
                stage="structure.single",
            ) from exc
        views = split_square(grid_img, grid_size)

    provenance = tuple(
        {"view": i, "expert": 0, "cell": i, "seed": seed} for i in range(n)
    )
    return StructureViews(
        views=tuple(views),
        ring=ring,
        prompt=prompt,
        anchor_consistency=(),
        provenance=provenance,
        warnings=(),
    )
