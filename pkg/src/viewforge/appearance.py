"""Edge-conditioned appearance generation and asset bundle export.

Each structure view is reduced to its Canny edges, and the edge map plus
the description prompt plus the subject embedding drive one edge2image
call per view. The 16 photoreal views, their edge maps, camera poses,
prompt, and full provenance form the exported asset bundle.
"""

from __future__ import annotations

import json
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .backends import resolve_backend
from .backends.base import (
    BackendDescriptor,
    EmbeddingVector,
    GenerationRequest,
)
from .backends.trace import TraceLog
from .edges import DEFAULT_HIGH, DEFAULT_LOW, DEFAULT_SIGMA, EdgeMap, canny
from .errors import BackendError, ExportError, GenerationError, ValidationError
from .geometry import CameraRing
from .images import as_raster, load_png, load_png_gray, raster_digest, save_png
from .structure import StructureViews
from .vqa import VehiclePrompt

POSES_FILE = "poses.json"
PROMPT_FILE = "prompt.json"
PROVENANCE_FILE = "provenance.json"


def view_file_name(i: int) -> str:
    return f"view_{i:02d}.png"


def edge_file_name(i: int) -> str:
    return f"edge_{i:02d}.png"


@dataclass(frozen=True)
class AssetBundle:
    """The final artifact: posed photoreal views with edges and provenance.

    ``structure`` is carried in memory but not exported; a bundle loaded
    from disk has ``structure=None`` while all digest-bearing fields
    round-trip exactly.
    """

    views: Tuple[np.ndarray, ...]
    edge_maps: Tuple[EdgeMap, ...]
    ring: CameraRing
    prompt: VehiclePrompt
    subject_digest: str
    provenance: dict
    structure: Optional[StructureViews] = None

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "edge_maps", tuple(self.edge_maps))
        n = self.ring.n_views
        if len(self.views) != n or len(self.edge_maps) != n:
            raise ValueError(
                f"{len(self.views)} views / {len(self.edge_maps)} edge maps "
                f"for a {n}-view ring"
            )
        for i, (v, e) in enumerate(zip(self.views, self.edge_maps)):
            if v.shape[:2] != e.raster.shape[:2]:
                raise ValueError(f"view {i}: edge map resolution mismatch")

    @property
    def warnings(self) -> Tuple[str, ...]:
        return tuple(self.provenance.get("warnings", ()))


def bundle_digest(bundle: AssetBundle) -> str:
    """Digest over every replay-stable field of a bundle."""
    from .digests import sha256_json

    return sha256_json({
        "views": [raster_digest(v) for v in bundle.views],
        "edges": [raster_digest(e.raster) for e in bundle.edge_maps],
        "poses": bundle.ring.to_list(),
        "prompt": bundle.prompt.to_dict(),
        "subject": bundle.subject_digest,
        "provenance": bundle.provenance,
    })


def render_appearance(
    structure: StructureViews,
    subject: EmbeddingVector,
    prompt: VehiclePrompt,
    seed: int,
    edge2image: BackendDescriptor,
    sigma: float = DEFAULT_SIGMA,
    low: float = DEFAULT_LOW,
    high: float = DEFAULT_HIGH,
    trace: Optional[TraceLog] = None,
    backend_for: Optional[Callable[[BackendDescriptor], object]] = None,
    allow_partial: bool = False,
    extra_provenance: Optional[dict] = None,
) -> AssetBundle:
    """One edge2image call per structure view, seed + i for view i.

    The per-view calls are mutually independent and could fan out; the
    bundle assembly below is the join point. A failed view raises unless
    ``allow_partial``, in which case the slot is black and the index is
    recorded in provenance["failed_views"].
    """
    norm = float(np.linalg.norm(subject.values))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"subject embedding must be unit-norm, got {norm}")
    if backend_for is None:
        backend_for = lambda d: resolve_backend(d, trace=trace)
    backend = backend_for(edge2image)

    views: List[np.ndarray] = []
    edge_maps: List[EdgeMap] = []
    per_view = []
    failed = []
    ctx = trace.stage("appearance") if trace is not None else nullcontext()
    with ctx:
        for i, structure_view in enumerate(structure.views):
            edge = canny(structure_view, sigma=sigma, low=low, high=high)
            edge_maps.append(edge)
            h, w = structure_view.shape[:2]
            try:
                out = backend.generate(
                    GenerationRequest(
                        prompt=prompt.answer,
                        seed=seed + i,
                        condition_image=edge.raster,
                        subject_embedding=subject.values,
                        width=w,
                        height=h,
                    )
                )
            except BackendError as exc:
                if not allow_partial:
                    raise GenerationError(
                        f"view {i} failed: {exc}",
                        stage="appearance",
                        failed_indices=[i],
                    ) from exc
                failed.append(i)
                out = np.zeros_like(as_raster(structure_view))
            views.append(out)
            per_view.append({
                "view": i,
                "seed": seed + i,
                "edge_digest": raster_digest(edge.raster),
                "structure_view_digest": raster_digest(as_raster(structure_view)),
                "view_digest": raster_digest(out),
            })

    provenance = {
        "edge2image": edge2image.to_dict(),
        "canny_params": {"sigma": sigma, "low": low, "high": high},
        "seeds": {"appearance": seed},
        "subject_digest": subject_digest_of(subject),
        "per_view": per_view,
        "structure_provenance": [dict(p) for p in structure.provenance],
        "anchor_consistency": list(structure.anchor_consistency),
        "warnings": list(structure.warnings),
        "failed_views": failed,
    }
    if extra_provenance:
        provenance.update(extra_provenance)
    if trace is not None:
        provenance["trace_digest"] = trace.content_digest()

    return AssetBundle(
        views=tuple(views),
        edge_maps=tuple(edge_maps),
        ring=structure.ring,
        prompt=prompt,
        subject_digest=provenance["subject_digest"],
        provenance=provenance,
        structure=structure,
    )


def subject_digest_of(subject: EmbeddingVector) -> str:
    from .digests import sha256_array

    return sha256_array(subject.values)


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def export_bundle(bundle: AssetBundle, out_dir) -> Path:
    """Write the bundle directory: per-view PNG pairs plus 3 JSON files."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, (view, edge) in enumerate(zip(bundle.views, bundle.edge_maps)):
            save_png(out_dir / view_file_name(i), view)
            save_png(out_dir / edge_file_name(i), edge.raster)
        _write_json(out_dir / POSES_FILE, {
            "n_views": bundle.ring.n_views,
            "start_azimuth_deg": bundle.ring.start_azimuth_deg,
            "poses": bundle.ring.to_list(),
        })
        _write_json(out_dir / PROMPT_FILE, bundle.prompt.to_dict())
        _write_json(out_dir / PROVENANCE_FILE, bundle.provenance)
    except OSError as exc:
        raise ExportError(f"cannot export bundle to {out_dir}: {exc}") from exc
    return out_dir


def validate_bundle_dir(bundle_dir) -> List[str]:
    """Names of the pieces missing from a bundle directory."""
    bundle_dir = Path(bundle_dir)
    missing = []
    for name in (POSES_FILE, PROMPT_FILE, PROVENANCE_FILE):
        if not (bundle_dir / name).exists():
            missing.append(name)
    n_views = None
    poses_path = bundle_dir / POSES_FILE
    if poses_path.exists():
        try:
            n_views = int(json.loads(poses_path.read_text("utf-8"))["n_views"])
        except (ValueError, KeyError):
            missing.append(f"{POSES_FILE} (unreadable)")
    if n_views is not None:
        for i in range(n_views):
            for name in (view_file_name(i), edge_file_name(i)):
                if not (bundle_dir / name).exists():
                    missing.append(name)
    return missing


def load_bundle(bundle_dir) -> AssetBundle:
    bundle_dir = Path(bundle_dir)
    missing = validate_bundle_dir(bundle_dir)
    if missing:
        raise ValidationError(
            f"invalid bundle at {bundle_dir}: missing {', '.join(missing)}"
        )
    poses = json.loads((bundle_dir / POSES_FILE).read_text("utf-8"))
    ring = CameraRing.from_list(poses["poses"])
    prompt = VehiclePrompt.from_dict(
        json.loads((bundle_dir / PROMPT_FILE).read_text("utf-8"))
    )
    provenance = json.loads((bundle_dir / PROVENANCE_FILE).read_text("utf-8"))
    cp = provenance.get("canny_params", {})
    params = (
        cp.get("sigma", DEFAULT_SIGMA),
        cp.get("low", DEFAULT_LOW),
        cp.get("high", DEFAULT_HIGH),
    )
    views = tuple(
        load_png(bundle_dir / view_file_name(i)) for i in range(ring.n_views)
    )
    edge_maps = tuple(
        EdgeMap(raster=load_png_gray(bundle_dir / edge_file_name(i)),
                params=params)
        for i in range(ring.n_views)
    )
    return AssetBundle(
        views=views,
        edge_maps=edge_maps,
        ring=ring,
        prompt=prompt,
        subject_digest=provenance.get("subject_digest", ""),
        provenance=provenance,
        structure=None,
    )
