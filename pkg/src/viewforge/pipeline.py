"""Staged pipeline orchestration with content-addressed caching.

Stage order for one asset follows the end-to-end flow: description
extraction (optionally refined), structure generation, subject
embedding, appearance rendering, export. Each stage's inputs are
digested into a cache key; a hit loads the stored product and makes no
backend calls. The per-run trace log at ``<cache>/trace.jsonl`` is
truncated on every run, so replaying an unchanged command leaves it
empty.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple


from .appearance import AssetBundle, export_bundle, load_bundle, render_appearance
from .backends import resolve_backend
from .backends.base import GenerationRequest
from .backends.trace import TraceLog
from .cache import CacheIndex
from .config import PipelineConfig
from .digests import sha256_file, sha256_json, tree_digest
from .errors import ValidationError
from .evalsuite import (
    EvalReport,
    append_aggregate,
    evaluate_bundle,
    load_fixtures,
    write_report,
)
from .geometry import CameraRing, build_manifest, camera_ring, load_manifest
from .images import load_png, raster_digest, save_png
from .structure import (
    DatasetManifests,
    ExpertSet,
    StructureViews,
    build_training_pairs,
    generate_structures,
    generate_structures_single,
    load_expert_set,
    save_expert_set,
    stub_expert_set,
    train_experts,
)
from .vqa import (
    QuestionTemplateBank,
    VehiclePrompt,
    extract_description,
    load_prompt,
    make_scorer,
    prompt_file_name,
    refine_question,
    save_prompt,
    subject_embedding,
)

TRACE_FILE = "trace.jsonl"
REPORTS_CSV = "reports.csv"


def _ring(config: PipelineConfig) -> CameraRing:
    r = config.ring
    return camera_ring(r.n_views, r.elevation_deg, r.radius, r.start_azimuth_deg)


def _structure_meta(structure: StructureViews) -> dict:
    return {
        "n_views": structure.ring.n_views,
        "start_azimuth_deg": structure.ring.start_azimuth_deg,
        "poses": structure.ring.to_list(),
        "prompt": structure.prompt.to_dict(),
        "anchor_consistency": list(structure.anchor_consistency),
        "provenance": [dict(p) for p in structure.provenance],
        "warnings": list(structure.warnings),
    }


def _save_structure(structure: StructureViews, out_dir: Path) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, view in enumerate(structure.views):
        p = out_dir / f"structure_{i:02d}.png"
        save_png(p, view)
        paths.append(p)
    meta_path = out_dir / "structure.json"
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(_structure_meta(structure), fh, indent=2, sort_keys=True,
                  ensure_ascii=False)
        fh.write("\n")
    paths.append(meta_path)
    return paths


def _load_structure(entry_dir: Path) -> StructureViews:
    meta = json.loads((entry_dir / "structure.json").read_text(encoding="utf-8"))
    ring = CameraRing.from_list(meta["poses"])
    views = tuple(
        load_png(entry_dir / f"structure_{i:02d}.png")
        for i in range(ring.n_views)
    )
    return StructureViews(
        views=views,
        ring=ring,
        prompt=VehiclePrompt.from_dict(meta["prompt"]),
        anchor_consistency=tuple(meta["anchor_consistency"]),
        provenance=tuple(meta["provenance"]),
        warnings=tuple(meta["warnings"]),
    )


@dataclass
class GenerateResult:
    bundle_dir: Path
    bundle: AssetBundle
    cache_hits: Dict[str, bool]
    warnings: Tuple[str, ...]
    trace: TraceLog


def run_generate(
    config: PipelineConfig,
    image_path,
    seed: Optional[int] = None,
    prompt_override: Optional[str] = None,
    prompt_suffix: Optional[str] = None,
    reference_transform: Optional[str] = None,
    refine: Optional[bool] = None,
    out_dir=None,
) -> GenerateResult:
    """One photograph in, one exported asset bundle out.

    ``prompt_override`` skips VQA entirely (text-only generation);
    ``prompt_suffix`` appends fine-grained words to the extracted answer;
    ``reference_transform`` runs an image-to-image restyle of the input
    before description extraction.
    """
    seed = config.seed if seed is None else int(seed)
    image_path = Path(image_path)
    if not image_path.exists():
        raise ValidationError(f"input image {image_path} does not exist")
    image = load_png(image_path)
    instance_id = image_path.stem

    index = CacheIndex(config.cache_dir)
    trace = TraceLog(config.cache_dir / TRACE_FILE)
    backend_for = lambda d: resolve_backend(d, trace=trace)
    cache_hits: Dict[str, bool] = {}
    extra_warnings: List[str] = []

    # -- optional pre-processing hook ------------------------------------
    if reference_transform:
        tkey = sha256_json({
            "op": "reference_transform",
            "image": raster_digest(image),
            "transform_prompt": reference_transform,
            "seed": seed,
            "backend": config.backends["image2image"].to_dict(),
        })
        entry = index.lookup("prompt", tkey)
        if entry is not None:
            image = load_png(config.cache_dir / entry.paths[0])
        else:
            h, w = image.shape[:2]
            image = backend_for(config.backends["image2image"]).generate(
                GenerationRequest(
                    prompt=reference_transform, seed=seed,
                    init_image=image, width=w, height=h,
                )
            )
            tdir = index.entry_dir("prompt", tkey)
            tdir.mkdir(parents=True, exist_ok=True)
            save_png(tdir / "transformed.png", image)
            index.store("prompt", tkey, [tdir / "transformed.png"])

    # -- prompt stage ----------------------------------------------------
    refinement_active = (
        config.refinement.enabled if refine is None else bool(refine)
    )
    pkey = sha256_json({
        "op": "prompt",
        "image": raster_digest(image),
        "vqa": config.backends["vqa"].to_dict(),
        "prompt_override": prompt_override,
        "prompt_suffix": prompt_suffix,
        "refinement": config.refinement.to_dict() if refinement_active else None,
    })
    entry = index.lookup("prompt", pkey)
    if entry is not None:
        cache_hits["prompt"] = True
        prompt = load_prompt(config.cache_dir / entry.paths[0])
    else:
        cache_hits["prompt"] = False
        if prompt_override is not None:
            prompt = VehiclePrompt.from_text(prompt_override)
        elif refinement_active:
            rp = config.refinement
            bank = (
                QuestionTemplateBank.from_file(rp.template_bank_path)
                if rp.template_bank_path
                else QuestionTemplateBank()
            )
            scorer = make_scorer(
                rp.scorer,
                embed=backend_for(config.backends["embed"]),
                text2image=backend_for(config.backends["text2image"]),
                reference_caption=rp.reference_caption,
                seed=seed,
            )
            prompt = refine_question(
                image, bank, backend_for(config.backends["vqa"]), scorer,
                max_iters=rp.max_iters, epsilon=rp.epsilon,
            )
        else:
            prompt = extract_description(
                image, backend_for(config.backends["vqa"])
            )
        if prompt_suffix:
            prompt = VehiclePrompt(
                question=prompt.question,
                answer=f"{prompt.answer}, {prompt_suffix}",
                refinement_trace=prompt.refinement_trace,
                score=prompt.score,
            )
        pdir = index.entry_dir("prompt", pkey)
        path = save_prompt(prompt, pdir, instance_id)
        index.store("prompt", pkey, [path])

    # -- structure stage -------------------------------------------------
    ring = _ring(config)
    if config.assignment_mode == "multi_expert":
        if config.experts_path is not None:
            experts = load_expert_set(config.experts_path)
        else:
            experts = stub_expert_set(config.assignment(), config.training)
        skey = sha256_json({
            "op": "structure",
            "mode": "multi_expert",
            "prompt": prompt.to_dict(),
            "experts": experts.to_dict(),
            "ring": config.ring.to_dict(),
            "seed": seed,
            "consistency_threshold": config.consistency_threshold,
            "embed": config.backends["embed"].to_dict(),
        })
    else:
        experts = None
        skey = sha256_json({
            "op": "structure",
            "mode": "single",
            "prompt": prompt.to_dict(),
            "backend": config.backends["text2image"].to_dict(),
            "grid_size": config.single_grid_size,
            "ring": config.ring.to_dict(),
            "seed": seed,
        })
    entry = index.lookup("structure", skey)
    if entry is not None:
        cache_hits["structure"] = True
        structure = _load_structure(index.entry_dir("structure", skey))
    else:
        cache_hits["structure"] = False
        if config.assignment_mode == "multi_expert":
            structure = generate_structures(
                prompt, experts, seed,
                embed=backend_for(config.backends["embed"]),
                ring=ring,
                consistency_threshold=config.consistency_threshold,
                trace=trace,
                backend_for=backend_for,
            )
        else:
            structure = generate_structures_single(
                prompt, config.backends["text2image"], seed,
                grid_size=config.single_grid_size,
                ring=ring,
                trace=trace,
                backend_for=backend_for,
            )
        paths = _save_structure(structure, index.entry_dir("structure", skey))
        index.store("structure", skey, paths)

    # -- subject embedding + appearance stage ----------------------------
    akey = sha256_json({
        "op": "appearance",
        "structure_key": skey,
        "image": raster_digest(image),
        "answer": prompt.answer,
        "segment": config.backends["segment"].to_dict(),
        "embed": config.backends["embed"].to_dict(),
        "edge2image": config.backends["edge2image"].to_dict(),
        "canny": config.canny.to_dict(),
        "seed": seed,
    })
    entry = index.lookup("appearance", akey)
    bundle_dir = index.entry_dir("appearance", akey)
    if entry is not None:
        cache_hits["appearance"] = True
        bundle = load_bundle(bundle_dir)
    else:
        cache_hits["appearance"] = False
        subject = subject_embedding(
            image, prompt,
            segment=backend_for(config.backends["segment"]),
            embed=backend_for(config.backends["embed"]),
            warnings=extra_warnings,
        )
        bundle = render_appearance(
            structure, subject, prompt, seed,
            edge2image=config.backends["edge2image"],
            sigma=config.canny.sigma,
            low=config.canny.low,
            high=config.canny.high,
            trace=trace,
            backend_for=backend_for,
            extra_provenance={
                "instance_id": instance_id,
                "input_image_digest": raster_digest(image),
                "config": config.content_dict(),
                "warnings": list(structure.warnings) + extra_warnings,
            },
        )
        export_bundle(bundle, bundle_dir)
        produced = sorted(p for p in bundle_dir.rglob("*") if p.is_file())
        index.store("appearance", akey, produced)

    if out_dir is not None:
        shutil.copytree(bundle_dir, out_dir, dirs_exist_ok=True)

    return GenerateResult(
        bundle_dir=bundle_dir,
        bundle=bundle,
        cache_hits=cache_hits,
        warnings=bundle.warnings,
        trace=trace,
    )


@dataclass
class EvaluateResult:
    report: EvalReport
    report_path: Path
    csv_path: Path
    cache_hit: bool


def run_evaluate(
    config: PipelineConfig,
    bundle_dir,
    reference_path,
    method_label: str = "ours",
) -> EvaluateResult:
    from .appearance import bundle_digest

    bundle_dir = Path(bundle_dir)
    reference_path = Path(reference_path)
    if not reference_path.exists():
        raise ValidationError(f"reference image {reference_path} does not exist")
    reference = load_png(reference_path)
    bundle = load_bundle(bundle_dir)

    index = CacheIndex(config.cache_dir)
    trace = TraceLog(config.cache_dir / TRACE_FILE)
    csv_path = config.cache_dir / REPORTS_CSV

    ekey = sha256_json({
        "op": "eval",
        "bundle": bundle_digest(bundle),
        "reference": raster_digest(reference),
        "embed": config.backends["embed"].to_dict(),
        "vqa": config.backends["vqa"].to_dict(),
        "template": config.verification_question_template,
        "fixtures": None if config.fixtures_path is None
        else sha256_file(config.fixtures_path),
        "fixture_table": config.fixture_table,
        "fixture_method": config.fixture_method,
        "method_label": method_label,
    })
    report_path = bundle_dir / "report.json"
    entry = index.lookup("eval", ekey)
    if entry is not None and report_path.exists():
        report = EvalReport.from_dict(
            json.loads(report_path.read_text(encoding="utf-8"))
        )
        return EvaluateResult(report, report_path, csv_path, cache_hit=True)

    fixtures = (
        load_fixtures(config.fixtures_path)
        if config.fixtures_path is not None
        else None
    )
    report = evaluate_bundle(
        bundle, reference,
        embed=resolve_backend(config.backends["embed"], trace=trace),
        vqa=resolve_backend(config.backends["vqa"], trace=trace),
        fixtures=fixtures,
        fixture_table=config.fixture_table,
        fixture_method=config.fixture_method,
        method_label=method_label,
        question_template=config.verification_question_template,
    )
    write_report(report, bundle_dir)
    append_aggregate(report, csv_path, bundle_id=bundle_dir.name)
    try:
        report_rel = report_path.relative_to(config.cache_dir)
        index.store("eval", ekey, [str(report_rel)])
    except ValueError:
        pass  # bundle lives outside the cache; nothing to own
    return EvaluateResult(report, report_path, csv_path, cache_hit=False)


@dataclass
class BuildDatasetResult:
    render_root: Path
    manifest_paths: List[Path]
    pending: Dict[str, List[str]]
    pairs: Optional[DatasetManifests]
    n_pairs: int
    cache_hits: Dict[str, bool] = field(default_factory=dict)


def run_build_dataset(config: PipelineConfig, index_path) -> BuildDatasetResult:
    """Emit render manifests; once views exist, emit training pairs.

    Rendering itself is external (a DCC tool consumes the manifests), so
    instances with missing views are reported as pending rather than
    failing the command. Unreadable view files are an error.
    """
    index_path = Path(index_path)
    if not index_path.exists():
        raise ValidationError(f"instance index {index_path} does not exist")
    try:
        instances = json.loads(index_path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ValidationError(f"instance index is not valid JSON: {exc}") from exc
    if not isinstance(instances, list) or not instances:
        raise ValidationError("instance index must be a non-empty JSON list")
    for i, rec in enumerate(instances):
        for key in ("instance_id", "model_path", "bbox_min", "bbox_max"):
            if key not in rec:
                raise ValidationError(f"index entry {i}: missing {key!r}")

    cache = CacheIndex(config.cache_dir)
    trace = TraceLog(config.cache_dir / TRACE_FILE)
    cache_hits: Dict[str, bool] = {}
    render_root = config.cache_dir / "renders"
    ring = _ring(config)

    mkey = sha256_json({
        "op": "render_manifests",
        "instances": instances,
        "ring": config.ring.to_dict(),
    })
    manifest_paths = [
        render_root / rec["instance_id"] / "manifest.json" for rec in instances
    ]
    if cache.lookup("structure", mkey) is not None:
        cache_hits["manifests"] = True
    else:
        cache_hits["manifests"] = False
        for rec in instances:
            build_manifest(
                rec["instance_id"],
                rec["model_path"],
                (rec["bbox_min"], rec["bbox_max"]),
                ring,
                render_root,
            )
        cache.store("structure", mkey, manifest_paths)

    # completeness scan; rendering happens out-of-process
    pending: Dict[str, List[str]] = {}
    for rec in instances:
        instance_id = rec["instance_id"]
        instance_dir = render_root / instance_id
        manifest = load_manifest(instance_dir / "manifest.json")
        missing = [n for n in manifest.outputs if not (instance_dir / n).exists()]
        if missing:
            pending[instance_id] = missing
    if pending:
        return BuildDatasetResult(
            render_root=render_root,
            manifest_paths=manifest_paths,
            pending=pending,
            pairs=None,
            n_pairs=0,
            cache_hits=cache_hits,
        )

    # adopt the externally rendered views so the audit can account for
    # them; re-renders evict the stale ownership entry on store
    view_files = sorted(
        p for rec in instances
        for p in (render_root / rec["instance_id"]).glob("view_*.png")
    )
    rkey = sha256_json({
        "op": "external_renders",
        "views": [sha256_file(p) for p in view_files],
    })
    if cache.lookup("structure", rkey) is None:
        cache.store("structure", rkey, view_files)

    # prompts: canonical question against view 0 of each instance
    vqa = resolve_backend(config.backends["vqa"], trace=trace)
    for rec in instances:
        instance_id = rec["instance_id"]
        instance_dir = render_root / instance_id
        prompt_path = instance_dir / prompt_file_name(instance_id)
        view0 = instance_dir / "view_00.png"
        pkey = sha256_json({
            "op": "instance_prompt",
            "view0": sha256_file(view0),
            "vqa": config.backends["vqa"].to_dict(),
        })
        if cache.lookup("prompt", pkey) is not None and prompt_path.exists():
            continue
        prompt = extract_description(load_png(view0), vqa)
        save_prompt(prompt, instance_dir, instance_id)
        cache.store("prompt", pkey, [prompt_path])

    pairs_dir = config.cache_dir / "pairs"
    assignment = config.assignment()
    pairs_key = sha256_json({
        "op": "training_pairs",
        "renders": tree_digest(render_root),
        "assignment": assignment.to_dict(),
    })
    if cache.lookup("structure", pairs_key) is not None:
        cache_hits["pairs"] = True
        pairs = _reload_pairs(pairs_dir, assignment)
    else:
        cache_hits["pairs"] = False
        pairs = build_training_pairs(render_root, assignment, pairs_dir)
        produced = sorted(p for p in pairs_dir.rglob("*") if p.is_file())
        cache.store("structure", pairs_key, produced)

    n_pairs = pairs.n_instances * (1 + len(assignment.anchor_indices))
    return BuildDatasetResult(
        render_root=render_root,
        manifest_paths=manifest_paths,
        pending={},
        pairs=pairs,
        n_pairs=n_pairs,
        cache_hits=cache_hits,
    )


def _reload_pairs(pairs_dir: Path, assignment) -> DatasetManifests:
    anchor = pairs_dir / "anchor_pairs.jsonl"
    if not anchor.exists():
        raise ValidationError(f"no anchor_pairs.jsonl under {pairs_dir}")
    neighbors = tuple(
        pairs_dir / f"neighbor{k}_pairs.jsonl"
        for k in range(len(assignment.anchor_indices))
    )
    for p in neighbors:
        if not p.exists():
            raise ValidationError(f"missing {p.name} under {pairs_dir}")
    with open(anchor, "r", encoding="utf-8") as fh:
        n_instances = sum(1 for _ in fh)
    return DatasetManifests(
        root=pairs_dir,
        anchor_manifest=anchor,
        neighbor_manifests=neighbors,
        assignment=assignment,
        n_instances=n_instances,
    )


@dataclass
class TrainResult:
    experts: ExpertSet
    experts_path: Path


def run_train_experts(
    config: PipelineConfig,
    pairs_dir=None,
    experts_out=None,
) -> TrainResult:
    pairs_dir = Path(pairs_dir) if pairs_dir else config.cache_dir / "pairs"
    manifests = _reload_pairs(pairs_dir, config.assignment())
    experts = train_experts(
        manifests, config.training, endpoint=config.training_endpoint
    )
    out = Path(
        experts_out or config.experts_path or config.cache_dir / "experts.json"
    )
    save_expert_set(experts, out)
    try:
        rel = out.relative_to(config.cache_dir)
        CacheIndex(config.cache_dir).store(
            "structure",
            sha256_json({"op": "experts", "digests": experts.dataset_digests,
                         "training": config.training.to_dict()}),
            [str(rel)],
        )
    except ValueError:
        pass
    return TrainResult(experts=experts, experts_path=out)


def run_audit(config: PipelineConfig) -> dict:
    return CacheIndex(config.cache_dir).audit()
