"""Pipeline configuration: one JSON document, validated in full up front.

Every config problem is collected and reported in a single ConfigError
before any backend is touched. Environment variables override backend
endpoints and timeouts only (see backends.apply_env_overrides); nothing
else is environment-sensitive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

from .backends.base import KINDS, STUB_ENDPOINT, BackendDescriptor
from .edges import DEFAULT_HIGH, DEFAULT_LOW, DEFAULT_SIGMA
from .errors import ConfigError
from .gridcodec import ExpertAssignment, expert_assignment
from .structure import (
    DEFAULT_CONSISTENCY_THRESHOLD,
    DEFAULT_ELEVATION_DEG,
    DEFAULT_RADIUS,
    TrainingConfig,
)
from .vqa import DEFAULT_EPSILON, DEFAULT_MAX_ITERS

ASSIGNMENT_MODES = ("multi_expert", "single")
SCORER_MODES = ("txt2txt", "img2img")
DEFAULT_VERIFICATION_TEMPLATE = "Does this image show {prompt_text}?"


@dataclass(frozen=True)
class RingParams:
    n_views: int = 16
    elevation_deg: float = DEFAULT_ELEVATION_DEG
    radius: float = DEFAULT_RADIUS
    start_azimuth_deg: float = 0.0

    def to_dict(self) -> dict:
        return {
            "n_views": self.n_views,
            "elevation_deg": self.elevation_deg,
            "radius": self.radius,
            "start_azimuth_deg": self.start_azimuth_deg,
        }


@dataclass(frozen=True)
class CannyParams:
    sigma: float = DEFAULT_SIGMA
    low: float = DEFAULT_LOW
    high: float = DEFAULT_HIGH

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class RefinementParams:
    enabled: bool = False
    scorer: str = "img2img"
    max_iters: int = DEFAULT_MAX_ITERS
    epsilon: float = DEFAULT_EPSILON
    template_bank_path: Optional[str] = None
    reference_caption: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled,
            "scorer": self.scorer,
            "max_iters": self.max_iters,
            "epsilon": self.epsilon,
            "template_bank_path": self.template_bank_path,
            "reference_caption": self.reference_caption,
        }


@dataclass(frozen=True)
class PipelineConfig:
    backends: Dict[str, BackendDescriptor]
    cache_dir: Path
    ring: RingParams = RingParams()
    assignment_mode: str = "multi_expert"
    stride: int = 4
    single_grid_size: int = 4
    canny: CannyParams = CannyParams()
    training: TrainingConfig = TrainingConfig()
    training_endpoint: str = STUB_ENDPOINT
    seed: int = 0
    consistency_threshold: float = DEFAULT_CONSISTENCY_THRESHOLD
    refinement: RefinementParams = RefinementParams()
    verification_question_template: str = DEFAULT_VERIFICATION_TEMPLATE
    fixture_table: str = "pascal3d"
    fixture_method: str = "ours"
    fixtures_path: Optional[Path] = None
    experts_path: Optional[Path] = None

    def assignment(self) -> ExpertAssignment:
        return expert_assignment(self.ring.n_views, self.stride)

    def to_dict(self) -> dict:
        return {
            "backends": {k: d.to_dict() for k, d in sorted(self.backends.items())},
            "cache_dir": str(self.cache_dir),
            "ring": self.ring.to_dict(),
            "assignment_mode": self.assignment_mode,
            "stride": self.stride,
            "single_grid_size": self.single_grid_size,
            "canny": self.canny.to_dict(),
            "training": self.training.to_dict(),
            "training_endpoint": self.training_endpoint,
            "seed": self.seed,
            "consistency_threshold": self.consistency_threshold,
            "refinement": self.refinement.to_dict(),
            "verification_question_template": self.verification_question_template,
            "fixture_table": self.fixture_table,
            "fixture_method": self.fixture_method,
            "fixtures_path": None if self.fixtures_path is None
            else str(self.fixtures_path),
            "experts_path": None if self.experts_path is None
            else str(self.experts_path),
        }

    def content_dict(self) -> dict:
        """Config as serialized into provenance: machine-local locations
        (cache dir, file paths) are dropped so replays on different
        directories produce identical provenance."""
        d = self.to_dict()
        for key in ("cache_dir", "fixtures_path", "experts_path"):
            d.pop(key)
        d["refinement"].pop("template_bank_path")
        return d

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Optional[Path] = None) -> "PipelineConfig":
        problems = []
        base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        backends = {}
        raw_backends = raw.get("backends", {})
        if not isinstance(raw_backends, dict):
            problems.append("backends: must be a mapping kind -> descriptor")
            raw_backends = {}
        for kind in KINDS:
            if kind not in raw_backends:
                problems.append(f"backends.{kind}: missing")
                continue
            entry = dict(raw_backends[kind])
            entry.setdefault("kind", kind)
            try:
                desc = BackendDescriptor.from_dict(entry)
                if desc.kind != kind:
                    raise ValueError(f"kind {desc.kind!r} under key {kind!r}")
                backends[kind] = desc
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"backends.{kind}: {exc}")
        for kind in raw_backends:
            if kind not in KINDS:
                problems.append(f"backends.{kind}: unknown backend kind")

        def section(name, builder, default):
            data = raw.get(name)
            if data is None:
                return default
            try:
                return builder(data)
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"{name}: {exc}")
                return default

        ring = section("ring", lambda d: RingParams(**d), RingParams())
        if ring.n_views < 1:
            problems.append(f"ring.n_views: must be >= 1, got {ring.n_views}")
        if ring.radius <= 0:
            problems.append(f"ring.radius: must be positive, got {ring.radius}")

        canny = section("canny", lambda d: CannyParams(**d), CannyParams())
        if canny.sigma <= 0:
            problems.append(f"canny.sigma: must be positive, got {canny.sigma}")
        if canny.low < 0 or canny.high < canny.low:
            problems.append(
                f"canny: need high >= low >= 0, got low={canny.low} "
                f"high={canny.high}"
            )

        training = section(
            "training", lambda d: TrainingConfig.from_dict(d), TrainingConfig()
        )
        refinement = section(
            "refinement", lambda d: RefinementParams(**d), RefinementParams()
        )
        if refinement.scorer not in SCORER_MODES:
            problems.append(
                f"refinement.scorer: {refinement.scorer!r} not in {SCORER_MODES}"
            )
        if refinement.max_iters < 1:
            problems.append("refinement.max_iters: must be >= 1")
        if refinement.epsilon < 0:
            problems.append("refinement.epsilon: must be >= 0")

        assignment_mode = raw.get("assignment_mode", "multi_expert")
        if assignment_mode not in ASSIGNMENT_MODES:
            problems.append(
                f"assignment_mode: {assignment_mode!r} not in {ASSIGNMENT_MODES}"
            )
        stride = int(raw.get("stride", 4))
        if assignment_mode == "multi_expert":
            try:
                expert_assignment(ring.n_views, stride)
            except ValueError as exc:
                problems.append(f"assignment: {exc}")
        single_grid_size = int(raw.get("single_grid_size", 4))
        if assignment_mode == "single":
            if single_grid_size < 2:
                problems.append("single_grid_size: must be >= 2")
            elif single_grid_size**2 != ring.n_views:
                problems.append(
                    f"single_grid_size: {single_grid_size}^2 != ring.n_views "
                    f"{ring.n_views}"
                )

        if "cache_dir" not in raw:
            problems.append("cache_dir: missing")
            cache_dir = base_dir / "viewforge-cache"
        else:
            cache_dir = resolve(raw["cache_dir"])
            try:
                cache_dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                problems.append(f"cache_dir: not creatable: {exc}")

        fixtures_path = raw.get("fixtures_path")
        if fixtures_path is not None:
            fixtures_path = resolve(fixtures_path)
            if not fixtures_path.exists():
                problems.append(f"fixtures_path: {fixtures_path} does not exist")
        experts_path = raw.get("experts_path")
        if experts_path is not None:
            experts_path = resolve(experts_path)
            if not experts_path.exists():
                problems.append(f"experts_path: {experts_path} does not exist")

        threshold = float(raw.get("consistency_threshold",
                                  DEFAULT_CONSISTENCY_THRESHOLD))
        if not -1.0 <= threshold <= 1.0:
            problems.append(
                f"consistency_threshold: {threshold} outside [-1, 1]"
            )

        template = raw.get("verification_question_template",
                           DEFAULT_VERIFICATION_TEMPLATE)
        if "{prompt_text}" not in template:
            problems.append(
                "verification_question_template: missing {prompt_text} slot"
            )

        if problems:
            raise ConfigError(problems)

        return cls(
            backends=backends,
            cache_dir=cache_dir,
            ring=ring,
            assignment_mode=assignment_mode,
            stride=stride,
            single_grid_size=single_grid_size,
            canny=canny,
            training=training,
            training_endpoint=raw.get("training_endpoint", STUB_ENDPOINT),
            seed=int(raw.get("seed", 0)),
            consistency_threshold=threshold,
            refinement=refinement,
            verification_question_template=template,
            fixture_table=raw.get("fixture_table", "pascal3d"),
            fixture_method=raw.get("fixture_method", "ours"),
            fixtures_path=fixtures_path,
            experts_path=experts_path,
        )

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        except ValueError as exc:
            raise ConfigError([f"config {path} is not valid JSON: {exc}"]) from exc
        if not isinstance(raw, dict):
            raise ConfigError([f"config {path}: top level must be an object"])
        return cls.from_dict(raw, base_dir=path.parent)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True,
                      ensure_ascii=False)
            fh.write("\n")
        return path


def stub_backends() -> Dict[str, BackendDescriptor]:
    return {
        kind: BackendDescriptor(
            kind=kind, endpoint=STUB_ENDPOINT, model_id=f"stub-{kind}"
        )
        for kind in KINDS
    }


def stub_config(cache_dir, **overrides) -> PipelineConfig:
    """All-stub configuration rooted at ``cache_dir``; deterministic and
    GPU-free. Keyword overrides replace top-level config fields."""
    raw = {
        "backends": {k: d.to_dict() for k, d in stub_backends().items()},
        "cache_dir": str(cache_dir),
    }
    raw.update(overrides)
    return PipelineConfig.from_dict(raw)
