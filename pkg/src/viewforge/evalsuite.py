"""Evaluation protocol: ITC, CLIP similarity, FID, VQA score, txt2txt.

All per-view metrics are plain means over the view list (hence
permutation-invariant). FID is computed on embedding feature sets with
1/(n-1) covariance normalization and a matrix square root taken by
symmetric eigendecomposition of the symmetrized covariance product,
eigenvalues clamped at zero — exactly symmetric in its arguments by
construction. Published reference results ship as a read-only fixtures
file; desk-scale runs with stub backends cannot reproduce them, so
deltas are informational.
"""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .appearance import AssetBundle
from .backends.base import EmbedBackend, VQABackend
from .errors import NumericalFailureError, PipelineError
from .images import as_raster

VERIFICATION_QUESTION_TEMPLATE = "Does this image show {prompt_text}?"
DEFAULT_EXTRACTOR_ID = "embed-backend"
METRIC_NAMES = ("itc", "clip_similarity", "fid", "vqa_score")

REPORT_FILE = "report.json"


@dataclass(frozen=True)
class FeatureSet:
    """Extracted feature vectors, one row per image."""

    vectors: np.ndarray
    extractor_id: str = DEFAULT_EXTRACTOR_ID

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"vectors must be a non-empty (n, d) array, "
                             f"got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature vectors contain non-finite entries")
        object.__setattr__(self, "vectors", arr)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class EvalReport:
    itc: float
    clip_similarity: float
    fid: float
    vqa_score: float
    n_views: int
    method_label: str
    fixture_delta: Optional[Dict[str, float]] = None

    def __post_init__(self):
        values = (self.itc, self.clip_similarity, self.fid, self.vqa_score)
        if not all(np.isfinite(v) for v in values):
            raise ValueError(f"metrics must be finite, got {values}")
        if self.fid < 0:
            raise ValueError(f"fid must be non-negative, got {self.fid}")
        if not -1.0 <= self.clip_similarity <= 1.0:
            raise ValueError(
                f"clip_similarity outside [-1, 1]: {self.clip_similarity}"
            )

    def to_dict(self) -> dict:
        return {
            "itc": self.itc,
            "clip_similarity": self.clip_similarity,
            "fid": self.fid,
            "vqa_score": self.vqa_score,
            "n_views": self.n_views,
            "method_label": self.method_label,
            "fixture_delta": self.fixture_delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            itc=float(d["itc"]),
            clip_similarity=float(d["clip_similarity"]),
            fid=float(d["fid"]),
            vqa_score=float(d["vqa_score"]),
            n_views=int(d["n_views"]),
            method_label=d["method_label"],
            fixture_delta=d.get("fixture_delta"),
        )


def _covariance(vectors: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.cov(vectors, rowvar=False, ddof=1))


def gaussian_frechet(mu_a, cov_a, mu_b, cov_b) -> float:
    """Fréchet distance between two Gaussians.

    The cross term uses Tr of the matrix square root of the symmetrized
    product (cov_a @ cov_b + cov_b @ cov_a) / 2, computed by symmetric
    eigendecomposition with eigenvalues clamped at zero. Exact whenever
    the covariances commute (1-D, diagonal, identical sets) and symmetric
    in (a, b) by construction.
    """
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    diff = mu_a - mu_b
    prod = cov_a @ cov_b
    sym = (prod + prod.T) / 2.0
    eigvals = np.linalg.eigvalsh((sym + sym.T) / 2.0)
    trace_sqrt = float(np.sum(np.sqrt(np.clip(eigvals, 0.0, None))))
    return float(
        diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt
    )


def fid(a: FeatureSet, b: FeatureSet) -> float:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.n < 2 or b.n < 2:
        raise ValueError(
            f"need >= 2 vectors per set for covariance, got {a.n} and {b.n}"
        )
    value = gaussian_frechet(
        a.vectors.mean(axis=0), _covariance(a.vectors),
        b.vectors.mean(axis=0), _covariance(b.vectors),
    )
    if not np.isfinite(value):
        raise NumericalFailureError(f"FID computation produced {value}")
    # identical sets can land at -1e-14 from rounding
    return max(value, 0.0)


def frechet_to_point(a: FeatureSet, point: np.ndarray) -> float:
    """Fréchet distance to a point mass (degenerate reference Gaussian).

    Used when only a single reference image is available: the cross term
    vanishes, leaving ||mu - p||^2 + Tr(cov).
    """
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (a.dim,):
        raise ValueError(f"point has shape {point.shape}, expected ({a.dim},)")
    if a.n < 2:
        raise ValueError(f"need >= 2 vectors for covariance, got {a.n}")
    diff = a.vectors.mean(axis=0) - point
    value = float(diff @ diff + np.trace(_covariance(a.vectors)))
    if not np.isfinite(value):
        raise NumericalFailureError(f"FID computation produced {value}")
    return max(value, 0.0)


def features_from_images(
    images: Sequence[np.ndarray],
    embed: EmbedBackend,
    extractor_id: Optional[str] = None,
) -> FeatureSet:
    if not images:
        raise ValueError("image list is empty")
    vectors = np.stack([embed.embed_image(as_raster(v)).values for v in images])
    return FeatureSet(
        vectors=vectors,
        extractor_id=extractor_id or f"embed:{embed.__class__.__name__}",
    )


def clip_similarity(
    generated: Sequence[np.ndarray], reference: np.ndarray, embed: EmbedBackend
) -> float:
    if not generated:
        raise ValueError("generated view list is empty")
    ref_vec = embed.embed_image(as_raster(reference))
    sims = [embed.embed_image(as_raster(v)).cosine(ref_vec) for v in generated]
    return float(np.mean(sims))


def itc_score(
    views: Sequence[np.ndarray], prompt_text: str, embed: EmbedBackend
) -> float:
    if not views:
        raise ValueError("view list is empty")
    if not prompt_text:
        raise ValueError("prompt text is empty")
    text_vec = embed.embed_text(prompt_text)
    sims = [embed.embed_image(as_raster(v)).cosine(text_vec) for v in views]
    return float(np.mean(sims))


def vqa_score(
    views: Sequence[np.ndarray],
    prompt_text: str,
    vqa: VQABackend,
    question_template: str = VERIFICATION_QUESTION_TEMPLATE,
) -> float:
    if not views:
        raise ValueError("view list is empty")
    if not prompt_text:
        raise ValueError("prompt text is empty")
    question = question_template.format(prompt_text=prompt_text)
    probs = [vqa.yes_probability(as_raster(v), question) for v in views]
    return float(np.clip(np.mean(probs), 0.0, 1.0))


def txt2txt_score(answer: str, caption: str, embed: EmbedBackend) -> float:
    if not answer or not caption:
        raise ValueError("answer and caption must be non-empty")
    return embed.embed_text(answer).cosine(embed.embed_text(caption))


def load_fixtures(path=None) -> dict:
    """Published reference results, keyed table -> rows -> method -> metrics."""
    if path is None:
        text = (
            resources.files("viewforge")
            .joinpath("data/reference_results.json")
            .read_text(encoding="utf-8")
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)


def fixture_row(fixtures: dict, table: str, method: str) -> Dict[str, float]:
    if table not in fixtures:
        raise ValueError(
            f"unknown fixture table {table!r}; have {sorted(fixtures)}"
        )
    rows = fixtures[table]["rows"]
    if method not in rows:
        raise ValueError(
            f"unknown method {method!r} in table {table!r}; have {sorted(rows)}"
        )
    return {k: float(v) for k, v in rows[method].items()}


@contextmanager
def _metric(name: str):
    """Tag errors escaping a metric computation with the metric name."""
    try:
        yield
    except PipelineError as exc:
        exc.metric = name
        if hasattr(exc, "add_note"):
            exc.add_note(f"metric: {name}")
        raise


def evaluate_bundle(
    bundle: AssetBundle,
    reference: Union[np.ndarray, Sequence[np.ndarray]],
    embed: EmbedBackend,
    vqa: VQABackend,
    prompt_text: Optional[str] = None,
    fixtures: Optional[dict] = None,
    fixture_table: str = "pascal3d",
    fixture_method: str = "ours",
    method_label: str = "ours",
    question_template: str = VERIFICATION_QUESTION_TEMPLATE,
) -> EvalReport:
    """All four metrics for one bundle against reference imagery.

    With a single reference image the FID reference distribution is a
    point mass; with >= 2 references the full two-Gaussian form is used.
    Fixture deltas (computed minus stored) are attached only when a
    fixtures mapping is supplied.
    """
    if isinstance(reference, np.ndarray):
        references = [as_raster(reference)]
    else:
        references = [as_raster(r) for r in reference]
    if not references:
        raise ValueError("need at least one reference image")
    prompt_text = prompt_text or bundle.prompt.answer
    views = list(bundle.views)

    with _metric("itc"):
        itc = itc_score(views, prompt_text, embed)
    with _metric("clip_similarity"):
        clip_sim = clip_similarity(views, references[0], embed)
    with _metric("fid"):
        gen_features = features_from_images(views, embed)
        if len(references) >= 2:
            ref_features = features_from_images(references, embed)
            fid_value = fid(gen_features, ref_features)
        else:
            ref_vec = embed.embed_image(references[0]).values
            fid_value = frechet_to_point(gen_features, ref_vec)
    with _metric("vqa_score"):
        vqa_value = vqa_score(views, prompt_text, vqa,
                              question_template=question_template)

    delta = None
    if fixtures is not None:
        row = fixture_row(fixtures, fixture_table, fixture_method)
        computed = {
            "itc": itc,
            "clip_similarity": clip_sim,
            "fid": fid_value,
            "vqa_score": vqa_value,
        }
        delta = {k: computed[k] - row[k] for k in row if k in computed}

    return EvalReport(
        itc=itc,
        clip_similarity=clip_sim,
        fid=fid_value,
        vqa_score=vqa_value,
        n_views=len(views),
        method_label=method_label,
        fixture_delta=delta,
    )


def write_report(report: EvalReport, bundle_dir) -> Path:
    path = Path(bundle_dir) / REPORT_FILE
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True,
                  ensure_ascii=False)
        fh.write("\n")
    return path


def append_aggregate(report: EvalReport, csv_path, bundle_id: str) -> Path:
    """Append one row to the corpus-level CSV, writing the header if new."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    is_new = not csv_path.exists()
    with open(csv_path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if is_new:
            writer.writerow(
                ["bundle", "method_label", "n_views"] + list(METRIC_NAMES)
            )
        writer.writerow([
            bundle_id,
            report.method_label,
            report.n_views,
            report.itc,
            report.clip_similarity,
            report.fid,
            report.vqa_score,
        ])
    return csv_path
